#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmac/tensor.hpp"

// Synthetic audio-visual pairs with a planted correspondence: a textured blob
// whose pattern and tone band are both set by a latent class, and whose size
// drives the loudness of the band.
namespace cmac {

struct SyntheticParams {
  std::size_t frames = 8, height = 32, width = 32;  // clip T x H x W
  std::size_t spec_time = 64, freq = 32;            // spectrogram T~ x F
  std::size_t num_classes = 8;
  double amplitude = 1.0;      // scales the blob's visibility and the band level
  double visual_noise = 0.3;   // background noise level
  double audio_noise = 0.15;   // spectrogram noise level
  double radius_min = 4.5, radius_max = 6.5;  // base blob radius range (pixels)
  double radius_swing = 0.35;  // relative radius oscillation
  std::size_t band_halfwidth = 1;
  int class_id = -1;           // -1 draws the class from the seed

  void validate() const;
};

struct SyntheticPair {
  Tensor clip;                  // 3 x T x H x W, values in [0, 1]
  Tensor spec;                  // 1 x T~ x F, values in [0, 1]
  std::vector<std::uint8_t> region;  // T x H x W blob mask
  std::size_t band_lo = 0, band_hi = 0;  // tone band bins [lo, hi)
  std::size_t class_id = 0;
  std::uint64_t seed = 0;
};

SyntheticPair generate_pair(std::uint64_t seed, const SyntheticParams& params);

struct AugmentConfig {
  std::size_t crop = 28;        // square crop side, resized back to the frame
  double flip_prob = 0.5;
  double jitter = 0.2;          // per-channel gain drawn from [1 - j, 1 + j]
  std::size_t time_warp = 4;    // max shift of the warp anchor (spectrogram frames)
  std::size_t freq_mask = 4;    // masked frequency rows
  std::size_t time_mask = 8;    // masked time columns

  static AugmentConfig none(std::size_t frame_side);
  void validate(const SyntheticParams& p) const;
};

// Geometric part of a visual augmentation, shared by clip and mask.
struct CropFlip {
  std::size_t top = 0, left = 0, side = 0;
  bool flip = false;
};

CropFlip draw_crop_flip(const AugmentConfig& cfg, std::size_t height, std::size_t width, std::uint64_t seed);
// Applies a crop (nearest-resized back to height x width) and optional
// horizontal flip to every H x W plane of `planes` (count x H x W).
std::vector<Scalar> apply_crop_flip(std::span<const Scalar> planes, std::size_t count, std::size_t height,
                                    std::size_t width, const CropFlip& g);
std::vector<std::uint8_t> apply_crop_flip(std::span<const std::uint8_t> planes, std::size_t count,
                                          std::size_t height, std::size_t width, const CropFlip& g);

struct AugmentedClip {
  Tensor clip;
  std::vector<std::uint8_t> region;
  CropFlip geometry;
};

AugmentedClip augment_visual(const Tensor& clip, const std::vector<std::uint8_t>& region, const AugmentConfig& cfg,
                             std::uint64_t seed);
// Time warp, then frequency mask, then time mask; masked cells get the mean
// of the warped spectrogram.
Tensor augment_audio(const Tensor& spec, const AugmentConfig& cfg, std::uint64_t seed);

struct Batch {
  Tensor clips;  // N x 3 x T x H x W
  Tensor specs;  // N x 1 x T~ x F
  std::vector<std::vector<std::uint8_t>> regions;
  std::vector<std::size_t> band_lo, band_hi, class_ids;
  std::vector<std::size_t> spec_source;  // pair index each spectrogram came from
};

// sync pairs clip i with spectrogram i; otherwise spectrogram (i + k) mod n
// with k = 1 + shuffle_seed mod (n - 1).
Batch make_batch(const std::vector<SyntheticPair>& pairs, bool sync, std::uint64_t shuffle_seed = 0);
Batch make_batch(std::size_t n, bool sync, const std::vector<std::uint64_t>& seeds, const SyntheticParams& params,
                 std::uint64_t shuffle_seed = 0);

// Pair i uses seed derive_seed(seed, i) and class i mod num_classes.
std::vector<SyntheticPair> make_dataset(std::size_t count, std::uint64_t seed, const SyntheticParams& params);

// Shard file: "CMACSHD1", u64 manifest length, JSON manifest, then for each
// pair the clip and spectrogram as little-endian float64 and the region mask
// as bytes.
void save_shard(const std::string& path, const std::vector<SyntheticPair>& pairs, const SyntheticParams& params);
std::vector<SyntheticPair> load_shard(const std::string& path, SyntheticParams* params = nullptr);

// Grid-level masks: a cell is in the region when at least half of it is
// covered; a frame with no such cell takes its best-covered cell.
std::vector<std::uint8_t> visual_grid_mask(const std::vector<std::uint8_t>& region, const Shape& clip_grid,
                                           const Shape& feature_grid);
std::vector<std::uint8_t> audio_grid_mask(std::size_t band_lo, std::size_t band_hi, const Shape& spec_grid,
                                          const Shape& feature_grid);

}  // namespace cmac
