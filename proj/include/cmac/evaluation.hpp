#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmac/config.hpp"
#include "cmac/model.hpp"
#include "cmac/synthetic.hpp"

// Localization scores, linear probe, attention export and ablation sweeps.
namespace cmac {

// Pooled over every map and cell: mean attention inside the mask divided by
// mean attention outside it.
struct MassAccumulator {
  double in_sum = 0, out_sum = 0;
  std::size_t in_count = 0, out_count = 0;

  void add(std::span<const Scalar> map, std::span<const std::uint8_t> mask);
  double ratio() const;
};

// Frames are the leading axis of `map` and `mask`; a frame scores when its
// argmax cell (first on ties) lies in the mask. Chance is the mean in-mask
// fraction of the same frames.
struct PointingAccumulator {
  std::size_t hits = 0, frames = 0;
  double area = 0;

  void add(std::span<const Scalar> map, std::span<const std::uint8_t> mask, std::size_t frames_in_map);
  double accuracy() const;
  double chance() const;
};

struct LocalizationScore {
  double mass_ratio = 0;
  double pointing = 0;
  double chance = 0;
};

struct LocalizationReport {
  LocalizationScore guided_v, predicted_v, guided_a, predicted_a;
  std::size_t pairs = 0;
};

// Eval-mode maps of unaugmented pairs. Visual maps use the blob mask, audio
// maps the tone band. Throws ContractError on an empty dataset.
LocalizationReport eval_localization(CmacModel& model, const std::vector<SyntheticPair>& pairs,
                                     std::size_t batch = 32);

std::string to_json(const LocalizationReport& r);

struct ProbeConfig {
  std::size_t iterations = 400;
  double lr = 0.5;
  double weight_decay = 1e-4;
  bool shuffle_labels = false;  // permute training labels (chance baseline)
  std::uint64_t seed = 0;       // label permutation only
};

struct ProbeResult {
  double visual = 0, audio = 0;  // top-1 on the test pairs
};

// Pooled frozen-encoder features (eval mode), one row per pair.
std::vector<std::vector<double>> pooled_features(ConvEncoder& encoder, const std::vector<Tensor>& inputs,
                                                 std::size_t batch = 32);

// Softmax regression on standardised features, full-batch gradient descent
// from zero weights. Returns test top-1.
double softmax_probe(const std::vector<std::vector<double>>& train_x, const std::vector<std::size_t>& train_y,
                     const std::vector<std::vector<double>>& test_x, const std::vector<std::size_t>& test_y,
                     std::size_t classes, const ProbeConfig& cfg);

ProbeResult linear_probe(CmacModel& model, const std::vector<SyntheticPair>& train_pairs,
                         const std::vector<SyntheticPair>& test_pairs, std::size_t classes,
                         const ProbeConfig& cfg = {});

// Held-out pairs for evaluation, disjoint in seed from training_data(cfg).
std::vector<SyntheticPair> evaluation_data(const RunConfig& cfg, std::size_t count = 256);

// Text grid: a header line "grid <d0> <d1> ..." followed by values, one row
// per line over the last axis, printed with %.17g.
void write_grid(const std::string& path, const Tensor& map);
Tensor read_grid(const std::string& path);

// Binary PPM (P6) writer; rgb holds height * width * 3 bytes.
void write_ppm(const std::string& path, std::size_t width, std::size_t height, std::span<const std::uint8_t> rgb);

// For each pair i writes pair<i>_visual.ppm (frames, guidance row over
// prediction row), pair<i>_audio.ppm (spectrogram, guidance beside
// prediction) and the four raw grids pair<i>_{s_v,s_hat_v,s_a,s_hat_a}.txt.
// Returns the files written.
std::vector<std::string> export_attention(CmacModel& model, const std::vector<SyntheticPair>& pairs,
                                          const std::string& out_dir);

enum class SweepAxis { lambda, norm_mode, scales, sampling_policy };
SweepAxis parse_sweep_axis(const std::string& s);
std::string to_string(SweepAxis axis);

struct SweepRow {
  std::string value;
  double final_loss = 0;
  ProbeResult probe;
  LocalizationReport localization;
};

// Applies one sweep value to a config. sampling_policy values are
// "nce" (no within-modal terms), "neg", "pos" and "neg+pos".
RunConfig apply_sweep_value(const RunConfig& base, SweepAxis axis, const std::string& value);

// Trains and evaluates one run per value (each in out_dir/<axis>_<value>)
// and writes out_dir/sweep_<axis>.tsv.
std::vector<SweepRow> sweep(const RunConfig& base, SweepAxis axis, const std::vector<std::string>& values);

std::string sweep_table(SweepAxis axis, const std::vector<SweepRow>& rows);

}  // namespace cmac
