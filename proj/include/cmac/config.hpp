#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cmac/model.hpp"
#include "cmac/synthetic.hpp"

namespace cmac {

// Every knob of a run. Parsed from `key = value` lines; unknown keys and
// malformed values are errors.
struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t steps = 2000;        // 0 derives steps from `epochs`
  std::size_t epochs = 0;
  std::size_t batch_size = 16;     // clips per step (videos per step halves with positives)
  double lr = 0.01;
  double weight_decay = 1e-5;
  double momentum = 0.9;
  double warmup_fraction = 0.05;
  double tau = 0.07;
  double lambda = 1.5;
  std::size_t bank_capacity = 512;
  std::string norm_mode = "cosine";
  std::size_t scales = 2;
  bool within_neg = true;
  bool within_pos = false;
  bool detach_guidance = true;
  double target_momentum = 0.999;
  std::size_t channels = 32;
  std::size_t filter_channels = 32;
  std::size_t embed_dim = 32;
  std::string projection_init = "identity";  // identity | random
  std::string feature_norm = "batch";
  std::size_t head_kernel = 3;
  std::size_t dataset_size = 512;
  std::size_t num_classes = 8;
  double amplitude = 1.0;
  double visual_noise = 0.6;
  double audio_noise = 0.15;
  std::size_t crop = 28;
  double flip_prob = 0.5;
  double jitter = 0.2;
  std::size_t time_warp = 4;
  std::size_t freq_mask = 4;
  std::size_t time_mask = 8;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::string out_dir = "run";

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  // Throws ConfigError describing the first problem found.
  void validate() const;
  // `key=value` per line in keys() order.
  std::string echo() const;

  std::size_t videos_per_step() const { return within_pos ? batch_size / 2 : batch_size; }
  std::size_t iterations_per_epoch() const;
  std::size_t total_steps() const;
  std::size_t warmup_steps() const;
  double lr_at(std::size_t step) const;

  ModelConfig model_config() const;
  SyntheticParams data_params() const;
  AugmentConfig augment_config() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

}  // namespace cmac
