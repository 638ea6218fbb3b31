#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cmac/config.hpp"
#include "cmac/model.hpp"
#include "cmac/synthetic.hpp"

namespace cmac {

struct MetricsRecord {
  std::size_t step = 0;
  double lr = 0;
  double total = 0, cl_va = 0, cl_av = 0, ac_v = 0, ac_a = 0;
  std::size_t bank_fill = 0;
  double grad_norm = 0;       // all trainable parameters
  double grad_norm_heads = 0; // saliency heads only
};

// One JSON object per line; wall time is kept out so the log is reproducible.
std::string to_json_line(const MetricsRecord& r);

// Inputs of one optimisation step, a pure function of (config, dataset, step).
struct StepBatch {
  StepInput input;
  std::vector<std::size_t> indices;  // dataset items, one per video
};

StepBatch build_step_batch(const RunConfig& cfg, const std::vector<SyntheticPair>& data, std::size_t step);

// The training set of a run: make_dataset with a seed derived from cfg.seed.
std::vector<SyntheticPair> training_data(const RunConfig& cfg);

struct TrainOptions {
  std::string resume_from;    // checkpoint path; empty starts from scratch
  std::size_t stop_after = 0; // stop (with a checkpoint) after this many total steps; 0 runs to the end
  std::function<void(const MetricsRecord&)> on_step;
  bool write_files = true;
};

struct TrainResult {
  std::vector<MetricsRecord> metrics;  // steps run by this call
  std::string checkpoint;              // last checkpoint written
  std::size_t steps_done = 0;          // global step count reached
};

// Writes into cfg.out_dir: config.txt, manifest.json, metrics.jsonl,
// timing.jsonl and checkpoint files. Throws NumericError on a non-finite
// loss after writing nan_dump.json.
TrainResult train(const RunConfig& cfg, const TrainOptions& options = {});

// The same loop on an existing model (no files).
std::vector<MetricsRecord> train_model(CmacModel& model, const RunConfig& cfg, const std::vector<SyntheticPair>& data,
                                       std::size_t first_step, std::size_t last_step,
                                       const std::function<void(const MetricsRecord&)>& on_step = {});

}  // namespace cmac
