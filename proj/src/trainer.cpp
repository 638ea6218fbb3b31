#include "cmac/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cmac/checkpoint.hpp"
#include "cmac/errors.hpp"
#include "cmac/ops.hpp"

namespace cmac {

namespace {

// Stream identifiers for derive_seed.
constexpr std::uint64_t kDataStream = 0xda7a;
constexpr std::uint64_t kOrderStream = 0x0bde;
constexpr std::uint64_t kClipAugStream = 0xc11b;
constexpr std::uint64_t kSpecAugStream = 0x5bec;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, kOrderStream, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return order;
}

Tensor stack(const std::vector<Tensor>& items) {
  Shape s{items.size()};
  s.insert(s.end(), items.front().shape().begin(), items.front().shape().end());
  std::vector<Scalar> data;
  data.reserve(numel(s));
  for (const auto& t : items) data.insert(data.end(), t.data().begin(), t.data().end());
  return Tensor(std::move(s), std::move(data));
}

double grad_norm(const std::vector<Parameter*>& params) {
  double acc = 0;
  for (const Parameter* p : params) {
    if (!p->tensor.has_grad()) continue;
    for (Scalar g : p->tensor.grad()) acc += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(acc);
}

}  // namespace

std::string to_json_line(const MetricsRecord& r) {
  std::ostringstream os;
  os << "{\"step\":" << r.step << ",\"lr\":" << fmt(r.lr) << ",\"total\":" << fmt(r.total)
     << ",\"cl_va\":" << fmt(r.cl_va) << ",\"cl_av\":" << fmt(r.cl_av) << ",\"ac_v\":" << fmt(r.ac_v)
     << ",\"ac_a\":" << fmt(r.ac_a) << ",\"bank_fill\":" << r.bank_fill << ",\"grad_norm\":" << fmt(r.grad_norm)
     << ",\"grad_norm_heads\":" << fmt(r.grad_norm_heads) << "}";
  return os.str();
}

std::vector<SyntheticPair> training_data(const RunConfig& cfg) {
  return make_dataset(cfg.dataset_size, derive_seed(cfg.seed, kDataStream), cfg.data_params());
}

StepBatch build_step_batch(const RunConfig& cfg, const std::vector<SyntheticPair>& data, std::size_t step) {
  const std::size_t videos = cfg.videos_per_step();
  const std::size_t ipe = cfg.iterations_per_epoch();
  const std::size_t epoch = step / ipe, pos = step % ipe;
  const auto order = epoch_order(data.size(), cfg.seed, epoch);
  const AugmentConfig aug = cfg.augment_config();
  const std::size_t views = cfg.within_pos ? 2 : 1;

  StepBatch b;
  std::vector<Tensor> clips[2], specs[2];
  for (std::size_t j = 0; j < videos; ++j) {
    const std::size_t idx = order[(pos * videos + j) % data.size()];
    b.indices.push_back(idx);
    const SyntheticPair& p = data[idx];
    for (std::size_t v = 0; v < views; ++v) {
      const std::size_t slot = j * views + v;
      clips[v].push_back(augment_visual(p.clip, p.region, aug, derive_seed(cfg.seed, kClipAugStream, step, slot)).clip);
      specs[v].push_back(augment_audio(p.spec, aug, derive_seed(cfg.seed, kSpecAugStream, step, slot)));
    }
  }
  b.input.clips = stack(clips[0]);
  b.input.specs = stack(specs[0]);
  if (views == 2) {
    b.input.clips2 = stack(clips[1]);
    b.input.specs2 = stack(specs[1]);
  }
  return b;
}

namespace {

struct StepFailure {
  std::size_t step;
  std::vector<std::size_t> indices;
};

MetricsRecord run_step(CmacModel& model, const RunConfig& cfg, const std::vector<SyntheticPair>& data,
                       std::size_t step, std::vector<Parameter*>& params, std::vector<Parameter*>& heads) {
  StepBatch batch = build_step_batch(cfg, data, step);
  zero_grad(params);
  StepOutput out = model.forward(batch.input, true);
  MetricsRecord r;
  r.step = step;
  r.lr = cfg.lr_at(step);
  r.total = out.loss.total.item();
  r.cl_va = out.loss.cl_va;
  r.cl_av = out.loss.cl_av;
  r.ac_v = out.loss.ac_v;
  r.ac_a = out.loss.ac_a;
  if (!std::isfinite(r.total)) throw StepFailure{step, batch.indices};
  out.loss.total.backward();
  r.grad_norm = grad_norm(params);
  r.grad_norm_heads = grad_norm(heads);
  if (!std::isfinite(r.grad_norm)) throw StepFailure{step, batch.indices};
  sgd_step(params, static_cast<Scalar>(r.lr), static_cast<Scalar>(cfg.weight_decay), static_cast<Scalar>(cfg.momentum));
  model.momentum_step();
  model.push_banks(out);
  r.bank_fill = model.bank_v().count();
  return r;
}

std::string failure_message(const StepFailure& f, const std::vector<SyntheticPair>& data) {
  std::ostringstream os;
  os << "non-finite loss or gradient at step " << f.step << "; batch pair seeds:";
  for (std::size_t i : f.indices) os << ' ' << data[i].seed;
  return os.str();
}

}  // namespace

std::vector<MetricsRecord> train_model(CmacModel& model, const RunConfig& cfg, const std::vector<SyntheticPair>& data,
                                       std::size_t first_step, std::size_t last_step,
                                       const std::function<void(const MetricsRecord&)>& on_step) {
  auto params = model.trainable_parameters();
  auto heads = collect_parameters(model.saliency_v());
  for (auto* p : collect_parameters(model.saliency_a())) heads.push_back(p);
  std::vector<MetricsRecord> out;
  for (std::size_t step = first_step; step < last_step; ++step) {
    try {
      out.push_back(run_step(model, cfg, data, step, params, heads));
    } catch (const StepFailure& f) {
      throw NumericError(failure_message(f, data));
    }
    if (on_step) on_step(out.back());
  }
  return out;
}

TrainResult train(const RunConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  namespace fs = std::filesystem;
  const fs::path dir(cfg.out_dir);
  const std::size_t total = cfg.total_steps();
  const std::size_t stop = options.stop_after > 0 ? std::min(options.stop_after, total) : total;

  CmacModel model(cfg.model_config());
  const auto data = training_data(cfg);
  std::size_t start = 0;
  if (!options.resume_from.empty()) {
    const CheckpointInfo info = load_checkpoint(options.resume_from, model);
    if (info.config_echo != cfg.echo()) {
      throw ConfigError("resume: checkpoint was written by a different configuration");
    }
    start = info.step;
  }

  std::ofstream metrics, timing;
  if (options.write_files) {
    fs::create_directories(dir);
    std::ofstream(dir / "config.txt") << cfg.echo();
    nlohmann::json manifest;
    manifest["config"] = cfg.echo();
    manifest["total_steps"] = total;
    manifest["videos_per_step"] = cfg.videos_per_step();
    manifest["clips_per_step"] = cfg.batch_size;
    manifest["iterations_per_epoch"] = cfg.iterations_per_epoch();
    manifest["warmup_steps"] = cfg.warmup_steps();
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';

    // Keep only records before the resume point so the log matches an uninterrupted run.
    std::vector<std::string> kept;
    if (start > 0) {
      std::ifstream old(dir / "metrics.jsonl");
      std::string line;
      while (std::getline(old, line)) {
        if (line.empty()) continue;
        if (nlohmann::json::parse(line).at("step").get<std::size_t>() < start) kept.push_back(line);
      }
    }
    metrics.open(dir / "metrics.jsonl", std::ios::trunc);
    for (const auto& l : kept) metrics << l << '\n';
    timing.open(dir / "timing.jsonl", start > 0 ? std::ios::app : std::ios::trunc);
  }

  TrainResult result;
  result.steps_done = start;
  auto last_tick = std::chrono::steady_clock::now();
  auto on_step = [&](const MetricsRecord& r) {
    result.metrics.push_back(r);
    result.steps_done = r.step + 1;
    if (options.write_files) {
      const auto now = std::chrono::steady_clock::now();
      metrics << to_json_line(r) << '\n';
      timing << "{\"step\":" << r.step << ",\"wall_ms\":"
             << fmt(std::chrono::duration<double, std::milli>(now - last_tick).count()) << "}\n";
      last_tick = now;
      if (cfg.checkpoint_every > 0 && (r.step + 1) % cfg.checkpoint_every == 0 && r.step + 1 < stop) {
        const auto p = (dir / ("checkpoint_" + std::to_string(r.step + 1) + ".bin")).string();
        save_checkpoint(p, model, cfg, r.step + 1);
        result.checkpoint = p;
      }
    }
    if (options.on_step) options.on_step(r);
  };

  try {
    train_model(model, cfg, data, start, stop, on_step);
  } catch (const NumericError& e) {
    if (options.write_files) {
      nlohmann::json dump;
      dump["error"] = e.what();
      dump["config"] = cfg.echo();
      std::ofstream(dir / "nan_dump.json") << dump.dump(2) << '\n';
    }
    throw;
  }

  if (options.write_files) {
    const std::string name = stop == total ? "checkpoint.bin" : "checkpoint_" + std::to_string(stop) + ".bin";
    result.checkpoint = (dir / name).string();
    save_checkpoint(result.checkpoint, model, cfg, stop);
  }
  return result;
}

}  // namespace cmac
