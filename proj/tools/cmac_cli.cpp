// Command-line front end: train, export-attn, eval-loc, probe, sweep, gradcheck.
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmac/checkpoint.hpp"
#include "cmac/config.hpp"
#include "cmac/errors.hpp"
#include "cmac/evaluation.hpp"
#include "cmac/oracle/bridge.hpp"
#include "cmac/trainer.hpp"
#include "json.hpp"

using namespace cmac;

namespace {

// --config plus one --<key> flag per RunConfig field; flags override the file.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "key = value config file");
    for (const auto& key : RunConfig::keys()) {
      cmd->add_option("--" + key, values[key], "config field '" + key + "'");
    }
  }

  RunConfig resolve() const {
    RunConfig cfg = file.empty() ? RunConfig{} : load_config(file);
    for (const auto& [key, value] : values) {
      if (!value.empty()) cfg.set(key, value);
    }
    cfg.validate();
    return cfg;
  }
};

// A model restored from a checkpoint (config taken from its echo), or a
// freshly initialised one from the given config.
struct LoadedModel {
  RunConfig cfg;
  std::unique_ptr<CmacModel> model;
};

LoadedModel load_model(const std::string& checkpoint, const RunConfig& fallback) {
  LoadedModel m;
  if (checkpoint.empty()) {
    m.cfg = fallback;
    m.model = std::make_unique<CmacModel>(m.cfg.model_config());
    return m;
  }
  if (!std::filesystem::exists(checkpoint)) throw FormatError("checkpoint '" + checkpoint + "' does not exist");
  m.cfg = parse_config(read_checkpoint_info(checkpoint).config_echo);
  m.model = std::make_unique<CmacModel>(m.cfg.model_config());
  load_checkpoint(checkpoint, *m.model);
  return m;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<SyntheticPair> first_n(std::vector<SyntheticPair> pairs, std::size_t n) {
  if (n < pairs.size()) pairs.resize(n);
  return pairs;
}

int run_train(const ConfigFlags& flags, const std::string& resume, std::size_t stop_after, bool quiet) {
  const RunConfig cfg = flags.resolve();
  TrainOptions opt;
  opt.resume_from = resume;
  opt.stop_after = stop_after;
  if (!quiet) {
    const std::size_t every = std::max<std::size_t>(1, cfg.total_steps() / 20);
    opt.on_step = [every](const MetricsRecord& r) {
      if ((r.step + 1) % every == 0) std::cerr << to_json_line(r) << '\n';
    };
  }
  const TrainResult res = train(cfg, opt);
  nlohmann::json j;
  j["steps_done"] = res.steps_done;
  j["checkpoint"] = res.checkpoint;
  if (!res.metrics.empty()) j["final_total"] = res.metrics.back().total;
  std::cout << j.dump() << '\n';
  return 0;
}

int run_export(const ConfigFlags& flags, const std::string& checkpoint, std::size_t pairs, const std::string& out) {
  if (checkpoint.empty()) throw ConfigError("export-attn needs --checkpoint");
  LoadedModel m = load_model(checkpoint, flags.resolve());
  const auto files = export_attention(*m.model, first_n(evaluation_data(m.cfg, pairs), pairs), out);
  for (const auto& f : files) std::cout << f << '\n';
  return 0;
}

int run_eval_loc(const ConfigFlags& flags, const std::string& checkpoint, std::size_t pairs) {
  LoadedModel m = load_model(checkpoint, flags.resolve());
  std::cout << to_json(eval_localization(*m.model, evaluation_data(m.cfg, pairs))) << '\n';
  return 0;
}

int run_probe(const ConfigFlags& flags, const std::string& checkpoint, std::size_t pairs, const ProbeConfig& pc) {
  LoadedModel m = load_model(checkpoint, flags.resolve());
  const ProbeResult r =
      linear_probe(*m.model, training_data(m.cfg), evaluation_data(m.cfg, pairs), m.cfg.num_classes, pc);
  nlohmann::json j;
  j["visual"] = r.visual;
  j["audio"] = r.audio;
  j["shuffled_labels"] = pc.shuffle_labels;
  std::cout << j.dump() << '\n';
  return 0;
}

int run_sweep(const ConfigFlags& flags, const std::string& axis, const std::string& values) {
  const RunConfig cfg = flags.resolve();
  const SweepAxis ax = parse_sweep_axis(axis);
  const auto rows = sweep(cfg, ax, split_list(values));
  std::cout << sweep_table(ax, rows);
  return 0;
}

int run_gradcheck(std::uint64_t seed, std::size_t batch, std::size_t bank_rows, double h, double tol,
                  bool random_config) {
  if (sizeof(Scalar) != 8) throw ConfigError("gradcheck needs a 64-bit build (configure with CMAC_FLOAT32=OFF)");
  const ModelConfig mc = random_config ? oracle::random_micro_config(seed) : oracle::micro_model_config(seed);
  CmacModel model(mc);
  oracle::check_micro_caps(model);
  oracle::randomize_state(model, seed);
  if (bank_rows > 0) oracle::fill_banks(model, bank_rows, seed);
  const StepInput in = oracle::random_micro_input(mc, batch, seed);
  const oracle::GradcheckReport rep = oracle::gradcheck_model(model, in, h);
  nlohmann::json j;
  j["parameters"] = rep.coordinates;
  j["max_rel_err"] = rep.max_rel_err;
  j["worst"] = rep.worst;
  j["tolerance"] = tol;
  j["pass"] = rep.max_rel_err < tol;
  std::cout << j.dump() << '\n';
  return rep.max_rel_err < tol ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal attention consistency: desk-scale trainer and tools"};
  app.require_subcommand(1);

  ConfigFlags train_flags, export_flags, loc_flags, probe_flags, sweep_flags;

  auto* train_cmd = app.add_subcommand("train", "train a model; writes checkpoints and metrics to out_dir");
  train_flags.attach(train_cmd);
  std::string resume;
  std::size_t stop_after = 0;
  bool quiet = false;
  train_cmd->add_option("--resume", resume, "checkpoint to continue from");
  train_cmd->add_option("--stop-after", stop_after, "stop after this many total steps (0: run to the end)");
  train_cmd->add_flag("--quiet", quiet, "no progress lines on stderr");

  auto* export_cmd = app.add_subcommand("export-attn", "write guided/predicted attention maps as PPM and text grids");
  export_flags.attach(export_cmd);
  std::string export_ckpt, export_out = "attention";
  std::size_t export_pairs = 4;
  export_cmd->add_option("--checkpoint", export_ckpt, "trained checkpoint")->required();
  export_cmd->add_option("--pairs", export_pairs, "number of held-out pairs");
  export_cmd->add_option("--out", export_out, "output directory");

  auto* loc_cmd = app.add_subcommand("eval-loc", "in-region mass ratio and pointing game on held-out pairs");
  loc_flags.attach(loc_cmd);
  std::string loc_ckpt;
  std::size_t loc_pairs = 256;
  loc_cmd->add_option("--checkpoint", loc_ckpt, "trained checkpoint (omit for an untrained model)");
  loc_cmd->add_option("--pairs", loc_pairs, "number of held-out pairs");

  auto* probe_cmd = app.add_subcommand("probe", "linear probe on frozen pooled features");
  probe_flags.attach(probe_cmd);
  std::string probe_ckpt;
  std::size_t probe_pairs = 256;
  ProbeConfig pc;
  probe_cmd->add_option("--checkpoint", probe_ckpt, "trained checkpoint (omit for an untrained model)");
  probe_cmd->add_option("--pairs", probe_pairs, "number of held-out test pairs");
  probe_cmd->add_option("--iterations", pc.iterations, "gradient-descent iterations");
  probe_cmd->add_flag("--shuffle-labels", pc.shuffle_labels, "permute training labels (chance baseline)");
  probe_cmd->add_option("--probe-seed", pc.seed, "label permutation seed");

  auto* sweep_cmd = app.add_subcommand("sweep", "train and evaluate one run per value of an ablation axis");
  sweep_flags.attach(sweep_cmd);
  std::string axis, values;
  sweep_cmd->add_option("--axis", axis, "lambda | norm_mode | scales | sampling_policy")->required();
  sweep_cmd->add_option("--values", values, "comma-separated values")->required();

  auto* gc_cmd = app.add_subcommand("gradcheck", "autodiff vs central differences on a micro-model");
  std::uint64_t gc_seed = 1;
  std::size_t gc_batch = 3, gc_bank = 4;
  double gc_h = 1e-5, gc_tol = 1e-4;
  bool gc_random = false;
  gc_cmd->add_option("--seed", gc_seed, "model, input and bank seed");
  gc_cmd->add_option("--batch", gc_batch, "batch size");
  gc_cmd->add_option("--bank", gc_bank, "rows pushed into each memory bank");
  gc_cmd->add_option("--step", gc_h, "finite-difference step h");
  gc_cmd->add_option("--tol", gc_tol, "maximum relative error");
  gc_cmd->add_flag("--random-config", gc_random, "draw a random micro-configuration from the seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return run_train(train_flags, resume, stop_after, quiet);
    if (*export_cmd) return run_export(export_flags, export_ckpt, export_pairs, export_out);
    if (*loc_cmd) return run_eval_loc(loc_flags, loc_ckpt, loc_pairs);
    if (*probe_cmd) return run_probe(probe_flags, probe_ckpt, probe_pairs, pc);
    if (*sweep_cmd) return run_sweep(sweep_flags, axis, values);
    if (*gc_cmd) return run_gradcheck(gc_seed, gc_batch, gc_bank, gc_h, gc_tol, gc_random);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
