#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cmac/checkpoint.hpp"
#include "cmac/config.hpp"
#include "cmac/errors.hpp"
#include "cmac/evaluation.hpp"
#include "cmac/trainer.hpp"
#include "support.hpp"

using namespace cmac;
using namespace cmac::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cmac_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// A few-second configuration: narrow encoders, small batches and dataset.
RunConfig tiny_config(const fs::path& dir, std::size_t steps = 4) {
  RunConfig c;
  c.steps = steps;
  c.batch_size = 4;
  c.channels = 8;
  c.filter_channels = 8;
  c.embed_dim = 8;
  c.dataset_size = 8;
  c.bank_capacity = 16;
  c.out_dir = dir.string();
  c.validate();
  return c;
}

std::vector<double> flat_state(CmacModel& m) {
  std::vector<double> out;
  for (const NamedState& s : collect_state(m))
    for (Scalar v : s.tensor->data()) out.push_back(v);
  return out;
}

}  // namespace

TEST(Config, ParseEchoRoundTrip) {
  const RunConfig c = parse_config("# comment\nsteps = 12\nlr=0.05\n\nnorm_mode = softmax\nwithin_pos = true\n");
  EXPECT_EQ(c.steps, 12u);
  EXPECT_EQ(c.lr, 0.05);
  EXPECT_EQ(c.norm_mode, "softmax");
  EXPECT_TRUE(c.within_pos);
  EXPECT_EQ(parse_config(c.echo()).echo(), c.echo());
  for (const auto& key : RunConfig::keys()) EXPECT_NE(c.echo().find(key + "="), std::string::npos) << key;
}

TEST(Config, RejectsUnknownAndMalformed) {
  EXPECT_THROW(parse_config("stepz = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("steps = three\n"), ConfigError);
  EXPECT_THROW(parse_config("just a line\n"), ConfigError);
  RunConfig c;
  c.steps = 0;
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.tau = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.norm_mode = "l1";
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.within_pos = true;
  c.batch_size = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, WarmupSchedule) {
  RunConfig c;
  c.steps = 200;
  c.warmup_fraction = 0.05;
  const std::size_t w = c.warmup_steps();
  ASSERT_EQ(w, 10u);
  EXPECT_DOUBLE_EQ(c.lr_at(0), c.lr / static_cast<double>(w));
  EXPECT_EQ(c.lr_at(w - 1), c.lr);
  EXPECT_EQ(c.lr_at(199), c.lr);
  for (std::size_t s = 1; s < w; ++s) EXPECT_NEAR(c.lr_at(s) - c.lr_at(s - 1), c.lr / static_cast<double>(w), 1e-15);
}

TEST(Config, IterationsPerEpochSamplingPolicies) {
  RunConfig base;
  base.dataset_size = 512;
  base.batch_size = 16;
  RunConfig neg = base, pos = base, off = base;
  neg.within_neg = true;
  off.within_neg = false;
  pos.within_pos = true;
  EXPECT_EQ(off.iterations_per_epoch(), 32u);
  EXPECT_EQ(neg.iterations_per_epoch(), off.iterations_per_epoch());
  EXPECT_EQ(pos.iterations_per_epoch(), 2 * off.iterations_per_epoch());
  pos.steps = 0;
  pos.epochs = 3;
  EXPECT_EQ(pos.total_steps(), 192u);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const fs::path dir = scratch_dir("lr0");
  RunConfig c = tiny_config(dir, 3);
  c.lr = 0;
  c.target_momentum = 0.5;
  CmacModel model(c.model_config());
  std::vector<double> before;
  for (Parameter* p : model.trainable_parameters())
    for (Scalar v : p->tensor.data()) before.push_back(v);
  train_model(model, c, training_data(c), 0, 3);
  std::vector<double> after;
  for (Parameter* p : model.trainable_parameters())
    for (Scalar v : p->tensor.data()) after.push_back(v);
  EXPECT_EQ(before, after);
}

TEST(Train, WritesArtifactsAndManifest) {
  const fs::path dir = scratch_dir("artifacts");
  const RunConfig c = tiny_config(dir, 3);
  const TrainResult r = train(c);
  EXPECT_EQ(r.steps_done, 3u);
  ASSERT_EQ(r.metrics.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r.metrics[i].step, i);
  for (const char* f : {"config.txt", "manifest.json", "metrics.jsonl", "timing.jsonl", "checkpoint.bin"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(slurp(dir / "config.txt"), c.echo());
  const std::string manifest = slurp(dir / "manifest.json");
  const auto at = manifest.find("\"iterations_per_epoch\":");
  ASSERT_NE(at, std::string::npos);
  EXPECT_EQ(std::stoul(manifest.substr(at + 23)), 2u);
  const RunConfig echoed = parse_config(read_checkpoint_info(r.checkpoint).config_echo);
  EXPECT_EQ(echoed.echo(), c.echo());
}

TEST(Train, ManifestIterationsTrackPositivesOnly) {
  auto iterations = [](bool neg, bool pos, const std::string& tag) {
    const fs::path dir = scratch_dir("manifest_" + tag);
    RunConfig c = tiny_config(dir, 1);
    c.within_neg = neg;
    c.within_pos = pos;
    train(c);
    const std::string m = slurp(dir / "manifest.json");
    const auto at = m.find("\"iterations_per_epoch\":");
    return std::stoul(m.substr(at + 23));
  };
  const auto base = iterations(false, false, "off");
  EXPECT_EQ(iterations(true, false, "neg"), base);
  EXPECT_EQ(iterations(false, true, "pos"), 2 * base);
}

TEST(Train, FullRunIsByteDeterministic) {
  const fs::path dir = scratch_dir("determinism");
  const RunConfig c = tiny_config(dir, 4);
  train(c);
  const std::string metrics = slurp(dir / "metrics.jsonl"), ckpt = slurp(dir / "checkpoint.bin");
  fs::remove_all(dir);
  train(c);
  EXPECT_EQ(slurp(dir / "metrics.jsonl"), metrics);
  EXPECT_EQ(slurp(dir / "checkpoint.bin"), ckpt);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const fs::path full_dir = scratch_dir("resume_full"), split_dir = scratch_dir("resume_split");
  const TrainResult full = train(tiny_config(full_dir, 5));

  const RunConfig split = tiny_config(split_dir, 5);
  TrainOptions first;
  first.stop_after = 2;
  const TrainResult a = train(split, first);
  EXPECT_EQ(a.steps_done, 2u);
  TrainOptions second;
  second.resume_from = a.checkpoint;
  const TrainResult b = train(split, second);
  ASSERT_EQ(b.metrics.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(to_json_line(b.metrics[i]), to_json_line(full.metrics[i + 2]));
  // The files differ only in the echoed out_dir; the restored states match.
  CmacModel m_full(split.model_config()), m_split(split.model_config());
  load_checkpoint((full_dir / "checkpoint.bin").string(), m_full);
  load_checkpoint((split_dir / "checkpoint.bin").string(), m_split);
  EXPECT_EQ(flat_state(m_split), flat_state(m_full));
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const fs::path dir = scratch_dir("ckpt");
  const RunConfig c = tiny_config(dir, 2);
  CmacModel model(c.model_config());
  train_model(model, c, training_data(c), 0, 2);
  save_checkpoint((dir / "a.bin").string(), model, c, 2);
  CmacModel restored(c.model_config());
  const CheckpointInfo info = load_checkpoint((dir / "a.bin").string(), restored);
  EXPECT_EQ(info.step, 2u);
  EXPECT_EQ(flat_state(restored), flat_state(model));
  save_checkpoint((dir / "b.bin").string(), restored, c, 2);
  EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
}

TEST(Checkpoint, MismatchAndCorruptionAreFormatErrors) {
  const fs::path dir = scratch_dir("ckpt_bad");
  const RunConfig c = tiny_config(dir, 1);
  CmacModel model(c.model_config());
  save_checkpoint((dir / "a.bin").string(), model, c, 0);
  RunConfig wider = c;
  wider.channels = 16;
  CmacModel other(wider.model_config());
  EXPECT_THROW(load_checkpoint((dir / "a.bin").string(), other), FormatError);
  std::string bytes = slurp(dir / "a.bin");
  bytes.resize(bytes.size() / 2);
  std::ofstream((dir / "cut.bin"), std::ios::binary) << bytes;
  EXPECT_THROW(load_checkpoint((dir / "cut.bin").string(), model), FormatError);
  EXPECT_THROW(read_checkpoint_info((dir / "missing.bin").string()), FormatError);
}

TEST(Train, NonFiniteLossAbortsWithDump) {
  const fs::path dir = scratch_dir("nan");
  RunConfig c = tiny_config(dir, 6);
  c.lr = 1e300;
  c.warmup_fraction = 0;
  EXPECT_THROW(train(c), NumericError);
  EXPECT_TRUE(fs::exists(dir / "nan_dump.json"));
}

TEST(Localization, UniformMapHasUnitMassRatio) {
  const std::vector<std::uint8_t> mask{1, 1, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
  MassAccumulator exact;
  exact.add(std::vector<Scalar>(12, Scalar(0.5)), mask);
  EXPECT_EQ(exact.ratio(), 1.0);
  // Other levels can differ from 1 by the rounding of the two sums.
  MassAccumulator acc;
  acc.add(std::vector<Scalar>(12, Scalar(0.37)), mask);
  EXPECT_DOUBLE_EQ(acc.ratio(), 1.0);
}

TEST(Localization, PointingGameCountsArgmaxHits) {
  PointingAccumulator acc;
  // Two frames of four cells; the first frame's peak is inside the mask.
  const std::vector<Scalar> map{0.1, 0.9, 0.2, 0.3, 0.8, 0.1, 0.1, 0.1};
  const std::vector<std::uint8_t> mask{0, 1, 0, 0, 0, 1, 1, 0};
  acc.add(map, mask, 2);
  EXPECT_EQ(acc.accuracy(), 0.5);
  EXPECT_EQ(acc.chance(), 3.0 / 8.0);
}

TEST(Localization, EmptyDatasetIsContractError) {
  const RunConfig c = tiny_config(scratch_dir("loc_empty"));
  CmacModel model(c.model_config());
  EXPECT_THROW(eval_localization(model, {}), ContractError);
}

TEST(Probe, ShuffledLabelsNearChanceAndDeterministic) {
  const RunConfig c = tiny_config(scratch_dir("probe"));
  RunConfig big = c;
  big.dataset_size = 64;
  CmacModel model(c.model_config());
  ProbeConfig pc;
  pc.shuffle_labels = true;
  pc.seed = 3;
  const auto test = evaluation_data(c, 128);
  const ProbeResult r = linear_probe(model, training_data(big), test, c.num_classes, pc);
  EXPECT_LT(r.visual, 0.35);
  EXPECT_LT(r.audio, 0.35);
  const ProbeResult again = linear_probe(model, training_data(big), test, c.num_classes, pc);
  EXPECT_EQ(r.visual, again.visual);
  EXPECT_EQ(r.audio, again.audio);
}

TEST(Probe, SeparableFeaturesAreLearned) {
  // Class c has feature vector e_c plus small noise.
  Rng rng(4);
  std::vector<std::vector<double>> x, tx;
  std::vector<std::size_t> y, ty;
  for (std::size_t i = 0; i < 80; ++i) {
    std::vector<double> f(4);
    for (double& v : f) v = rng.uniform(-0.1, 0.1);
    f[i % 4] += 1;
    (i < 40 ? x : tx).push_back(f);
    (i < 40 ? y : ty).push_back(i % 4);
  }
  EXPECT_EQ(softmax_probe(x, y, tx, ty, 4, {}), 1.0);
}

TEST(Export, GridRoundTripAndFiles) {
  const fs::path dir = scratch_dir("export");
  Rng rng(5);
  const Tensor g = random_tensor({2, 3, 4}, rng);
  write_grid((dir / "g.txt").string(), g);
  const Tensor back = read_grid((dir / "g.txt").string());
  EXPECT_EQ(back.shape(), g.shape());
  EXPECT_EQ(max_abs_diff(back.data(), g.data()), 0.0);

  const RunConfig c = tiny_config(dir);
  CmacModel model(c.model_config());
  const auto pairs = evaluation_data(c, 2);
  const auto files = export_attention(model, pairs, (dir / "attn").string());
  EXPECT_EQ(files.size(), 12u);
  const Tensor sv = read_grid((dir / "attn" / "pair0_s_v.txt").string());
  EXPECT_EQ(sv.shape(), (Shape{2, 8, 8}));
  for (Scalar v : sv.data()) {
    EXPECT_GE(v, 0);
    EXPECT_LE(v, 1);
  }
  EXPECT_EQ(slurp(dir / "attn" / "pair0_visual.ppm").substr(0, 2), "P6");
}

TEST(Sweep, RowsMatchValuesAndSingleValueEqualsTrain) {
  const fs::path dir = scratch_dir("sweep");
  const RunConfig c = tiny_config(dir, 2);
  const auto rows = sweep(c, SweepAxis::lambda, {"0", "1.5"});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_NE(rows[0].final_loss, rows[1].final_loss);
  const std::string table = sweep_table(SweepAxis::lambda, rows);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 3);
  EXPECT_TRUE(fs::exists(dir / "sweep_lambda.tsv"));

  RunConfig plain = apply_sweep_value(c, SweepAxis::lambda, "1.5");
  plain.out_dir = scratch_dir("sweep_plain").string();
  EXPECT_EQ(train(plain).metrics.back().total, rows[1].final_loss);

  EXPECT_EQ(apply_sweep_value(c, SweepAxis::sampling_policy, "nce").within_neg, false);
  EXPECT_EQ(apply_sweep_value(c, SweepAxis::sampling_policy, "neg+pos").within_pos, true);
  EXPECT_THROW(parse_sweep_axis("tau"), ConfigError);
}

TEST(Cli, ExitCodes) {
  const std::string cli = CMAC_CLI_PATH;
  const fs::path dir = scratch_dir("cli");
  auto run = [&](const std::string& args) {
    const int rc = std::system((cli + " " + args + " > " + (dir / "out.txt").string() + " 2>&1").c_str());
    return WEXITSTATUS(rc);
  };
  EXPECT_EQ(run("train --steps 0 --epochs 0"), 2);
  EXPECT_EQ(run("train --lr abc"), 2);
  EXPECT_EQ(run("export-attn --checkpoint " + (dir / "missing.bin").string()), 1);
  EXPECT_EQ(run("gradcheck --seed 2"), 0);
  EXPECT_NE(slurp(dir / "out.txt").find("\"pass\":true"), std::string::npos);
  EXPECT_EQ(run("train --steps 1 --batch_size 4 --channels 8 --filter_channels 8 --embed_dim 8 --dataset_size 8 "
                "--quiet --out_dir " + (dir / "run").string()),
            0);
  EXPECT_EQ(run("eval-loc --pairs 4 --checkpoint " + (dir / "run" / "checkpoint.bin").string()), 0);
  EXPECT_NE(slurp(dir / "out.txt").find("guided_v"), std::string::npos);
}
