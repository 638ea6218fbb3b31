#include "cmac/evaluation.hpp"

#include <algorithm>
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
#include "cmac/trainer.hpp"

namespace cmac {

namespace {

constexpr std::uint64_t kEvalStream = 0xe7a1;
constexpr std::uint64_t kProbeStream = 0x9b0e;

Shape grid_of(const Shape& chw) { return Shape(chw.begin() + 1, chw.end()); }

std::vector<SyntheticPair> slice(const std::vector<SyntheticPair>& pairs, std::size_t lo, std::size_t hi) {
  return {pairs.begin() + static_cast<std::ptrdiff_t>(lo), pairs.begin() + static_cast<std::ptrdiff_t>(hi)};
}

Tensor stack(const std::vector<Tensor>& items) {
  Shape s{items.size()};
  s.insert(s.end(), items.front().shape().begin(), items.front().shape().end());
  std::vector<Scalar> data;
  data.reserve(numel(s));
  for (const auto& t : items) data.insert(data.end(), t.data().begin(), t.data().end());
  return Tensor(std::move(s), std::move(data));
}

std::span<const Scalar> item(const Tensor& batch, std::size_t i) {
  const std::size_t per = batch.numel() / batch.size(0);
  return batch.data().subspan(i * per, per);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void MassAccumulator::add(std::span<const Scalar> map, std::span<const std::uint8_t> mask) {
  if (map.size() != mask.size()) {
    throw DimensionError("mass ratio: map has " + std::to_string(map.size()) + " cells, mask " +
                         std::to_string(mask.size()));
  }
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (mask[i]) {
      in_sum += map[i];
      ++in_count;
    } else {
      out_sum += map[i];
      ++out_count;
    }
  }
}

double MassAccumulator::ratio() const {
  if (in_count == 0 || out_count == 0) throw ContractError("mass ratio: mask is empty or covers every cell");
  const double in = in_sum / static_cast<double>(in_count);
  const double out = out_sum / static_cast<double>(out_count);
  if (in == out) return 1.0;
  return in / out;
}

void PointingAccumulator::add(std::span<const Scalar> map, std::span<const std::uint8_t> mask,
                              std::size_t frames_in_map) {
  if (map.size() != mask.size() || frames_in_map == 0 || map.size() % frames_in_map != 0) {
    throw DimensionError("pointing: map of " + std::to_string(map.size()) + " cells, mask of " +
                         std::to_string(mask.size()) + ", " + std::to_string(frames_in_map) + " frames");
  }
  const std::size_t cells = map.size() / frames_in_map;
  for (std::size_t f = 0; f < frames_in_map; ++f) {
    auto m = map.subspan(f * cells, cells);
    const std::size_t best = static_cast<std::size_t>(std::max_element(m.begin(), m.end()) - m.begin());
    hits += mask[f * cells + best] ? 1 : 0;
    std::size_t in = 0;
    for (std::size_t c = 0; c < cells; ++c) in += mask[f * cells + c] ? 1 : 0;
    area += static_cast<double>(in) / static_cast<double>(cells);
    ++frames;
  }
}

double PointingAccumulator::accuracy() const {
  if (frames == 0) throw ContractError("pointing: no frames");
  return static_cast<double>(hits) / static_cast<double>(frames);
}

double PointingAccumulator::chance() const {
  if (frames == 0) throw ContractError("pointing: no frames");
  return area / static_cast<double>(frames);
}

LocalizationReport eval_localization(CmacModel& model, const std::vector<SyntheticPair>& pairs, std::size_t batch) {
  if (pairs.empty()) throw ContractError("eval_localization: empty dataset");
  if (batch == 0) throw ConfigError("eval_localization: batch must be positive");
  const ModelConfig& mc = model.config();
  const Shape vgrid = grid_of(encoder_output_shape(mc.visual));
  const Shape agrid = grid_of(encoder_output_shape(mc.audio));
  const Shape clip_grid = mc.visual.input_grid, spec_grid = mc.audio.input_grid;

  MassAccumulator mass[4];
  PointingAccumulator point[4];
  for (std::size_t lo = 0; lo < pairs.size(); lo += batch) {
    const auto part = slice(pairs, lo, std::min(pairs.size(), lo + batch));
    const Batch b = make_batch(part, true);
    const StepOutput out = model.attention(b.clips, b.specs);
    for (std::size_t i = 0; i < part.size(); ++i) {
      const auto vmask = visual_grid_mask(part[i].region, clip_grid, vgrid);
      const auto amask = audio_grid_mask(part[i].band_lo, part[i].band_hi, spec_grid, agrid);
      const Tensor* maps[4] = {&out.s_v, &out.s_hat_v, &out.s_a, &out.s_hat_a};
      for (std::size_t k = 0; k < 4; ++k) {
        const auto& mask = k < 2 ? vmask : amask;
        const std::size_t frames = k < 2 ? vgrid.front() : agrid.front();
        mass[k].add(item(*maps[k], i), mask);
        point[k].add(item(*maps[k], i), mask, frames);
      }
    }
  }
  auto score = [&](std::size_t k) { return LocalizationScore{mass[k].ratio(), point[k].accuracy(), point[k].chance()}; };
  return {score(0), score(1), score(2), score(3), pairs.size()};
}

std::string to_json(const LocalizationReport& r) {
  auto one = [](const LocalizationScore& s) {
    return nlohmann::json{{"mass_ratio", s.mass_ratio}, {"pointing", s.pointing}, {"chance", s.chance}};
  };
  nlohmann::json j{{"pairs", r.pairs},
                   {"guided_visual", one(r.guided_v)},
                   {"predicted_visual", one(r.predicted_v)},
                   {"guided_audio", one(r.guided_a)},
                   {"predicted_audio", one(r.predicted_a)}};
  return j.dump(2);
}

std::vector<std::vector<double>> pooled_features(ConvEncoder& encoder, const std::vector<Tensor>& inputs,
                                                 std::size_t batch) {
  NoGradGuard guard;
  std::vector<std::vector<double>> rows;
  for (std::size_t lo = 0; lo < inputs.size(); lo += batch) {
    const std::vector<Tensor> part(inputs.begin() + static_cast<std::ptrdiff_t>(lo),
                                   inputs.begin() + static_cast<std::ptrdiff_t>(std::min(inputs.size(), lo + batch)));
    const Tensor feat = encoder.forward(stack(part), false);
    const Tensor pooled = global_avg_pool(feat, 2);
    const std::size_t c = pooled.numel() / part.size();
    for (std::size_t i = 0; i < part.size(); ++i) {
      auto p = pooled.data().subspan(i * c, c);
      rows.emplace_back(p.begin(), p.end());
    }
  }
  return rows;
}

double softmax_probe(const std::vector<std::vector<double>>& train_x, const std::vector<std::size_t>& train_y,
                     const std::vector<std::vector<double>>& test_x, const std::vector<std::size_t>& test_y,
                     std::size_t classes, const ProbeConfig& cfg) {
  if (train_x.empty() || test_x.empty()) throw ContractError("probe: empty split");
  if (train_x.size() != train_y.size() || test_x.size() != test_y.size()) {
    throw DimensionError("probe: feature and label counts differ");
  }
  const std::size_t n = train_x.size(), d = train_x.front().size();

  std::vector<double> mu(d, 0), sd(d, 0);
  for (const auto& r : train_x) {
    for (std::size_t j = 0; j < d; ++j) mu[j] += r[j];
  }
  for (double& m : mu) m /= static_cast<double>(n);
  for (const auto& r : train_x) {
    for (std::size_t j = 0; j < d; ++j) sd[j] += (r[j] - mu[j]) * (r[j] - mu[j]);
  }
  for (double& s : sd) s = std::max(std::sqrt(s / static_cast<double>(n)), 1e-8);
  auto standardise = [&](const std::vector<std::vector<double>>& x) {
    std::vector<double> out;
    out.reserve(x.size() * (d + 1));
    for (const auto& r : x) {
      if (r.size() != d) throw DimensionError("probe: ragged feature rows");
      for (std::size_t j = 0; j < d; ++j) out.push_back((r[j] - mu[j]) / sd[j]);
      out.push_back(1.0);  // bias column
    }
    return out;
  };
  const std::vector<double> xtr = standardise(train_x), xte = standardise(test_x);
  const std::size_t dd = d + 1;

  std::vector<std::size_t> y = train_y;
  if (cfg.shuffle_labels) {
    Rng rng(derive_seed(cfg.seed, kProbeStream));
    for (std::size_t i = n; i > 1; --i) std::swap(y[i - 1], y[rng.index(i)]);
  }
  for (std::size_t l : y) {
    if (l >= classes) throw ContractError("probe: label out of range");
  }

  std::vector<double> w(classes * dd, 0.0), g(classes * dd), p(classes);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = &xtr[i * dd];
      double mx = -1e300;
      for (std::size_t k = 0; k < classes; ++k) {
        double z = 0;
        for (std::size_t j = 0; j < dd; ++j) z += w[k * dd + j] * x[j];
        p[k] = z;
        mx = std::max(mx, z);
      }
      double den = 0;
      for (std::size_t k = 0; k < classes; ++k) den += (p[k] = std::exp(p[k] - mx));
      for (std::size_t k = 0; k < classes; ++k) {
        const double err = p[k] / den - (k == y[i] ? 1.0 : 0.0);
        for (std::size_t j = 0; j < dd; ++j) g[k * dd + j] += err * x[j];
      }
    }
    for (std::size_t q = 0; q < w.size(); ++q) {
      const bool bias = q % dd == d;
      w[q] -= cfg.lr * (g[q] / static_cast<double>(n) + (bias ? 0.0 : cfg.weight_decay * w[q]));
    }
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_x.size(); ++i) {
    const double* x = &xte[i * dd];
    std::size_t best = 0;
    double best_z = -1e300;
    for (std::size_t k = 0; k < classes; ++k) {
      double z = 0;
      for (std::size_t j = 0; j < dd; ++j) z += w[k * dd + j] * x[j];
      if (z > best_z) best_z = z, best = k;
    }
    correct += best == test_y[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(test_x.size());
}

ProbeResult linear_probe(CmacModel& model, const std::vector<SyntheticPair>& train_pairs,
                         const std::vector<SyntheticPair>& test_pairs, std::size_t classes, const ProbeConfig& cfg) {
  auto gather = [](const std::vector<SyntheticPair>& ps, bool visual) {
    std::vector<Tensor> out;
    for (const auto& p : ps) out.push_back(visual ? p.clip : p.spec);
    return out;
  };
  auto labels = [](const std::vector<SyntheticPair>& ps) {
    std::vector<std::size_t> out;
    for (const auto& p : ps) out.push_back(p.class_id);
    return out;
  };
  const auto ytr = labels(train_pairs), yte = labels(test_pairs);
  ProbeResult r;
  ConvEncoder& fv = model.visual().online.encoder;
  ConvEncoder& fa = model.audio().online.encoder;
  r.visual = softmax_probe(pooled_features(fv, gather(train_pairs, true)), ytr,
                           pooled_features(fv, gather(test_pairs, true)), yte, classes, cfg);
  r.audio = softmax_probe(pooled_features(fa, gather(train_pairs, false)), ytr,
                          pooled_features(fa, gather(test_pairs, false)), yte, classes, cfg);
  return r;
}

std::vector<SyntheticPair> evaluation_data(const RunConfig& cfg, std::size_t count) {
  return make_dataset(count, derive_seed(cfg.seed, kEvalStream), cfg.data_params());
}

void write_grid(const std::string& path, const Tensor& map) {
  if (map.dim() == 0) throw DimensionError("write_grid: scalar map");
  std::ofstream out(path);
  if (!out) throw FormatError("write_grid: cannot open " + path);
  out << "grid";
  for (std::size_t s : map.shape()) out << ' ' << s;
  out << '\n';
  const std::size_t row = map.shape().back();
  auto d = map.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << fmt(static_cast<double>(d[i])) << ((i + 1) % row == 0 ? '\n' : ' ');
  }
  if (!out) throw FormatError("write_grid: write failed for " + path);
}

Tensor read_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("read_grid: cannot open " + path);
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string tag;
  hs >> tag;
  if (tag != "grid") throw FormatError("read_grid: " + path + " lacks a grid header");
  Shape shape;
  for (std::size_t s; hs >> s;) shape.push_back(s);
  if (shape.empty()) throw FormatError("read_grid: " + path + " has no dimensions");
  std::vector<Scalar> data;
  data.reserve(numel(shape));
  std::string tok;
  while (in >> tok) data.push_back(static_cast<Scalar>(std::stod(tok)));
  if (data.size() != numel(shape)) {
    throw FormatError("read_grid: " + path + " holds " + std::to_string(data.size()) + " values, header says " +
                      std::to_string(numel(shape)));
  }
  return Tensor(std::move(shape), std::move(data));
}

void write_ppm(const std::string& path, std::size_t width, std::size_t height, std::span<const std::uint8_t> rgb) {
  if (rgb.size() != width * height * 3) throw DimensionError("write_ppm: pixel buffer does not match size");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("write_ppm: cannot open " + path);
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

namespace {

std::uint8_t byte(double v) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); }

// Grey base under a red (high) to blue (low) heat overlay.
void blend(std::uint8_t* px, double base, double heat) {
  px[0] = byte(0.5 * base + 0.5 * heat);
  px[1] = byte(0.5 * base);
  px[2] = byte(0.5 * base + 0.5 * (1.0 - heat));
}

// Nearest-neighbour lookup of a coarse grid value for a fine-grid index.
double sample(std::span<const Scalar> map, const Shape& coarse, const Shape& fine, const std::vector<std::size_t>& at) {
  std::size_t off = 0;
  for (std::size_t ax = 0; ax < coarse.size(); ++ax) off = off * coarse[ax] + at[ax] * coarse[ax] / fine[ax];
  return static_cast<double>(map[off]);
}

}  // namespace

std::vector<std::string> export_attention(CmacModel& model, const std::vector<SyntheticPair>& pairs,
                                          const std::string& out_dir) {
  if (pairs.empty()) throw ContractError("export_attention: no pairs");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const ModelConfig& mc = model.config();
  const Shape vgrid = grid_of(encoder_output_shape(mc.visual));
  const Shape agrid = grid_of(encoder_output_shape(mc.audio));
  const Shape cg = mc.visual.input_grid, sg = mc.audio.input_grid;
  const std::size_t T = cg[0], H = cg[1], W = cg[2], TS = sg[0], F = sg[1];

  std::vector<std::string> files;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Batch b = make_batch(slice(pairs, i, i + 1), true);
    const StepOutput out = model.attention(b.clips, b.specs);
    const std::string stem = (fs::path(out_dir) / ("pair" + std::to_string(i))).string();

    const std::pair<const char*, const Tensor*> grids[] = {
        {"_s_v.txt", &out.s_v}, {"_s_hat_v.txt", &out.s_hat_v}, {"_s_a.txt", &out.s_a}, {"_s_hat_a.txt", &out.s_hat_a}};
    for (const auto& [suffix, t] : grids) {
      Shape s(t->shape().begin() + 1, t->shape().end());
      write_grid(stem + suffix, reshape(t->detach(), s));
      files.push_back(stem + suffix);
    }

    // Visual: frames left to right, guidance on top, prediction below.
    {
      const auto clip = pairs[i].clip.data();
      std::vector<std::uint8_t> img(T * W * 2 * H * 3);
      const std::size_t iw = T * W;
      const Tensor* rows[2] = {&out.s_v, &out.s_hat_v};
      for (std::size_t r = 0; r < 2; ++r) {
        const auto map = item(*rows[r], 0);
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
              double grey = 0;
              for (std::size_t c = 0; c < 3; ++c) grey += clip[((c * T + t) * H + y) * W + x];
              const double heat = sample(map, vgrid, cg, {t, y, x});
              blend(&img[((r * H + y) * iw + t * W + x) * 3], grey / 3.0, heat);
            }
          }
        }
      }
      write_ppm(stem + "_visual.ppm", iw, 2 * H, img);
      files.push_back(stem + "_visual.ppm");
    }
    // Audio: time on x, frequency on y (low at the bottom), guidance left, prediction right.
    {
      const auto spec = pairs[i].spec.data();
      const std::size_t gap = 2, iw = 2 * TS + gap;
      std::vector<std::uint8_t> img(iw * F * 3, 255);
      const Tensor* cols[2] = {&out.s_a, &out.s_hat_a};
      for (std::size_t p = 0; p < 2; ++p) {
        const auto map = item(*cols[p], 0);
        for (std::size_t t = 0; t < TS; ++t) {
          for (std::size_t f = 0; f < F; ++f) {
            const double heat = sample(map, agrid, sg, {t, f});
            blend(&img[((F - 1 - f) * iw + p * (TS + gap) + t) * 3], spec[t * F + f], heat);
          }
        }
      }
      write_ppm(stem + "_audio.ppm", iw, F, img);
      files.push_back(stem + "_audio.ppm");
    }
  }
  return files;
}

SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "lambda") return SweepAxis::lambda;
  if (s == "norm_mode") return SweepAxis::norm_mode;
  if (s == "scales") return SweepAxis::scales;
  if (s == "sampling_policy") return SweepAxis::sampling_policy;
  throw ConfigError("unknown sweep axis '" + s + "' (expected lambda|norm_mode|scales|sampling_policy)");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::lambda:
      return "lambda";
    case SweepAxis::norm_mode:
      return "norm_mode";
    case SweepAxis::scales:
      return "scales";
    case SweepAxis::sampling_policy:
      return "sampling_policy";
  }
  return "lambda";
}

RunConfig apply_sweep_value(const RunConfig& base, SweepAxis axis, const std::string& value) {
  RunConfig cfg = base;
  switch (axis) {
    case SweepAxis::lambda:
    case SweepAxis::norm_mode:
    case SweepAxis::scales:
      cfg.set(to_string(axis), value);
      break;
    case SweepAxis::sampling_policy:
      if (value == "nce") {
        cfg.within_neg = false, cfg.within_pos = false;
      } else if (value == "neg") {
        cfg.within_neg = true, cfg.within_pos = false;
      } else if (value == "pos") {
        cfg.within_neg = false, cfg.within_pos = true;
      } else if (value == "neg+pos") {
        cfg.within_neg = true, cfg.within_pos = true;
      } else {
        throw ConfigError("unknown sampling policy '" + value + "' (expected nce|neg|pos|neg+pos)");
      }
      break;
  }
  cfg.out_dir = (std::filesystem::path(base.out_dir) / (to_string(axis) + "_" + value)).string();
  cfg.validate();
  return cfg;
}

std::vector<SweepRow> sweep(const RunConfig& base, SweepAxis axis, const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("sweep: no values");
  std::vector<RunConfig> cfgs;
  for (const auto& v : values) cfgs.push_back(apply_sweep_value(base, axis, v));

  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const TrainResult tr = train(cfgs[i]);
    CmacModel model(cfgs[i].model_config());
    load_checkpoint(tr.checkpoint, model);
    const auto train_pairs = training_data(cfgs[i]);
    const auto test_pairs = evaluation_data(cfgs[i]);
    SweepRow row;
    row.value = values[i];
    row.final_loss = tr.metrics.empty() ? 0.0 : tr.metrics.back().total;
    row.probe = linear_probe(model, train_pairs, test_pairs, cfgs[i].num_classes);
    row.localization = eval_localization(model, test_pairs);
    rows.push_back(row);
  }
  std::filesystem::create_directories(base.out_dir);
  const auto table = (std::filesystem::path(base.out_dir) / ("sweep_" + to_string(axis) + ".tsv")).string();
  std::ofstream(table) << sweep_table(axis, rows);
  return rows;
}

std::string sweep_table(SweepAxis axis, const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << to_string(axis)
     << "\tfinal_loss\tprobe_visual\tprobe_audio\tmass_guided_v\tpointing_guided_v\tchance_v\tmass_predicted_v"
        "\tmass_guided_a\tpointing_guided_a\tchance_a\n";
  for (const auto& r : rows) {
    const auto& l = r.localization;
    os << r.value << '\t' << fmt(r.final_loss) << '\t' << fmt(r.probe.visual) << '\t' << fmt(r.probe.audio) << '\t'
       << fmt(l.guided_v.mass_ratio) << '\t' << fmt(l.guided_v.pointing) << '\t' << fmt(l.guided_v.chance) << '\t'
       << fmt(l.predicted_v.mass_ratio) << '\t' << fmt(l.guided_a.mass_ratio) << '\t' << fmt(l.guided_a.pointing)
       << '\t' << fmt(l.guided_a.chance) << '\n';
  }
  return os.str();
}

}  // namespace cmac
