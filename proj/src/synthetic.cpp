#include "cmac/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "cmac/errors.hpp"
#include "cmac/parameter.hpp"

namespace cmac {

void SyntheticParams::validate() const {
  if (frames == 0 || height < 4 || width < 4 || spec_time < 4 || freq < 4) {
    throw ConfigError("synthetic: degenerate clip or spectrogram dimensions");
  }
  if (num_classes == 0) throw ConfigError("synthetic: need at least one class");
  if (class_id >= static_cast<int>(num_classes)) throw ConfigError("synthetic: class_id out of range");
  if (amplitude < 0 || visual_noise < 0 || audio_noise < 0 || audio_noise >= 1) {
    throw ConfigError("synthetic: amplitude and noise levels must be >= 0 (audio noise < 1)");
  }
  if (!(radius_min > 0) || radius_max < radius_min || radius_swing < 0 || radius_swing >= 1) {
    throw ConfigError("synthetic: invalid blob radius range");
  }
  const double extent = 2 * (radius_max * (1 + radius_swing) + 1);
  if (extent > static_cast<double>(std::min(height, width))) {
    throw ConfigError("synthetic: blob does not fit in the frame");
  }
  if (2 * band_halfwidth + 1 > freq) throw ConfigError("synthetic: tone band wider than the spectrogram");
}

SyntheticPair generate_pair(std::uint64_t seed, const SyntheticParams& p) {
  p.validate();
  constexpr double pi = std::numbers::pi;
  Rng rng(seed);
  SyntheticPair out;
  out.seed = seed;
  out.class_id = p.class_id >= 0 ? static_cast<std::size_t>(p.class_id) : rng.index(p.num_classes);
  const double cls = static_cast<double>(out.class_id);
  const double T = static_cast<double>(p.frames), H = static_cast<double>(p.height), W = static_cast<double>(p.width);

  // Class-dependent grating orientation, random phase and tint.
  const double theta = pi * cls / static_cast<double>(p.num_classes);
  const double wave = 2 * pi / 5.0;
  const double phase = rng.uniform(0, 2 * pi);
  double tint[3];
  for (double& c : tint) c = rng.uniform(0.3, 1.0);

  // Radius oscillates 0.6 to 1.2 cycles per clip; the centre drifts sinusoidally.
  const double r0 = rng.uniform(p.radius_min, p.radius_max);
  const double r_omega = 2 * pi * rng.uniform(0.6, 1.2) / T;
  const double r_phase = rng.uniform(0, 2 * pi);
  const double margin = r0 * (1 + p.radius_swing) + 1;
  auto axis = [&](double extent) {
    const double mid = rng.uniform(margin, extent - margin);
    const double amp = rng.uniform(0, std::min({mid - margin, extent - margin - mid, 4.0}));
    const double ph = rng.uniform(0, 2 * pi);
    return std::array<double, 3>{mid, amp, ph};
  };
  const auto ax = axis(W), ay = axis(H);
  const double c_omega = 2 * pi * rng.uniform(0.3, 0.8) / T;
  auto radius = [&](double tau) { return r0 * (1 + p.radius_swing * std::sin(r_omega * tau + r_phase)); };
  auto centre = [&](const std::array<double, 3>& a, double tau) { return a[0] + a[1] * std::sin(c_omega * tau + a[2]); };

  const double alpha = std::min(p.amplitude, 1.0);
  const std::size_t plane = p.height * p.width;
  std::vector<Scalar> clip(3 * p.frames * plane);
  out.region.assign(p.frames * plane, 0);
  for (std::size_t t = 0; t < p.frames; ++t) {
    const double tau = static_cast<double>(t);
    const double r = radius(tau), cx = centre(ax, tau), cy = centre(ay, tau);
    for (std::size_t y = 0; y < p.height; ++y)
      for (std::size_t x = 0; x < p.width; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
        const bool inside = dx * dx + dy * dy <= r * r;
        const double g = 0.5 + 0.5 * std::cos(wave * (dx * std::cos(theta) + dy * std::sin(theta)) + phase);
        out.region[t * plane + y * p.width + x] = inside;
        for (std::size_t c = 0; c < 3; ++c) {
          double v = p.visual_noise * rng.uniform();
          if (inside) v = (1 - alpha) * v + alpha * tint[c] * (0.3 + 0.7 * g);
          clip[(c * p.frames + t) * plane + y * p.width + x] = static_cast<Scalar>(std::clamp(v, 0.0, 1.0));
        }
      }
  }
  out.clip = Tensor(Shape{3, p.frames, p.height, p.width}, std::move(clip));

  // Band centre by class; loudness follows blob area.
  const double r_top = r0 * (1 + p.radius_swing);
  const std::size_t centre_bin = std::min(
      p.freq - 1 - p.band_halfwidth,
      std::max(p.band_halfwidth, static_cast<std::size_t>((cls + 0.5) * static_cast<double>(p.freq) /
                                                          static_cast<double>(p.num_classes))));
  out.band_lo = centre_bin - p.band_halfwidth;
  out.band_hi = centre_bin + p.band_halfwidth + 1;
  std::vector<Scalar> spec(p.spec_time * p.freq);
  for (std::size_t ta = 0; ta < p.spec_time; ++ta) {
    const double tau = (static_cast<double>(ta) + 0.5) * T / static_cast<double>(p.spec_time) - 0.5;
    const double rr = radius(tau) / r_top;
    const double level = (1 - p.audio_noise) * p.amplitude * rr * rr;
    for (std::size_t f = 0; f < p.freq; ++f) {
      double v = p.audio_noise * rng.uniform();
      if (f >= out.band_lo && f < out.band_hi) v += level;
      spec[ta * p.freq + f] = static_cast<Scalar>(std::clamp(v, 0.0, 1.0));
    }
  }
  out.spec = Tensor(Shape{1, p.spec_time, p.freq}, std::move(spec));
  return out;
}

AugmentConfig AugmentConfig::none(std::size_t frame_side) {
  AugmentConfig c;
  c.crop = frame_side;
  c.flip_prob = 0;
  c.jitter = 0;
  c.time_warp = 0;
  c.freq_mask = 0;
  c.time_mask = 0;
  return c;
}

void AugmentConfig::validate(const SyntheticParams& p) const {
  if (crop == 0 || crop > std::min(p.height, p.width)) throw ConfigError("augment: crop larger than the frame");
  if (flip_prob < 0 || flip_prob > 1) throw ConfigError("augment: flip probability outside [0, 1]");
  if (jitter < 0 || jitter >= 1) throw ConfigError("augment: jitter must lie in [0, 1)");
  if (freq_mask >= p.freq) throw ConfigError("augment: frequency mask must be narrower than the spectrogram");
  if (time_mask >= p.spec_time) throw ConfigError("augment: time mask must be shorter than the spectrogram");
  if (2 * time_warp + 2 >= p.spec_time) throw ConfigError("augment: time warp too large for the spectrogram");
}

CropFlip draw_crop_flip(const AugmentConfig& cfg, std::size_t height, std::size_t width, std::uint64_t seed) {
  if (cfg.crop == 0 || cfg.crop > height || cfg.crop > width) {
    throw ConfigError("augment: crop " + std::to_string(cfg.crop) + " larger than frame " + std::to_string(height) +
                      "x" + std::to_string(width));
  }
  Rng rng(seed);
  CropFlip g;
  g.side = cfg.crop;
  g.top = rng.index(height - cfg.crop + 1);
  g.left = rng.index(width - cfg.crop + 1);
  g.flip = rng.uniform() < cfg.flip_prob;
  return g;
}

namespace {

template <class T>
std::vector<T> crop_flip_impl(std::span<const T> planes, std::size_t count, std::size_t height, std::size_t width,
                              const CropFlip& g) {
  if (planes.size() != count * height * width) throw DimensionError("augment: plane buffer size mismatch");
  std::vector<T> out(planes.size());
  const std::size_t plane = height * width;
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t y = 0; y < height; ++y) {
      const std::size_t sy = g.top + y * g.side / height;
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t ox = g.flip ? width - 1 - x : x;
        const std::size_t sx = g.left + ox * g.side / width;
        out[i * plane + y * width + x] = planes[i * plane + sy * width + sx];
      }
    }
  return out;
}

}  // namespace

std::vector<Scalar> apply_crop_flip(std::span<const Scalar> planes, std::size_t count, std::size_t height,
                                    std::size_t width, const CropFlip& g) {
  return crop_flip_impl(planes, count, height, width, g);
}

std::vector<std::uint8_t> apply_crop_flip(std::span<const std::uint8_t> planes, std::size_t count,
                                          std::size_t height, std::size_t width, const CropFlip& g) {
  return crop_flip_impl(planes, count, height, width, g);
}

AugmentedClip augment_visual(const Tensor& clip, const std::vector<std::uint8_t>& region, const AugmentConfig& cfg,
                             std::uint64_t seed) {
  if (clip.dim() != 4 || clip.size(0) != 3) {
    throw DimensionError("augment_visual: expected 3 x T x H x W, got " + shape_str(clip.shape()));
  }
  const std::size_t T = clip.size(1), H = clip.size(2), W = clip.size(3);
  if (region.size() != T * H * W) throw DimensionError("augment_visual: region mask does not match the clip");
  AugmentedClip out;
  out.geometry = draw_crop_flip(cfg, H, W, derive_seed(seed, 1));
  std::vector<Scalar> data = apply_crop_flip(clip.data(), 3 * T, H, W, out.geometry);
  if (cfg.jitter > 0) {
    Rng rng(derive_seed(seed, 2));
    for (std::size_t c = 0; c < 3; ++c) {
      const Scalar gain = static_cast<Scalar>(rng.uniform(1 - cfg.jitter, 1 + cfg.jitter));
      for (std::size_t i = c * T * H * W; i < (c + 1) * T * H * W; ++i)
        data[i] = std::clamp(data[i] * gain, Scalar(0), Scalar(1));
    }
  }
  out.clip = Tensor(clip.shape(), std::move(data));
  out.region = apply_crop_flip(std::span<const std::uint8_t>(region), T, H, W, out.geometry);
  return out;
}

Tensor augment_audio(const Tensor& spec, const AugmentConfig& cfg, std::uint64_t seed) {
  if (spec.dim() != 3 || spec.size(0) != 1) {
    throw DimensionError("augment_audio: expected 1 x T x F, got " + shape_str(spec.shape()));
  }
  const std::size_t T = spec.size(1), F = spec.size(2);
  if (cfg.freq_mask >= F || cfg.time_mask >= T) throw ConfigError("augment_audio: mask width must be below the axis length");
  Rng rng(seed);
  std::vector<Scalar> x(spec.data().begin(), spec.data().end());

  if (cfg.time_warp > 0) {
    const std::size_t w = cfg.time_warp;
    if (2 * w + 2 >= T) throw ConfigError("augment_audio: time warp too large");
    // Anchor c moves to c + d; both halves are stretched linearly.
    const double c = static_cast<double>(w + 1 + rng.index(T - 2 * w - 2));
    const double d = static_cast<double>(rng.index(2 * w + 1)) - static_cast<double>(w);
    const double last = static_cast<double>(T - 1);
    std::vector<Scalar> warped(x.size());
    for (std::size_t t = 0; t < T; ++t) {
      const double tt = static_cast<double>(t);
      const double s = tt <= c + d ? tt * c / (c + d) : c + (tt - (c + d)) * (last - c) / (last - (c + d));
      const std::size_t s0 = std::min(static_cast<std::size_t>(s), T - 1);
      const std::size_t s1 = std::min(s0 + 1, T - 1);
      const Scalar frac = static_cast<Scalar>(s - static_cast<double>(s0));
      for (std::size_t f = 0; f < F; ++f)
        warped[t * F + f] = frac == 0 ? x[s0 * F + f] : (1 - frac) * x[s0 * F + f] + frac * x[s1 * F + f];
    }
    x = std::move(warped);
  }

  Scalar mean = 0;
  for (Scalar v : x) mean += v;
  mean /= static_cast<Scalar>(x.size());
  if (cfg.freq_mask > 0) {
    const std::size_t f0 = rng.index(F - cfg.freq_mask + 1);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t f = f0; f < f0 + cfg.freq_mask; ++f) x[t * F + f] = mean;
  }
  if (cfg.time_mask > 0) {
    const std::size_t t0 = rng.index(T - cfg.time_mask + 1);
    for (std::size_t t = t0; t < t0 + cfg.time_mask; ++t)
      for (std::size_t f = 0; f < F; ++f) x[t * F + f] = mean;
  }
  return Tensor(spec.shape(), std::move(x));
}

namespace {

Tensor stack(const std::vector<const Tensor*>& items) {
  Shape s{items.size()};
  s.insert(s.end(), items.front()->shape().begin(), items.front()->shape().end());
  std::vector<Scalar> data;
  data.reserve(numel(s));
  for (const Tensor* t : items) {
    if (t->shape() != items.front()->shape()) throw DimensionError("make_batch: items differ in shape");
    data.insert(data.end(), t->data().begin(), t->data().end());
  }
  return Tensor(std::move(s), std::move(data));
}

}  // namespace

Batch make_batch(const std::vector<SyntheticPair>& pairs, bool sync, std::uint64_t shuffle_seed) {
  const std::size_t n = pairs.size();
  if (n == 0) throw ContractError("make_batch: n must be >= 1");
  if (!sync && n == 1) throw ContractError("make_batch: desynchronised batches need n >= 2");
  const std::size_t k = sync ? 0 : 1 + shuffle_seed % (n - 1);
  Batch b;
  std::vector<const Tensor*> clips, specs;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = (i + k) % n;
    clips.push_back(&pairs[i].clip);
    specs.push_back(&pairs[j].spec);
    b.regions.push_back(pairs[i].region);
    b.band_lo.push_back(pairs[j].band_lo);
    b.band_hi.push_back(pairs[j].band_hi);
    b.class_ids.push_back(pairs[i].class_id);
    b.spec_source.push_back(j);
  }
  b.clips = stack(clips);
  b.specs = stack(specs);
  return b;
}

Batch make_batch(std::size_t n, bool sync, const std::vector<std::uint64_t>& seeds, const SyntheticParams& params,
                 std::uint64_t shuffle_seed) {
  if (seeds.size() != n) throw ContractError("make_batch: need one seed per pair");
  std::vector<SyntheticPair> pairs;
  for (std::uint64_t s : seeds) pairs.push_back(generate_pair(s, params));
  return make_batch(pairs, sync, shuffle_seed);
}

std::vector<SyntheticPair> make_dataset(std::size_t count, std::uint64_t seed, const SyntheticParams& params) {
  std::vector<SyntheticPair> out;
  out.reserve(count);
  SyntheticParams p = params;
  for (std::size_t i = 0; i < count; ++i) {
    p.class_id = static_cast<int>(i % params.num_classes);
    out.push_back(generate_pair(derive_seed(seed, i), p));
  }
  return out;
}

namespace {

constexpr char kShardMagic[8] = {'C', 'M', 'A', 'C', 'S', 'H', 'D', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw FormatError("shard: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f64s(std::ostream& os, std::span<const Scalar> xs) {
  for (Scalar x : xs) {
    const double d = static_cast<double>(x);
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(os, bits);
  }
}

std::vector<Scalar> get_f64s(std::istream& is, std::size_t n) {
  std::vector<Scalar> out(n);
  for (auto& x : out) {
    const std::uint64_t bits = get_u64(is);
    double d;
    std::memcpy(&d, &bits, 8);
    x = static_cast<Scalar>(d);
  }
  return out;
}

nlohmann::json params_json(const SyntheticParams& p) {
  return {{"frames", p.frames},       {"height", p.height},
          {"width", p.width},         {"spec_time", p.spec_time},
          {"freq", p.freq},           {"num_classes", p.num_classes},
          {"amplitude", p.amplitude}, {"visual_noise", p.visual_noise},
          {"audio_noise", p.audio_noise}, {"radius_min", p.radius_min},
          {"radius_max", p.radius_max}, {"radius_swing", p.radius_swing},
          {"band_halfwidth", p.band_halfwidth}};
}

SyntheticParams params_from_json(const nlohmann::json& j) {
  SyntheticParams p;
  p.frames = j.at("frames");
  p.height = j.at("height");
  p.width = j.at("width");
  p.spec_time = j.at("spec_time");
  p.freq = j.at("freq");
  p.num_classes = j.at("num_classes");
  p.amplitude = j.at("amplitude");
  p.visual_noise = j.at("visual_noise");
  p.audio_noise = j.at("audio_noise");
  p.radius_min = j.at("radius_min");
  p.radius_max = j.at("radius_max");
  p.radius_swing = j.at("radius_swing");
  p.band_halfwidth = j.at("band_halfwidth");
  return p;
}

}  // namespace

void save_shard(const std::string& path, const std::vector<SyntheticPair>& pairs, const SyntheticParams& params) {
  nlohmann::json m;
  m["format"] = "cmac-shard";
  m["version"] = 1;
  m["params"] = params_json(params);
  m["count"] = pairs.size();
  m["layout"] = "per pair: clip 3xTxHxW f64le, spec 1xT~xF f64le, region TxHxW u8";
  nlohmann::json items = nlohmann::json::array();
  for (const auto& p : pairs) {
    items.push_back({{"seed", p.seed}, {"class_id", p.class_id}, {"band_lo", p.band_lo}, {"band_hi", p.band_hi}});
  }
  m["pairs"] = items;
  const std::string text = m.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("shard: cannot open '" + path + "' for writing");
  os.write(kShardMagic, 8);
  put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : pairs) {
    put_f64s(os, p.clip.data());
    put_f64s(os, p.spec.data());
    os.write(reinterpret_cast<const char*>(p.region.data()), static_cast<std::streamsize>(p.region.size()));
  }
  if (!os) throw FormatError("shard: write failed for '" + path + "'");
}

std::vector<SyntheticPair> load_shard(const std::string& path, SyntheticParams* params_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("shard: cannot open '" + path + "'");
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kShardMagic, 8) != 0) throw FormatError("shard: bad magic in '" + path + "'");
  const std::uint64_t len = get_u64(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("shard: truncated manifest");
  const auto m = nlohmann::json::parse(text);
  const SyntheticParams p = params_from_json(m.at("params"));
  const std::size_t count = m.at("count");
  const std::size_t plane = p.frames * p.height * p.width;
  std::vector<SyntheticPair> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& item = m.at("pairs").at(i);
    auto& q = out[i];
    q.seed = item.at("seed");
    q.class_id = item.at("class_id");
    q.band_lo = item.at("band_lo");
    q.band_hi = item.at("band_hi");
    q.clip = Tensor(Shape{3, p.frames, p.height, p.width}, get_f64s(is, 3 * plane));
    q.spec = Tensor(Shape{1, p.spec_time, p.freq}, get_f64s(is, p.spec_time * p.freq));
    q.region.resize(plane);
    if (!is.read(reinterpret_cast<char*>(q.region.data()), static_cast<std::streamsize>(plane))) {
      throw FormatError("shard: truncated data for pair " + std::to_string(i));
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("shard: trailing bytes in '" + path + "'");
  if (params_out) *params_out = p;
  return out;
}

namespace {

// mask: frames x rest (pixel level), grid: frames' x rest' (cell level).
std::vector<std::uint8_t> grid_mask(const std::vector<std::uint8_t>& mask, const Shape& fine, const Shape& coarse) {
  if (fine.size() != coarse.size() || fine.empty()) throw DimensionError("grid mask: rank mismatch");
  for (std::size_t a = 0; a < fine.size(); ++a)
    if (coarse[a] == 0 || coarse[a] > fine[a]) throw DimensionError("grid mask: coarse grid larger than fine grid");
  if (mask.size() != numel(fine)) throw DimensionError("grid mask: mask size mismatch");
  const std::size_t cells = numel(coarse);
  std::vector<double> covered(cells, 0), total(cells, 0);
  const std::size_t rank = fine.size();
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < mask.size(); ++flat) {
    std::size_t rem = flat, cell = 0;
    for (std::size_t a = rank; a-- > 0;) {
      idx[a] = rem % fine[a];
      rem /= fine[a];
    }
    for (std::size_t a = 0; a < rank; ++a) cell = cell * coarse[a] + idx[a] * coarse[a] / fine[a];
    total[cell] += 1;
    covered[cell] += mask[flat];
  }
  std::vector<std::uint8_t> out(cells, 0);
  const std::size_t per_frame = cells / coarse[0];
  for (std::size_t f = 0; f < coarse[0]; ++f) {
    bool any = false;
    std::size_t best = f * per_frame;
    for (std::size_t c = f * per_frame; c < (f + 1) * per_frame; ++c) {
      const double frac = covered[c] / total[c];
      if (frac >= 0.5) {
        out[c] = 1;
        any = true;
      }
      if (covered[c] / total[c] > covered[best] / total[best]) best = c;
    }
    if (!any && covered[best] > 0) out[best] = 1;
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> visual_grid_mask(const std::vector<std::uint8_t>& region, const Shape& clip_grid,
                                           const Shape& feature_grid) {
  return grid_mask(region, clip_grid, feature_grid);
}

std::vector<std::uint8_t> audio_grid_mask(std::size_t band_lo, std::size_t band_hi, const Shape& spec_grid,
                                          const Shape& feature_grid) {
  if (spec_grid.size() != 2 || band_hi > spec_grid[1] || band_lo >= band_hi) {
    throw DimensionError("audio grid mask: band outside the spectrogram");
  }
  std::vector<std::uint8_t> mask(spec_grid[0] * spec_grid[1], 0);
  for (std::size_t t = 0; t < spec_grid[0]; ++t)
    for (std::size_t f = band_lo; f < band_hi; ++f) mask[t * spec_grid[1] + f] = 1;
  return grid_mask(mask, spec_grid, feature_grid);
}

}  // namespace cmac
