#include "cmac/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "cmac/errors.hpp"

namespace cmac {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void parse_into(const std::string& key, const std::string& v, std::uint64_t& out) {
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

void parse_into(const std::string& key, const std::string& v, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

void parse_into(const std::string& key, const std::string& v, bool& out) {
  if (v == "true" || v == "1") {
    out = true;
  } else if (v == "false" || v == "0") {
    out = false;
  } else {
    throw ConfigError("config: '" + key + "' expects true|false, got '" + v + "'");
  }
}

void parse_into(const std::string&, const std::string& v, std::string& out) { out = v; }

std::string show(std::uint64_t v) { return std::to_string(v); }
std::string show(double v) { return format_double(v); }
std::string show(bool v) { return v ? "true" : "false"; }
std::string show(const std::string& v) { return v; }

struct Field {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field field(const char* name, T RunConfig::*member) {
  return {name,
          [name, member](RunConfig& c, const std::string& v) {
            if constexpr (std::is_same_v<T, std::size_t>) {
              std::uint64_t x = 0;
              parse_into(name, v, x);
              c.*member = static_cast<std::size_t>(x);
            } else {
              parse_into(name, v, c.*member);
            }
          },
          [member](const RunConfig& c) {
            if constexpr (std::is_same_v<T, std::size_t>) {
              return show(static_cast<std::uint64_t>(c.*member));
            } else {
              return show(c.*member);
            }
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      field("seed", &RunConfig::seed),
      field("steps", &RunConfig::steps),
      field("epochs", &RunConfig::epochs),
      field("batch_size", &RunConfig::batch_size),
      field("lr", &RunConfig::lr),
      field("weight_decay", &RunConfig::weight_decay),
      field("momentum", &RunConfig::momentum),
      field("warmup_fraction", &RunConfig::warmup_fraction),
      field("tau", &RunConfig::tau),
      field("lambda", &RunConfig::lambda),
      field("bank_capacity", &RunConfig::bank_capacity),
      field("norm_mode", &RunConfig::norm_mode),
      field("scales", &RunConfig::scales),
      field("within_neg", &RunConfig::within_neg),
      field("within_pos", &RunConfig::within_pos),
      field("detach_guidance", &RunConfig::detach_guidance),
      field("target_momentum", &RunConfig::target_momentum),
      field("channels", &RunConfig::channels),
      field("filter_channels", &RunConfig::filter_channels),
      field("embed_dim", &RunConfig::embed_dim),
      field("projection_init", &RunConfig::projection_init),
      field("feature_norm", &RunConfig::feature_norm),
      field("head_kernel", &RunConfig::head_kernel),
      field("dataset_size", &RunConfig::dataset_size),
      field("num_classes", &RunConfig::num_classes),
      field("amplitude", &RunConfig::amplitude),
      field("visual_noise", &RunConfig::visual_noise),
      field("audio_noise", &RunConfig::audio_noise),
      field("crop", &RunConfig::crop),
      field("flip_prob", &RunConfig::flip_prob),
      field("jitter", &RunConfig::jitter),
      field("time_warp", &RunConfig::time_warp),
      field("freq_mask", &RunConfig::freq_mask),
      field("time_mask", &RunConfig::time_mask),
      field("checkpoint_every", &RunConfig::checkpoint_every),
      field("out_dir", &RunConfig::out_dir),
  };
  return f;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.name == key) return f;
  throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) { find_field(key).set(*this, value); }

std::string RunConfig::get(const std::string& key) const { return find_field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.name);
    return out;
  }();
  return k;
}

void RunConfig::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (within_pos && batch_size % 2 != 0) throw ConfigError("within_pos needs an even batch_size (two clips per video)");
  if (within_pos && batch_size < 4) throw ConfigError("within_pos needs batch_size >= 4");
  if (steps == 0 && epochs == 0) throw ConfigError("set steps or epochs");
  if (!(lr >= 0) || !finite(lr)) throw ConfigError("lr must be >= 0");
  if (!(weight_decay >= 0) || !finite(weight_decay)) throw ConfigError("weight_decay must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(warmup_fraction >= 0 && warmup_fraction <= 1)) throw ConfigError("warmup_fraction must lie in [0, 1]");
  if (dataset_size < videos_per_step()) throw ConfigError("dataset_size must be >= videos per step");
  if (checkpoint_every > total_steps()) throw ConfigError("checkpoint_every exceeds the number of steps");
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  model_config().validate();
  const SyntheticParams p = data_params();
  p.validate();
  augment_config().validate(p);
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  for (const auto& f : fields()) os << f.name << '=' << f.get(*this) << '\n';
  return os.str();
}

std::size_t RunConfig::iterations_per_epoch() const {
  const std::size_t v = videos_per_step();
  return v == 0 ? 0 : (dataset_size + v - 1) / v;
}

std::size_t RunConfig::total_steps() const { return steps > 0 ? steps : epochs * iterations_per_epoch(); }

std::size_t RunConfig::warmup_steps() const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(total_steps()))));
}

double RunConfig::lr_at(std::size_t step) const {
  const std::size_t w = warmup_steps();
  if (step >= w) return lr;
  return lr * static_cast<double>(step + 1) / static_cast<double>(w);
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  const NormKind nk = parse_norm_kind(feature_norm);
  m.visual = desk_visual_config(channels, nk);
  m.audio = desk_audio_config(channels, nk);
  m.filter_channels = filter_channels;
  m.embed_dim = embed_dim;
  m.identity_projection = parse_projection_init(projection_init);
  m.transform_norm = nk;
  m.head_kernel = head_kernel;
  m.pcf.mode = parse_norm_mode(norm_mode);
  m.pcf.scales = scales;
  m.loss.tau = static_cast<Scalar>(tau);
  m.loss.lambda = static_cast<Scalar>(lambda);
  m.loss.within_modal_negatives = within_neg;
  m.loss.within_modal_positives = within_pos;
  m.detach_guidance = detach_guidance;
  m.target_momentum = static_cast<Scalar>(target_momentum);
  m.bank_capacity = bank_capacity;
  m.seed = seed;
  return m;
}

SyntheticParams RunConfig::data_params() const {
  SyntheticParams p;
  p.num_classes = num_classes;
  p.amplitude = amplitude;
  p.visual_noise = visual_noise;
  p.audio_noise = audio_noise;
  return p;
}

AugmentConfig RunConfig::augment_config() const {
  AugmentConfig a;
  a.crop = crop;
  a.flip_prob = flip_prob;
  a.jitter = jitter;
  a.time_warp = time_warp;
  a.freq_mask = freq_mask;
  a.time_mask = time_mask;
  return a;
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

}  // namespace cmac
