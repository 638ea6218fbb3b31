#include "cmac/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "cmac/errors.hpp"

namespace cmac {

namespace {

constexpr char kMagic[8] = {'C', 'M', 'A', 'C', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

struct Entry {
  std::string name;
  Shape shape;
  std::span<Scalar> data;
};

void write_le(std::ostream& os, std::uint64_t v, int bytes) {
  unsigned char b[8];
  for (int i = 0; i < bytes; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), bytes);
}

std::uint64_t read_le(std::istream& is, int bytes) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), bytes)) throw FormatError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

struct Header {
  nlohmann::json manifest;
};

Header read_header(std::istream& is, const std::string& path) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw FormatError("checkpoint: '" + path + "' is not a checkpoint file");
  }
  const auto version = read_le(is, 4);
  if (version != kVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto len = read_le(is, 8);
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("checkpoint: truncated manifest");
  try {
    return {nlohmann::json::parse(text)};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad manifest: ") + e.what());
  }
}

CheckpointInfo info_from(const nlohmann::json& m) {
  CheckpointInfo info;
  info.step = m.at("step");
  info.seed = m.at("seed");
  info.config_echo = m.at("config");
  return info;
}

}  // namespace

void save_checkpoint(const std::string& path, CmacModel& model, const RunConfig& cfg, std::size_t step) {
  std::vector<Entry> entries;
  for (const auto& s : collect_state(model)) entries.push_back({s.name, s.tensor->shape(), s.tensor->data()});
  std::vector<Parameter*> params = model.trainable_parameters();
  auto named = collect_state(model);
  for (const auto& s : named) {
    if (!s.is_parameter) continue;
    for (Parameter* p : params) {
      if (&p->tensor == s.tensor && !p->momentum_buffer.empty()) {
        entries.push_back({"sgd." + s.name, s.tensor->shape(), std::span<Scalar>(p->momentum_buffer)});
      }
    }
  }
  MemoryBank& bv = model.bank_v();
  MemoryBank& ba = model.bank_a();
  auto bank_span = [](MemoryBank& b) {
    auto s = b.slots();
    return std::span<Scalar>(const_cast<Scalar*>(s.data()), s.size());
  };
  entries.push_back({"bank.visual", {bv.capacity(), bv.dim()}, bank_span(bv)});
  entries.push_back({"bank.audio", {ba.capacity(), ba.dim()}, bank_span(ba)});

  nlohmann::json m;
  m["format"] = "cmac-checkpoint";
  m["step"] = step;
  m["seed"] = cfg.seed;
  m["config"] = cfg.echo();
  m["bank"] = {{"visual", {{"count", bv.count()}, {"cursor", bv.cursor()}}},
               {"audio", {{"count", ba.count()}, {"cursor", ba.cursor()}}}};
  nlohmann::json index = nlohmann::json::array();
  for (const auto& e : entries) index.push_back({{"name", e.name}, {"shape", e.shape}});
  m["tensors"] = index;
  const std::string text = m.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("checkpoint: cannot write '" + path + "'");
  os.write(kMagic, 8);
  write_le(os, kVersion, 4);
  write_le(os, text.size(), 8);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : entries) {
    for (Scalar x : e.data) {
      const double d = static_cast<double>(x);
      std::uint64_t bits;
      std::memcpy(&bits, &d, 8);
      write_le(os, bits, 8);
    }
  }
  if (!os) throw FormatError("checkpoint: write failed for '" + path + "'");
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open '" + path + "'");
  return info_from(read_header(is, path).manifest);
}

CheckpointInfo load_checkpoint(const std::string& path, CmacModel& model) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open '" + path + "'");
  const nlohmann::json m = read_header(is, path).manifest;

  auto state = collect_state(model);
  std::map<std::string, Tensor*> tensors;
  for (const auto& s : state) tensors[s.name] = s.tensor;
  std::map<std::string, Parameter*> params;
  {
    auto trainable = model.trainable_parameters();
    for (const auto& s : state) {
      if (!s.is_parameter) continue;
      for (Parameter* p : trainable)
        if (&p->tensor == s.tensor) params[s.name] = p;
    }
  }
  for (auto& [name, p] : params) p->momentum_buffer.clear();

  std::size_t restored = 0;
  std::vector<Scalar> bank_v, bank_a;
  for (const auto& item : m.at("tensors")) {
    const std::string name = item.at("name");
    const Shape shape = item.at("shape").get<Shape>();
    std::vector<Scalar> values(numel(shape));
    for (auto& x : values) {
      const std::uint64_t bits = read_le(is, 8);
      double d;
      std::memcpy(&d, &bits, 8);
      x = static_cast<Scalar>(d);
    }
    if (name == "bank.visual") {
      bank_v = std::move(values);
    } else if (name == "bank.audio") {
      bank_a = std::move(values);
    } else if (name.rfind("sgd.", 0) == 0) {
      auto it = params.find(name.substr(4));
      if (it == params.end() || it->second->tensor.shape() != shape) {
        throw FormatError("checkpoint: momentum buffer '" + name + "' does not match the model");
      }
      it->second->momentum_buffer = std::move(values);
    } else {
      auto it = tensors.find(name);
      if (it == tensors.end()) throw FormatError("checkpoint: unknown tensor '" + name + "'");
      if (it->second->shape() != shape) {
        throw FormatError("checkpoint: '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                          shape_str(it->second->shape()));
      }
      std::copy(values.begin(), values.end(), it->second->data().begin());
      ++restored;
    }
  }
  if (restored != tensors.size()) {
    throw FormatError("checkpoint: restored " + std::to_string(restored) + " of " + std::to_string(tensors.size()) +
                      " model tensors");
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
  const auto& b = m.at("bank");
  model.bank_v().restore(std::move(bank_v), b.at("visual").at("count"), b.at("visual").at("cursor"));
  model.bank_a().restore(std::move(bank_a), b.at("audio").at("count"), b.at("audio").at("cursor"));
  return info_from(m);
}

}  // namespace cmac
