#include "cmac/contrastive.hpp"

#include <algorithm>
#include <cmath>

#include "cmac/errors.hpp"
#include "cmac/ops.hpp"

namespace cmac {

std::string to_string(Modality m) { return m == Modality::visual ? "visual" : "audio"; }

ProjectionHead::ProjectionHead(std::size_t in_features, std::size_t embed_dim, Rng& rng)
    : fc(in_features, embed_dim, rng) {}

Tensor ProjectionHead::forward(const Tensor& kappa) const {
  if (kappa.dim() == 1) {
    Tensor z = forward(reshape(kappa, {1, kappa.size(0)}));
    return reshape(z, {embed_dim()});
  }
  if (kappa.dim() != 2 || kappa.size(1) != in_features()) {
    throw DimensionError("projection: input " + shape_str(kappa.shape()) + " does not have " +
                         std::to_string(in_features()) + " features on its last axis");
  }
  return l2_normalize_rows(fc.forward(kappa));
}

void ProjectionHead::set_identity() {
  if (in_features() != embed_dim()) throw ConfigError("identity projection needs C_f == D_e");
  auto w = fc.weight.tensor.data();
  std::fill(w.begin(), w.end(), Scalar(0));
  for (std::size_t i = 0; i < embed_dim(); ++i) w[i * embed_dim() + i] = 1;
  for (Scalar& b : fc.bias.tensor.data()) b = 0;
}

void ProjectionHead::visit(StateVisitor& v, const std::string& prefix) { fc.visit(v, prefix + "fc."); }

Tensor project(const Tensor& kappa, const ProjectionHead& head) { return head.forward(kappa); }

bool is_degenerate(std::span<const Scalar> embedding) {
  return std::all_of(embedding.begin(), embedding.end(), [](Scalar v) { return v == 0; });
}

Tensor sim(const Tensor& x, const Tensor& y, Scalar tau) {
  if (!(tau > 0)) throw ConfigError("sim: tau must be positive");
  return exp(scale(cosine_similarity(x, y), Scalar(1) / tau));
}

MemoryBank::MemoryBank(std::size_t capacity, std::size_t dim, Modality modality)
    : capacity_(capacity), dim_(dim), modality_(modality), slots_(capacity * dim, Scalar(0)) {
  if (dim == 0) throw ConfigError("memory bank dimension must be positive");
}

void MemoryBank::push(const Tensor& embeddings) {
  if (embeddings.dim() != 2 || embeddings.size(1) != dim_) {
    throw DimensionError("bank push: expected B x " + std::to_string(dim_) + ", got " +
                         shape_str(embeddings.shape()));
  }
  // Loose enough for 32-bit builds.
  const Scalar tol = sizeof(Scalar) == 4 ? Scalar(1e-4) : Scalar(1e-9);
  auto d = embeddings.data();
  const std::size_t rows = embeddings.size(0);
  for (std::size_t r = 0; r < rows; ++r) {
    Scalar sq = 0;
    for (std::size_t j = 0; j < dim_; ++j) sq += d[r * dim_ + j] * d[r * dim_ + j];
    if (std::abs(std::sqrt(sq) - 1) > tol) {
      throw ContractError("bank push: row " + std::to_string(r) + " has norm " + std::to_string(std::sqrt(sq)) +
                          ", expected a unit embedding");
    }
  }
  if (capacity_ == 0) return;
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(r * dim_), dim_,
                slots_.begin() + static_cast<std::ptrdiff_t>(cursor_ * dim_));
    cursor_ = (cursor_ + 1) % capacity_;
    count_ = std::min(count_ + 1, capacity_);
  }
}

Tensor MemoryBank::snapshot() const {
  std::vector<Scalar> out;
  out.reserve(count_ * dim_);
  const std::size_t start = count_ < capacity_ ? 0 : cursor_;
  for (std::size_t i = 0; i < count_; ++i) {
    const std::size_t slot = (start + i) % capacity_;
    out.insert(out.end(), slots_.begin() + static_cast<std::ptrdiff_t>(slot * dim_),
               slots_.begin() + static_cast<std::ptrdiff_t>((slot + 1) * dim_));
  }
  return Tensor(Shape{count_, dim_}, std::move(out));
}

void MemoryBank::restore(std::vector<Scalar> slots, std::size_t count, std::size_t cursor) {
  if (slots.size() != capacity_ * dim_ || count > capacity_ || (capacity_ > 0 && cursor >= capacity_) ||
      (count < capacity_ && cursor != count)) {
    throw FormatError("bank restore: inconsistent slots/count/cursor");
  }
  slots_ = std::move(slots);
  count_ = count;
  cursor_ = cursor;
}

void bank_push(MemoryBank& bank, const Tensor& embeddings) { bank.push(embeddings); }

void ContrastiveConfig::validate() const {
  if (!(tau > 0) || !std::isfinite(tau)) throw ConfigError("tau must be a positive finite number");
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite number >= 0");
}

namespace {

bool present(const Tensor& t) { return t.defined() && t.numel() > 0; }

void require_rows(const char* what, const Tensor& t, std::size_t rows, std::size_t dim) {
  if (t.dim() != 2 || t.size(1) != dim || (rows != 0 && t.size(0) != rows)) {
    throw DimensionError(std::string("cl_loss: ") + what + " " + shape_str(t.shape()) + " does not match " +
                         (rows ? std::to_string(rows) : std::string("B")) + " x " + std::to_string(dim));
  }
}

}  // namespace

Tensor cl_loss(const ClInputs& in, const ContrastiveConfig& cfg) {
  cfg.validate();
  if (!present(in.anchors)) throw ContractError("cl_loss: empty batch (N = 0)");
  if (in.anchors.dim() != 2) throw DimensionError("cl_loss: anchors must be N x D, got " + shape_str(in.anchors.shape()));
  const std::size_t n = in.anchors.size(0), dim = in.anchors.size(1);
  require_rows("cross keys", in.cross_keys, n, dim);

  // Columns of the logits matrix, one block per key source.
  struct Block {
    Tensor keys;
    enum { positive_diag, all, all_but_diag, diag_only } use;
  };
  std::vector<Block> blocks{{in.cross_keys, Block::positive_diag}};
  if (present(in.cross_bank)) {
    require_rows("cross bank", in.cross_bank, 0, dim);
    blocks.push_back({in.cross_bank, Block::all});
  }
  if (cfg.within_modal_negatives) {
    if (present(in.same_keys)) {
      require_rows("same-modal keys", in.same_keys, n, dim);
      blocks.push_back({in.same_keys, Block::all_but_diag});
    }
    if (present(in.same_bank)) {
      require_rows("same-modal bank", in.same_bank, 0, dim);
      blocks.push_back({in.same_bank, Block::all});
    }
  }
  if (cfg.within_modal_positives) {
    if (!present(in.same_positives)) throw ContractError("cl_loss: positives mode needs a second view per video");
    require_rows("second views", in.same_positives, n, dim);
    blocks.push_back({in.same_positives, Block::diag_only});
  }

  std::vector<Tensor> parts;
  std::size_t width = 0;
  for (const auto& b : blocks) {
    parts.push_back(b.keys);
    width += b.keys.size(0);
  }
  std::vector<std::uint8_t> denom(n * width, 0), numer(n * width, 0);
  std::size_t col = 0;
  for (const auto& b : blocks) {
    const std::size_t rows = b.keys.size(0);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < rows; ++j) {
        const bool diag = j == r;
        bool in_denom = false, in_numer = false;
        switch (b.use) {
          case Block::positive_diag:
            in_denom = true;
            in_numer = diag;
            break;
          case Block::all:
            in_denom = true;
            break;
          case Block::all_but_diag:
            in_denom = !diag;
            break;
          case Block::diag_only:
            in_denom = in_numer = diag;
            break;
        }
        denom[r * width + col + j] = in_denom;
        numer[r * width + col + j] = in_numer;
      }
    }
    col += rows;
  }
  Tensor keys = parts.size() == 1 ? parts.front() : concat_rows(parts);
  // Unit rows, so the dot product is the cosine.
  Tensor logits = scale(linear(in.anchors, keys, Tensor()), Scalar(1) / cfg.tau);
  return mean(sub(logsumexp_rows(logits, denom), logsumexp_rows(logits, numer)));
}

Tensor nce_loss(const Tensor& anchors, const Tensor& keys, const MemoryBank& bank, Scalar tau) {
  ContrastiveConfig cfg;
  cfg.tau = tau;
  cfg.within_modal_negatives = false;
  cfg.within_modal_positives = false;
  ClInputs in;
  in.anchors = anchors;
  in.cross_keys = keys;
  in.cross_bank = bank.snapshot();
  return cl_loss(in, cfg);
}

Tensor cl_loss(const Tensor& kv, const Tensor& ka, const MemoryBank& bank_a, const MemoryBank& bank_v,
               const ContrastiveConfig& cfg) {
  if (bank_a.modality() != Modality::audio || bank_v.modality() != Modality::visual) {
    throw ContractError("cl_loss: expected an audio bank and a visual bank, got " + to_string(bank_a.modality()) +
                        " and " + to_string(bank_v.modality()));
  }
  if (cfg.within_modal_positives) {
    throw ContractError("cl_loss: positives mode needs second views; use the ClInputs overload");
  }
  ClInputs in;
  in.anchors = kv;
  in.cross_keys = ka;
  in.cross_bank = bank_a.snapshot();
  in.same_keys = kv;
  in.same_bank = bank_v.snapshot();
  return cl_loss(in, cfg);
}

LossTerms total_loss(const Tensor& cl_va, const Tensor& cl_av, const Tensor& ac_v, const Tensor& ac_a,
                     Scalar lambda) {
  LossTerms t;
  t.total = add(add(cl_va, cl_av), scale(add(ac_v, ac_a), lambda));
  t.cl_va = cl_va.item();
  t.cl_av = cl_av.item();
  t.ac_v = ac_v.item();
  t.ac_a = ac_a.item();
  return t;
}

}  // namespace cmac
