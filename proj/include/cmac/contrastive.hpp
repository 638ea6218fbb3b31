#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmac/layers.hpp"
#include "cmac/tensor.hpp"

namespace cmac {

enum class Modality { visual, audio };

std::string to_string(Modality m);

// FC projection C_f -> D_e followed by L2 normalisation.
class ProjectionHead {
 public:
  ProjectionHead(std::size_t in_features, std::size_t embed_dim, Rng& rng);

  // kappa: [C_f] or N x C_f. Rows whose pre-normalisation norm is <= 1e-12
  // come back as zero vectors (see is_degenerate).
  Tensor forward(const Tensor& kappa) const;
  // Identity weight, zero bias. Requires in_features == embed_dim.
  void set_identity();
  std::size_t in_features() const { return fc.weight.tensor.size(1); }
  std::size_t embed_dim() const { return fc.weight.tensor.size(0); }
  void visit(StateVisitor& v, const std::string& prefix);

  Linear fc;
};

Tensor project(const Tensor& kappa, const ProjectionHead& head);
// True when an embedding row is the zero vector produced by the norm guard.
bool is_degenerate(std::span<const Scalar> embedding);

// exp(cos(x, y) / tau) as a scalar tensor.
Tensor sim(const Tensor& x, const Tensor& y, Scalar tau);

// FIFO ring of unit-norm embeddings from earlier steps.
class MemoryBank {
 public:
  MemoryBank(std::size_t capacity, std::size_t dim, Modality modality);

  // Appends the rows of `embeddings` (B x dim), evicting the oldest entries
  // beyond capacity. Values are copied; no graph link is kept. Throws
  // ContractError if a row is not unit-norm.
  void push(const Tensor& embeddings);
  // count x dim, oldest first; no gradient.
  Tensor snapshot() const;

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t count() const { return count_; }
  std::size_t cursor() const { return cursor_; }
  Modality modality() const { return modality_; }

  // Raw slots (capacity x dim, including unused ones) for checkpointing.
  std::span<const Scalar> slots() const { return slots_; }
  void restore(std::vector<Scalar> slots, std::size_t count, std::size_t cursor);

 private:
  std::size_t capacity_, dim_;
  Modality modality_;
  std::vector<Scalar> slots_;
  std::size_t count_ = 0;
  std::size_t cursor_ = 0;  // next slot to write
};

void bank_push(MemoryBank& bank, const Tensor& embeddings);

struct ContrastiveConfig {
  Scalar tau = Scalar(0.07);
  bool within_modal_negatives = true;
  bool within_modal_positives = false;
  Scalar lambda = Scalar(1.5);

  // Throws ConfigError unless tau > 0 and lambda >= 0.
  void validate() const;
};

// -(1/N) sum_n log[ sim(v_n, a_n) / sum_m sim(v_n, a_m) ], m over the N
// in-batch keys and every bank entry.
Tensor nce_loss(const Tensor& anchors, const Tensor& keys, const MemoryBank& bank, Scalar tau);

// Every ingredient of one direction of the contrastive loss. Rows are unit
// embeddings; undefined or zero-row tensors stand for "none".
struct ClInputs {
  Tensor anchors;         // N x D, anchor modality
  Tensor cross_keys;      // N x D, other modality; row n is the positive
  Tensor cross_bank;      // other-modality bank entries
  Tensor same_keys;       // N x D, anchor-modality peers (row n is skipped)
  Tensor same_bank;       // anchor-modality bank entries
  Tensor same_positives;  // N x D, second view of each video (positives mode)
};

// Remoulded loss for one direction. Within-modal negatives add same_keys
// (m != n) and same_bank to the denominator. Within-modal positives add
// same_positives[n] to both numerator and denominator.
Tensor cl_loss(const ClInputs& in, const ContrastiveConfig& cfg);

// Visual-anchored direction with the anchors themselves as within-modal peers.
Tensor cl_loss(const Tensor& kv, const Tensor& ka, const MemoryBank& bank_a, const MemoryBank& bank_v,
               const ContrastiveConfig& cfg);

struct LossTerms {
  Tensor total;
  double cl_va = 0, cl_av = 0, ac_v = 0, ac_a = 0;
};

// cl_va + cl_av + lambda * (ac_v + ac_a).
LossTerms total_loss(const Tensor& cl_va, const Tensor& cl_av, const Tensor& ac_v, const Tensor& ac_a,
                     Scalar lambda);

}  // namespace cmac
