#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cmac/oracle/oracle.hpp"

namespace cmac::oracle {

namespace {

// exp(cos(x, y) / tau) with the cosine spelled out.
double sim(const Array& x, std::size_t i, const Array& y, std::size_t j, double tau) {
  const std::size_t d = x.shape[1];
  double dot = 0, nx = 0, ny = 0;
  for (std::size_t k = 0; k < d; ++k) {
    dot += x[i * d + k] * y[j * d + k];
    nx += x[i * d + k] * x[i * d + k];
    ny += y[j * d + k] * y[j * d + k];
  }
  return std::exp(dot / std::max(std::sqrt(nx) * std::sqrt(ny), 1e-12) / tau);
}

void check_rows(const Array& a, std::size_t d, const char* what) {
  if (a.empty()) return;
  if (a.shape.size() != 2 || a.shape[1] != d) throw std::invalid_argument(std::string("brute_force_losses: ") + what);
}

// One direction. `cross` holds the other modality's keys, `peers` the
// anchor modality's batch peers.
struct Direction {
  const Array& anchors;
  const Array& cross;
  const Array& cross_bank;
  const Array& peers;
  const Array& same_bank;
  const Array& positives;
};

double nce(const Direction& d, double tau) {
  const std::size_t n = d.anchors.rows();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double numer = sim(d.anchors, i, d.cross, i, tau);
    double denom = 0;
    for (std::size_t m = 0; m < n; ++m) denom += sim(d.anchors, i, d.cross, m, tau);
    for (std::size_t k = 0; k < d.cross_bank.rows(); ++k) denom += sim(d.anchors, i, d.cross_bank, k, tau);
    total += std::log(numer / denom);
  }
  return -total / static_cast<double>(n);
}

double remoulded(const Direction& d, const LossConfig& cfg) {
  const std::size_t n = d.anchors.rows();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double numer = sim(d.anchors, i, d.cross, i, cfg.tau);
    double denom = 0;
    for (std::size_t m = 0; m < n; ++m) denom += sim(d.anchors, i, d.cross, m, cfg.tau);
    for (std::size_t k = 0; k < d.cross_bank.rows(); ++k) denom += sim(d.anchors, i, d.cross_bank, k, cfg.tau);
    if (cfg.within_modal_negatives) {
      for (std::size_t m = 0; m < n; ++m)
        if (m != i) denom += sim(d.anchors, i, d.peers, m, cfg.tau);
      for (std::size_t k = 0; k < d.same_bank.rows(); ++k) denom += sim(d.anchors, i, d.same_bank, k, cfg.tau);
    }
    if (cfg.within_modal_positives) {
      const double p = sim(d.anchors, i, d.positives, i, cfg.tau);
      numer += p;
      denom += p;
    }
    total += std::log(numer / denom);
  }
  return -total / static_cast<double>(n);
}

}  // namespace

BruteLosses brute_force_losses(const LossBatch& b, const LossConfig& cfg) {
  if (b.z_v.rows() == 0) throw std::invalid_argument("brute_force_losses: empty batch");
  const std::size_t n = b.z_v.rows(), d = b.z_v.shape[1];
  for (const Array* a : {&b.z_a, &b.key_v, &b.key_a}) {
    if (a->shape.size() != 2 || a->rows() != n || a->shape[1] != d) {
      throw std::invalid_argument("brute_force_losses: anchors and keys must all be N x D");
    }
  }
  check_rows(b.bank_v, d, "visual bank width");
  check_rows(b.bank_a, d, "audio bank width");
  if (cfg.within_modal_positives && (b.pos_v.rows() != n || b.pos_a.rows() != n)) {
    throw std::invalid_argument("brute_force_losses: positives mode needs N second views per modality");
  }

  const Direction va{b.z_v, b.key_a, b.bank_a, b.z_v, b.bank_v, b.pos_v};
  const Direction av{b.z_a, b.key_v, b.bank_v, b.z_a, b.bank_a, b.pos_a};
  BruteLosses out;
  out.nce_va = nce(va, cfg.tau);
  out.nce_av = nce(av, cfg.tau);
  out.nce_sym = out.nce_va + out.nce_av;
  out.cl_va = remoulded(va, cfg);
  out.cl_av = remoulded(av, cfg);
  if (!b.s_v.empty()) out.ac_v = consistency_naive(b.s_v, b.s_hat_v);
  if (!b.s_a.empty()) out.ac_a = consistency_naive(b.s_a, b.s_hat_a);
  out.total = out.cl_va + out.cl_av + cfg.lambda * (out.ac_v + out.ac_a);
  return out;
}

}  // namespace cmac::oracle
