#pragma once

// Row-major C = alpha * op(A) * op(B) + beta * C on top of CBLAS.

#include <cstddef>

#include "cmac/tensor.hpp"

namespace cmac::detail {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, Scalar alpha, const Scalar* a,
          std::size_t lda, const Scalar* b, std::size_t ldb, Scalar beta, Scalar* c, std::size_t ldc);

}  // namespace cmac::detail
