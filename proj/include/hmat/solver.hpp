#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hmat/core.hpp"
#include "hmat/hmatrix.hpp"

namespace hmat {

struct SolveConfig {
  double sigma2 = 0.0;  // regularization; 0 may not converge at low rank
  double tol = 1e-8;    // relative residual target
  std::int64_t max_iter = 500;
};

struct SolveResult {
  std::vector<double> x;
  std::int64_t iterations = 0;
  double relative_residual = 0.0;  // recomputed from the final iterate
};

// Conjugate gradients on x -> H(A)x + sigma2*x. Throws on non-finite values
// (a symptom of indefiniteness from approximation error), reporting the
// iteration it happened in.
SolveResult cg_solve(const HMatrix& h, const KernelFunction& kernel, std::span<const double> b,
                     const SolveConfig& config);

}  // namespace hmat
