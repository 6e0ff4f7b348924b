#include "hmat/solver.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace hmat {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

SolveResult cg_solve(const HMatrix& h, const KernelFunction& kernel, std::span<const double> b,
                     const SolveConfig& config) {
  const std::int64_t n = h.points.count;
  if (static_cast<std::int64_t>(b.size()) != n) throw std::invalid_argument("cg_solve: rhs length mismatch");
  if (config.tol <= 0.0) throw std::invalid_argument("cg_solve: tol must be > 0");
  if (config.max_iter < 1) throw std::invalid_argument("cg_solve: max_iter must be >= 1");
  if (config.sigma2 < 0.0) throw std::invalid_argument("cg_solve: sigma2 must be >= 0");

  const auto apply = [&](std::span<const double> x) {
    std::vector<double> y = mvp(h, x, kernel);
    for (std::int64_t i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] += config.sigma2 * x[i];
    return y;
  };

  SolveResult result;
  result.x.assign(static_cast<std::size_t>(n), 0.0);

  const double b_norm = std::sqrt(dot(b, b));
  if (b_norm == 0.0) return result;  // zero rhs, zero solution, no iterations

  std::vector<double> r(b.begin(), b.end());
  std::vector<double> p = r;
  double rs = dot(r, r);

  for (std::int64_t iter = 1; iter <= config.max_iter; ++iter) {
    const std::vector<double> ap = apply(p);
    const double alpha = rs / dot(p, ap);
    for (std::int64_t i = 0; i < n; ++i) {
      result.x[static_cast<std::size_t>(i)] += alpha * p[static_cast<std::size_t>(i)];
      r[static_cast<std::size_t>(i)] -= alpha * ap[static_cast<std::size_t>(i)];
    }
    const double rs_next = dot(r, r);
    if (!std::isfinite(rs_next) || !std::isfinite(alpha)) {
      throw std::runtime_error("cg_solve: non-finite value at iteration " + std::to_string(iter) +
                               " (residual " + std::to_string(std::sqrt(std::fabs(rs)) / b_norm) + ")");
    }
    result.iterations = iter;
    if (std::sqrt(rs_next) <= config.tol * b_norm) break;
    const double beta = rs_next / rs;
    for (std::int64_t i = 0; i < n; ++i) {
      p[static_cast<std::size_t>(i)] = r[static_cast<std::size_t>(i)] + beta * p[static_cast<std::size_t>(i)];
    }
    rs = rs_next;
  }

  // Report the true residual of the returned iterate, not the recursion value.
  const std::vector<double> ax = apply(result.x);
  double diff_sq = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = b[static_cast<std::size_t>(i)] - ax[static_cast<std::size_t>(i)];
    diff_sq += d * d;
  }
  result.relative_residual = std::sqrt(diff_sq) / b_norm;
  return result;
}

}  // namespace hmat
