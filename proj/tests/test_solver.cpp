#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "hmat/core.hpp"
#include "hmat/hmatrix.hpp"
#include "hmat/solver.hpp"
#include "oracle/oracle.hpp"

using namespace hmat;

namespace {

std::vector<double> random_vector(std::int64_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = rng.symmetric();
  return x;
}

double rel_l2(std::span<const double> got, std::span<const double> want) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double d = got[i] - want[i];
    num += d * d;
    den += want[i] * want[i];
  }
  return std::sqrt(num) / std::sqrt(den);
}

}  // namespace

TEST_CASE("cg: dominant regularization reduces to scaling") {
  const KernelFunction kernel{KernelKind::Gaussian};
  const HMatrix h = setup(halton_points(300, 2), kernel, {.c_leaf = 32, .k = 8});
  const std::vector<double> b = random_vector(300, 3);
  SolveConfig cfg;
  cfg.sigma2 = 1e6;
  cfg.tol = 1e-10;
  const SolveResult result = cg_solve(h, kernel, b, cfg);
  for (std::int64_t i = 0; i < 300; ++i) {
    CHECK(result.x[i] == doctest::Approx(b[i] / 1e6).epsilon(1e-3));
  }
  CHECK(result.relative_residual <= 1e-10);
}

TEST_CASE("cg: force_dense solve matches the dense oracle") {
  const KernelFunction kernel{KernelKind::Gaussian};
  HmatrixConfig hcfg;
  hcfg.c_leaf = 64;
  hcfg.force_dense = true;
  const HMatrix h = setup(halton_points(256, 2), kernel, hcfg);
  const std::vector<double> b = random_vector(256, 5);
  SolveConfig cfg;
  cfg.sigma2 = 1.0;
  cfg.tol = 1e-10;
  cfg.max_iter = 400;
  const SolveResult got = cg_solve(h, kernel, b, cfg);

  const DenseMatrix a = oracle::dense_matrix(kernel, h.points);
  // the oracle matrix lives in Morton ordering; permute the rhs accordingly
  const std::vector<double> b_m = permute_vector(b, h.points.perm, PermDirection::Forward);
  const oracle::CgResult ref = oracle::reference_cg(a, 1.0, b_m, 1e-10, 400);
  const std::vector<double> x_ref = permute_vector(ref.x, h.points.perm, PermDirection::Inverse);

  CHECK(rel_l2(got.x, x_ref) <= 1e-7);
  CHECK(std::llabs(got.iterations - ref.iterations) <= 1);
}

TEST_CASE("cg: round trip recovers the constructed solution") {
  const KernelFunction kernel{KernelKind::Gaussian};
  const HMatrix h = setup(halton_points(512, 2), kernel, {.c_leaf = 64, .k = 16});
  const std::vector<double> x0 = random_vector(512, 7);
  std::vector<double> b = mvp(h, x0, kernel);
  for (std::int64_t i = 0; i < 512; ++i) b[i] += x0[i];  // sigma2 = 1

  SolveConfig cfg;
  cfg.sigma2 = 1.0;
  cfg.tol = 1e-10;
  cfg.max_iter = 400;
  const SolveResult result = cg_solve(h, kernel, b, cfg);
  CHECK(rel_l2(result.x, x0) <= 1e-6);
  CHECK(result.iterations < 400);
}

TEST_CASE("cg: reported residual is the true residual") {
  const KernelFunction kernel{KernelKind::Matern};
  const HMatrix h = setup(halton_points(400, 2), kernel, {.c_leaf = 32, .k = 8});
  const std::vector<double> b = random_vector(400, 9);
  SolveConfig cfg;
  cfg.sigma2 = 1.0;
  cfg.tol = 1e-8;
  const SolveResult result = cg_solve(h, kernel, b, cfg);

  std::vector<double> ax = mvp(h, result.x, kernel);
  for (std::int64_t i = 0; i < 400; ++i) ax[i] += result.x[i];
  double num = 0.0, den = 0.0;
  for (std::int64_t i = 0; i < 400; ++i) {
    const double d = b[i] - ax[i];
    num += d * d;
    den += b[i] * b[i];
  }
  const double recomputed = std::sqrt(num / den);
  CHECK(std::fabs(result.relative_residual - recomputed) <=
        1e-10 * std::max(1.0, std::fabs(recomputed)));
  CHECK(result.relative_residual <= cfg.tol * 10);
}

TEST_CASE("cg: zero rhs short-circuits") {
  const KernelFunction kernel{KernelKind::Gaussian};
  const HMatrix h = setup(halton_points(128, 2), kernel, {.c_leaf = 32});
  const std::vector<double> zero(128, 0.0);
  const SolveResult result = cg_solve(h, kernel, zero, {.sigma2 = 1.0});
  CHECK(result.iterations == 0);
  CHECK(result.x == zero);
  CHECK(result.relative_residual == 0.0);
}

TEST_CASE("cg: configuration validation") {
  const KernelFunction kernel{KernelKind::Gaussian};
  const HMatrix h = setup(halton_points(64, 2), kernel, {.c_leaf = 16});
  const std::vector<double> b(64, 1.0);
  SolveConfig cfg;
  cfg.tol = 0.0;
  CHECK_THROWS(cg_solve(h, kernel, b, cfg));
  cfg = {};
  cfg.max_iter = 0;
  CHECK_THROWS(cg_solve(h, kernel, b, cfg));
  CHECK_THROWS(cg_solve(h, kernel, std::vector<double>(63, 1.0), {}));
}
