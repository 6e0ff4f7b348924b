#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "hmat/core.hpp"
#include "hmat/hmatrix.hpp"
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

TEST_CASE("setup: small point set is one dense leaf") {
  const KernelFunction kernel{KernelKind::Gaussian};
  HmatrixConfig cfg;
  cfg.c_leaf = 256;
  const HMatrix h = setup(halton_points(100, 2), kernel, cfg);
  CHECK(h.aca_queue.empty());
  REQUIRE(h.dense_queue.size() == 1);
  CHECK(h.dense_queue[0].row.size() == 100);
}

TEST_CASE("setup is deterministic") {
  const KernelFunction kernel{KernelKind::Gaussian};
  HmatrixConfig cfg;
  cfg.c_leaf = 32;
  const HMatrix a = setup(halton_points(1500, 2), kernel, cfg);
  const HMatrix b = setup(halton_points(1500, 2), kernel, cfg);
  REQUIRE(a.aca_queue.size() == b.aca_queue.size());
  REQUIRE(a.dense_queue.size() == b.dense_queue.size());
  for (std::size_t i = 0; i < a.aca_queue.size(); ++i) {
    CHECK(a.aca_queue[i].row.lower == b.aca_queue[i].row.lower);
    CHECK(a.aca_queue[i].col.lower == b.aca_queue[i].col.lower);
  }
  const std::vector<double> x = random_vector(1500, 3);
  const std::vector<double> za = mvp(a, x, kernel);
  const std::vector<double> zb = mvp(b, x, kernel);
  CHECK(za == zb);  // bitwise reproducible
}

TEST_CASE("setup: queue sizes match the recursive oracle") {
  const KernelFunction kernel{KernelKind::Gaussian};
  HmatrixConfig cfg;
  cfg.c_leaf = 64;
  const HMatrix h = setup(halton_points(4096, 2), kernel, cfg);
  const auto leaves = oracle::recursive_block_tree(h.points, cfg.eta, cfg.c_leaf);
  std::size_t admissible = 0;
  for (const auto& w : leaves) admissible += w.admissible ? 1 : 0;
  CHECK(h.aca_queue.size() == admissible);
  CHECK(h.dense_queue.size() == leaves.size() - admissible);
}

TEST_CASE("coverage identity: dense and low-rank leaves tile the matrix") {
  const KernelFunction kernel{KernelKind::Gaussian};
  for (const std::int64_t n : {371, 1024}) {
    HmatrixConfig cfg;
    cfg.c_leaf = 24;
    const HMatrix h = setup(halton_points(n, 2), kernel, cfg);
    std::int64_t covered = 0;
    for (const WorkItem& w : h.dense_queue) covered += w.row.size() * w.col.size();
    for (const WorkItem& w : h.aca_queue) covered += w.row.size() * w.col.size();
    CHECK(covered == n * n);
  }
}

TEST_CASE("mvp: force_dense equals the dense oracle") {
  const KernelFunction kernel{KernelKind::Gaussian};
  HmatrixConfig cfg;
  cfg.c_leaf = 64;
  cfg.force_dense = true;
  const HMatrix h = setup(halton_points(512, 2), kernel, cfg);
  CHECK(h.aca_queue.empty());
  const std::vector<double> x = random_vector(512, 11);
  const std::vector<double> z = mvp(h, x, kernel);
  const std::vector<double> want = oracle::dense_mvp(kernel, h.points, x);
  CHECK(rel_l2(z, want) <= 1e-12);
}

TEST_CASE("mvp: zero input gives zero output") {
  const KernelFunction kernel{KernelKind::Gaussian};
  const HMatrix h = setup(halton_points(600, 2), kernel, {.c_leaf = 32});
  const std::vector<double> zero(600, 0.0);
  CHECK(mvp(h, zero, kernel) == zero);
  CHECK_THROWS(mvp(h, std::vector<double>(599, 0.0), kernel));
}

TEST_CASE("mvp: linearity") {
  const KernelFunction kernel{KernelKind::Gaussian};
  HmatrixConfig cfg;
  cfg.c_leaf = 32;
  cfg.k = 8;
  const HMatrix h = setup(halton_points(900, 2), kernel, cfg);
  const std::vector<double> x = random_vector(900, 13);
  const std::vector<double> y = random_vector(900, 14);
  std::vector<double> xy(900);
  for (std::int64_t i = 0; i < 900; ++i) xy[i] = x[i] + 0.5 * y[i];

  const std::vector<double> zx = mvp(h, x, kernel);
  const std::vector<double> zy = mvp(h, y, kernel);
  const std::vector<double> zxy = mvp(h, xy, kernel);
  std::vector<double> want(900);
  for (std::int64_t i = 0; i < 900; ++i) want[i] = zx[i] + 0.5 * zy[i];
  CHECK(rel_l2(zxy, want) <= 1e-12);
}

TEST_CASE("mvp: precompute and recompute agree") {
  const KernelFunction kernel{KernelKind::Matern};
  HmatrixConfig cfg;
  cfg.c_leaf = 32;
  cfg.k = 6;
  const HMatrix recompute = setup(halton_points(2048, 2), kernel, cfg);
  cfg.precompute_aca = true;
  const HMatrix precompute = setup(halton_points(2048, 2), kernel, cfg);
  const std::vector<double> x = random_vector(2048, 17);
  const std::vector<double> zr = mvp(recompute, x, kernel);
  const std::vector<double> zp = mvp(precompute, x, kernel);
  CHECK(rel_l2(zp, zr) <= 1e-14);
}

TEST_CASE("relative_error: force_dense is exact up to summation order") {
  const KernelFunction kernel{KernelKind::Gaussian};
  HmatrixConfig cfg;
  cfg.c_leaf = 64;
  cfg.force_dense = true;
  const HMatrix h = setup(halton_points(400, 2), kernel, cfg);
  CHECK(relative_error(h, kernel, random_vector(400, 19)) <= 1e-12);
}

TEST_CASE("relative_error: rank sweep improves the approximation") {
  const KernelFunction kernel{KernelKind::Gaussian};
  const PointSet points = halton_points(2048, 2);
  const std::vector<double> x = random_vector(2048, 23);
  double previous = 1e9;
  for (const std::int64_t k : {2, 8}) {
    HmatrixConfig cfg;
    cfg.c_leaf = 64;
    cfg.k = k;
    const HMatrix h = setup(points, kernel, cfg);
    const double e = relative_error(h, kernel, x);
    CHECK(e < previous);
    previous = e;
  }
  CHECK(previous <= 1e-4);
}

TEST_CASE("mvp: approximate symmetry at the achieved accuracy") {
  const KernelFunction kernel{KernelKind::Gaussian};
  HmatrixConfig cfg;
  cfg.c_leaf = 32;
  cfg.k = 10;
  const std::int64_t n = 700;
  const HMatrix h = setup(halton_points(n, 2), kernel, cfg);
  const double e_rel = relative_error(h, kernel, random_vector(n, 29));
  SplitMix64 rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> ei(n, 0.0), ej(n, 0.0);
    ei[rng.range(0, n - 1)] = 1.0;
    ej[rng.range(0, n - 1)] = 1.0;
    const std::vector<double> zi = mvp(h, ei, kernel);
    const std::vector<double> zj = mvp(h, ej, kernel);
    double left = 0.0, right = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      left += zi[i] * ej[i];
      right += zj[i] * ei[i];
    }
    CHECK(std::fabs(left - right) <= std::max(1e-12, 20.0 * e_rel * std::max(std::fabs(left), 1.0)));
  }
}

TEST_CASE("relative_error enforces the dense product limit") {
  const KernelFunction kernel{KernelKind::Gaussian};
  const HMatrix h = setup(halton_points(64, 2), kernel, {.c_leaf = 16});
  CHECK_THROWS(relative_error(h, kernel, random_vector(63, 1)));
}

TEST_CASE("config validation") {
  const KernelFunction kernel{KernelKind::Gaussian};
  const PointSet p = halton_points(32, 2);
  HmatrixConfig bad;
  bad.eta = -1.0;
  CHECK_THROWS(setup(p, kernel, bad));
  bad = {};
  bad.k = 0;
  CHECK_THROWS(setup(p, kernel, bad));
  bad = {};
  bad.c_leaf = 0;
  CHECK_THROWS(setup(p, kernel, bad));
}
