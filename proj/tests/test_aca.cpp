#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <utility>
#include <vector>

#include "hmat/aca.hpp"
#include "hmat/core.hpp"
#include "hmat/morton.hpp"
#include "oracle/oracle.hpp"

using namespace hmat;

namespace {

DenseMatrix random_low_rank(std::int64_t m, std::int64_t n, std::int64_t rank, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> x(m * rank), y(n * rank);
  for (auto& v : x) v = rng.symmetric();
  for (auto& v : y) v = rng.symmetric();
  DenseMatrix a(m, n);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t l = 0; l < rank; ++l) acc += x[l * m + i] * y[l * n + j];
      a.at(i, j) = acc;
    }
  }
  return a;
}

DenseMatrix reconstruct(const LowRankFactors& f) {
  DenseMatrix a(f.m, f.n);
  for (std::int64_t i = 0; i < f.m; ++i) {
    for (std::int64_t j = 0; j < f.n; ++j) {
      double acc = 0.0;
      for (std::int64_t l = 0; l < f.k_eff; ++l) acc += f.u[l * f.m + i] * f.v[l * f.n + j];
      a.at(i, j) = acc;
    }
  }
  return a;
}

double rel_frobenius_residual(const DenseMatrix& a, const LowRankFactors& f) {
  const DenseMatrix approx = reconstruct(f);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    const double d = a.entries[i] - approx.entries[i];
    num += d * d;
    den += a.entries[i] * a.entries[i];
  }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

// two well-separated clusters of Halton points
std::pair<PointSet, std::pair<Cluster, Cluster>> separated_clusters(std::int64_t m, std::int64_t n) {
  PointSet p;
  p.dim = 2;
  p.count = m + n;
  p.coords.assign(2, std::vector<double>(m + n));
  p.perm.resize(m + n);
  const PointSet h = halton_points(m + n, 2);
  for (std::int64_t i = 0; i < m + n; ++i) {
    p.perm[i] = i;
    const double shift = i < m ? 0.0 : 1.0;  // distance >= diameter
    p.coords[0][i] = h.coords[0][i] * 0.35 + shift;
    p.coords[1][i] = h.coords[1][i] * 0.35;
  }
  return {p, {{0, m}, {m, m + n}}};
}

}  // namespace

TEST_CASE("aca: exact rank-1 block with k=1") {
  const DenseMatrix a = random_low_rank(15, 9, 1, 2);
  const LowRankFactors f = aca_single(a, {.max_rank = 1});
  CHECK(f.k_eff == 1);
  CHECK(rel_frobenius_residual(a, f) <= 1e-14);
}

TEST_CASE("aca: exact rank-3 block with k=3") {
  const DenseMatrix a = random_low_rank(20, 20, 3, 3);
  const LowRankFactors f = aca_single(a, {.max_rank = 3});
  CHECK(f.k_eff == 3);
  CHECK(rel_frobenius_residual(a, f) <= 1e-12);
}

TEST_CASE("aca: separated gaussian kernel block converges at k=16") {
  const auto [p, clusters] = separated_clusters(64, 48);
  const KernelFunction kernel{KernelKind::Gaussian};
  const LowRankFactors f = aca_single(kernel, p, clusters.first, clusters.second, {.max_rank = 16});
  const DenseMatrix a = dense_kernel_matrix(kernel, p, clusters.first, clusters.second);
  CHECK(rel_frobenius_residual(a, f) <= 1e-8);
  // the block really is numerically low-rank
  CHECK(oracle::svd_rank(a, 1e-8) <= 16);
}

TEST_CASE("aca: column pivot selection") {
  {
    DenseMatrix a(4, 3);
    for (auto& v : a.entries) v = 1.0;
    AcaStats stats;
    AcaOptions opt{.max_rank = 2};
    opt.stats = &stats;
    const LowRankFactors f = aca_single(a, opt);
    CHECK(f.k_eff == 1);  // constant block is exactly rank one
    REQUIRE(stats.col_pivots.size() == 1);
    CHECK(stats.col_pivots[0] == 0);
  }
  {
    // first column all zeros: the scan moves to the first usable column
    DenseMatrix a(3, 3);
    a.at(0, 1) = 2.0;
    a.at(1, 2) = 1.0;
    AcaStats stats;
    AcaOptions opt{.max_rank = 3};
    opt.stats = &stats;
    const LowRankFactors f = aca_single(a, opt);
    REQUIRE(stats.col_pivots.size() >= 1);
    CHECK(stats.col_pivots[0] == 1);
    CHECK(rel_frobenius_residual(a, f) <= 1e-14);
  }
  {
    DenseMatrix zero(5, 4);
    const LowRankFactors f = aca_single(zero, {.max_rank = 3});
    CHECK(f.k_eff == 0);
    CHECK(f.u.empty());
    CHECK(apply_low_rank(f, std::vector<double>(4, 1.0)) == std::vector<double>(5, 0.0));
  }
}

TEST_CASE("aca: residual vanishes on pivot rows and columns") {
  const DenseMatrix a = random_low_rank(12, 10, 5, 5);
  AcaStats stats;
  AcaOptions opt{.max_rank = 4};
  opt.stats = &stats;
  const LowRankFactors f = aca_single(a, opt);
  const DenseMatrix approx = reconstruct(f);
  double scale = 0.0;
  for (const double v : a.entries) scale = std::max(scale, std::fabs(v));
  for (std::size_t r = 0; r < stats.row_pivots.size(); ++r) {
    const std::int64_t pr = stats.row_pivots[r];
    const std::int64_t pc = stats.col_pivots[r];
    for (std::int64_t j = 0; j < a.cols; ++j) CHECK(std::fabs(a.at(pr, j) - approx.at(pr, j)) <= 1e-12 * scale);
    for (std::int64_t i = 0; i < a.rows; ++i) CHECK(std::fabs(a.at(i, pc) - approx.at(i, pc)) <= 1e-12 * scale);
  }
}

TEST_CASE("aca: epsilon mode stops early and meets the tolerance") {
  // numerically low-rank block: strongly decaying singular directions
  const std::int64_t m = 40, n = 40;
  SplitMix64 rng(9);
  DenseMatrix a(m, n);
  for (std::int64_t l = 0; l < 12; ++l) {
    std::vector<double> x(m), y(n);
    for (auto& v : x) v = rng.symmetric();
    for (auto& v : y) v = rng.symmetric();
    const double weight = std::pow(10.0, -static_cast<double>(l));
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = 0; j < n; ++j) a.at(i, j) += weight * x[i] * y[j];
    }
  }
  const double eps = 1e-6;
  AcaOptions opt{.max_rank = 30};
  opt.epsilon = eps;
  opt.eta = 0.0;
  const LowRankFactors f = aca_single(a, opt);
  CHECK(f.k_eff < 30);
  double a_frob = 0.0;
  for (const double v : a.entries) a_frob += v * v;
  a_frob = std::sqrt(a_frob);
  const DenseMatrix approx = reconstruct(f);
  double res = 0.0;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    const double d = a.entries[i] - approx.entries[i];
    res += d * d;
  }
  CHECK(std::sqrt(res) <= 10.0 * eps * a_frob);
}

TEST_CASE("aca: entry evaluation count stays within the contract") {
  const auto [p, clusters] = separated_clusters(64, 64);
  const KernelFunction kernel{KernelKind::Gaussian};
  AcaStats stats;
  AcaOptions opt{.max_rank = 8};
  opt.stats = &stats;
  const LowRankFactors f = aca_single(kernel, p, clusters.first, clusters.second, opt);
  const std::int64_t m = 64, n = 64;
  CHECK(stats.entry_evals == f.k_eff * (m + n) + stats.column_rejections * m);
  CHECK(stats.entry_evals <= opt.max_rank * (m + n) + stats.column_rejections * m);
}

TEST_CASE("apply_low_rank") {
  {
    LowRankFactors f;
    f.m = 3;
    f.n = 2;
    f.k_eff = 0;
    CHECK(apply_low_rank(f, std::vector<double>{1.0, 2.0}) == std::vector<double>(3, 0.0));
  }
  {
    LowRankFactors f;
    f.m = 2;
    f.n = 3;
    f.k_eff = 1;
    f.u = {2.0, -1.0};
    f.v = {1.0, 0.0, 3.0};
    const std::vector<double> x = {1.0, 5.0, 2.0};
    const std::vector<double> y = apply_low_rank(f, x);
    // u * (v . x) with v . x = 7
    CHECK(y[0] == doctest::Approx(14.0));
    CHECK(y[1] == doctest::Approx(-7.0));
  }
  {
    const DenseMatrix a = random_low_rank(17, 13, 4, 21);
    const LowRankFactors f = aca_single(a, {.max_rank = 4});
    SplitMix64 rng(22);
    std::vector<double> x(13);
    for (auto& v : x) v = rng.symmetric();
    const std::vector<double> y = apply_low_rank(f, x);
    std::vector<double> want(17, 0.0);
    for (std::int64_t i = 0; i < 17; ++i) {
      for (std::int64_t j = 0; j < 13; ++j) want[i] += a.at(i, j) * x[j];
    }
    double num = 0.0, den = 0.0;
    for (std::int64_t i = 0; i < 17; ++i) {
      num += (y[i] - want[i]) * (y[i] - want[i]);
      den += want[i] * want[i];
    }
    CHECK(std::sqrt(num / den) <= 1e-13);
  }
}

TEST_CASE("partition_aca_queue grouping") {
  const auto item = [](std::int64_t m) {
    WorkItem w;
    w.row = {0, m};
    w.col = {0, m};
    return w;
  };
  const std::vector<WorkItem> items = {item(4), item(4), item(4), item(4), item(4)};
  {
    const auto batches = partition_aca_queue(items, 16);
    REQUIRE(batches.size() == 2);
    CHECK(batches[0].items.size() == 4);
    CHECK(batches[1].items.size() == 1);
    CHECK(batches[0].total_rows == 16);
    CHECK(batches[0].row_block[15] == 3);
  }
  {
    const auto batches = partition_aca_queue(items, 0);  // unbatched
    CHECK(batches.size() == 5);
  }
  {
    const auto batches = partition_aca_queue(items, 1 << 20);
    CHECK(batches.size() == 1);
  }
}

TEST_CASE("batched aca: batch of one equals single") {
  const DenseMatrix a = random_low_rank(18, 14, 2, 31);
  const std::vector<std::pair<std::int64_t, std::int64_t>> shapes = {{18, 14}};
  const AcaBatch batch = make_batch_from_shapes(shapes);
  const BatchedAcaResult res = aca_batched(batch, std::vector<DenseMatrix>{a}, {.max_rank = 2});
  const LowRankFactors batched = extract_low_rank(res, batch, 0);

  AcaStats stats;
  AcaOptions opt{.max_rank = 2};
  opt.stats = &stats;
  const LowRankFactors single = aca_single(a, opt);

  CHECK(batched.k_eff == single.k_eff);
  REQUIRE(batched.u.size() == single.u.size());
  for (std::size_t i = 0; i < single.u.size(); ++i) CHECK(batched.u[i] == single.u[i]);
  for (std::size_t i = 0; i < single.v.size(); ++i) CHECK(batched.v[i] == single.v[i]);
  for (std::int64_t l = 0; l < single.k_eff; ++l) {
    CHECK(res.row_pivots[l] == stats.row_pivots[static_cast<std::size_t>(l)]);
    CHECK(res.col_pivots[l] == stats.col_pivots[static_cast<std::size_t>(l)]);
  }
}

TEST_CASE("batched aca: mixed-size batch matches per-block runs") {
  SplitMix64 rng(37);
  std::vector<DenseMatrix> blocks;
  std::vector<std::pair<std::int64_t, std::int64_t>> shapes;
  for (int b = 0; b < 8; ++b) {
    const std::int64_t m = rng.range(6, 30);
    const std::int64_t n = rng.range(6, 30);
    blocks.push_back(random_low_rank(m, n, 2, 400 + b));
    shapes.push_back({m, n});
  }
  const AcaBatch batch = make_batch_from_shapes(shapes);
  const BatchedAcaResult res = aca_batched(batch, blocks, {.max_rank = 4});

  for (int b = 0; b < 8; ++b) {
    AcaStats stats;
    AcaOptions opt{.max_rank = 4};
    opt.stats = &stats;
    const LowRankFactors single = aca_single(blocks[b], opt);
    const LowRankFactors batched = extract_low_rank(res, batch, b);

    CHECK(rel_frobenius_residual(blocks[b], batched) <= 1e-12);
    CHECK(batched.k_eff == single.k_eff);
    for (std::int64_t l = 0; l < single.k_eff; ++l) {
      CHECK(res.row_pivots[b * 4 + l] == stats.row_pivots[static_cast<std::size_t>(l)]);
      CHECK(res.col_pivots[b * 4 + l] == stats.col_pivots[static_cast<std::size_t>(l)]);
    }
    REQUIRE(batched.u.size() == single.u.size());
    for (std::size_t i = 0; i < single.u.size(); ++i) {
      CHECK(std::fabs(batched.u[i] - single.u[i]) <=
            1e-14 * std::max(1.0, std::fabs(single.u[i])));
    }
    for (std::size_t i = 0; i < single.v.size(); ++i) {
      CHECK(std::fabs(batched.v[i] - single.v[i]) <=
            1e-14 * std::max(1.0, std::fabs(single.v[i])));
    }
  }
}

TEST_CASE("batched aca: voting freezes early-converged blocks") {
  // one exactly rank-1 block among rank-4 blocks
  std::vector<DenseMatrix> blocks = {random_low_rank(16, 16, 1, 51), random_low_rank(20, 12, 4, 52),
                                     random_low_rank(10, 24, 4, 53)};
  const std::vector<std::pair<std::int64_t, std::int64_t>> shapes = {{16, 16}, {20, 12}, {10, 24}};
  const AcaBatch batch = make_batch_from_shapes(shapes);
  const BatchedAcaResult res = aca_batched(batch, blocks, {.max_rank = 4});

  CHECK(res.k_eff[0] == 1);  // converged at the first cross, then voted off
  CHECK(res.k_eff[1] == 4);
  CHECK(res.k_eff[2] == 4);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const LowRankFactors single = aca_single(blocks[b], {.max_rank = 4});
    const LowRankFactors batched = extract_low_rank(res, batch, static_cast<std::int64_t>(b));
    CHECK(batched.k_eff == single.k_eff);
    CHECK(rel_frobenius_residual(blocks[b], batched) <= 1e-12);
  }
}

TEST_CASE("batched aca on kernel blocks equals single") {
  const PointSet h = halton_points(512, 2);
  const PointSet p = morton_order(h);
  const KernelFunction kernel{KernelKind::Gaussian};
  // two disjoint, well-separated cluster pairs from the sorted array
  std::vector<WorkItem> items;
  WorkItem w1, w2;
  w1.row = {0, 100};
  w1.col = {400, 512};
  w2.row = {100, 180};
  w2.col = {300, 400};
  items = {w1, w2};
  const std::vector<AcaBatch> batches = partition_aca_queue(items, 1 << 20);
  REQUIRE(batches.size() == 1);
  const BatchedAcaResult res = aca_batched(batches[0], kernel, p, {.max_rank = 6});
  for (std::size_t b = 0; b < items.size(); ++b) {
    const LowRankFactors single = aca_single(kernel, p, items[b].row, items[b].col, {.max_rank = 6});
    const LowRankFactors batched = extract_low_rank(res, batches[0], static_cast<std::int64_t>(b));
    CHECK(batched.k_eff == single.k_eff);
    for (std::size_t i = 0; i < single.u.size(); ++i) CHECK(batched.u[i] == single.u[i]);
    for (std::size_t i = 0; i < single.v.size(); ++i) CHECK(batched.v[i] == single.v[i]);
  }

  // batched apply equals per-block application
  SplitMix64 rng(61);
  std::vector<double> x(512);
  for (auto& v : x) v = rng.symmetric();
  std::vector<double> staged(batches[0].total_rows);
  batched_low_rank_apply(res, batches[0], x, staged);
  for (std::size_t b = 0; b < items.size(); ++b) {
    const LowRankFactors f = extract_low_rank(res, batches[0], static_cast<std::int64_t>(b));
    const std::vector<double> x_slice(x.begin() + items[b].col.lower, x.begin() + items[b].col.upper);
    const std::vector<double> y = apply_low_rank(f, x_slice);
    for (std::int64_t i = 0; i < items[b].row.size(); ++i) {
      CHECK(staged[batches[0].row_offset[b] + i] == doctest::Approx(y[i]).epsilon(1e-13));
    }
  }
}
