#include "hmat/hmatrix.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "hmat/morton.hpp"
#include "hmat/parallel.hpp"

namespace hmat {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void validate(const HmatrixConfig& cfg) {
  if (cfg.eta < 0.0) throw std::invalid_argument("HmatrixConfig: eta must be >= 0");
  if (cfg.c_leaf < 1) throw std::invalid_argument("HmatrixConfig: c_leaf must be >= 1");
  if (cfg.k < 1) throw std::invalid_argument("HmatrixConfig: k must be >= 1");
  if (cfg.bs_aca < 0 || cfg.bs_dense < 0) throw std::invalid_argument("HmatrixConfig: batch sizes must be >= 0");
  if (cfg.epsilon && *cfg.epsilon <= 0.0) throw std::invalid_argument("HmatrixConfig: epsilon must be > 0");
}

AcaOptions aca_options(const HmatrixConfig& cfg) {
  AcaOptions opt;
  opt.max_rank = cfg.k;
  opt.epsilon = cfg.epsilon;
  opt.eta = cfg.eta;
  return opt;
}

}  // namespace

HMatrix setup(const PointSet& raw_points, const KernelFunction& kernel, const HmatrixConfig& config) {
  validate(config);
  HMatrix h;
  h.config = config;
  h.points = morton_order(raw_points);

  BlockTreeOptions tree_options;
  tree_options.eta = config.eta;
  tree_options.c_leaf = config.c_leaf;
  tree_options.admissibility =
      config.force_dense ? AdmissibilityMode::ForceDense : AdmissibilityMode::Geometric;
  const std::vector<WorkItem> leaves = build_block_cluster_tree(h.points, tree_options);

  for (const WorkItem& leaf : leaves) {
    (leaf.admissible ? h.aca_queue : h.dense_queue).push_back(leaf);
  }
  h.aca_batches = partition_aca_queue(h.aca_queue, config.bs_aca);
  h.dense_groups = partition_dense_queue(h.dense_queue, config.bs_dense);

  if (config.precompute_aca) {
    h.precomputed.reserve(h.aca_batches.size());
    for (const AcaBatch& batch : h.aca_batches) {
      h.precomputed.push_back(aca_batched(batch, kernel, h.points, aca_options(config)));
    }
  }
  return h;
}

std::vector<double> mvp(const HMatrix& h, std::span<const double> x, const KernelFunction& kernel,
                        MvpTimings* timings) {
  const std::int64_t n = h.points.count;
  if (static_cast<std::int64_t>(x.size()) != n) throw std::invalid_argument("mvp: vector length mismatch");
  const auto t_start = Clock::now();

  const std::vector<double> x_morton = permute_vector(x, h.points.perm, PermDirection::Forward);
  std::vector<double> z(static_cast<std::size_t>(n), 0.0);

  // Dense sub-blocks are always assembled on the fly, never cached. The
  // workspace buffers are reused across groups.
  const auto t_dense = Clock::now();
  DenseBatch dense_batch;
  std::vector<double> y;
  for (const DenseGroup& group : h.dense_groups) {
    assemble_dense_batch(group, kernel, h.points, dense_batch);
    gather_dense_inputs(dense_batch, x_morton);
    batched_gemv(dense_batch, y);
    // fixed leaf order keeps the accumulation deterministic
    for (std::size_t b = 0; b < group.items.size(); ++b) {
      const WorkItem& item = group.items[b];
      const double* src = y.data() + group.row_offset[b];
      double* dst = z.data() + item.row.lower;
      for (std::int64_t i = 0; i < item.row.size(); ++i) dst[i] += src[i];
    }
  }
  const double dense_ms = ms_since(t_dense);

  const auto t_aca = Clock::now();
  BatchedAcaResult recomputed;
  for (std::size_t gi = 0; gi < h.aca_batches.size(); ++gi) {
    const AcaBatch& batch = h.aca_batches[gi];
    const BatchedAcaResult* factors;
    if (h.config.precompute_aca) {
      factors = &h.precomputed[gi];
    } else {
      aca_batched(batch, kernel, h.points, aca_options(h.config), recomputed);
      factors = &recomputed;
    }
    y.assign(static_cast<std::size_t>(batch.total_rows), 0.0);
    batched_low_rank_apply(*factors, batch, x_morton, y);
    for (std::size_t b = 0; b < batch.items.size(); ++b) {
      const WorkItem& item = batch.items[b];
      const double* src = y.data() + batch.row_offset[b];
      double* dst = z.data() + item.row.lower;
      for (std::int64_t i = 0; i < item.row.size(); ++i) dst[i] += src[i];
    }
  }
  const double aca_ms = ms_since(t_aca);

  std::vector<double> result = permute_vector(z, h.points.perm, PermDirection::Inverse);
  if (timings) {
    timings->dense_ms = dense_ms;
    timings->aca_ms = aca_ms;
    timings->total_ms = ms_since(t_start);
  }
  return result;
}

double relative_error(const HMatrix& h, const KernelFunction& kernel, std::span<const double> x_rand) {
  const std::int64_t n = h.points.count;
  if (n > kDenseProductLimit) {
    throw std::invalid_argument("relative_error: point count exceeds the dense product limit");
  }
  if (static_cast<std::int64_t>(x_rand.size()) != n) throw std::invalid_argument("relative_error: vector length mismatch");

  const std::vector<double> z_h = mvp(h, x_rand, kernel);

  // Exact product, row by row in Morton order with a fixed summation order.
  const std::vector<double> x_morton = permute_vector(x_rand, h.points.perm, PermDirection::Forward);
  std::vector<double> z_exact_m(static_cast<std::size_t>(n));
  const BoundKernelEvaluator eval(kernel, h.points);
  parallel_for(n, [&](std::int64_t i) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < n; ++j) acc += eval(i, j) * x_morton[static_cast<std::size_t>(j)];
    z_exact_m[static_cast<std::size_t>(i)] = acc;
  }, 8);
  const std::vector<double> z_exact = permute_vector(z_exact_m, h.points.perm, PermDirection::Inverse);

  double diff_sq = 0.0;
  double ref_sq = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = z_h[static_cast<std::size_t>(i)] - z_exact[static_cast<std::size_t>(i)];
    diff_sq += d * d;
    ref_sq += z_exact[static_cast<std::size_t>(i)] * z_exact[static_cast<std::size_t>(i)];
  }
  return std::sqrt(diff_sq) / std::sqrt(ref_sq);
}

}  // namespace hmat
