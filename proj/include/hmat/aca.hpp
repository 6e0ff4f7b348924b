#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "hmat/core.hpp"
#include "hmat/tree.hpp"

namespace hmat {

// Rank-k_eff factors with approximant U * V^T. Columns are stored
// contiguously: u[l*m + i], v[l*n + j].
struct LowRankFactors {
  std::int64_t m = 0;
  std::int64_t n = 0;
  std::int64_t k_eff = 0;
  std::vector<double> u;
  std::vector<double> v;
};

struct AcaStats {
  std::int64_t entry_evals = 0;
  std::int64_t column_rejections = 0;
  std::vector<std::int64_t> row_pivots;
  std::vector<std::int64_t> col_pivots;
};

struct AcaOptions {
  std::int64_t max_rank = 16;
  // When set, iteration stops once ||u_r|| ||v_r|| <= eps(1-eta)/(1+eps) ||S_r||_F.
  // The default mode never evaluates the criterion and runs to max_rank.
  std::optional<double> epsilon;
  double eta = 0.0;
  AcaStats* stats = nullptr;
};

// Cross approximation of the kernel sub-block rows x cols; entries are
// evaluated on demand, the block is never materialized.
LowRankFactors aca_single(const KernelFunction& kernel, const PointSet& points, Cluster rows, Cluster cols,
                          const AcaOptions& options);

// Same iteration on an explicitly given matrix (tests, generic blocks).
LowRankFactors aca_single(const DenseMatrix& block, const AcaOptions& options);

// y = U (V^T x), cost O(k_eff (m+n)).
std::vector<double> apply_low_rank(const LowRankFactors& factors, std::span<const double> x_slice);

// A group of admissible blocks processed in lockstep. Batched storage keeps
// one rank level of every block contiguous: level l of block b occupies
// [l*total_rows + row_offset[b], ...) of u_storage, and likewise for v.
struct AcaBatch {
  std::vector<WorkItem> items;
  std::vector<std::int64_t> row_offset;  // size B+1
  std::vector<std::int64_t> col_offset;  // size B+1
  std::int64_t total_rows = 0;
  std::int64_t total_cols = 0;
  std::vector<std::int64_t> row_block;  // batched row index -> block
  std::vector<std::int64_t> col_block;  // batched col index -> block
};

// Greedy in-order grouping with sum of row counts <= bs_aca per batch.
// bs_aca == 0 means one block per batch (the unbatched mode). A block larger
// than bs_aca by itself still forms its own batch.
std::vector<AcaBatch> partition_aca_queue(std::span<const WorkItem> items, std::int64_t bs_aca);

struct BatchedAcaResult {
  std::int64_t max_rank = 0;
  std::vector<double> u_storage;  // max_rank x total_rows
  std::vector<double> v_storage;  // max_rank x total_cols
  std::vector<std::int64_t> k_eff;        // per block
  std::vector<std::int64_t> row_pivots;   // block-major, max_rank entries each, -1 padded
  std::vector<std::int64_t> col_pivots;
};

// Runs the cross approximation for all blocks of the batch in lockstep;
// per-block pivots and factors match aca_single. Blocks vote themselves
// inactive on convergence, iteration continues while any block is active.
BatchedAcaResult aca_batched(const AcaBatch& batch, const KernelFunction& kernel, const PointSet& points,
                             const AcaOptions& options);

// Same, reusing the storage already held by `out` (for loops over batches).
void aca_batched(const AcaBatch& batch, const KernelFunction& kernel, const PointSet& points,
                 const AcaOptions& options, BatchedAcaResult& out);

// Test variant: block b of the batch draws entries from blocks[b].
BatchedAcaResult aca_batched(const AcaBatch& batch, std::span<const DenseMatrix> blocks,
                             const AcaOptions& options);

// Builds a batch descriptor directly from explicit block shapes (tests).
AcaBatch make_batch_from_shapes(std::span<const std::pair<std::int64_t, std::int64_t>> shapes);

LowRankFactors extract_low_rank(const BatchedAcaResult& result, const AcaBatch& batch, std::int64_t block);

// y_staged (length total_rows) receives U (V^T x|_sigma) per block, reading
// x in the Morton ordering of the points behind the batch items.
void batched_low_rank_apply(const BatchedAcaResult& result, const AcaBatch& batch,
                            std::span<const double> x_morton, std::span<double> y_staged);

}  // namespace hmat
