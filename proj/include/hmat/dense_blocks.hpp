#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hmat/core.hpp"
#include "hmat/tree.hpp"

namespace hmat {

// One group of non-admissible blocks assembled and applied together. Row
// blocks are stacked on top of each other; every block is padded with zero
// columns to the common width.
struct DenseGroup {
  std::vector<WorkItem> items;
  std::vector<std::int64_t> row_offset;  // size B+1, offsets into the stacked rows
  std::int64_t total_rows = 0;
  std::int64_t width = 0;                // max block column count in the group
  std::vector<std::int64_t> row_block;   // stacked row -> block
};

// Greedy in-order packing with width * total_rows <= bs_dense per group.
// bs_dense == 0 means one block per group (the unbatched mode). Throws if a
// single block alone exceeds a positive bs_dense.
std::vector<DenseGroup> partition_dense_queue(std::span<const WorkItem> items, std::int64_t bs_dense);

struct DenseBatch {
  const DenseGroup* group = nullptr;
  std::vector<double> storage;   // total_rows x width, row-major, zero padded
  std::vector<double> x_gather;  // B x width, zero padded input slices
};

// Evaluates all block entries in parallel; padded columns are exactly zero.
DenseBatch assemble_dense_batch(const DenseGroup& group, const KernelFunction& kernel, const PointSet& points);

// Same, reusing the storage already held by `out` (for loops over groups).
void assemble_dense_batch(const DenseGroup& group, const KernelFunction& kernel, const PointSet& points,
                          DenseBatch& out);

// Copies x|_sigma of every block into the padded gather buffer.
void gather_dense_inputs(DenseBatch& batch, std::span<const double> x_morton);

// y_b = A_b x_b per block; returns the stacked outputs (length total_rows).
std::vector<double> batched_gemv(const DenseBatch& batch);
void batched_gemv(const DenseBatch& batch, std::vector<double>& y);

}  // namespace hmat
