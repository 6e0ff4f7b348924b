#include "hmat/dense_blocks.hpp"

#include <algorithm>
#include <stdexcept>

#include "hmat/parallel.hpp"

namespace hmat {

namespace {

void finalize_group(DenseGroup& group) {
  const std::int64_t b_count = static_cast<std::int64_t>(group.items.size());
  group.row_offset.assign(static_cast<std::size_t>(b_count + 1), 0);
  group.width = 0;
  for (std::int64_t b = 0; b < b_count; ++b) {
    const WorkItem& item = group.items[static_cast<std::size_t>(b)];
    group.row_offset[static_cast<std::size_t>(b + 1)] = group.row_offset[static_cast<std::size_t>(b)] + item.row.size();
    group.width = std::max(group.width, item.col.size());
  }
  group.total_rows = group.row_offset[static_cast<std::size_t>(b_count)];

  std::vector<BatchBounds> bounds(static_cast<std::size_t>(b_count));
  std::vector<std::int64_t> ids(static_cast<std::size_t>(b_count));
  for (std::int64_t b = 0; b < b_count; ++b) {
    bounds[static_cast<std::size_t>(b)] = {group.row_offset[static_cast<std::size_t>(b)],
                                           group.row_offset[static_cast<std::size_t>(b + 1)]};
    ids[static_cast<std::size_t>(b)] = b + 1;
  }
  group.row_block = create_keys(bounds, ids, group.total_rows);
  parallel_for(group.total_rows, [&](std::int64_t e) { --group.row_block[static_cast<std::size_t>(e)]; });
}

}  // namespace

std::vector<DenseGroup> partition_dense_queue(std::span<const WorkItem> items, std::int64_t bs_dense) {
  std::vector<DenseGroup> groups;
  DenseGroup current;
  std::int64_t rows = 0;
  std::int64_t width = 0;
  for (const WorkItem& item : items) {
    const std::int64_t m = item.row.size();
    const std::int64_t n = item.col.size();
    if (bs_dense > 0 && m * n > bs_dense) {
      throw std::invalid_argument("partition_dense_queue: a single block exceeds bs_dense");
    }
    const std::int64_t new_rows = rows + m;
    const std::int64_t new_width = std::max(width, n);
    const bool close = !current.items.empty() && (bs_dense <= 0 || new_width * new_rows > bs_dense);
    if (close) {
      finalize_group(current);
      groups.push_back(std::move(current));
      current = DenseGroup{};
      rows = 0;
      width = 0;
    }
    current.items.push_back(item);
    rows += m;
    width = std::max(width, n);
  }
  if (!current.items.empty()) {
    finalize_group(current);
    groups.push_back(std::move(current));
  }
  return groups;
}

void assemble_dense_batch(const DenseGroup& group, const KernelFunction& kernel, const PointSet& points,
                          DenseBatch& out) {
  out.group = &group;
  out.storage.assign(static_cast<std::size_t>(group.total_rows * group.width), 0.0);
  const BoundKernelEvaluator eval(kernel, points);
  const std::int64_t width = group.width;
  parallel_for(group.total_rows, [&](std::int64_t row) {
    const std::int64_t b = group.row_block[static_cast<std::size_t>(row)];
    const WorkItem& item = group.items[static_cast<std::size_t>(b)];
    const std::int64_t i_global = item.row.lower + (row - group.row_offset[static_cast<std::size_t>(b)]);
    const std::int64_t cols = item.col.size();
    double* entries = out.storage.data() + row * width;
    for (std::int64_t j = 0; j < cols; ++j) entries[j] = eval(i_global, item.col.lower + j);
  }, 16);
}

DenseBatch assemble_dense_batch(const DenseGroup& group, const KernelFunction& kernel, const PointSet& points) {
  DenseBatch batch;
  assemble_dense_batch(group, kernel, points, batch);
  return batch;
}

void gather_dense_inputs(DenseBatch& batch, std::span<const double> x_morton) {
  const DenseGroup& group = *batch.group;
  const std::int64_t b_count = static_cast<std::int64_t>(group.items.size());
  batch.x_gather.assign(static_cast<std::size_t>(b_count * group.width), 0.0);
  parallel_for(b_count, [&](std::int64_t b) {
    const WorkItem& item = group.items[static_cast<std::size_t>(b)];
    double* out = batch.x_gather.data() + b * group.width;
    for (std::int64_t j = 0; j < item.col.size(); ++j) out[j] = x_morton[static_cast<std::size_t>(item.col.lower + j)];
  }, 16);
}

void batched_gemv(const DenseBatch& batch, std::vector<double>& y) {
  const DenseGroup& group = *batch.group;
  if (batch.x_gather.empty() && group.total_rows > 0) {
    throw std::logic_error("batched_gemv: inputs not gathered");
  }
  y.assign(static_cast<std::size_t>(group.total_rows), 0.0);
  const std::int64_t width = group.width;
  parallel_for(group.total_rows, [&](std::int64_t row) {
    const std::int64_t b = group.row_block[static_cast<std::size_t>(row)];
    const double* a = batch.storage.data() + row * width;
    const double* x = batch.x_gather.data() + b * width;
    double acc = 0.0;
    for (std::int64_t j = 0; j < width; ++j) acc += a[j] * x[j];
    y[static_cast<std::size_t>(row)] = acc;
  }, 64);
}

std::vector<double> batched_gemv(const DenseBatch& batch) {
  std::vector<double> y;
  batched_gemv(batch, y);
  return y;
}

}  // namespace hmat
