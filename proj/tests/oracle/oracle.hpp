#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "hmat/core.hpp"
#include "hmat/tree.hpp"

// Brute-force, single-threaded reference implementations. They share only
// data types and the kernel definition with the library; every algorithmic
// path is written independently so tests compare two genuinely different
// routes.
namespace hmat::oracle {

struct OracleLimits {
  std::int64_t max_n_dense = 32768;
  std::int64_t max_n_svd = 2048;
};

// Exact dense product in a fixed summation order. x and the result use the
// original point ordering (the PointSet's permutation is applied internally).
std::vector<double> dense_mvp(const KernelFunction& kernel, const PointSet& points, std::span<const double> x,
                              const OracleLimits& limits = {});

// Several right-hand sides in one sweep so the kernel evaluations are shared.
std::vector<std::vector<double>> dense_mvp_multi(const KernelFunction& kernel, const PointSet& points,
                                                 const std::vector<std::vector<double>>& xs,
                                                 const OracleLimits& limits = {});

// Materialized collocation matrix in the ordering of the PointSet itself.
DenseMatrix dense_matrix(const KernelFunction& kernel, const PointSet& points, const OracleLimits& limits = {});

// Literal depth-first recursion of the block cluster tree construction with
// the same cardinality split rule.
std::vector<WorkItem> recursive_block_tree(const PointSet& points, double eta, std::int64_t c_leaf,
                                           AdmissibilityMode mode = AdmissibilityMode::Geometric);

// Singular values by one-sided Jacobi, descending.
std::vector<double> singular_values(const DenseMatrix& a, const OracleLimits& limits = {});

// Count of singular values > tol * sigma_max.
std::int64_t svd_rank(const DenseMatrix& a, double tol, const OracleLimits& limits = {});

// Conjugate gradients on the materialized matrix a + sigma2*I, same stopping
// rule as the library solver.
struct CgResult {
  std::vector<double> x;
  std::int64_t iterations = 0;
};
CgResult reference_cg(const DenseMatrix& a, double sigma2, std::span<const double> b, double tol,
                      std::int64_t max_iter);

// Sequential counterparts of the parallel primitives.
namespace seq {

std::pair<std::vector<std::int64_t>, std::int64_t> exclusive_scan(std::span<const std::int64_t> input);
std::vector<std::int64_t> inclusive_scan(std::span<const std::int64_t> input);

// Hand-rolled stable merge sort (no std::stable_sort underneath).
void stable_sort_by_key(std::vector<std::int64_t>& keys, std::vector<std::int64_t>& payload);

template <class T, class Op>
std::pair<std::vector<T>, std::vector<std::int64_t>> reduce_by_key(std::span<const T> values,
                                                                   std::span<const std::int64_t> keys, Op op) {
  std::vector<T> reduced;
  std::vector<std::int64_t> unique_keys;
  std::size_t i = 0;
  while (i < keys.size()) {
    std::size_t j = i;
    T acc = values[i];
    while (j + 1 < keys.size() && keys[j + 1] == keys[i]) {
      ++j;
      acc = op(acc, values[j]);
    }
    reduced.push_back(acc);
    unique_keys.push_back(keys[i]);
    i = j + 1;
  }
  return {std::move(reduced), std::move(unique_keys)};
}

// Direct membership evaluation of the batching keys.
std::vector<std::int64_t> create_keys(std::span<const std::pair<std::int64_t, std::int64_t>> bounds,
                                      std::span<const std::int64_t> batch_keys, std::int64_t n_total);

}  // namespace seq

}  // namespace hmat::oracle
