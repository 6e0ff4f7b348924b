#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "hmat/aca.hpp"
#include "hmat/core.hpp"
#include "hmat/dense_blocks.hpp"
#include "hmat/tree.hpp"

namespace hmat {

struct HmatrixConfig {
  double eta = 1.5;
  std::int64_t c_leaf = 256;
  std::int64_t k = 16;
  std::int64_t bs_aca = std::int64_t{1} << 20;
  std::int64_t bs_dense = std::int64_t{1} << 22;
  bool precompute_aca = false;
  std::optional<double> epsilon;  // optional adaptive-rank stopping tolerance
  bool force_dense = false;       // test mode: every leaf is assembled densely

  // The batch sizes and leaf size the reference experiments used on a large
  // accelerator; the struct defaults are scaled for workstation memory.
  static HmatrixConfig large_scale() {
    HmatrixConfig cfg;
    cfg.c_leaf = 2048;
    cfg.bs_aca = std::int64_t{1} << 25;
    cfg.bs_dense = std::int64_t{1} << 27;
    return cfg;
  }
};

struct HMatrix {
  HmatrixConfig config;
  PointSet points;  // Morton-ordered, with original-order permutation
  std::vector<WorkItem> aca_queue;
  std::vector<WorkItem> dense_queue;
  std::vector<AcaBatch> aca_batches;
  std::vector<DenseGroup> dense_groups;
  std::vector<BatchedAcaResult> precomputed;  // aligned with aca_batches when enabled
};

// Morton-orders the points, builds the block cluster tree, splits the leaf
// queue by admissibility, and optionally precomputes the low-rank factors.
HMatrix setup(const PointSet& raw_points, const KernelFunction& kernel, const HmatrixConfig& config);

struct MvpTimings {
  double dense_ms = 0.0;
  double aca_ms = 0.0;
  double total_ms = 0.0;
};

// z = H(A) x with x and z in the original point ordering. In recompute mode
// (the default) the low-rank factors are regenerated on the fly.
std::vector<double> mvp(const HMatrix& h, std::span<const double> x, const KernelFunction& kernel,
                        MvpTimings* timings = nullptr);

// ||H(A)x - Ax||_2 / ||Ax||_2 against an exact dense product. Limited to
// point counts where the dense product is affordable.
double relative_error(const HMatrix& h, const KernelFunction& kernel, std::span<const double> x_rand);

inline constexpr std::int64_t kDenseProductLimit = 32768;

}  // namespace hmat
