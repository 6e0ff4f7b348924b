#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace hmat {

// Morton codes use a single 64-bit word, so dimensions are capped where
// every axis still gets at least three bits.
inline constexpr int kMaxDim = 20;

// Contiguous index range [lower, upper) into a Morton-ordered point array.
struct Cluster {
  std::int64_t lower = 0;
  std::int64_t upper = 0;

  std::int64_t size() const { return upper - lower; }
  friend bool operator==(const Cluster&, const Cluster&) = default;
};

// Structure-of-arrays point coordinates in [0,1]^d. perm maps slot i of the
// current ordering back to the position the point had in the original input,
// so coords[a][i] belongs to original point perm[i].
struct PointSet {
  int dim = 0;
  std::int64_t count = 0;
  std::vector<std::vector<double>> coords;  // coords[axis][i]
  std::vector<std::int64_t> perm;
};

enum class KernelKind { Gaussian, Matern };

struct KernelFunction {
  KernelKind kind = KernelKind::Gaussian;
  // Matern smoothness; 0 means "derive from the point dimension" as
  // beta = d/2 + 1, which keeps the Bessel order at one.
  double matern_beta = 0.0;
};

struct DenseMatrix {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<double> entries;  // row-major

  DenseMatrix() = default;
  DenseMatrix(std::int64_t r, std::int64_t c)
      : rows(r), cols(c), entries(static_cast<std::size_t>(r * c), 0.0) {}

  double& at(std::int64_t i, std::int64_t j) { return entries[static_cast<std::size_t>(i * cols + j)]; }
  double at(std::int64_t i, std::int64_t j) const { return entries[static_cast<std::size_t>(i * cols + j)]; }
};

// Modified Bessel function of the second kind, order one.
double bessel_k1(double x);

// First n points of the Halton sequence (bases = first d primes, starting at
// index 1, unscrambled). Identity permutation, not Morton-ordered.
PointSet halton_points(std::int64_t n, int d);

double eval_kernel(const KernelFunction& kernel, std::span<const double> y, std::span<const double> yp);
double eval_kernel(const KernelFunction& kernel, const PointSet& points, std::int64_t i, std::int64_t j);

// Caches the Matern normalization so per-entry evaluation stays cheap in
// assembly loops.
class KernelEvaluator {
 public:
  KernelEvaluator(const KernelFunction& kernel, int dim);

  double from_squared_distance(double r2) const {
    if (kind_ == KernelKind::Gaussian) return std::exp(-r2);
    return matern(r2);
  }

  double operator()(const PointSet& points, std::int64_t i, std::int64_t j) const {
    double r2 = 0.0;
    for (int a = 0; a < dim_; ++a) {
      const double dx = points.coords[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)] -
                        points.coords[static_cast<std::size_t>(a)][static_cast<std::size_t>(j)];
      r2 += dx * dx;
    }
    return from_squared_distance(r2);
  }

 private:
  double matern(double r2) const;

  KernelKind kind_;
  int dim_;
  double matern_norm_ = 0.0;
};

// Same evaluation with the coordinate arrays pinned down, for assembly loops.
class BoundKernelEvaluator {
 public:
  BoundKernelEvaluator(const KernelFunction& kernel, const PointSet& points)
      : eval_(kernel, points.dim), dim_(points.dim) {
    for (int a = 0; a < dim_; ++a) axis_[a] = points.coords[static_cast<std::size_t>(a)].data();
  }

  double operator()(std::int64_t i, std::int64_t j) const {
    double r2 = 0.0;
    for (int a = 0; a < dim_; ++a) {
      const double dx = axis_[a][i] - axis_[a][j];
      r2 += dx * dx;
    }
    return eval_.from_squared_distance(r2);
  }

 private:
  KernelEvaluator eval_;
  int dim_;
  const double* axis_[kMaxDim] = {};
};

// Sub-block of the collocation matrix over Morton-ordered points.
DenseMatrix dense_kernel_matrix(const KernelFunction& kernel, const PointSet& points, Cluster rows, Cluster cols);

enum class PermDirection { Forward, Inverse };

// Forward: out[i] = x[perm[i]]. Inverse undoes it exactly.
std::vector<double> permute_vector(std::span<const double> x, std::span<const std::int64_t> perm,
                                   PermDirection direction);

// Small deterministic generator (splitmix64) so CLI outputs and tests are
// reproducible across platforms and standard libraries.
struct SplitMix64 {
  std::uint64_t state = 0x9e3779b97f4a7c15ull;

  explicit SplitMix64(std::uint64_t seed = 1) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0,1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  // uniform in [-1,1)
  double symmetric() { return 2.0 * uniform() - 1.0; }
  // uniform integer in [lo, hi]
  std::int64_t range(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(next() % static_cast<std::uint64_t>(hi - lo + 1));
  }
};

}  // namespace hmat
