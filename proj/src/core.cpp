#include "hmat/core.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace hmat {

namespace {

constexpr int kPrimes[kMaxDim] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29,
                                  31, 37, 41, 43, 47, 53, 59, 61, 67, 71};

double radical_inverse(std::int64_t index, int base) {
  double inv = 1.0 / base;
  double factor = inv;
  double value = 0.0;
  while (index > 0) {
    value += factor * static_cast<double>(index % base);
    index /= base;
    factor *= inv;
  }
  return value;
}

// K1 power series with log term; converges quickly and without cancellation
// for x <= 2.
double bessel_k1_series(double x) {
  constexpr double kEulerGamma = 0.57721566490153286060651209008240243;
  const double q = 0.25 * x * x;
  double term = 1.0;                  // q^j / (j! (j+1)!)
  double psi_a = -kEulerGamma;        // psi(j+1)
  double psi_b = 1.0 - kEulerGamma;   // psi(j+2)
  double sum_i1 = 0.0;
  double sum_k = 0.0;
  for (int j = 0; j < 64; ++j) {
    sum_i1 += term;
    sum_k += (psi_a + psi_b) * term;
    const double next = term * q / ((j + 1.0) * (j + 2.0));
    if (next < 1e-19 * (sum_i1 + 1.0)) break;
    term = next;
    psi_a += 1.0 / (j + 1.0);
    psi_b += 1.0 / (j + 2.0);
  }
  const double i1 = 0.5 * x * sum_i1;
  return 1.0 / x + std::log(0.5 * x) * i1 - 0.25 * x * sum_k;
}

// Temme-style continued fraction for x > 2; the asymptotic expansion alone
// cannot reach full accuracy in the midrange.
double bessel_k1_continued_fraction(double x) {
  double b = 2.0 * (1.0 + x);
  double d = 1.0 / b;
  double h = d;
  double delh = d;
  double q1 = 0.0;
  double q2 = 1.0;
  const double a1 = 0.25;
  double q = a1;
  double c = a1;
  double a = -a1;
  double s = 1.0 + q * delh;
  for (int i = 2; i <= 2000; ++i) {
    a -= 2.0 * (i - 1);
    c = -a * c / i;
    const double qnew = (q1 - b * q2) / a;
    q1 = q2;
    q2 = qnew;
    q += c * qnew;
    b += 2.0;
    d = 1.0 / (b + a * d);
    delh = (b * d - 1.0) * delh;
    h += delh;
    const double dels = q * delh;
    s += dels;
    if (std::fabs(dels / s) < 1e-17) break;
  }
  h = a1 * h;
  const double k0 = std::sqrt(M_PI / (2.0 * x)) * std::exp(-x) / s;
  return k0 * (0.5 + x - h) / x;
}

double matern_normalization(double beta) {
  return 1.0 / (std::pow(2.0, beta - 1.0) * std::tgamma(beta));
}

double effective_beta(const KernelFunction& kernel, int dim) {
  const double beta = kernel.matern_beta > 0.0 ? kernel.matern_beta : 1.0 + 0.5 * dim;
  const double order = beta - 0.5 * dim;
  if (std::fabs(order - 1.0) > 1e-12) {
    throw std::invalid_argument("Matern kernel: only order beta - d/2 = 1 is supported, got beta = " +
                                std::to_string(beta) + " at d = " + std::to_string(dim));
  }
  return beta;
}

}  // namespace

double bessel_k1(double x) {
  if (x <= 0.0) throw std::domain_error("bessel_k1: argument must be positive");
  return x <= 2.0 ? bessel_k1_series(x) : bessel_k1_continued_fraction(x);
}

PointSet halton_points(std::int64_t n, int d) {
  if (n < 1) throw std::invalid_argument("halton_points: need n >= 1");
  if (d < 1 || d > kMaxDim) {
    throw std::invalid_argument("halton_points: dimension must be in [1, " + std::to_string(kMaxDim) + "]");
  }
  PointSet points;
  points.dim = d;
  points.count = n;
  points.coords.assign(static_cast<std::size_t>(d), std::vector<double>(static_cast<std::size_t>(n)));
  points.perm.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    points.perm[static_cast<std::size_t>(i)] = i;
    for (int a = 0; a < d; ++a) {
      points.coords[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)] =
          radical_inverse(i + 1, kPrimes[a]);
    }
  }
  return points;
}

KernelEvaluator::KernelEvaluator(const KernelFunction& kernel, int dim) : kind_(kernel.kind), dim_(dim) {
  if (kind_ == KernelKind::Matern) {
    matern_norm_ = matern_normalization(effective_beta(kernel, dim));
  }
}

double KernelEvaluator::matern(double r2) const {
  if (r2 == 0.0) return matern_norm_;  // analytic limit of r*K1(r) -> 1
  const double r = std::sqrt(r2);
  return bessel_k1(r) * r * matern_norm_;
}

double eval_kernel(const KernelFunction& kernel, std::span<const double> y, std::span<const double> yp) {
  if (y.size() != yp.size()) throw std::invalid_argument("eval_kernel: point dimensions differ");
  KernelEvaluator eval(kernel, static_cast<int>(y.size()));
  double r2 = 0.0;
  for (std::size_t a = 0; a < y.size(); ++a) {
    const double dx = y[a] - yp[a];
    r2 += dx * dx;
  }
  return eval.from_squared_distance(r2);
}

double eval_kernel(const KernelFunction& kernel, const PointSet& points, std::int64_t i, std::int64_t j) {
  KernelEvaluator eval(kernel, points.dim);
  return eval(points, i, j);
}

DenseMatrix dense_kernel_matrix(const KernelFunction& kernel, const PointSet& points, Cluster rows, Cluster cols) {
  if (rows.lower < 0 || rows.upper > points.count || cols.lower < 0 || cols.upper > points.count ||
      rows.lower >= rows.upper || cols.lower >= cols.upper) {
    throw std::out_of_range("dense_kernel_matrix: cluster range out of bounds");
  }
  DenseMatrix block(rows.size(), cols.size());
  KernelEvaluator eval(kernel, points.dim);
  for (std::int64_t i = 0; i < block.rows; ++i) {
    for (std::int64_t j = 0; j < block.cols; ++j) {
      block.at(i, j) = eval(points, rows.lower + i, cols.lower + j);
    }
  }
  return block;
}

std::vector<double> permute_vector(std::span<const double> x, std::span<const std::int64_t> perm,
                                   PermDirection direction) {
  if (x.size() != perm.size()) throw std::invalid_argument("permute_vector: length mismatch");
  std::vector<double> out(x.size());
  if (direction == PermDirection::Forward) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[static_cast<std::size_t>(perm[i])];
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) out[static_cast<std::size_t>(perm[i])] = x[i];
  }
  return out;
}

}  // namespace hmat
