#include "hmat/morton.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hmat/parallel.hpp"

namespace hmat {

int morton_bits_per_dim(int dim) {
  if (dim < 1 || dim > kMaxDim) throw std::invalid_argument("morton_bits_per_dim: dimension out of range");
  const int bits = 64 / dim;
  return bits > 52 ? 52 : bits;
}

std::uint64_t morton_fixed_point(double coord, int bits) {
  const double scaled = std::floor(coord * static_cast<double>(std::uint64_t{1} << bits));
  if (!(scaled > 0.0)) return 0;  // clamp below, including NaN
  const std::uint64_t max_value = (std::uint64_t{1} << bits) - 1;
  if (scaled >= static_cast<double>(max_value)) return max_value;
  return static_cast<std::uint64_t>(scaled);
}

std::uint64_t morton_interleave(std::span<const std::uint64_t> fixed, int bits) {
  const int d = static_cast<int>(fixed.size());
  std::uint64_t code = 0;
  for (int a = 0; a < d; ++a) {
    const std::uint64_t v = fixed[static_cast<std::size_t>(a)];
    for (int b = 0; b < bits; ++b) {
      code |= ((v >> b) & 1ull) << (b * d + a);
    }
  }
  return code;
}

std::vector<std::uint64_t> compute_morton_codes(const PointSet& points) {
  const int bits = morton_bits_per_dim(points.dim);
  std::vector<std::uint64_t> codes(static_cast<std::size_t>(points.count));
  parallel_for(points.count, [&](std::int64_t i) {
    std::uint64_t fixed[kMaxDim];
    for (int a = 0; a < points.dim; ++a) {
      fixed[a] = morton_fixed_point(points.coords[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)], bits);
    }
    codes[static_cast<std::size_t>(i)] = morton_interleave({fixed, static_cast<std::size_t>(points.dim)}, bits);
  });
  return codes;
}

PointSet morton_order(const PointSet& points) {
  std::vector<std::uint64_t> codes = compute_morton_codes(points);
  std::vector<std::int64_t> order(static_cast<std::size_t>(points.count));
  std::iota(order.begin(), order.end(), 0);
  stable_sort_by_key(codes, order);

  PointSet sorted;
  sorted.dim = points.dim;
  sorted.count = points.count;
  sorted.coords.assign(static_cast<std::size_t>(points.dim),
                       std::vector<double>(static_cast<std::size_t>(points.count)));
  sorted.perm.resize(static_cast<std::size_t>(points.count));
  parallel_for(points.count, [&](std::int64_t i) {
    const std::size_t src = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
    for (int a = 0; a < points.dim; ++a) {
      sorted.coords[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)] =
          points.coords[static_cast<std::size_t>(a)][src];
    }
    sorted.perm[static_cast<std::size_t>(i)] = points.perm[src];
  });
  return sorted;
}

}  // namespace hmat
