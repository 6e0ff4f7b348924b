#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hmat/core.hpp"

namespace hmat {

// Bits of the fixed-point representation per axis. Capped at 52 so the
// conversion stays exact within a double's mantissa.
int morton_bits_per_dim(int dim);

// Fixed-point value of a coordinate assumed to lie in [0,1]; out-of-range
// values are clamped, not rejected.
std::uint64_t morton_fixed_point(double coord, int bits);

// Interleaves d fixed-point values: bit b of axis a lands at position b*d + a,
// so axis 0 occupies the least significant slot of each group.
std::uint64_t morton_interleave(std::span<const std::uint64_t> fixed, int bits);

std::vector<std::uint64_t> compute_morton_codes(const PointSet& points);

// Stably sorts the points by Morton code and composes the permutation.
PointSet morton_order(const PointSet& points);

}  // namespace hmat
