#include "hmat/aca.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "hmat/parallel.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>

namespace hmat {
namespace {
struct AcaProfile {
  double zero_fill = 0, cand = 0, reduce = 0, resolve = 0, norm = 0, vpass = 0, book = 0, gather = 0;
  long long rejections = 0, norm_fail = 0, pivot_fail = 0;
  bool enabled = std::getenv("HMAT_ACA_PROFILE") != nullptr;
  ~AcaProfile() {
    if (enabled) {
      std::fprintf(stderr, "[aca prof] fill %.2f cand %.2f reduce %.2f resolve %.2f gather %.2f norm %.2f vpass %.2f book %.2f rej %lld (norm %lld pivot %lld)\n",
                   zero_fill, cand, reduce, resolve, gather, norm, vpass, book, rejections, norm_fail, pivot_fail);
    }
  }
};
AcaProfile g_aca_profile;
double prof_now() { return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count(); }
}  // namespace

namespace {

constexpr double kEps0 = 1e-14;  // column acceptance threshold, relative to the block scale

struct AbsArg {
  double value = -1.0;
  std::int64_t index = 0;
};

struct AbsArgMaxOp {
  AbsArg operator()(const AbsArg& acc, const AbsArg& x) const { return x.value > acc.value ? x : acc; }
};

double fold_dot(const double* a, const double* b, std::int64_t n) {
  double acc = a[0] * b[0];
  for (std::int64_t i = 1; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double stopping_bound_factor(double epsilon, double eta) { return epsilon * (1.0 - eta) / (1.0 + epsilon); }

// Residual-column cross approximation. `entry(i, j)` evaluates the block on
// demand; the block is never materialized.
template <class EntryFn>
LowRankFactors aca_core(EntryFn&& entry, std::int64_t m, std::int64_t n, const AcaOptions& opt) {
  if (m < 1 || n < 1) throw std::invalid_argument("aca: empty block");
  if (opt.max_rank < 1) throw std::invalid_argument("aca: max_rank must be >= 1");

  const auto ev = [&](std::int64_t i, std::int64_t j) {
    if (opt.stats) ++opt.stats->entry_evals;
    return entry(i, j);
  };

  std::vector<double> u_cols;
  std::vector<double> v_cols;
  u_cols.reserve(static_cast<std::size_t>(opt.max_rank * m));
  v_cols.reserve(static_cast<std::size_t>(opt.max_rank * n));
  std::vector<std::uint8_t> used_row(static_cast<std::size_t>(m), 0);
  std::vector<std::uint8_t> used_col(static_cast<std::size_t>(n), 0);
  std::vector<double> uhat(static_cast<std::size_t>(m));

  double scale_sq = -1.0;  // squared norm of the first accepted column
  double frob_sq = 0.0;    // ||sum_l u_l v_l^T||_F^2, maintained incrementally
  std::int64_t k_eff = 0;

  for (std::int64_t r = 0; r < opt.max_rank; ++r) {
    const double* u = u_cols.data();
    const double* v = v_cols.data();

    // Scan unused columns in ascending order for the first usable pivot.
    std::int64_t pivot_col = -1;
    std::int64_t pivot_row = -1;
    double col_norm_sq = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      if (used_col[static_cast<std::size_t>(j)]) continue;
      for (std::int64_t i = 0; i < m; ++i) {
        double a = ev(i, j);
        for (std::int64_t l = 0; l < r; ++l) a -= u[l * m + i] * v[l * n + j];
        uhat[static_cast<std::size_t>(i)] = a;
      }
      double norm_sq = uhat[0] * uhat[0];
      for (std::int64_t i = 1; i < m; ++i) norm_sq += uhat[static_cast<std::size_t>(i)] * uhat[static_cast<std::size_t>(i)];
      std::int64_t best = -1;
      double best_abs = -1.0;
      for (std::int64_t i = 0; i < m; ++i) {
        if (used_row[static_cast<std::size_t>(i)]) continue;
        const double a = std::fabs(uhat[static_cast<std::size_t>(i)]);
        if (a > best_abs) {
          best_abs = a;
          best = i;
        }
      }
      const bool qualified = best >= 0 && best_abs > 0.0 &&
                             (scale_sq < 0.0 || norm_sq > kEps0 * kEps0 * scale_sq);
      if (qualified) {
        pivot_col = j;
        pivot_row = best;
        col_norm_sq = norm_sq;
        break;
      }
      if (opt.stats) ++opt.stats->column_rejections;
      // A nonzero column under the threshold means the residual as a whole
      // has reached the noise floor: the block is converged. Hunting through
      // the remaining columns for one that straddles the threshold would add
      // a rank-one update of noise at up to O(mn) scan cost.
      if (norm_sq > 0.0 && scale_sq >= 0.0) break;
      // exact-zero (or pivotless) column: consumed, never revisited
      used_col[static_cast<std::size_t>(j)] = 1;
    }
    if (pivot_col < 0) break;  // no usable column left: converged at rank r
    if (scale_sq < 0.0) scale_sq = col_norm_sq;

    const double pivot_val = uhat[static_cast<std::size_t>(pivot_row)];
    u_cols.resize(static_cast<std::size_t>((r + 1) * m));
    v_cols.resize(static_cast<std::size_t>((r + 1) * n));
    double* ur = u_cols.data() + r * m;
    double* vr = v_cols.data() + r * n;
    for (std::int64_t i = 0; i < m; ++i) ur[i] = uhat[static_cast<std::size_t>(i)] / pivot_val;
    for (std::int64_t j = 0; j < n; ++j) {
      double a = ev(pivot_row, j);
      for (std::int64_t l = 0; l < r; ++l) a -= u_cols[static_cast<std::size_t>(l * m + pivot_row)] * v_cols[static_cast<std::size_t>(l * n + j)];
      vr[j] = a;
    }
    used_row[static_cast<std::size_t>(pivot_row)] = 1;
    used_col[static_cast<std::size_t>(pivot_col)] = 1;
    if (opt.stats) {
      opt.stats->row_pivots.push_back(pivot_row);
      opt.stats->col_pivots.push_back(pivot_col);
    }
    k_eff = r + 1;

    if (opt.epsilon) {
      const double nu_sq = fold_dot(ur, ur, m);
      const double nv_sq = fold_dot(vr, vr, n);
      double cross = 0.0;
      for (std::int64_t l = 0; l < r; ++l) {
        const double du = fold_dot(u_cols.data() + l * m, ur, m);
        const double dv = fold_dot(v_cols.data() + l * n, vr, n);
        cross += du * dv;
      }
      frob_sq += 2.0 * cross + nu_sq * nv_sq;
      const double bound = stopping_bound_factor(*opt.epsilon, opt.eta) * std::sqrt(frob_sq);
      if (std::sqrt(nu_sq) * std::sqrt(nv_sq) <= bound) break;
    }
  }

  LowRankFactors f;
  f.m = m;
  f.n = n;
  f.k_eff = k_eff;
  u_cols.resize(static_cast<std::size_t>(k_eff * m));
  v_cols.resize(static_cast<std::size_t>(k_eff * n));
  f.u = std::move(u_cols);
  f.v = std::move(v_cols);
  return f;
}

}  // namespace

LowRankFactors aca_single(const KernelFunction& kernel, const PointSet& points, Cluster rows, Cluster cols,
                          const AcaOptions& options) {
  if (rows.lower < 0 || rows.upper > points.count || cols.lower < 0 || cols.upper > points.count) {
    throw std::out_of_range("aca_single: cluster range out of bounds");
  }
  const BoundKernelEvaluator eval(kernel, points);
  return aca_core(
      [&](std::int64_t i, std::int64_t j) { return eval(rows.lower + i, cols.lower + j); },
      rows.size(), cols.size(), options);
}

LowRankFactors aca_single(const DenseMatrix& block, const AcaOptions& options) {
  return aca_core([&](std::int64_t i, std::int64_t j) { return block.at(i, j); }, block.rows, block.cols,
                  options);
}

std::vector<double> apply_low_rank(const LowRankFactors& f, std::span<const double> x_slice) {
  if (static_cast<std::int64_t>(x_slice.size()) != f.n) throw std::invalid_argument("apply_low_rank: dimension mismatch");
  std::vector<double> y(static_cast<std::size_t>(f.m), 0.0);
  for (std::int64_t l = 0; l < f.k_eff; ++l) {
    const double* vl = f.v.data() + l * f.n;
    double t = fold_dot(vl, x_slice.data(), f.n);
    const double* ul = f.u.data() + l * f.m;
    for (std::int64_t i = 0; i < f.m; ++i) y[static_cast<std::size_t>(i)] += ul[i] * t;
  }
  return y;
}

namespace {

void finalize_batch(AcaBatch& batch) {
  const std::int64_t b_count = static_cast<std::int64_t>(batch.items.size());
  batch.row_offset.assign(static_cast<std::size_t>(b_count + 1), 0);
  batch.col_offset.assign(static_cast<std::size_t>(b_count + 1), 0);
  for (std::int64_t b = 0; b < b_count; ++b) {
    batch.row_offset[static_cast<std::size_t>(b + 1)] =
        batch.row_offset[static_cast<std::size_t>(b)] + batch.items[static_cast<std::size_t>(b)].row.size();
    batch.col_offset[static_cast<std::size_t>(b + 1)] =
        batch.col_offset[static_cast<std::size_t>(b)] + batch.items[static_cast<std::size_t>(b)].col.size();
  }
  batch.total_rows = batch.row_offset[static_cast<std::size_t>(b_count)];
  batch.total_cols = batch.col_offset[static_cast<std::size_t>(b_count)];

  const auto element_to_block = [&](const std::vector<std::int64_t>& offsets, std::int64_t total) {
    std::vector<BatchBounds> bounds(static_cast<std::size_t>(b_count));
    std::vector<std::int64_t> ids(static_cast<std::size_t>(b_count));
    for (std::int64_t b = 0; b < b_count; ++b) {
      bounds[static_cast<std::size_t>(b)] = {offsets[static_cast<std::size_t>(b)], offsets[static_cast<std::size_t>(b + 1)]};
      ids[static_cast<std::size_t>(b)] = b + 1;
    }
    std::vector<std::int64_t> map = create_keys(bounds, ids, total);
    parallel_for(total, [&](std::int64_t e) { --map[static_cast<std::size_t>(e)]; });
    return map;
  };
  batch.row_block = element_to_block(batch.row_offset, batch.total_rows);
  batch.col_block = element_to_block(batch.col_offset, batch.total_cols);
}

}  // namespace

std::vector<AcaBatch> partition_aca_queue(std::span<const WorkItem> items, std::int64_t bs_aca) {
  std::vector<AcaBatch> batches;
  AcaBatch current;
  std::int64_t row_sum = 0;
  for (const WorkItem& item : items) {
    const std::int64_t m = item.row.size();
    const bool close = !current.items.empty() && (bs_aca <= 0 || row_sum + m > bs_aca);
    if (close) {
      finalize_batch(current);
      batches.push_back(std::move(current));
      current = AcaBatch{};
      row_sum = 0;
    }
    current.items.push_back(item);
    row_sum += m;
  }
  if (!current.items.empty()) {
    finalize_batch(current);
    batches.push_back(std::move(current));
  }
  return batches;
}

AcaBatch make_batch_from_shapes(std::span<const std::pair<std::int64_t, std::int64_t>> shapes) {
  AcaBatch batch;
  for (const auto& [m, n] : shapes) {
    WorkItem item;
    item.row = {0, m};
    item.col = {0, n};
    batch.items.push_back(item);
  }
  finalize_batch(batch);
  return batch;
}

namespace {

enum class BlockPhase : std::uint8_t { Idle, Scanning, Locked };

template <class EntryFn>
void aca_batched_impl(const AcaBatch& batch, EntryFn&& entry, const AcaOptions& opt,
                      BatchedAcaResult& result) {
  if (opt.max_rank < 1) throw std::invalid_argument("aca_batched: max_rank must be >= 1");
  const std::int64_t b_count = static_cast<std::int64_t>(batch.items.size());
  const std::int64_t total_rows = batch.total_rows;
  const std::int64_t total_cols = batch.total_cols;
  const std::int64_t kmax = opt.max_rank;

  result.max_rank = kmax;
  result.k_eff.assign(static_cast<std::size_t>(b_count), 0);
  result.row_pivots.assign(static_cast<std::size_t>(b_count * kmax), -1);
  result.col_pivots.assign(static_cast<std::size_t>(b_count * kmax), -1);
  if (b_count == 0) return;
  double t0 = prof_now();
  result.u_storage.assign(static_cast<std::size_t>(kmax * total_rows), 0.0);
  result.v_storage.assign(static_cast<std::size_t>(kmax * total_cols), 0.0);
  g_aca_profile.zero_fill += prof_now() - t0;

  double* u = result.u_storage.data();
  double* v = result.v_storage.data();
  const std::int64_t* row_block = batch.row_block.data();
  const std::int64_t* col_block = batch.col_block.data();
  const std::int64_t* row_offset = batch.row_offset.data();
  const std::int64_t* col_offset = batch.col_offset.data();
  std::int64_t* k_eff = result.k_eff.data();

  std::vector<std::uint8_t> active(static_cast<std::size_t>(b_count), 1);
  std::vector<BlockPhase> phase(static_cast<std::size_t>(b_count), BlockPhase::Idle);
  std::vector<std::uint8_t> used_row(static_cast<std::size_t>(total_rows), 0);
  std::vector<std::uint8_t> used_col(static_cast<std::size_t>(total_cols), 0);
  std::vector<std::int64_t> cand_col(static_cast<std::size_t>(b_count), -1);
  std::vector<std::int64_t> pivot_row(static_cast<std::size_t>(b_count), -1);
  std::vector<double> pivot_val(static_cast<std::size_t>(b_count), 0.0);
  std::vector<double> scale_sq(static_cast<std::size_t>(b_count), -1.0);
  std::vector<double> locked_norm_sq(static_cast<std::size_t>(b_count), 0.0);
  std::vector<double> frob_sq(static_cast<std::size_t>(b_count), 0.0);

  std::vector<double> vj(static_cast<std::size_t>(b_count * kmax), 0.0);    // (v_l)_{j_cand} per block
  std::vector<double> upiv(static_cast<std::size_t>(b_count * kmax), 0.0);  // (u_l)_{i_r} per block
  std::vector<double> sq(static_cast<std::size_t>(std::max(total_rows, total_cols)), 0.0);
  std::vector<AbsArg> absval(static_cast<std::size_t>(total_rows));
  std::vector<double> block_dots(static_cast<std::size_t>(b_count), 0.0);
  std::vector<double> cross(static_cast<std::size_t>(b_count), 0.0);
  std::vector<double> nu_sq(static_cast<std::size_t>(b_count), 0.0);
  std::vector<double> nv_sq(static_cast<std::size_t>(b_count), 0.0);

  const std::span<const std::int64_t> row_keys(batch.row_block);
  const std::span<const std::int64_t> col_keys(batch.col_block);

  const auto next_unused_col = [&](std::int64_t b, std::int64_t from_local) -> std::int64_t {
    const std::int64_t n_b = batch.items[static_cast<std::size_t>(b)].col.size();
    for (std::int64_t j = from_local; j < n_b; ++j) {
      if (!used_col[static_cast<std::size_t>(col_offset[b] + j)]) return j;
    }
    return -1;
  };

  for (std::int64_t r = 0; r < kmax; ++r) {
    bool any_scanning = false;
    for (std::int64_t b = 0; b < b_count; ++b) {
      if (!active[static_cast<std::size_t>(b)]) {
        phase[static_cast<std::size_t>(b)] = BlockPhase::Idle;
        continue;
      }
      const std::int64_t cand = next_unused_col(b, 0);
      if (cand < 0) {
        active[static_cast<std::size_t>(b)] = 0;
        phase[static_cast<std::size_t>(b)] = BlockPhase::Idle;
        continue;
      }
      cand_col[static_cast<std::size_t>(b)] = cand;
      phase[static_cast<std::size_t>(b)] = BlockPhase::Scanning;
      any_scanning = true;
    }
    if (!any_scanning) break;  // no block is still iterating

    // Column scan, first candidates in one batched pass over the whole array.
    t0 = prof_now();
    parallel_for(b_count, [&](std::int64_t b) {
      if (phase[static_cast<std::size_t>(b)] != BlockPhase::Scanning) return;
      for (std::int64_t l = 0; l < r; ++l) {
        vj[static_cast<std::size_t>(b * kmax + l)] =
            v[l * total_cols + col_offset[b] + cand_col[static_cast<std::size_t>(b)]];
      }
    }, 64);

    parallel_for(total_rows, [&](std::int64_t e) {
      const std::int64_t b = row_block[e];
      if (phase[static_cast<std::size_t>(b)] != BlockPhase::Scanning) {
        sq[static_cast<std::size_t>(e)] = 0.0;
        absval[static_cast<std::size_t>(e)] = {-1.0, 0};
        return;
      }
      const std::int64_t i_local = e - row_offset[b];
      double a = entry(b, i_local, cand_col[static_cast<std::size_t>(b)]);
      for (std::int64_t l = 0; l < r; ++l) a -= u[l * total_rows + e] * vj[static_cast<std::size_t>(b * kmax + l)];
      u[r * total_rows + e] = a;
      sq[static_cast<std::size_t>(e)] = a * a;
      absval[static_cast<std::size_t>(e)] = {used_row[static_cast<std::size_t>(e)] ? -1.0 : std::fabs(a), i_local};
    }, 2048);
    g_aca_profile.cand += prof_now() - t0;

    t0 = prof_now();
    {
      const std::vector<double> norm_sums =
          reduce_by_key(std::span<const double>(sq.data(), static_cast<std::size_t>(total_rows)), row_keys, SumOp{}).first;
      const std::vector<AbsArg> arg_max =
          reduce_by_key(std::span<const AbsArg>(absval.data(), static_cast<std::size_t>(total_rows)), row_keys, AbsArgMaxOp{}).first;
      for (std::int64_t b = 0; b < b_count; ++b) {
        if (phase[static_cast<std::size_t>(b)] != BlockPhase::Scanning) continue;
        const double norm_sq = norm_sums[static_cast<std::size_t>(b)];
        const AbsArg best = arg_max[static_cast<std::size_t>(b)];
        const bool qualified = best.value > 0.0 &&
                               (scale_sq[static_cast<std::size_t>(b)] < 0.0 ||
                                norm_sq > kEps0 * kEps0 * scale_sq[static_cast<std::size_t>(b)]);
        if (qualified) {
          phase[static_cast<std::size_t>(b)] = BlockPhase::Locked;
          pivot_row[static_cast<std::size_t>(b)] = best.index;
          locked_norm_sq[static_cast<std::size_t>(b)] = norm_sq;
        } else {
          // consumed, same as in the single-block scan
          used_col[static_cast<std::size_t>(col_offset[b] + cand_col[static_cast<std::size_t>(b)])] = 1;
        }
      }
    }
    g_aca_profile.reduce += prof_now() - t0;

    t0 = prof_now();
    // Blocks whose first candidate was rejected retry on their own segment,
    // independently and in parallel; the tail of a converging block never
    // drags the whole batch through extra full-array passes.
    parallel_for(b_count, [&](std::int64_t b) {
      if (phase[static_cast<std::size_t>(b)] != BlockPhase::Scanning) return;
      const std::int64_t m_b = row_offset[b + 1] - row_offset[b];
      double* u_seg = u + r * total_rows + row_offset[b];
      const std::uint8_t* used = used_row.data() + row_offset[b];
      std::int64_t cand = next_unused_col(b, cand_col[static_cast<std::size_t>(b)] + 1);
      while (cand >= 0) {
        for (std::int64_t i = 0; i < m_b; ++i) {
          double a = entry(b, i, cand);
          for (std::int64_t l = 0; l < r; ++l) {
            a -= u[l * total_rows + row_offset[b] + i] * v[l * total_cols + col_offset[b] + cand];
          }
          u_seg[i] = a;
        }
        double norm_sq = u_seg[0] * u_seg[0];
        for (std::int64_t i = 1; i < m_b; ++i) norm_sq += u_seg[i] * u_seg[i];
        std::int64_t best = -1;
        double best_abs = -1.0;
        for (std::int64_t i = 0; i < m_b; ++i) {
          if (used[i]) continue;
          const double a = std::fabs(u_seg[i]);
          if (a > best_abs) {
            best_abs = a;
            best = i;
          }
        }
        const bool qualified = best >= 0 && best_abs > 0.0 &&
                               (scale_sq[static_cast<std::size_t>(b)] < 0.0 ||
                                norm_sq > kEps0 * kEps0 * scale_sq[static_cast<std::size_t>(b)]);
        if (qualified) {
          phase[static_cast<std::size_t>(b)] = BlockPhase::Locked;
          pivot_row[static_cast<std::size_t>(b)] = best;
          locked_norm_sq[static_cast<std::size_t>(b)] = norm_sq;
          cand_col[static_cast<std::size_t>(b)] = cand;
          return;
        }
        __atomic_add_fetch(&g_aca_profile.rejections, 1, __ATOMIC_RELAXED);
        if (best >= 0 && best_abs > 0.0) __atomic_add_fetch(&g_aca_profile.norm_fail, 1, __ATOMIC_RELAXED);
        else __atomic_add_fetch(&g_aca_profile.pivot_fail, 1, __ATOMIC_RELAXED);
        used_col[static_cast<std::size_t>(col_offset[b] + cand)] = 1;
        cand = next_unused_col(b, cand + 1);
      }
      phase[static_cast<std::size_t>(b)] = BlockPhase::Idle;
      active[static_cast<std::size_t>(b)] = 0;  // converged at rank r
    }, 1);
    g_aca_profile.resolve += prof_now() - t0;

    bool any_locked = false;
    for (std::int64_t b = 0; b < b_count; ++b) {
      if (phase[static_cast<std::size_t>(b)] == BlockPhase::Locked) {
        any_locked = true;
        break;
      }
    }
    if (!any_locked) break;  // every remaining block voted done during the scan

    t0 = prof_now();
    parallel_for(b_count, [&](std::int64_t b) {
      if (phase[static_cast<std::size_t>(b)] != BlockPhase::Locked) return;
      const std::int64_t piv = row_offset[b] + pivot_row[static_cast<std::size_t>(b)];
      pivot_val[static_cast<std::size_t>(b)] = u[r * total_rows + piv];
      for (std::int64_t l = 0; l < r; ++l) upiv[static_cast<std::size_t>(b * kmax + l)] = u[l * total_rows + piv];
    }, 64);

    g_aca_profile.gather += prof_now() - t0;
    t0 = prof_now();
    parallel_for(total_rows, [&](std::int64_t e) {
      const std::int64_t b = row_block[e];
      if (phase[static_cast<std::size_t>(b)] != BlockPhase::Locked) return;
      u[r * total_rows + e] /= pivot_val[static_cast<std::size_t>(b)];
    }, 2048);
    g_aca_profile.norm += prof_now() - t0;
    t0 = prof_now();

    parallel_for(total_cols, [&](std::int64_t e) {
      const std::int64_t b = col_block[e];
      if (phase[static_cast<std::size_t>(b)] != BlockPhase::Locked) return;
      const std::int64_t j_local = e - col_offset[b];
      double a = entry(b, pivot_row[static_cast<std::size_t>(b)], j_local);
      for (std::int64_t l = 0; l < r; ++l) a -= upiv[static_cast<std::size_t>(b * kmax + l)] * v[l * total_cols + e];
      v[r * total_cols + e] = a;
    }, 2048);
    g_aca_profile.vpass += prof_now() - t0;

    t0 = prof_now();
    for (std::int64_t b = 0; b < b_count; ++b) {
      if (phase[static_cast<std::size_t>(b)] != BlockPhase::Locked) continue;
      used_row[static_cast<std::size_t>(row_offset[b] + pivot_row[static_cast<std::size_t>(b)])] = 1;
      used_col[static_cast<std::size_t>(col_offset[b] + cand_col[static_cast<std::size_t>(b)])] = 1;
      result.row_pivots[static_cast<std::size_t>(b * kmax + r)] = pivot_row[static_cast<std::size_t>(b)];
      result.col_pivots[static_cast<std::size_t>(b * kmax + r)] = cand_col[static_cast<std::size_t>(b)];
      if (scale_sq[static_cast<std::size_t>(b)] < 0.0) scale_sq[static_cast<std::size_t>(b)] = locked_norm_sq[static_cast<std::size_t>(b)];
      k_eff[b] = r + 1;
      if (r + 1 == kmax) active[static_cast<std::size_t>(b)] = 0;
    }
    g_aca_profile.book += prof_now() - t0;

    if (opt.epsilon) {
      parallel_for(total_rows, [&](std::int64_t e) {
        const std::int64_t b = row_block[e];
        const double a = phase[static_cast<std::size_t>(b)] == BlockPhase::Locked ? u[r * total_rows + e] : 0.0;
        sq[static_cast<std::size_t>(e)] = a * a;
      }, 2048);
      nu_sq = reduce_by_key(std::span<const double>(sq.data(), static_cast<std::size_t>(total_rows)), row_keys, SumOp{}).first;
      parallel_for(total_cols, [&](std::int64_t e) {
        const std::int64_t b = col_block[e];
        const double a = phase[static_cast<std::size_t>(b)] == BlockPhase::Locked ? v[r * total_cols + e] : 0.0;
        sq[static_cast<std::size_t>(e)] = a * a;
      }, 2048);
      nv_sq = reduce_by_key(std::span<const double>(sq.data(), static_cast<std::size_t>(total_cols)), col_keys, SumOp{}).first;

      std::fill(cross.begin(), cross.end(), 0.0);
      for (std::int64_t l = 0; l < r; ++l) {
        parallel_for(total_rows, [&](std::int64_t e) {
          sq[static_cast<std::size_t>(e)] = u[l * total_rows + e] * u[r * total_rows + e];
        }, 2048);
        block_dots = reduce_by_key(std::span<const double>(sq.data(), static_cast<std::size_t>(total_rows)), row_keys, SumOp{}).first;
        std::vector<double> du = block_dots;
        parallel_for(total_cols, [&](std::int64_t e) {
          sq[static_cast<std::size_t>(e)] = v[l * total_cols + e] * v[r * total_cols + e];
        }, 2048);
        block_dots = reduce_by_key(std::span<const double>(sq.data(), static_cast<std::size_t>(total_cols)), col_keys, SumOp{}).first;
        for (std::int64_t b = 0; b < b_count; ++b) {
          if (phase[static_cast<std::size_t>(b)] == BlockPhase::Locked) {
            cross[static_cast<std::size_t>(b)] += du[static_cast<std::size_t>(b)] * block_dots[static_cast<std::size_t>(b)];
          }
        }
      }
      const double factor = stopping_bound_factor(*opt.epsilon, opt.eta);
      for (std::int64_t b = 0; b < b_count; ++b) {
        if (phase[static_cast<std::size_t>(b)] != BlockPhase::Locked) continue;
        frob_sq[static_cast<std::size_t>(b)] += 2.0 * cross[static_cast<std::size_t>(b)] +
                                                nu_sq[static_cast<std::size_t>(b)] * nv_sq[static_cast<std::size_t>(b)];
        const double bound = factor * std::sqrt(frob_sq[static_cast<std::size_t>(b)]);
        if (std::sqrt(nu_sq[static_cast<std::size_t>(b)]) * std::sqrt(nv_sq[static_cast<std::size_t>(b)]) <= bound) {
          active[static_cast<std::size_t>(b)] = 0;
        }
      }
    }

    bool any_active = false;
    for (std::int64_t b = 0; b < b_count; ++b) any_active |= active[static_cast<std::size_t>(b)] != 0;
    if (!any_active) break;
  }
}

}  // namespace

void aca_batched(const AcaBatch& batch, const KernelFunction& kernel, const PointSet& points,
                 const AcaOptions& options, BatchedAcaResult& out) {
  const BoundKernelEvaluator eval(kernel, points);
  const WorkItem* items = batch.items.data();
  aca_batched_impl(
      batch,
      [&](std::int64_t b, std::int64_t i_local, std::int64_t j_local) {
        return eval(items[b].row.lower + i_local, items[b].col.lower + j_local);
      },
      options, out);
}

BatchedAcaResult aca_batched(const AcaBatch& batch, const KernelFunction& kernel, const PointSet& points,
                             const AcaOptions& options) {
  BatchedAcaResult result;
  aca_batched(batch, kernel, points, options, result);
  return result;
}

BatchedAcaResult aca_batched(const AcaBatch& batch, std::span<const DenseMatrix> blocks,
                             const AcaOptions& options) {
  if (blocks.size() != batch.items.size()) throw std::invalid_argument("aca_batched: block count mismatch");
  BatchedAcaResult result;
  aca_batched_impl(
      batch,
      [&](std::int64_t b, std::int64_t i_local, std::int64_t j_local) {
        return blocks[static_cast<std::size_t>(b)].at(i_local, j_local);
      },
      options, result);
  return result;
}

LowRankFactors extract_low_rank(const BatchedAcaResult& result, const AcaBatch& batch, std::int64_t block) {
  const WorkItem& item = batch.items[static_cast<std::size_t>(block)];
  LowRankFactors f;
  f.m = item.row.size();
  f.n = item.col.size();
  f.k_eff = result.k_eff[static_cast<std::size_t>(block)];
  f.u.resize(static_cast<std::size_t>(f.k_eff * f.m));
  f.v.resize(static_cast<std::size_t>(f.k_eff * f.n));
  for (std::int64_t l = 0; l < f.k_eff; ++l) {
    const double* u_src = result.u_storage.data() + l * batch.total_rows + batch.row_offset[static_cast<std::size_t>(block)];
    const double* v_src = result.v_storage.data() + l * batch.total_cols + batch.col_offset[static_cast<std::size_t>(block)];
    std::copy(u_src, u_src + f.m, f.u.data() + l * f.m);
    std::copy(v_src, v_src + f.n, f.v.data() + l * f.n);
  }
  return f;
}

void batched_low_rank_apply(const BatchedAcaResult& result, const AcaBatch& batch,
                            std::span<const double> x_morton, std::span<double> y_staged) {
  if (static_cast<std::int64_t>(y_staged.size()) != batch.total_rows) {
    throw std::invalid_argument("batched_low_rank_apply: staging size mismatch");
  }
  const std::int64_t b_count = static_cast<std::int64_t>(batch.items.size());
  parallel_for(b_count, [&](std::int64_t b) {
    const WorkItem& item = batch.items[static_cast<std::size_t>(b)];
    const std::int64_t m = item.row.size();
    const std::int64_t n = item.col.size();
    const std::int64_t k = result.k_eff[static_cast<std::size_t>(b)];
    double* y = y_staged.data() + batch.row_offset[static_cast<std::size_t>(b)];
    for (std::int64_t i = 0; i < m; ++i) y[i] = 0.0;
    const double* x = x_morton.data() + item.col.lower;
    for (std::int64_t l = 0; l < k; ++l) {
      const double* vl = result.v_storage.data() + l * batch.total_cols + batch.col_offset[static_cast<std::size_t>(b)];
      double t = vl[0] * x[0];
      for (std::int64_t j = 1; j < n; ++j) t += vl[j] * x[j];
      const double* ul = result.u_storage.data() + l * batch.total_rows + batch.row_offset[static_cast<std::size_t>(b)];
      for (std::int64_t i = 0; i < m; ++i) y[i] += ul[i] * t;
    }
  }, 1);
}

}  // namespace hmat
