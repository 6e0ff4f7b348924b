#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace hmat {

int parallel_thread_count();

namespace detail {
// Splits [0,n) into at most `chunks` contiguous ranges and runs them on the
// worker pool. Falls back to an inline serial run for a single chunk or when
// already inside a worker.
void pool_dispatch(std::int64_t n, std::int64_t chunks,
                   const std::function<void(std::int64_t, std::int64_t)>& range_fn);
}  // namespace detail

// Bulk-synchronous launch: body(t) for every t in [0,n). Bodies may read
// shared data freely but must write only disjoint output slots; the only
// cross-thread write primitive is the OutputQueue counter. `grain` is the
// minimum number of indices per chunk; pass 1 for coarse, expensive bodies.
template <class F>
void parallel_for(std::int64_t n, F&& body, std::int64_t grain = 1024) {
  if (n <= 0) return;
  const std::int64_t chunks = std::max<std::int64_t>(1, n / std::max<std::int64_t>(1, grain));
  detail::pool_dispatch(n, chunks, [&body](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) body(i);
  });
}

// output[i] = sum of input[0..i); also returns the grand total.
std::pair<std::vector<std::int64_t>, std::int64_t> exclusive_scan(std::span<const std::int64_t> input);

// output[i] = sum of input[0..i].
std::vector<std::int64_t> inclusive_scan(std::span<const std::int64_t> input);

// Stable sort of keys carrying a payload along. Ties keep input order.
template <class K, class P>
void stable_sort_by_key(std::vector<K>& keys, std::vector<P>& payload) {
  if (keys.size() != payload.size()) throw std::invalid_argument("stable_sort_by_key: length mismatch");
  const std::int64_t n = static_cast<std::int64_t>(keys.size());
  std::vector<std::int64_t> order(keys.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&keys](std::int64_t a, std::int64_t b) { return keys[static_cast<std::size_t>(a)] < keys[static_cast<std::size_t>(b)]; });
  std::vector<K> sorted_keys(keys.size());
  std::vector<P> sorted_payload(payload.size());
  parallel_for(n, [&](std::int64_t i) {
    const std::size_t src = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
    sorted_keys[static_cast<std::size_t>(i)] = keys[src];
    sorted_payload[static_cast<std::size_t>(i)] = payload[src];
  });
  keys = std::move(sorted_keys);
  payload = std::move(sorted_payload);
}

struct SumOp {
  template <class T>
  T operator()(const T& a, const T& b) const { return a + b; }
};
struct MinOp {
  template <class T>
  T operator()(const T& a, const T& b) const { return b < a ? b : a; }
};
struct MaxOp {
  template <class T>
  T operator()(const T& a, const T& b) const { return a < b ? b : a; }
};

// One output per contiguous run of equal keys, in run order. The per-run
// value is the sequential left fold of the run, independent of how many
// threads execute, so floating-point results are reproducible. Run heads are
// located chunk-wise (count, scan, fill) to avoid length-n temporaries.
template <class T, class Op>
std::pair<std::vector<T>, std::vector<std::int64_t>> reduce_by_key(std::span<const T> values,
                                                                   std::span<const std::int64_t> keys,
                                                                   Op op) {
  if (values.size() != keys.size()) throw std::invalid_argument("reduce_by_key: length mismatch");
  const std::int64_t n = static_cast<std::int64_t>(values.size());
  if (n == 0) return {};

  const std::int64_t chunk = 1 << 16;
  const std::int64_t n_chunks = (n + chunk - 1) / chunk;
  const auto is_head = [&keys](std::int64_t i) {
    return i == 0 || keys[static_cast<std::size_t>(i)] != keys[static_cast<std::size_t>(i - 1)];
  };
  std::vector<std::int64_t> chunk_heads(static_cast<std::size_t>(n_chunks));
  parallel_for(n_chunks, [&](std::int64_t c) {
    const std::int64_t lo = c * chunk;
    const std::int64_t hi = std::min(n, lo + chunk);
    std::int64_t count = 0;
    for (std::int64_t i = lo; i < hi; ++i) count += is_head(i) ? 1 : 0;
    chunk_heads[static_cast<std::size_t>(c)] = count;
  }, 1);
  auto [chunk_offset, run_count] = exclusive_scan(chunk_heads);

  std::vector<std::int64_t> run_start(static_cast<std::size_t>(run_count + 1));
  parallel_for(n_chunks, [&](std::int64_t c) {
    const std::int64_t lo = c * chunk;
    const std::int64_t hi = std::min(n, lo + chunk);
    std::int64_t out = chunk_offset[static_cast<std::size_t>(c)];
    for (std::int64_t i = lo; i < hi; ++i) {
      if (is_head(i)) run_start[static_cast<std::size_t>(out++)] = i;
    }
  }, 1);
  run_start[static_cast<std::size_t>(run_count)] = n;

  std::vector<T> reduced(static_cast<std::size_t>(run_count));
  std::vector<std::int64_t> unique_keys(static_cast<std::size_t>(run_count));
  parallel_for(run_count, [&](std::int64_t r) {
    const std::int64_t lo = run_start[static_cast<std::size_t>(r)];
    const std::int64_t hi = run_start[static_cast<std::size_t>(r + 1)];
    T acc = values[static_cast<std::size_t>(lo)];
    for (std::int64_t i = lo + 1; i < hi; ++i) acc = op(acc, values[static_cast<std::size_t>(i)]);
    reduced[static_cast<std::size_t>(r)] = acc;
    unique_keys[static_cast<std::size_t>(r)] = keys[static_cast<std::size_t>(lo)];
  }, 1);
  return {std::move(reduced), std::move(unique_keys)};
}

// Drops every position whose key equals victim_key, preserving order.
template <class T>
void remove_by_key(std::vector<T>& values, std::vector<std::int64_t>& keys, std::int64_t victim_key) {
  if (values.size() != keys.size()) throw std::invalid_argument("remove_by_key: length mismatch");
  std::size_t out = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (keys[i] == victim_key) continue;
    values[out] = values[i];
    keys[out] = keys[i];
    ++out;
  }
  values.resize(out);
  keys.resize(out);
}

struct BatchBounds {
  std::int64_t lower = 0;
  std::int64_t upper = 0;
};

// keys[i] = key of the batch whose half-open range contains i, 0 outside any
// batch. Built by marking batch boundaries, an exclusive scan, and a fixup of
// the boundary cell the scan leaves stale.
std::vector<std::int64_t> create_keys(std::span<const BatchBounds> batch_bounds,
                                      std::span<const std::int64_t> batch_keys, std::int64_t n_total);

// Write-only concurrent collector. put() may be called from any number of
// threads; everything else (capacity management, reading) is single-threaded
// and must not overlap with producers. Capacity is managed by the caller
// between concurrent phases.
template <class T>
class OutputQueue {
 public:
  OutputQueue() = default;
  explicit OutputQueue(std::int64_t capacity) : storage_(static_cast<std::size_t>(capacity)) {}

  void ensure_capacity(std::int64_t needed) {
    if (needed > static_cast<std::int64_t>(storage_.size())) storage_.resize(static_cast<std::size_t>(needed));
  }

  std::int64_t put(const T& item) {
    const std::int64_t slot = head_.fetch_add(1, std::memory_order_relaxed);
    if (slot >= static_cast<std::int64_t>(storage_.size())) {
      throw std::length_error("OutputQueue::put: capacity exceeded; pre-size before the parallel phase");
    }
    storage_[static_cast<std::size_t>(slot)] = item;
    return slot;
  }

  std::int64_t size() const { return head_.load(std::memory_order_acquire); }

  std::span<const T> items() const { return {storage_.data(), static_cast<std::size_t>(size())}; }

  std::vector<T> take() {
    storage_.resize(static_cast<std::size_t>(size()));
    head_.store(0, std::memory_order_relaxed);
    return std::move(storage_);
  }

 private:
  std::vector<T> storage_;
  std::atomic<std::int64_t> head_{0};
};

}  // namespace hmat
