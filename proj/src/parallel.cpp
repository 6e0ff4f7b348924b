#include "hmat/parallel.hpp"

#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace hmat {

namespace {

int configured_thread_count() {
  if (const char* env = std::getenv("HMAT_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 4 : static_cast<int>(hw);
}

thread_local bool inside_worker = false;

class WorkerPool {
 public:
  static WorkerPool& instance() {
    static WorkerPool pool;
    return pool;
  }

  int thread_count() const { return nthreads_; }

  void run(std::int64_t n, std::int64_t chunks, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    job_fn_ = &fn;
    job_n_ = n;
    job_chunks_ = chunks;
    first_error_ = nullptr;
    remaining_.store(static_cast<int>(chunks), std::memory_order_release);
    {
      std::lock_guard<std::mutex> lock(mutex_);
      ++generation_;
    }
    cv_.notify_all();
    run_chunk(0);
    while (remaining_.load(std::memory_order_acquire) > 0) std::this_thread::yield();
    job_fn_ = nullptr;
    if (first_error_) std::rethrow_exception(first_error_);
  }

 private:
  WorkerPool() : nthreads_(configured_thread_count()) {
    workers_.reserve(static_cast<std::size_t>(nthreads_ - 1));
    for (int t = 1; t < nthreads_; ++t) {
      workers_.emplace_back([this, t] { worker_loop(t); });
    }
  }

  ~WorkerPool() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  void run_chunk(int c) {
    const std::int64_t lo = job_n_ * c / job_chunks_;
    const std::int64_t hi = job_n_ * (c + 1) / job_chunks_;
    try {
      if (lo < hi) (*job_fn_)(lo, hi);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex_);
      if (!first_error_) first_error_ = std::current_exception();
    }
    remaining_.fetch_sub(1, std::memory_order_acq_rel);
  }

  void worker_loop(int t) {
    inside_worker = true;
    std::uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
      }
      if (t < job_chunks_) run_chunk(t);
    }
  }

  const int nthreads_;
  std::vector<std::thread> workers_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::uint64_t generation_ = 0;
  bool stop_ = false;

  const std::function<void(std::int64_t, std::int64_t)>* job_fn_ = nullptr;
  std::int64_t job_n_ = 0;
  std::int64_t job_chunks_ = 0;
  std::atomic<int> remaining_{0};
  std::mutex error_mutex_;
  std::exception_ptr first_error_;
};

}  // namespace

int parallel_thread_count() { return WorkerPool::instance().thread_count(); }

namespace detail {

void pool_dispatch(std::int64_t n, std::int64_t chunks,
                   const std::function<void(std::int64_t, std::int64_t)>& range_fn) {
  if (n <= 0) return;
  WorkerPool& pool = WorkerPool::instance();
  chunks = std::min<std::int64_t>({chunks, n, pool.thread_count()});
  if (chunks <= 1 || inside_worker) {
    range_fn(0, n);
    return;
  }
  pool.run(n, chunks, range_fn);
}

}  // namespace detail

std::pair<std::vector<std::int64_t>, std::int64_t> exclusive_scan(std::span<const std::int64_t> input) {
  const std::int64_t n = static_cast<std::int64_t>(input.size());
  std::vector<std::int64_t> output(input.size());
  std::int64_t acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    output[static_cast<std::size_t>(i)] = acc;
    acc += input[static_cast<std::size_t>(i)];
  }
  return {std::move(output), acc};
}

std::vector<std::int64_t> inclusive_scan(std::span<const std::int64_t> input) {
  const std::int64_t n = static_cast<std::int64_t>(input.size());
  std::vector<std::int64_t> output(input.size());
  std::int64_t acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    acc += input[static_cast<std::size_t>(i)];
    output[static_cast<std::size_t>(i)] = acc;
  }
  return output;
}

std::vector<std::int64_t> create_keys(std::span<const BatchBounds> batch_bounds,
                                      std::span<const std::int64_t> batch_keys, std::int64_t n_total) {
  if (batch_bounds.size() != batch_keys.size()) throw std::invalid_argument("create_keys: length mismatch");
  const std::int64_t m = static_cast<std::int64_t>(batch_bounds.size());

  for (std::int64_t b = 0; b < m; ++b) {
    if (batch_keys[static_cast<std::size_t>(b)] <= 0) throw std::invalid_argument("create_keys: batch keys must be positive");
    const auto& bb = batch_bounds[static_cast<std::size_t>(b)];
    if (bb.lower < 0 || bb.lower >= bb.upper || bb.upper > n_total) {
      throw std::invalid_argument("create_keys: invalid batch bounds");
    }
  }
  {
    std::vector<BatchBounds> sorted(batch_bounds.begin(), batch_bounds.end());
    std::sort(sorted.begin(), sorted.end(),
              [](const BatchBounds& a, const BatchBounds& b) { return a.lower < b.lower; });
    for (std::size_t b = 1; b < sorted.size(); ++b) {
      if (sorted[b - 1].upper > sorted[b].lower) throw std::invalid_argument("create_keys: overlapping batches");
    }
  }

  // 1) init
  std::vector<std::int64_t> keys(static_cast<std::size_t>(n_total), 0);
  // 2) mark batch bounds: +k at the lower bound, -k at the last covered cell.
  //    A cell can carry marks of two adjacent batches, so contributions add.
  for (std::int64_t b = 0; b < m; ++b) {
    const auto& bb = batch_bounds[static_cast<std::size_t>(b)];
    keys[static_cast<std::size_t>(bb.lower)] += batch_keys[static_cast<std::size_t>(b)];
    keys[static_cast<std::size_t>(bb.upper - 1)] -= batch_keys[static_cast<std::size_t>(b)];
  }
  // 3) exclusive scan
  auto [scanned, total] = exclusive_scan(keys);
  (void)total;
  keys = std::move(scanned);
  // 4) the exclusive scan leaves one boundary cell of each batch stale;
  //    write the batch key there directly.
  parallel_for(m, [&](std::int64_t b) {
    keys[static_cast<std::size_t>(batch_bounds[static_cast<std::size_t>(b)].lower)] =
        batch_keys[static_cast<std::size_t>(b)];
  });
  return keys;
}

}  // namespace hmat
