// Benchmark and verification harness. Emits CSV (stdout or --out) for the
// sweep commands; `verify` prints one line per check and exits nonzero on
// failure. Exit codes: 0 success, 1 verification failure, 2 configuration
// error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <CLI11.hpp>

#include "hmat/aca.hpp"
#include "hmat/core.hpp"
#include "hmat/hmatrix.hpp"
#include "hmat/morton.hpp"
#include "hmat/solver.hpp"
#include "hmat/tree.hpp"
#include "oracle/oracle.hpp"

using namespace hmat;
using Clock = std::chrono::steady_clock;

namespace {

struct RunConfig {
  std::string command;
  std::int64_t n = 8192;
  int d = 2;
  std::string kernel_name = "gaussian";
  std::int64_t k = 16;
  double eta = 1.5;
  std::int64_t c_leaf = 256;
  std::int64_t bs_aca = HmatrixConfig{}.bs_aca;
  std::int64_t bs_dense = HmatrixConfig{}.bs_dense;
  bool precompute = false;
  bool force_dense = false;
  std::int64_t trials = 5;
  std::uint64_t seed = 42;
  std::string out_path;
  std::string rhs_path;
  std::string dump_leaves_path;
  double sigma2 = 1.0;
  double tol = 1e-8;
  std::int64_t max_iter = 500;
  bool inject_fault = false;  // testing aid: corrupts one admissibility flag in verify
};

KernelFunction kernel_of(const RunConfig& cfg) {
  KernelFunction k;
  k.kind = cfg.kernel_name == "matern" ? KernelKind::Matern : KernelKind::Gaussian;
  return k;
}

HmatrixConfig hmatrix_config(const RunConfig& cfg) {
  HmatrixConfig h;
  h.eta = cfg.eta;
  h.c_leaf = cfg.c_leaf;
  h.k = cfg.k;
  h.bs_aca = cfg.bs_aca;
  h.bs_dense = cfg.bs_dense;
  h.precompute_aca = cfg.precompute;
  h.force_dense = cfg.force_dense;
  return h;
}

std::vector<double> random_vector(std::int64_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = rng.symmetric();
  return x;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Timing {
  double mean_ms = 0.0;
  double std_ms = 0.0;
  double min_ms = 0.0;
};

Timing summarize(const std::vector<double>& samples_ms) {
  Timing t;
  t.min_ms = samples_ms[0];
  for (const double s : samples_ms) {
    t.mean_ms += s;
    t.min_ms = std::min(t.min_ms, s);
  }
  t.mean_ms /= static_cast<double>(samples_ms.size());
  double var = 0.0;
  for (const double s : samples_ms) var += (s - t.mean_ms) * (s - t.mean_ms);
  t.std_ms = std::sqrt(var / static_cast<double>(samples_ms.size()));
  return t;
}

// All rows are collected before anything is written so invalid runs never
// leave partial files behind.
void write_output(const RunConfig& cfg, const std::string& content) {
  if (cfg.out_path.empty()) {
    std::cout << content;
    return;
  }
  std::ofstream out(cfg.out_path);
  if (!out) throw std::runtime_error("cannot open output file: " + cfg.out_path);
  out << content;
}

int cmd_convergence(const RunConfig& cfg) {
  if (cfg.n > kDenseProductLimit) {
    std::cerr << "error: convergence requires n <= " << kDenseProductLimit
              << " (dense reference product)\n";
    return 2;
  }
  const std::vector<std::int64_t> ranks = {2, 4, 8, 16};
  std::ostringstream csv;
  csv << "kernel,d,k,e_rel_mean\n";
  const PointSet points = halton_points(cfg.n, cfg.d);
  std::vector<std::vector<double>> xs;
  for (std::int64_t t = 0; t < cfg.trials; ++t) xs.push_back(random_vector(cfg.n, cfg.seed + static_cast<std::uint64_t>(t)));

  for (const char* kernel_name : {"gaussian", "matern"}) {
    KernelFunction kernel;
    kernel.kind = std::string(kernel_name) == "matern" ? KernelKind::Matern : KernelKind::Gaussian;
    std::optional<std::vector<std::vector<double>>> exact;
    for (const std::int64_t k : ranks) {
      RunConfig rc = cfg;
      rc.k = k;
      const HMatrix h = setup(points, kernel, hmatrix_config(rc));
      if (!exact) exact = oracle::dense_mvp_multi(kernel, h.points, xs);
      double mean = 0.0;
      for (std::int64_t t = 0; t < cfg.trials; ++t) {
        const std::vector<double> z = mvp(h, xs[static_cast<std::size_t>(t)], kernel);
        double num = 0.0, den = 0.0;
        for (std::int64_t i = 0; i < cfg.n; ++i) {
          const double diff = z[static_cast<std::size_t>(i)] - (*exact)[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
          num += diff * diff;
          den += (*exact)[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] *
                 (*exact)[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
        }
        mean += std::sqrt(num / den);
      }
      csv << kernel_name << ',' << cfg.d << ',' << k << ',' << (mean / static_cast<double>(cfg.trials)) << '\n';
    }
  }
  write_output(cfg, csv.str());
  return 0;
}

int cmd_complexity(const RunConfig& cfg) {
  std::vector<std::int64_t> sizes;
  for (std::int64_t n = std::int64_t{1} << 14; n < cfg.n; n <<= 1) sizes.push_back(n);
  sizes.push_back(cfg.n);
  if (sizes.size() > 1 && sizes[sizes.size() - 2] == cfg.n) sizes.pop_back();

  const KernelFunction kernel = kernel_of(cfg);
  std::ostringstream csv;
  csv << "phase,n,d,k,eta,c_leaf,time_ms_mean,time_ms_std\n";
  for (const std::int64_t n : sizes) {
    std::vector<double> spatial_ms, traversal_ms, mvp_ms;
    const PointSet raw = halton_points(n, cfg.d);
    for (std::int64_t trial = 0; trial < cfg.trials; ++trial) {
      const auto t0 = Clock::now();
      const PointSet sorted = morton_order(raw);
      spatial_ms.push_back(seconds_since(t0) * 1e3);

      const auto t1 = Clock::now();
      BlockTreeOptions topt;
      topt.eta = cfg.eta;
      topt.c_leaf = cfg.c_leaf;
      const std::vector<WorkItem> leaves = build_block_cluster_tree(sorted, topt);
      traversal_ms.push_back(seconds_since(t1) * 1e3);
      if (leaves.empty()) return 2;
    }
    const HMatrix h = setup(raw, kernel, hmatrix_config(cfg));
    const std::vector<double> x = random_vector(n, cfg.seed);
    for (std::int64_t trial = 0; trial < cfg.trials; ++trial) {
      const auto t2 = Clock::now();
      const std::vector<double> z = mvp(h, x, kernel);
      mvp_ms.push_back(seconds_since(t2) * 1e3);
      if (z.empty()) return 2;
    }
    const auto emit = [&](const char* phase, const std::vector<double>& samples) {
      const Timing t = summarize(samples);
      csv << phase << ',' << n << ',' << cfg.d << ',' << cfg.k << ',' << cfg.eta << ',' << cfg.c_leaf << ','
          << t.mean_ms << ',' << t.std_ms << '\n';
    };
    emit("spatial", spatial_ms);
    emit("traversal", traversal_ms);
    emit("mvp", mvp_ms);
  }
  write_output(cfg, csv.str());
  return 0;
}

int cmd_mvp_bench(const RunConfig& cfg) {
  const KernelFunction kernel = kernel_of(cfg);
  std::ostringstream csv;
  csv << "phase,n,d,k,eta,c_leaf,time_ms_mean,time_ms_std\n";

  const PointSet raw = halton_points(cfg.n, cfg.d);
  std::vector<double> setup_ms, mvp_ms, dense_ms, aca_ms;
  const auto t0 = Clock::now();
  const HMatrix h = setup(raw, kernel, hmatrix_config(cfg));
  setup_ms.push_back(seconds_since(t0) * 1e3);
  if (!cfg.dump_leaves_path.empty()) {
    std::vector<WorkItem> leaves = h.dense_queue;
    leaves.insert(leaves.end(), h.aca_queue.begin(), h.aca_queue.end());
    dump_leaves_csv(leaves, cfg.dump_leaves_path);
  }
  const std::vector<double> x = random_vector(cfg.n, cfg.seed);
  for (std::int64_t trial = 0; trial < cfg.trials; ++trial) {
    MvpTimings t;
    const std::vector<double> z = mvp(h, x, kernel, &t);
    if (z.empty()) return 2;
    mvp_ms.push_back(t.total_ms);
    dense_ms.push_back(t.dense_ms);
    aca_ms.push_back(t.aca_ms);
  }
  const auto emit = [&](const char* phase, const std::vector<double>& samples) {
    const Timing t = summarize(samples);
    csv << phase << ',' << cfg.n << ',' << cfg.d << ',' << cfg.k << ',' << cfg.eta << ',' << cfg.c_leaf << ','
        << t.mean_ms << ',' << t.std_ms << '\n';
  };
  emit("setup", setup_ms);
  emit("mvp", mvp_ms);
  emit("mvp_dense", dense_ms);
  emit("mvp_aca", aca_ms);
  write_output(cfg, csv.str());
  return 0;
}

int cmd_batch_sweep(const RunConfig& cfg) {
  const KernelFunction kernel = kernel_of(cfg);
  const PointSet raw = halton_points(cfg.n, cfg.d);
  const std::vector<double> x = random_vector(cfg.n, cfg.seed);
  std::ostringstream csv;
  csv << "bs,phase,n,d,k,c_leaf,time_ms_mean,time_ms_min\n";

  const auto measure = [&](std::int64_t bs_aca, std::int64_t bs_dense) {
    RunConfig rc = cfg;
    rc.bs_aca = bs_aca;
    rc.bs_dense = bs_dense;
    const HMatrix h = setup(raw, kernel, hmatrix_config(rc));
    std::vector<double> aca_samples, dense_samples;
    for (std::int64_t trial = 0; trial < cfg.trials; ++trial) {
      MvpTimings t;
      const std::vector<double> z = mvp(h, x, kernel, &t);
      if (z.empty()) std::abort();
      aca_samples.push_back(t.aca_ms);
      dense_samples.push_back(t.dense_ms);
    }
    return std::pair{summarize(aca_samples), summarize(dense_samples)};
  };

  // bs = 0 marks the unbatched (one block per batch) baseline
  std::vector<std::int64_t> aca_sweep = {0};
  for (std::int64_t bs = std::int64_t{1} << 14; bs <= (std::int64_t{1} << 22); bs <<= 2) aca_sweep.push_back(bs);
  for (const std::int64_t bs : aca_sweep) {
    const auto [aca, dense] = measure(bs, cfg.bs_dense);
    (void)dense;
    csv << bs << ",aca," << cfg.n << ',' << cfg.d << ',' << cfg.k << ',' << cfg.c_leaf << ',' << aca.mean_ms
        << ',' << aca.min_ms << '\n';
  }
  std::vector<std::int64_t> dense_sweep = {0};
  for (std::int64_t bs = std::int64_t{1} << 16; bs <= (std::int64_t{1} << 24); bs <<= 2) dense_sweep.push_back(bs);
  for (const std::int64_t bs : dense_sweep) {
    const auto [aca, dense] = measure(cfg.bs_aca, bs);
    (void)aca;
    csv << bs << ",dense," << cfg.n << ',' << cfg.d << ',' << cfg.k << ',' << cfg.c_leaf << ','
        << dense.mean_ms << ',' << dense.min_ms << '\n';
  }
  write_output(cfg, csv.str());
  return 0;
}

int cmd_verify(const RunConfig& cfg) {
  const KernelFunction kernel = kernel_of(cfg);
  bool all_ok = true;
  const auto check = [&](const std::string& name, bool ok) {
    std::cout << (ok ? "ok  " : "FAIL") << "  " << name << '\n';
    all_ok &= ok;
  };

  {
    SplitMix64 rng(cfg.seed);
    bool ok = true;
    for (int trial = 0; trial < 6 && ok; ++trial) {
      const std::int64_t n = rng.range(2, 400);
      const double eta = rng.uniform() * 2.0;
      const std::int64_t c_leaf = rng.range(1, 64);
      const PointSet p = morton_order(halton_points(n, cfg.d));
      std::vector<WorkItem> leaves = build_block_cluster_tree(p, {eta, c_leaf, AdmissibilityMode::Geometric});
      if (cfg.inject_fault && trial == 0 && !leaves.empty()) {
        leaves[0].admissible = !leaves[0].admissible;
      }

      std::vector<std::int64_t> cover(static_cast<std::size_t>(n * n), 0);
      for (const WorkItem& w : leaves) {
        for (std::int64_t i = w.row.lower; i < w.row.upper; ++i) {
          for (std::int64_t j = w.col.lower; j < w.col.upper; ++j) ++cover[static_cast<std::size_t>(i * n + j)];
        }
      }
      ok &= std::all_of(cover.begin(), cover.end(), [](std::int64_t c) { return c == 1; });

      const std::vector<WorkItem> want = oracle::recursive_block_tree(p, eta, c_leaf);
      using Key = std::tuple<std::int64_t, std::int64_t, std::int64_t, std::int64_t, bool>;
      std::vector<Key> ka, kb;
      for (const WorkItem& w : leaves) ka.emplace_back(w.row.lower, w.row.upper, w.col.lower, w.col.upper, w.admissible);
      for (const WorkItem& w : want) kb.emplace_back(w.row.lower, w.row.upper, w.col.lower, w.col.upper, w.admissible);
      std::sort(ka.begin(), ka.end());
      std::sort(kb.begin(), kb.end());
      ok &= ka == kb;

      for (const WorkItem& w : leaves) ok &= w.admissible == is_admissible(w.box_row, w.box_col, eta);
    }
    check("partition coverage, oracle leaf multiset, admissibility flags", ok);
  }

  {
    RunConfig rc = cfg;
    rc.force_dense = true;
    const std::int64_t n = std::min<std::int64_t>(cfg.n, 512);
    const HMatrix h = setup(halton_points(n, cfg.d), kernel, hmatrix_config(rc));
    const std::vector<double> x = random_vector(n, cfg.seed + 1);
    const std::vector<double> z = mvp(h, x, kernel);
    const std::vector<double> want = oracle::dense_mvp(kernel, h.points, x);
    double num = 0.0, den = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = z[static_cast<std::size_t>(i)] - want[static_cast<std::size_t>(i)];
      num += d * d;
      den += want[static_cast<std::size_t>(i)] * want[static_cast<std::size_t>(i)];
    }
    check("force_dense product equals the dense reference", std::sqrt(num / den) <= 1e-12);
  }

  {
    SplitMix64 rng(cfg.seed + 2);
    bool ok = true;
    for (int trial = 0; trial < 20 && ok; ++trial) {
      const std::int64_t m = rng.range(8, 32);
      const std::int64_t nn = rng.range(8, 32);
      const std::int64_t r = rng.range(1, 3);
      SplitMix64 gen(cfg.seed + 100 + static_cast<std::uint64_t>(trial));
      DenseMatrix a(m, nn);
      for (std::int64_t l = 0; l < r; ++l) {
        std::vector<double> u(m), v(nn);
        for (auto& vv : u) vv = gen.symmetric();
        for (auto& vv : v) vv = gen.symmetric();
        for (std::int64_t i = 0; i < m; ++i) {
          for (std::int64_t j = 0; j < nn; ++j) a.at(i, j) += u[i] * v[j];
        }
      }
      const LowRankFactors f = aca_single(a, {.max_rank = r});
      double num = 0.0, den = 0.0;
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < nn; ++j) {
          double approx = 0.0;
          for (std::int64_t l = 0; l < f.k_eff; ++l) approx += f.u[l * m + i] * f.v[l * nn + j];
          num += (a.at(i, j) - approx) * (a.at(i, j) - approx);
          den += a.at(i, j) * a.at(i, j);
        }
      }
      ok &= std::sqrt(num / den) <= 1e-11;
    }
    check("aca reproduces exact low-rank blocks", ok);
  }

  {
    const PointSet p = morton_order(halton_points(1024, cfg.d));
    const std::vector<WorkItem> leaves = build_block_cluster_tree(p, {cfg.eta, 64, AdmissibilityMode::Geometric});
    std::vector<WorkItem> admissible;
    for (const WorkItem& w : leaves) {
      if (w.admissible) admissible.push_back(w);
    }
    bool ok = true;
    if (!admissible.empty()) {
      const std::vector<AcaBatch> batches = partition_aca_queue(admissible, HmatrixConfig{}.bs_aca);
      const AcaBatch& batch = batches[0];
      const BatchedAcaResult res = aca_batched(batch, kernel, p, {.max_rank = 6});
      for (std::size_t b = 0; b < batch.items.size() && ok; ++b) {
        const LowRankFactors single = aca_single(kernel, p, batch.items[b].row, batch.items[b].col, {.max_rank = 6});
        const LowRankFactors batched = extract_low_rank(res, batch, static_cast<std::int64_t>(b));
        ok &= single.k_eff == batched.k_eff;
        for (std::size_t i = 0; i < single.u.size() && ok; ++i) {
          ok &= std::fabs(batched.u[i] - single.u[i]) <= 1e-14 * std::max(1.0, std::fabs(single.u[i]));
        }
      }
    }
    check("batched aca equals single-block aca", ok);
  }

  std::cout << (all_ok ? "verification passed" : "verification FAILED") << '\n';
  return all_ok ? 0 : 1;
}

int cmd_solve(const RunConfig& cfg) {
  if (cfg.rhs_path.empty()) {
    std::cerr << "error: solve requires --rhs\n";
    return 2;
  }
  std::ifstream in(cfg.rhs_path);
  if (!in) {
    std::cerr << "error: cannot open rhs file: " << cfg.rhs_path << '\n';
    return 2;
  }
  std::vector<double> b;
  double value = 0.0;
  while (in >> value) b.push_back(value);
  if (!in.eof()) {
    std::cerr << "error: malformed rhs file\n";
    return 2;
  }
  if (static_cast<std::int64_t>(b.size()) != cfg.n) {
    std::cerr << "error: rhs has " << b.size() << " entries, expected " << cfg.n << '\n';
    return 2;
  }

  const KernelFunction kernel = kernel_of(cfg);
  const HMatrix h = setup(halton_points(cfg.n, cfg.d), kernel, hmatrix_config(cfg));
  SolveConfig scfg;
  scfg.sigma2 = cfg.sigma2;
  scfg.tol = cfg.tol;
  scfg.max_iter = cfg.max_iter;
  const SolveResult result = cg_solve(h, kernel, b, scfg);

  std::ostringstream body;
  body.precision(17);
  for (const double v : result.x) body << v << '\n';
  write_output(cfg, body.str());
  std::cerr << "iterations " << result.iterations << ", relative residual " << result.relative_residual
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical kernel matrix benchmark and verification harness"};
  RunConfig cfg;

  app.add_option("--command", cfg.command, "one of: convergence, complexity, verify, mvp-bench, batch-sweep, solve")
      ->required();
  app.add_option("--n", cfg.n, "number of points")->check(CLI::PositiveNumber);
  app.add_option("--d", cfg.d, "dimension")->check(CLI::Range(1, kMaxDim));
  app.add_option("--kernel", cfg.kernel_name, "kernel function")->check(CLI::IsMember({"gaussian", "matern"}));
  app.add_option("--k", cfg.k, "low-rank approximation rank")->check(CLI::PositiveNumber);
  app.add_option("--eta", cfg.eta, "admissibility parameter")->check(CLI::NonNegativeNumber);
  app.add_option("--c-leaf", cfg.c_leaf, "leaf size")->check(CLI::PositiveNumber);
  app.add_option("--bs-aca", cfg.bs_aca, "aca batch size (0 = unbatched)")->check(CLI::NonNegativeNumber);
  app.add_option("--bs-dense", cfg.bs_dense, "dense batch size (0 = unbatched)")->check(CLI::NonNegativeNumber);
  app.add_flag("--precompute", cfg.precompute, "precompute low-rank factors at setup");
  app.add_flag("--force-dense", cfg.force_dense, "treat every block as dense (verification)");
  app.add_option("--trials", cfg.trials, "trials to average")->check(CLI::PositiveNumber);
  app.add_option("--seed", cfg.seed, "random seed");
  app.add_option("--out", cfg.out_path, "output file (default stdout)");
  app.add_option("--rhs", cfg.rhs_path, "right-hand side file for solve (one value per line)");
  app.add_option("--dump-leaves", cfg.dump_leaves_path, "write the leaf set as CSV (mvp-bench)");
  app.add_option("--sigma2", cfg.sigma2, "regularization for solve")->check(CLI::NonNegativeNumber);
  app.add_option("--tol", cfg.tol, "relative residual tolerance for solve");
  app.add_option("--max-iter", cfg.max_iter, "iteration cap for solve")->check(CLI::PositiveNumber);
  app.add_flag("--inject-fault", cfg.inject_fault, "verification self-test: corrupt one flag");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (cfg.command == "convergence") return cmd_convergence(cfg);
    if (cfg.command == "complexity") return cmd_complexity(cfg);
    if (cfg.command == "mvp-bench") return cmd_mvp_bench(cfg);
    if (cfg.command == "batch-sweep") return cmd_batch_sweep(cfg);
    if (cfg.command == "verify") return cmd_verify(cfg);
    if (cfg.command == "solve") return cmd_solve(cfg);
    std::cerr << "error: unknown command '" << cfg.command << "'\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
