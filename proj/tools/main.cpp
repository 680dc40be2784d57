#include <omp.h>

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "klchol/klchol.hpp"

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string points_path;
  std::string obs_path;
  std::string pred_points_path;
  std::string kernel_name = "matern32";
  double range = 1.0;
  double variance = 1.0;
  double rho = 2.0;
  double lambda = 1.5;
  int threads = 1;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  bool dense_check = false;
  std::string nugget;  // empty, scalar, or per-point CSV path
  std::string precon = "L";
  std::string mode = "first";
  int batch_size = 1;
  double jitter = 0.0;
  std::string boundary = "none";
  std::string ordering_name = "maximin";
  double cg_tol = 1e-8;
  int cg_maxiter = 50;
  bool write_cov = false;
  std::vector<int> sizes = {4000, 16000, 64000};
  double time_budget = 0.0;  // seconds per sweep step; 0 disables
};

void add_shared_flags(CLI::App* cmd, RunConfig& cfg, bool need_points = true) {
  auto* p = cmd->add_option("--points", cfg.points_path, "points CSV, one point per row");
  if (need_points) p->required();
  cmd->add_option("--kernel", cfg.kernel_name,
                  "matern12|matern32|matern52|exponential|squared_exponential|"
                  "brownian_bridge_1d|laplace3d");
  cmd->add_option("--range", cfg.range, "kernel length scale");
  cmd->add_option("--variance", cfg.variance, "kernel marginal variance");
  cmd->add_option("--rho", cfg.rho, "sparsity radius multiplier (>= 1)");
  cmd->add_option("--lambda", cfg.lambda, "supernode aggregation tolerance (>= 1)");
  cmd->add_option("--threads", cfg.threads, "worker threads");
  cmd->add_option("--seed", cfg.seed, "random seed");
  cmd->add_option("--out", cfg.out_dir, "output directory");
  cmd->add_flag("--dense-check", cfg.dense_check, "compare against the dense oracle");
  cmd->add_option("--jitter", cfg.jitter, "diagonal jitter fraction on Cholesky breakdown");
  cmd->add_option("--boundary", cfg.boundary, "none or box:lo,hi");
  cmd->add_option("--ordering", cfg.ordering_name, "maximin");
}

void validate(const RunConfig& cfg) {
  if (cfg.rho < 1.0) throw ConfigError("--rho must be >= 1");
  if (cfg.lambda < 1.0) throw ConfigError("--lambda must be >= 1");
  if (cfg.threads < 1) throw ConfigError("--threads must be >= 1");
  if (cfg.ordering_name != "maximin") throw ConfigError("--ordering must be maximin");
  klchol::kernel_family_from_string(cfg.kernel_name);  // throws on bad name
}

klchol::BoundaryDistance parse_boundary(const std::string& spec) {
  if (spec == "none") return nullptr;
  if (spec.rfind("box:", 0) == 0) {
    const auto body = spec.substr(4);
    const auto comma = body.find(',');
    if (comma != std::string::npos) {
      try {
        const double lo = std::stod(body.substr(0, comma));
        const double hi = std::stod(body.substr(comma + 1));
        if (lo < hi) return klchol::box_boundary(lo, hi);
      } catch (const std::exception&) {
      }
    }
  }
  throw ConfigError("--boundary must be 'none' or 'box:lo,hi'");
}

klchol::KernelModel make_kernel(const RunConfig& cfg) {
  return {klchol::kernel_family_from_string(cfg.kernel_name), cfg.range, cfg.variance};
}

klchol::PointSet load_points(const RunConfig& cfg) {
  return klchol::PointSet(klchol::read_points_csv(cfg.points_path),
                          parse_boundary(cfg.boundary));
}

Eigen::VectorXd load_nugget(const RunConfig& cfg, int n) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(cfg.nugget, &pos);
    if (pos == cfg.nugget.size()) {
      if (v <= 0.0) throw ConfigError("--nugget must be positive");
      return Eigen::VectorXd::Constant(n, v);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
  }
  return klchol::read_scalar_column_csv(cfg.nugget, n);
}

void require_desk_scale(const RunConfig& cfg, int n) {
  if (cfg.dense_check && n > 5000)
    throw ConfigError("--dense-check refused for N > 5000 (dense oracle is cubic)");
}

Eigen::MatrixXd dense_theta(const klchol::KernelModel& kernel, const klchol::PointSet& pts) {
  const int n = pts.size();
  Eigen::MatrixXd theta(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      const double v = kernel.evaluate(pts, i, j);
      theta(i, j) = v;
      theta(j, i) = v;
    }
  return theta;
}

struct Pipeline {
  klchol::PointSet points;
  klchol::Ordering ordering;
  klchol::SparsityPattern pattern;
  klchol::SupernodePartition partition;
  klchol::SparseFactor factor;
  double factor_ms = 0.0;
  int max_block = 0;
};

Pipeline run_pipeline(const RunConfig& cfg, const klchol::KernelModel& kernel,
                      klchol::PointSet points) {
  Pipeline p;
  p.points = std::move(points);
  p.ordering = klchol::reverse_maximin(p.points, cfg.rho);
  p.pattern = klchol::build_pattern(p.ordering, p.points, cfg.rho);
  p.partition = klchol::aggregate_supernodes(p.pattern, p.ordering, cfg.lambda);
  const auto t0 = Clock::now();
  p.factor = klchol::factorize_aggregated(kernel, p.points, p.ordering, p.partition, cfg.jitter);
  p.factor_ms = ms_since(t0);
  for (const auto& sn : p.partition.supernodes)
    p.max_block = std::max(p.max_block, static_cast<int>(sn.children.size()));
  return p;
}

void write_stats(const RunConfig& cfg, const json& stats) {
  std::ofstream out(cfg.out_dir + "/stats.json");
  if (!out) throw klchol::ParseError("cannot write " + cfg.out_dir + "/stats.json");
  out << stats.dump(2) << '\n';
  std::cout << stats.dump(2) << '\n';
}

int cmd_order(const RunConfig& cfg) {
  auto points = load_points(cfg);
  auto ordering = klchol::reverse_maximin(points, cfg.rho);
  klchol::write_ordering_csv(cfg.out_dir + "/ordering.csv", ordering);
  std::cout << "wrote " << cfg.out_dir << "/ordering.csv (N=" << points.size() << ")\n";
  return 0;
}

int cmd_factorize(const RunConfig& cfg) {
  auto kernel = make_kernel(cfg);
  auto points = load_points(cfg);
  require_desk_scale(cfg, points.size());
  auto p = run_pipeline(cfg, kernel, std::move(points));

  klchol::write_ordering_csv(cfg.out_dir + "/ordering.csv", p.ordering);
  klchol::write_factor_triplets(cfg.out_dir + "/factor.txt", p.factor.pattern, p.factor.values);
  klchol::write_pattern_triplets(cfg.out_dir + "/pattern.txt", p.pattern);
  klchol::write_supernodes(cfg.out_dir + "/supernodes.txt", p.partition);

  json stats = {{"command", "factorize"},
                {"n", p.points.size()},
                {"nnz", p.factor.nnz()},
                {"n_supernodes", p.partition.size()},
                {"max_block", p.max_block},
                {"wall_time_ms", p.factor_ms}};
  if (cfg.dense_check) {
    Eigen::MatrixXd theta = dense_theta(kernel, p.points);
    stats["kl"] = klchol::kl_objective(p.factor, theta);
    Eigen::MatrixXd theta_pos(theta.rows(), theta.cols());
    for (int a = 0; a < theta.rows(); ++a)
      for (int b = 0; b < theta.cols(); ++b)
        theta_pos(a, b) = theta(p.ordering.perm[a], p.ordering.perm[b]);
    Eigen::MatrixXd l = p.factor.to_dense();
    stats["fro_error"] =
        (l * l.transpose() * theta_pos - Eigen::MatrixXd::Identity(theta.rows(), theta.cols()))
            .norm();
  }
  write_stats(cfg, stats);
  return 0;
}

int cmd_loglik(const RunConfig& cfg) {
  auto kernel = make_kernel(cfg);
  auto points = load_points(cfg);
  require_desk_scale(cfg, points.size());
  Eigen::VectorXd y = klchol::read_observations_csv(cfg.obs_path, points.size());
  auto p = run_pipeline(cfg, kernel, std::move(points));

  json stats = {{"command", "loglik"}, {"n", p.points.size()}, {"nnz", p.factor.nnz()}};
  double ll;
  if (cfg.nugget.empty()) {
    ll = klchol::log_likelihood(p.factor, y);
  } else {
    Eigen::VectorXd r = load_nugget(cfg, p.points.size());
    auto model = klchol::build_noisy_model(p.factor, r,
                                           klchol::precon_pattern_from_string(cfg.precon));
    klchol::SolveStats solve;
    ll = klchol::noisy_log_likelihood(model, y, cfg.cg_tol, cfg.cg_maxiter, &solve);
    stats["iterations"] = solve.iterations;
    stats["final_residual"] = solve.final_residual;
    stats["logdet_exact"] = model.logdet_exact;
  }
  stats["loglik"] = ll;
  std::cout.precision(17);
  std::cout << ll << '\n';
  write_stats(cfg, stats);
  return 0;
}

int cmd_predict(const RunConfig& cfg) {
  auto kernel = make_kernel(cfg);
  auto train = load_points(cfg);
  klchol::PointSet pred(klchol::read_points_csv(cfg.pred_points_path));
  require_desk_scale(cfg, train.size() + pred.size());
  Eigen::VectorXd y = klchol::read_observations_csv(cfg.obs_path, train.size());
  if (cfg.batch_size < 1) throw ConfigError("--batch-size must be >= 1");

  klchol::PredictionResult result;
  if (cfg.mode == "first") {
    result = klchol::predict_first(kernel, train, pred, y, cfg.rho, cfg.lambda, cfg.jitter);
  } else if (cfg.mode == "last") {
    std::vector<std::vector<int>> batches;
    for (int i = 0; i < pred.size(); i += cfg.batch_size) {
      std::vector<int> b;
      for (int j = i; j < std::min(pred.size(), i + cfg.batch_size); ++j) b.push_back(j);
      batches.push_back(std::move(b));
    }
    result = klchol::predict_last_batched(kernel, train, pred, y, cfg.rho, cfg.lambda, batches,
                                          cfg.jitter);
  } else if (cfg.mode == "streaming") {
    result = klchol::predict_streaming(kernel, train, pred, y, cfg.rho, cfg.lambda, cfg.jitter);
  } else {
    throw ConfigError("--mode must be first, last, or streaming");
  }

  klchol::write_mean_sd_csv(cfg.out_dir + "/mean.csv", result.mean, result.sd());
  if (cfg.write_cov) {
    if (result.covariance.rows() > 0)
      klchol::write_dense_csv(cfg.out_dir + "/covariance.csv", result.covariance);
    for (std::size_t b = 0; b < result.batch_covariance.size(); ++b)
      klchol::write_dense_csv(cfg.out_dir + "/covariance_batch_" + std::to_string(b + 1) + ".csv",
                              result.batch_covariance[b]);
  }

  json stats = {{"command", "predict"},
                {"mode", cfg.mode},
                {"n_train", train.size()},
                {"n_pred", pred.size()}};
  if (result.peak_bytes > 0) {
    stats["peak_bytes"] = result.peak_bytes;
    stats["full_factor_bytes"] = result.full_factor_bytes;
  }
  if (cfg.dense_check) {
    const int nt = train.size(), np = pred.size();
    Eigen::MatrixXd theta_tt = dense_theta(kernel, train);
    Eigen::MatrixXd theta_pp = dense_theta(kernel, pred);
    Eigen::MatrixXd theta_tp(nt, np);
    for (int i = 0; i < nt; ++i)
      for (int j = 0; j < np; ++j)
        theta_tp(i, j) = kernel.evaluate(train.coords.row(i).transpose(),
                                         pred.coords.row(j).transpose());
    auto exact = klchol::dense_conditional(theta_tt, theta_tp, theta_pp, y);
    stats["mean_rmse"] = std::sqrt((result.mean - exact.mean).squaredNorm() / std::max(np, 1));
    double cov_maxabs = 0.0;
    if (result.covariance.rows() == np)
      cov_maxabs = (result.covariance - exact.covariance).cwiseAbs().maxCoeff();
    else
      for (std::size_t b = 0; b < result.batches.size(); ++b)
        for (std::size_t a = 0; a < result.batches[b].size(); ++a)
          for (std::size_t c = 0; c < result.batches[b].size(); ++c)
            cov_maxabs = std::max(
                cov_maxabs, std::abs(result.batch_covariance[b](a, c) -
                                     exact.covariance(result.batches[b][a], result.batches[b][c])));
    stats["cov_maxabs"] = cov_maxabs;
  }
  write_stats(cfg, stats);
  return 0;
}

int cmd_benchmark(const RunConfig& cfg) {
  auto kernel = make_kernel(cfg);
  std::ofstream out(cfg.out_dir + "/benchmark.csv");
  if (!out) throw klchol::ParseError("cannot write " + cfg.out_dir + "/benchmark.csv");
  out << "n,nnz,time_plain_ms,time_aggregated_ms\n";
  for (int n : cfg.sizes) {
    klchol::SplitMix64 rng(cfg.seed);
    Eigen::MatrixXd coords(n, 2);
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < 2; ++d) coords(i, d) = rng.next_uniform();
    klchol::PointSet points(std::move(coords));

    const auto t0 = Clock::now();
    auto ordering = klchol::reverse_maximin(points, cfg.rho);
    auto pattern = klchol::build_pattern(ordering, points, cfg.rho);

    const auto t_plain = Clock::now();
    auto plain = klchol::factorize_plain(kernel, points, ordering, pattern, cfg.jitter);
    const double plain_ms = ms_since(t_plain);

    auto partition = klchol::aggregate_supernodes(pattern, ordering, cfg.lambda);
    const auto t_agg = Clock::now();
    auto agg = klchol::factorize_aggregated(kernel, points, ordering, partition, cfg.jitter);
    const double agg_ms = ms_since(t_agg);

    out << n << ',' << pattern.nnz() << ',' << plain_ms << ',' << agg_ms << '\n';
    out.flush();
    std::cout << "n=" << n << " nnz=" << pattern.nnz() << " plain=" << plain_ms
              << "ms aggregated=" << agg_ms << "ms\n";
    const double total_s = ms_since(t0) / 1000.0;
    if (cfg.time_budget > 0.0 && total_s > cfg.time_budget) {
      std::cerr << "time budget exceeded at n=" << n << " (" << total_s << "s)\n";
      return 4;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KL-optimal sparse inverse Cholesky factors for kernel matrices"};
  app.require_subcommand(1);
  RunConfig cfg;

  auto* c_order = app.add_subcommand("order", "reverse-maximin ordering only");
  add_shared_flags(c_order, cfg);

  auto* c_fact = app.add_subcommand("factorize", "ordering, pattern, supernodes, factor");
  add_shared_flags(c_fact, cfg);

  auto* c_loglik = app.add_subcommand("loglik", "Gaussian log-likelihood of observations");
  add_shared_flags(c_loglik, cfg);
  c_loglik->add_option("--obs", cfg.obs_path, "observations CSV (index,value)")->required();
  c_loglik->add_option("--nugget", cfg.nugget, "noise variance: scalar or per-point CSV");
  c_loglik->add_option("--precon", cfg.precon, "L|LLT|exact");
  c_loglik->add_option("--cg-tol", cfg.cg_tol, "PCG relative tolerance");
  c_loglik->add_option("--cg-maxiter", cfg.cg_maxiter, "PCG iteration cap");

  auto* c_pred = app.add_subcommand("predict", "posterior mean and covariance");
  add_shared_flags(c_pred, cfg);
  c_pred->add_option("--obs", cfg.obs_path, "observations CSV (index,value)")->required();
  c_pred->add_option("--pred-points", cfg.pred_points_path, "prediction points CSV")->required();
  c_pred->add_option("--mode", cfg.mode, "first|last|streaming");
  c_pred->add_option("--batch-size", cfg.batch_size, "batch size for --mode last");
  c_pred->add_flag("--write-cov", cfg.write_cov, "also write posterior covariance CSV");

  auto* c_bench = app.add_subcommand("benchmark", "scaling sweep over problem sizes");
  add_shared_flags(c_bench, cfg, false);
  c_bench->add_option("--sizes", cfg.sizes, "problem sizes to sweep");
  c_bench->add_option("--time-budget", cfg.time_budget, "seconds allowed per sweep step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 3;
  }

  try {
    validate(cfg);
    omp_set_num_threads(cfg.threads);
    if (c_order->parsed()) return cmd_order(cfg);
    if (c_fact->parsed()) return cmd_factorize(cfg);
    if (c_loglik->parsed()) return cmd_loglik(cfg);
    if (c_pred->parsed()) return cmd_predict(cfg);
    if (c_bench->parsed()) return cmd_benchmark(cfg);
    return 3;
  } catch (const klchol::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const klchol::CholeskyBreakdown& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
