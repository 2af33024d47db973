#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kmc/experiments.hpp"
#include "kmc/io.hpp"

namespace kmc::cli {

using nlohmann::json;

// Reads config keys while recording every resolved value (defaults included),
// so the output directory carries the exact configuration of the run.
class Cfg {
public:
  explicit Cfg(json raw) : raw_(std::move(raw)) {}

  template <typename T>
  T get(const std::string& key, const T& fallback) {
    T value = fallback;
    if (raw_.contains(key)) {
      try {
        value = raw_.at(key).get<T>();
      } catch (const std::exception& e) {
        throw InputError("config key '" + key + "': " + e.what());
      }
    }
    resolved_[key] = value;
    return value;
  }

  json get_json(const std::string& key, const json& fallback) {
    json value = raw_.contains(key) ? raw_.at(key) : fallback;
    resolved_[key] = value;
    return value;
  }

  bool has(const std::string& key) const { return raw_.contains(key); }
  const json& resolved() const { return resolved_; }

private:
  json raw_;
  json resolved_;
};

inline std::filesystem::path prepare_out_dir(Cfg& cfg) {
  const std::string out = cfg.get<std::string>("out", "out");
  std::filesystem::path dir(out);
  std::filesystem::create_directories(dir);
  return dir;
}

// Resolved config plus a separate timing log; timestamps never enter the
// deterministic outputs.
inline void finalize_out_dir(const std::filesystem::path& dir, const Cfg& cfg,
                             std::chrono::steady_clock::time_point started) {
  {
    std::ofstream out(dir / "config.json");
    out << cfg.resolved().dump(2) << "\n";
  }
  const auto elapsed = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - started)
                           .count();
  std::ofstream log(dir / "run.log", std::ios::app);
  log << "elapsed_seconds " << elapsed << "\n";
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  require_input(out.good(), "cannot open " + path.string());
  out << j.dump(2) << "\n";
}

// (step, q1..qd, p1..pd, H) rows for one trajectory.
inline void write_trajectory_csv(const Trajectory& traj,
                                 const std::function<double(const Eigen::VectorXd&)>& U,
                                 const std::string& path) {
  const Eigen::Index d = traj.positions.cols();
  Eigen::MatrixXd table(traj.L + 1, 2 * d + 2);
  for (int i = 0; i <= traj.L; ++i) {
    table(i, 0) = i;
    table.block(i, 1, 1, d) = traj.positions.row(i);
    table.block(i, 1 + d, 1, d) = traj.momenta.row(i);
    table(i, 1 + 2 * d) =
        hamiltonian(U, traj.positions.row(i), traj.momenta.row(i));
  }
  std::vector<std::string> header{"step"};
  for (Eigen::Index j = 0; j < d; ++j) header.push_back("q" + std::to_string(j + 1));
  for (Eigen::Index j = 0; j < d; ++j) header.push_back("p" + std::to_string(j + 1));
  header.push_back("H");
  write_csv(path, header, table);
}

// ---------------------------------------------------------------------------
// Targets by name.
// ---------------------------------------------------------------------------

inline Target target_from_json(Cfg& cfg) {
  const json block = cfg.get_json("target", json{{"name", "std_gaussian"}, {"d", 2}});
  const std::string name = block.value("name", "std_gaussian");
  if (name == "std_gaussian") {
    return make_standard_gaussian(block.value("d", 2));
  }
  if (name == "noisy_gaussian") {
    return make_noisy(make_standard_gaussian(block.value("d", 1)),
                      block.value("noise", 0.5));
  }
  if (name == "rotated_gamma") {
    return make_rotated_gamma_gaussian(block.value("d", 8),
                                       block.value("seed", std::uint64_t{1}));
  }
  if (name == "banana") {
    BananaParams params;
    params.d = block.value("d", 8);
    params.b = block.value("b", 0.03);
    params.v = block.value("v", 100.0);
    return make_banana(params);
  }
  if (name == "abc_skew_normal") {
    const AbcFixture fx = load_abc_fixture(block.value("fixture", "fixtures/abc_observed.json"));
    ABCParams params;
    params.theta_dim = static_cast<int>(fx.theta_true.size());
    params.epsilon = fx.epsilon;
    params.n_lik = fx.n_lik;
    params.n_batch = fx.n_batch;
    params.alpha = fx.alpha;
    return make_abc_target(params, fx.y_obs_summary);
  }
  throw InputError("unknown target name: " + name);
}

inline SamplerConfig sampler_from_json(Cfg& cfg, int dim) {
  const json block = cfg.get_json("sampler", json::object());
  SamplerConfig sc;
  const std::string algo = block.value("algorithm", "kmc_finite");
  if (algo == "rw")
    sc.algorithm = Algorithm::RW;
  else if (algo == "hmc")
    sc.algorithm = Algorithm::HMC;
  else if (algo == "kmc_lite")
    sc.algorithm = Algorithm::KMC_Lite;
  else if (algo == "kmc_finite")
    sc.algorithm = Algorithm::KMC_Finite;
  else
    throw InputError("unknown sampler algorithm: " + algo);

  sc.hamiltonian.eps_min = block.value("eps_min", 0.05);
  sc.hamiltonian.eps_max = block.value("eps_max", 0.3);
  sc.hamiltonian.L_min = block.value("L_min", 5);
  sc.hamiltonian.L_max = block.value("L_max", 20);
  sc.n_basis = block.value("n_basis", 500);
  sc.lambda = block.value("lambda", 1e-2);
  if (block.contains("sigma") && block.at("sigma").is_string()) {
    const std::string mode = block.at("sigma");
    if (mode == "median")
      sc.sigma_mode = BandwidthMode::Median;
    else if (mode == "cv")
      sc.sigma_mode = BandwidthMode::CV;
    else
      throw InputError("sampler.sigma must be a number, \"median\" or \"cv\"");
  } else {
    sc.sigma = block.value("sigma", 1.0);
  }
  sc.kernel_family = block.value("kernel", std::string("gaussian")) == "rq"
                         ? KernelFamily::RationalQuadratic
                         : KernelFamily::Gaussian;
  sc.rq_alpha = block.value("rq_alpha", 1.0);
  if (block.contains("schedule")) {
    const json sch = block.at("schedule");
    sc.schedule.exponent = sch.value("exponent", 0.5);
    sc.schedule.scale = sch.value("scale", 1.0);
    sc.schedule.freeze_after = sch.value("freeze_after", -1);
  }
  sc.seed = block.value("seed", std::uint64_t{1});
  sc.T = block.value("T", 2000LL);
  sc.burn_in = block.value("burn_in", 200LL);
  sc.rw_target_accept = block.value("target_accept", 0.234);
  if (block.contains("init")) {
    const auto init = block.at("init").get<std::vector<double>>();
    sc.init = Eigen::Map<const Eigen::VectorXd>(init.data(), init.size());
  } else {
    sc.init = Eigen::VectorXd::Zero(dim);
  }
  return sc;
}

inline json ess_to_json(const EssReport& report) {
  json per = json::array();
  for (Eigen::Index i = 0; i < report.per_dim.size(); ++i) per.push_back(report.per_dim[i]);
  return {{"per_dim", per}, {"min_ess", report.min_ess}};
}

// ---------------------------------------------------------------------------
// Subcommands. Each returns 0 and throws InputError / NumericError otherwise.
// ---------------------------------------------------------------------------

inline int cmd_fit(const json& raw) {
  const auto started = std::chrono::steady_clock::now();
  Cfg cfg(raw);
  const auto dir = prepare_out_dir(cfg);

  const std::string input = cfg.get<std::string>("input", "");
  require_input(!input.empty(), "fit: missing 'input' sample file");
  const CsvTable table = read_csv(input);

  FitOptions opts;
  opts.lite = cfg.get<std::string>("estimator", "lite") == "lite";
  opts.m = cfg.get<int>("m", 300);
  opts.folds = cfg.get<int>("folds", 5);
  opts.seed = cfg.get<std::uint64_t>("seed", 1);

  const json sigma = cfg.get_json("sigma", "cv");
  const json lambda = cfg.get_json("lambda", "cv");
  const bool sigma_cv = sigma.is_string() && sigma == "cv";
  const bool lambda_cv = lambda.is_string() && lambda == "cv";
  opts.cv = sigma_cv || lambda_cv;
  if (!sigma_cv && sigma.is_string() && sigma != "median")
    throw InputError("fit: sigma must be a number, \"cv\" or \"median\"");
  if (!sigma_cv && sigma.is_number()) opts.sigma = sigma.get<double>();
  if (!lambda_cv) {
    require_input(lambda.is_number(), "fit: lambda must be a number or \"cv\"");
    opts.lambda = lambda.get<double>();
  }
  // calibrated default grids for the score-matched N(0,1) fidelity benchmark
  const std::vector<double> def_sigma =
      opts.lite ? std::vector<double>{256.0, 512.0, 1024.0}
                : std::vector<double>{64.0, 128.0, 256.0};
  const std::vector<double> def_lambda = opts.lite ? std::vector<double>{1.0, 3.0, 10.0}
                                                   : std::vector<double>{1e-6, 1e-5};
  opts.sigma_grid = cfg.get<std::vector<double>>("sigma_grid", def_sigma);
  opts.lambda_grid = cfg.get<std::vector<double>>("lambda_grid", def_lambda);
  if (opts.cv && !sigma_cv && sigma.is_number()) opts.sigma_grid = {sigma.get<double>()};
  if (opts.cv && !lambda_cv) opts.lambda_grid = {opts.lambda};
  opts.reference_std_gaussian =
      cfg.get<std::string>("reference", "") == "std_gaussian";

  const FitOutcome out = fit_experiment(table.values, opts);
  if (out.lite)
    save_lite_model(*out.lite, (dir / "model.json").string());
  else
    save_finite_model(*out.finite, (dir / "model.json").string());

  json report{{"schema", "kmc-summary/1"},
              {"estimator", opts.lite ? "lite" : "finite"},
              {"n", table.values.rows()},
              {"d", table.values.cols()},
              {"sigma", out.sigma},
              {"lambda", out.lambda},
              {"cv_used", out.cv_used},
              {"objective", out.objective}};
  if (out.cv_used) report["cv_scores"] = mat_to_json(out.cv_scores);
  if (opts.reference_std_gaussian) report["gradient_mse"] = out.gradient_mse;
  write_json(dir / "report.json", report);
  finalize_out_dir(dir, cfg, started);
  return 0;
}

inline int cmd_sample(const json& raw) {
  const auto started = std::chrono::steady_clock::now();
  Cfg cfg(raw);
  const auto dir = prepare_out_dir(cfg);

  const Target target = target_from_json(cfg);
  const SamplerConfig sc = sampler_from_json(cfg, target.dim);

  ChainResult chain;
  switch (sc.algorithm) {
    case Algorithm::RW: {
      RwOptions opts;
      opts.init = sc.init;
      opts.burn_in = sc.burn_in;
      chain = run_rw(target, sc.T, sc.rw_target_accept, sc.seed, opts);
      break;
    }
    case Algorithm::HMC:
      chain = run_hmc(target, sc);
      break;
    case Algorithm::KMC_Lite:
      chain = run_kmc_lite(target, sc);
      break;
    case Algorithm::KMC_Finite:
      chain = run_kmc_finite(target, sc);
      break;
  }

  write_chain_csv(chain, (dir / "chain.csv").string());
  const Eigen::MatrixXd post = chain.samples.bottomRows(sc.T - sc.burn_in);
  long long flagged = 0;
  for (const char f : chain.flagged) flagged += f;
  json summary{{"schema", "kmc-summary/1"},
               {"acceptance_rate", acceptance_rate(chain.accepted, sc.burn_in)},
               {"ess", ess_to_json(min_ess(post))},
               {"mean_norm", mean_norm(post)},
               {"flagged", flagged}};
  write_json(dir / "summary.json", summary);
  finalize_out_dir(dir, cfg, started);
  return 0;
}

inline int cmd_trajectories(const json& raw) {
  const auto started = std::chrono::steady_clock::now();
  Cfg cfg(raw);
  const auto dir = prepare_out_dir(cfg);

  TrajectoryStudyConfig tc;
  tc.n_train = cfg.get<int>("n_train", 2000);
  tc.m = cfg.get<int>("m", 500);
  tc.sigma = cfg.get<double>("sigma", 0.0);
  tc.lambda = cfg.get<double>("lambda", 1e-4);
  tc.n_traj = cfg.get<int>("n_traj", 500);
  tc.eps = cfg.get<double>("eps", 0.1);
  tc.L = cfg.get<int>("L", 20);
  tc.n_recorded = cfg.get<int>("n_recorded", 3);
  tc.seed = cfg.get<std::uint64_t>("seed", 1);

  const TrajectoryStudyResult result = trajectory_study(tc);

  const Target target = make_standard_gaussian(2);
  const auto U = [&target](const Eigen::VectorXd& q) { return -target.log_density(q); };
  for (std::size_t k = 0; k < result.exact_recorded.size(); ++k) {
    write_trajectory_csv(result.exact_recorded[k], U,
                         (dir / ("exact_traj_" + std::to_string(k) + ".csv")).string());
    write_trajectory_csv(result.surrogate_recorded[k], U,
                         (dir / ("surrogate_traj_" + std::to_string(k) + ".csv")).string());
  }
  Eigen::MatrixXd acc(tc.n_traj, 3);
  for (int k = 0; k < tc.n_traj; ++k)
    acc.row(k) << k, result.exact_accept[k], result.surrogate_accept[k];
  write_csv((dir / "acceptance.csv").string(), {"traj", "exact", "surrogate"}, acc);

  write_json(dir / "summary.json", json{{"schema", "kmc-summary/1"},
                                        {"mean_exact", result.mean_exact},
                                        {"mean_surrogate", result.mean_surrogate},
                                        {"sigma_used", result.sigma_used}});
  finalize_out_dir(dir, cfg, started);
  return 0;
}

inline int cmd_acceptance_benchmark(const json& raw) {
  const auto started = std::chrono::steady_clock::now();
  Cfg cfg(raw);
  const auto dir = prepare_out_dir(cfg);

  AcceptanceBenchConfig bc;
  bc.rotated = cfg.get<std::string>("target", "isotropic") == "rotated_gamma";
  bc.d_grid = cfg.get<std::vector<int>>("d_grid", {8});
  bc.n_grid = cfg.get<std::vector<int>>("n_grid", {200, 500, 1000, 2000});
  bc.trials = cfg.get<int>("trials", 10);
  bc.n_eval = cfg.get<int>("n_eval", 25);
  bc.eps = cfg.get<double>("eps", 0.1);
  bc.L = cfg.get<int>("L", 10);
  bc.lambda = cfg.get<double>("lambda", 1e-4);
  bc.rq_alpha = cfg.get<double>("rq_alpha", 1.0);
  bc.seed = cfg.get<std::uint64_t>("seed", 1);
  bc.threads = cfg.get<unsigned>("threads", 0);

  const std::vector<AcceptanceBenchRow> rows = acceptance_benchmark(bc);

  Eigen::MatrixXd table(rows.size(), 4);
  for (std::size_t i = 0; i < rows.size(); ++i)
    table.row(i) << rows[i].d, rows[i].n, rows[i].trial, rows[i].mean_accept;
  write_csv((dir / "heatmap.csv").string(), {"d", "n_m", "trial", "mean_acceptance"}, table);

  Eigen::MatrixXd agg(bc.d_grid.size() * bc.n_grid.size(), 3);
  json cells = json::array();
  Eigen::Index r = 0;
  for (const int d : bc.d_grid)
    for (const int n : bc.n_grid) {
      const double mean = bench_cell_mean(rows, d, n);
      agg.row(r++) << d, n, mean;
      cells.push_back({{"d", d}, {"n_m", n}, {"mean_acceptance", mean}});
    }
  write_csv((dir / "summary.csv").string(), {"d", "n_m", "mean_acceptance"}, agg);
  write_json(dir / "summary.json", json{{"schema", "kmc-summary/1"}, {"cells", cells}});
  finalize_out_dir(dir, cfg, started);
  return 0;
}

inline int cmd_banana(const json& raw) {
  const auto started = std::chrono::steady_clock::now();
  Cfg cfg(raw);
  const auto dir = prepare_out_dir(cfg);

  BananaStudyConfig bc;
  bc.banana.d = cfg.get<int>("d", 8);
  bc.banana.b = cfg.get<double>("b", 0.03);
  bc.banana.v = cfg.get<double>("v", 100.0);
  bc.n_grid = cfg.get<std::vector<int>>("n_grid", {200, 500, 1000, 2000});
  bc.seeds = cfg.get<int>("seeds", 10);
  bc.T = cfg.get<long long>("T", 2200);
  bc.burn_in = cfg.get<long long>("burn_in", 200);
  bc.L = cfg.get<int>("L", 20);
  bc.hmc_target = cfg.get<double>("hmc_target", 0.8);
  bc.rw_target = cfg.get<double>("rw_target", 0.234);
  bc.lambda = cfg.get<double>("lambda", 1e-2);
  bc.sigma = cfg.get<double>("sigma", 0.0);
  bc.include_lite = cfg.get<bool>("include_lite", false);
  bc.seed = cfg.get<std::uint64_t>("seed", 1);
  bc.threads = cfg.get<unsigned>("threads", 0);

  const std::vector<BananaRow> rows = banana_study(bc);

  std::ofstream runs(dir / "runs.csv");
  runs << "sampler,n_m,seed,acceptance,mean_norm,min_ess,eps\n";
  for (const auto& row : rows)
    runs << row.sampler << "," << row.n << "," << row.seed_idx << ","
         << format_double(row.acceptance) << "," << format_double(row.mean_norm) << ","
         << format_double(row.min_ess) << "," << format_double(row.eps) << "\n";
  runs.close();

  std::vector<std::pair<std::string, int>> cells{{"hmc", 0}, {"rw", 0}};
  for (const int n : bc.n_grid) cells.push_back({"kmc_finite", n});
  if (bc.include_lite)
    for (const int n : bc.n_grid) cells.push_back({"kmc_lite", n});

  std::ofstream summary_csv(dir / "summary.csv");
  summary_csv << "sampler,n_m,acceptance,mean_norm,min_ess\n";
  json cell_json = json::array();
  for (const auto& [name, n] : cells) {
    const double acc = banana_cell_mean(rows, name, n, &BananaRow::acceptance);
    const double norm = banana_cell_mean(rows, name, n, &BananaRow::mean_norm);
    const double ess = banana_cell_mean(rows, name, n, &BananaRow::min_ess);
    summary_csv << name << "," << n << "," << format_double(acc) << ","
                << format_double(norm) << "," << format_double(ess) << "\n";
    cell_json.push_back({{"sampler", name},
                         {"n_m", n},
                         {"acceptance", acc},
                         {"mean_norm", norm},
                         {"min_ess", ess}});
  }
  summary_csv.close();
  write_json(dir / "summary.json", json{{"schema", "kmc-summary/1"}, {"cells", cell_json}});
  finalize_out_dir(dir, cfg, started);
  return 0;
}

inline int cmd_abc(const json& raw) {
  const auto started = std::chrono::steady_clock::now();
  Cfg cfg(raw);
  const auto dir = prepare_out_dir(cfg);

  AbcStudyConfig ac;
  ac.fixture_path = cfg.get<std::string>("fixture", "fixtures/abc_observed.json");
  ac.lognormal_path = cfg.get<std::string>("lognormal_fixture", "fixtures/lognormal.json");
  ac.T = cfg.get<long long>("T", 5200);
  ac.burn_in = cfg.get<long long>("burn_in", 200);
  ac.n_lite = cfg.get<int>("n_lite", 500);
  ac.eps_min = cfg.get<double>("eps_min", 0.01);
  ac.eps_max = cfg.get<double>("eps_max", 0.1);
  ac.L = cfg.get<int>("L", 50);
  ac.lambda = cfg.get<double>("lambda", 1e-2);
  ac.sigma = cfg.get<double>("sigma", 0.0);
  ac.max_lag = cfg.get<int>("max_lag", 100);
  ac.seed = cfg.get<std::uint64_t>("seed", 1);

  const AbcStudyResult result = abc_study(ac);

  write_chain_csv(result.kmc, (dir / "kmc_chain.csv").string());
  write_chain_csv(result.rw, (dir / "rw_chain.csv").string());

  Eigen::MatrixXd acf(ac.max_lag + 1, 3);
  for (int k = 0; k <= ac.max_lag; ++k)
    acf.row(k) << k, result.acf_kmc[k], result.acf_rw[k];
  write_csv((dir / "autocorrelation.csv").string(), {"lag", "kmc", "rw"}, acf);

  // theta_1 marginal histograms over a shared range
  const Eigen::VectorXd k1 = result.kmc.samples.bottomRows(ac.T - ac.burn_in).col(0);
  const Eigen::VectorXd r1 = result.rw.samples.bottomRows(ac.T - ac.burn_in).col(0);
  const double lo = std::min(k1.minCoeff(), r1.minCoeff());
  const double hi = std::max(k1.maxCoeff(), r1.maxCoeff()) + 1e-9;
  const int bins = 40;
  Eigen::MatrixXd hist = Eigen::MatrixXd::Zero(bins, 3);
  for (int b = 0; b < bins; ++b) hist(b, 0) = lo + (hi - lo) * (b + 0.5) / bins;
  for (Eigen::Index i = 0; i < k1.size(); ++i)
    hist(std::min<int>(bins - 1, static_cast<int>((k1[i] - lo) / (hi - lo) * bins)), 1) +=
        1.0 / k1.size();
  for (Eigen::Index i = 0; i < r1.size(); ++i)
    hist(std::min<int>(bins - 1, static_cast<int>((r1[i] - lo) / (hi - lo) * bins)), 2) +=
        1.0 / r1.size();
  write_csv((dir / "marginal_hist.csv").string(), {"theta1", "kmc", "rw"}, hist);

  // counterexample table: grid mass for the synthetic posterior, density of
  // the conjugate posterior
  Eigen::MatrixXd counter(result.grid.size(), 3);
  for (Eigen::Index i = 0; i < result.grid.size(); ++i) {
    const double mu = result.grid[i];
    const double density =
        std::sqrt(result.true_precision / (2.0 * std::numbers::pi)) *
        std::exp(-0.5 * result.true_precision * (mu - result.true_mean) * (mu - result.true_mean));
    counter.row(i) << mu, result.synth_mass[i], density;
  }
  write_csv((dir / "counterexample.csv").string(), {"mu", "synthetic_mass", "true_density"},
            counter);

  write_json(dir / "summary.json",
             json{{"schema", "kmc-summary/1"},
                  {"kmc_acceptance", acceptance_rate(result.kmc.accepted, ac.burn_in)},
                  {"rw_acceptance", acceptance_rate(result.rw.accepted, ac.burn_in)},
                  {"mmd_kmc_rw", result.mmd_kmc_rw},
                  {"mmd_kmc_shift", result.mmd_kmc_shift},
                  {"mmd_rw_shift", result.mmd_rw_shift},
                  {"no_extra_bias", result.no_extra_bias},
                  {"true_posterior_mean", result.true_mean},
                  {"synthetic_posterior_mean", result.synth_mean},
                  {"upward_bias", result.synth_mean > result.true_mean}});
  finalize_out_dir(dir, cfg, started);
  return 0;
}

inline int cmd_diagnose(const json& raw) {
  const auto started = std::chrono::steady_clock::now();
  Cfg cfg(raw);
  const auto dir = prepare_out_dir(cfg);

  const std::string chain_path = cfg.get<std::string>("chain", "");
  require_input(!chain_path.empty(), "diagnose: missing 'chain' csv path");
  const CsvTable table = read_csv(chain_path);

  // position columns are everything before the bookkeeping columns
  Eigen::Index d = 0;
  while (d < static_cast<Eigen::Index>(table.header.size()) &&
         table.header[d] == "x" + std::to_string(d + 1))
    ++d;
  require_input(d >= 1, "diagnose: chain csv has no position columns");
  const long long burn_in = cfg.get<long long>("burn_in", 0);
  require_input(burn_in >= 0 && burn_in < table.values.rows(),
                "diagnose: burn_in must be below the chain length");
  const Eigen::MatrixXd samples =
      table.values.topLeftCorner(table.values.rows(), d).bottomRows(table.values.rows() -
                                                                    burn_in);

  json metrics{{"schema", "kmc-summary/1"},
               {"T", table.values.rows()},
               {"d", d},
               {"mean_norm", mean_norm(samples)},
               {"ess", ess_to_json(min_ess(samples))}};

  const Eigen::Index accepted_col = d;
  if (accepted_col < static_cast<Eigen::Index>(table.header.size()) &&
      table.header[accepted_col] == "accepted") {
    std::vector<char> flags(table.values.rows());
    for (Eigen::Index i = 0; i < table.values.rows(); ++i)
      flags[i] = table.values(i, accepted_col) != 0.0;
    metrics["acceptance_rate"] = acceptance_rate(flags, burn_in);
  }

  const bool want_mmd = cfg.get<bool>("mmd", cfg.has("reference"));
  if (want_mmd) {
    const std::string ref_path = cfg.get<std::string>("reference", "");
    require_input(!ref_path.empty(), "diagnose: MMD requested without a reference file");
    const CsvTable ref = read_csv(ref_path);
    require_input(ref.values.cols() >= d, "diagnose: reference has too few columns");
    metrics["mmd_poly3"] = mmd_poly3(thin_chain(samples, 2000),
                                     thin_chain(ref.values.leftCols(d), 2000));
  }

  std::cout << metrics.dump(2) << "\n";
  write_json(dir / "metrics.json", metrics);
  finalize_out_dir(dir, cfg, started);
  return 0;
}

}  // namespace kmc::cli
