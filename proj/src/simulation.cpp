#include "poolcal/simulation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include "poolcal/calibration.hpp"
#include "poolcal/errors.hpp"
#include "poolcal/logistic.hpp"
#include "poolcal/parallel.hpp"

namespace poolcal {

namespace {

using Eigen::Index;
using Eigen::VectorXd;

// Stream tags for child_rng paths.
constexpr std::uint64_t kInterceptStream = 1;
constexpr std::uint64_t kDatasetStream = 2;
constexpr std::uint64_t kPseudoStream = 3;
constexpr std::uint64_t kRecoveryStream = 4;

std::string format_or(double odds_ratio) {
  std::ostringstream s;
  s << odds_ratio;
  return s.str();
}

ScenarioConfig with_studies(ScenarioConfig cfg, int m) {
  cfg.studies = m;
  cfg.alpha0.clear();
  cfg.sigma2_lab.clear();
  for (int j = 1; j <= m; ++j) cfg.alpha0.push_back(-0.1 * j);
  for (int d = 0; d <= m; ++d) cfg.sigma2_lab.push_back(2.0 + d);
  return cfg;
}

}  // namespace

const char* to_string(ErrorFamily family) noexcept {
  switch (family) {
    case ErrorFamily::normal: return "normal";
    case ErrorFamily::uniform: return "uniform";
    case ErrorFamily::skew_normal: return "skew_normal";
  }
  return "?";
}

const char* to_string(Method method) noexcept {
  switch (method) {
    case Method::naive: return "naive";
    case Method::true_values: return "true_values";
    case Method::known_params: return "known_params";
    case Method::repeated: return "repeated";
  }
  return "?";
}

ErrorFamily parse_error_family(const std::string& name) {
  if (name == "normal") return ErrorFamily::normal;
  if (name == "uniform") return ErrorFamily::uniform;
  if (name == "skew_normal") return ErrorFamily::skew_normal;
  throw ValidationError("unknown error family '" + name + "'");
}

Method parse_method(const std::string& name) {
  if (name == "naive") return Method::naive;
  if (name == "true_values") return Method::true_values;
  if (name == "known_params") return Method::known_params;
  if (name == "repeated") return Method::repeated;
  throw ValidationError("unknown method '" + name + "'");
}

void ScenarioConfig::validate() const {
  auto fail = [&](const std::string& what) {
    throw ValidationError("scenario '" + name + "': " + what);
  };
  if (studies < 2) fail("need at least two studies");
  if (n_per_study < 1) fail("n_per_study must be positive");
  if (n_calibration_per_study < 1 || n_calibration_per_study > n_per_study)
    fail("n_calibration_per_study must lie in [1, n_per_study]");
  if (static_cast<int>(alpha0.size()) != studies) fail("alpha0 needs one entry per study");
  if (static_cast<int>(sigma2_lab.size()) != studies + 1)
    fail("sigma2_lab needs one entry per lab (studies + 1)");
  if (beta_z.size() != tau.size()) fail("beta_z and tau must have equal length (Z = W)");
  if (odds_ratios.empty()) fail("odds_ratios must not be empty");
  for (double o : odds_ratios)
    if (!(o > 0.0)) fail("odds ratios must be positive");
  if (!(target_prevalence > 0.0 && target_prevalence < 1.0))
    fail("target_prevalence must lie in (0, 1)");
  if (sigma2_x < 0.0 || sigma2_xi < 0.0) fail("variances must be non-negative");
  for (double v : sigma2_lab)
    if (v < 0.0) fail("variances must be non-negative");
  if (replicates < 1) fail("replicates must be positive");
  if (pseudo_datasets < 2) fail("pseudo_datasets must be at least 2");
  for (int i : pseudo_dataset_grid)
    if (i < 2) fail("pseudo_dataset_grid entries must be at least 2");
  if (methods.empty()) fail("methods must not be empty");
  if (prevalence_draws < 1000) fail("prevalence_draws must be at least 1000");
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"table1", "table2", "fig1", "fig2", "figS5", "figS6"};
  return names;
}

std::vector<ScenarioConfig> preset_scenarios(const std::string& preset, double prevalence) {
  ScenarioConfig base;
  if (preset == "table1") {
    base.name = "table1_prev" + format_or(prevalence);
    base.target_prevalence = prevalence;
    return {base};
  }
  if (preset == "table2") {
    base.name = "table2";
    base.methods = {Method::repeated};
    base.pseudo_dataset_grid = {5, 10, 20, 50};
    return {base};
  }
  if (preset == "fig1") {
    std::vector<ScenarioConfig> out;
    for (int n_cal : {25, 40, 75}) {
      ScenarioConfig c = base;
      c.name = "fig1_cal" + std::to_string(n_cal);
      c.n_calibration_per_study = n_cal;
      out.push_back(c);
    }
    return out;
  }
  if (preset == "fig2") {
    std::vector<ScenarioConfig> out;
    for (int m : {2, 4, 8}) {
      ScenarioConfig c = with_studies(base, m);
      c.name = "fig2_m" + std::to_string(m);
      out.push_back(c);
    }
    return out;
  }
  if (preset == "figS5") {
    std::vector<ScenarioConfig> out;
    for (ErrorFamily f : {ErrorFamily::normal, ErrorFamily::uniform, ErrorFamily::skew_normal}) {
      ScenarioConfig c = base;
      c.name = std::string("figS5_") + to_string(f);
      c.error_family = f;
      out.push_back(c);
    }
    return out;
  }
  if (preset == "figS6") {
    std::vector<ScenarioConfig> out;
    for (double a : {0.0, 5.0}) {
      ScenarioConfig c = base;
      c.name = "figS6_a" + format_or(a);
      c.xi_mean = a;
      out.push_back(c);
    }
    return out;
  }
  throw ValidationError("unknown preset '" + preset + "'");
}

double draw_error(ErrorFamily family, double sigma2, bool uniform_printed_bounds, NormalSampler& normal,
                  Rng& rng) {
  switch (family) {
    case ErrorFamily::normal:
      return std::sqrt(sigma2) * normal(rng);
    case ErrorFamily::uniform: {
      const double half = std::sqrt(uniform_printed_bounds ? sigma2 : 3.0 * sigma2);
      return (2.0 * NormalSampler::unit(rng) - 1.0) * half;
    }
    case ErrorFamily::skew_normal: {
      // Shape 1: delta = 1/sqrt(2); location and scale give mean 0, variance sigma2.
      constexpr double delta = std::numbers::sqrt2 / 2.0;
      const double omega = std::sqrt(sigma2 / (1.0 - 2.0 * delta * delta / std::numbers::pi));
      const double location = -omega * delta * std::sqrt(2.0 / std::numbers::pi);
      const double u0 = normal(rng);
      const double u1 = normal(rng);
      return location + omega * (delta * std::abs(u0) + std::sqrt(1.0 - delta * delta) * u1);
    }
  }
  return 0.0;
}

std::vector<double> solve_intercepts_for_prevalence(const ScenarioConfig& cfg, double beta_x, Rng& rng) {
  cfg.validate();
  const int p = cfg.p();
  NormalSampler normal;
  std::vector<double> beta0(cfg.studies);
  std::vector<double> offset(cfg.prevalence_draws);
  for (int j = 0; j < cfg.studies; ++j) {
    for (double& o : offset) {
      double mean_x = cfg.alpha0[j];
      double linear = 0.0;
      for (int k = 0; k < p; ++k) {
        const double w = normal(rng);
        mean_x += cfg.tau[k] * w;
        linear += cfg.beta_z[k] * w;
      }
      const double x =
          mean_x + draw_error(cfg.error_family, cfg.sigma2_x, cfg.uniform_printed_bounds, normal, rng);
      o = beta_x * x + linear;
    }
    auto prevalence = [&](double b) {
      double s = 0.0;
      for (double o : offset) s += expit(b + o);
      return s / static_cast<double>(offset.size());
    };
    double lo = -40.0, hi = 40.0;
    if (prevalence(lo) > cfg.target_prevalence || prevalence(hi) < cfg.target_prevalence)
      throw NumericalError("prevalence bisection bracket [-40, 40] does not contain the target");
    while (hi - lo > 1e-10) {
      const double mid = 0.5 * (lo + hi);
      (prevalence(mid) < cfg.target_prevalence ? lo : hi) = mid;
    }
    beta0[j] = 0.5 * (lo + hi);
  }
  return beta0;
}

SimulatedData generate_dataset(const ScenarioConfig& cfg, double beta_x,
                               const std::vector<double>& beta0, Rng& rng) {
  const int m = cfg.studies;
  const int p = cfg.p();
  if (static_cast<int>(beta0.size()) != m)
    throw ContractError("generate_dataset: one intercept per study is required");
  NormalSampler normal;

  VectorXd xi(m + 1);
  for (int d = 0; d <= m; ++d) xi[d] = cfg.xi_mean + std::sqrt(cfg.sigma2_xi) * normal(rng);

  std::vector<SubjectRecord> subjects;
  subjects.reserve(static_cast<std::size_t>(m) * cfg.n_per_study);
  std::vector<StudyInfo> studies;
  std::vector<std::string> labs;
  std::vector<int> order(cfg.n_per_study);
  for (int j = 0; j < m; ++j) {
    studies.push_back({"study" + std::to_string(j + 1), j + 1});
    labs.push_back("lab" + std::to_string(j + 1));
    const std::size_t first = subjects.size();
    for (int k = 0; k < cfg.n_per_study; ++k) {
      SubjectRecord r;
      r.id = "s" + std::to_string(j + 1) + "_" + std::to_string(k + 1);
      r.study = j;
      r.w.resize(p);
      double mean_x = cfg.alpha0[j];
      for (int c = 0; c < p; ++c) {
        r.w[c] = normal(rng);
        mean_x += cfg.tau[c] * r.w[c];
      }
      r.z = r.w;
      const double x =
          mean_x + draw_error(cfg.error_family, cfg.sigma2_x, cfg.uniform_printed_bounds, normal, rng);
      r.true_x = x;
      r.local = x + xi[j + 1] + std::sqrt(cfg.sigma2_lab[j + 1]) * normal(rng);
      subjects.push_back(std::move(r));
    }
    // Seeded Fisher-Yates; the first n_cal positions form the calibration subset.
    for (int k = 0; k < cfg.n_per_study; ++k) order[k] = k;
    for (int k = cfg.n_per_study - 1; k > 0; --k)
      std::swap(order[k], order[rng() % static_cast<std::uint64_t>(k + 1)]);
    std::vector<int> chosen(order.begin(), order.begin() + cfg.n_calibration_per_study);
    std::sort(chosen.begin(), chosen.end());
    for (int k : chosen) {
      auto& r = subjects[first + k];
      r.central = *r.true_x + xi[0] + std::sqrt(cfg.sigma2_lab[0]) * normal(rng);
    }
    for (int k = 0; k < cfg.n_per_study; ++k) {
      auto& r = subjects[first + k];
      double eta = beta0[j] + beta_x * *r.true_x;
      for (int c = 0; c < p; ++c) eta += cfg.beta_z[c] * r.z[c];
      r.outcome = NormalSampler::unit(rng) < expit(eta) ? 1 : 0;
    }
  }

  std::vector<std::string> w_names, z_names;
  for (int c = 0; c < p; ++c) {
    w_names.push_back("w_" + std::to_string(c + 1));
    z_names.push_back("z_" + std::to_string(c + 1));
  }

  ParameterSet truth;
  truth.theta.resize(m + p);
  for (int j = 0; j < m; ++j) truth.theta[j] = cfg.alpha0[j];
  for (int c = 0; c < p; ++c) truth.theta[m + c] = cfg.tau[c];
  truth.xi = xi;
  truth.sigma2.lab = Eigen::Map<const VectorXd>(cfg.sigma2_lab.data(), m + 1);
  truth.sigma2.xi = cfg.sigma2_xi;
  truth.sigma2.x = cfg.sigma2_x;

  return {PooledDataset(std::move(subjects), std::move(studies), std::move(labs), std::move(w_names),
                        std::move(z_names)),
          std::move(truth)};
}

MethodEstimate run_method(Method method, const SimulatedData& sim, const MethodRunOptions& options) {
  const auto& ds = sim.dataset;
  MethodEstimate est;
  auto from_fit = [&](const LogisticFit& fit) {
    est.beta_x = fit.beta_x();
    est.se = fit.se_x();
  };
  const OutcomeData outcome = outcome_data(ds);
  switch (method) {
    case Method::naive: {
      VectorXd h(static_cast<Index>(ds.size()));
      for (std::size_t i = 0; i < ds.size(); ++i) h[static_cast<Index>(i)] = ds.subjects()[i].local;
      from_fit(fit_outcome(outcome, h));
      break;
    }
    case Method::true_values: {
      if (!ds.has_true_values()) throw ContractError("true_values method needs simulated truth");
      VectorXd x(static_cast<Index>(ds.size()));
      for (std::size_t i = 0; i < ds.size(); ++i) x[static_cast<Index>(i)] = *ds.subjects()[i].true_x;
      from_fit(fit_outcome(outcome, x));
      break;
    }
    case Method::known_params:
      from_fit(fit_outcome(outcome, calibrated_means(ds, sim.truth)));
      break;
    case Method::repeated: {
      FitOptions fo;
      fo.pseudo_datasets = options.pseudo_datasets;
      for (int i : options.pseudo_dataset_grid) fo.pseudo_datasets = std::max(fo.pseudo_datasets, i);
      fo.rule = options.rule;
      fo.seed = options.seed;
      fo.minque = options.minque;
      const FitResult fit = fit_with_uncertainty(ds, fo);
      est.beta_x = fit.beta_x;
      est.se = std::sqrt(combined_variance_x(fit, options.pseudo_datasets, options.rule));
      for (int i : options.pseudo_dataset_grid)
        est.se_by_draws.push_back(std::sqrt(combined_variance_x(fit, i, options.rule)));
      break;
    }
  }
  est.ci_low = est.beta_x - kNormalQuantile975 * est.se;
  est.ci_high = est.beta_x + kNormalQuantile975 * est.se;
  return est;
}

MetricsRow summarize_estimates(const std::vector<MethodEstimate>& estimates, double beta_x_true,
                               int draws_index) {
  MetricsRow row;
  row.beta_x_true = beta_x_true;
  row.odds_ratio = std::exp(beta_x_true);
  row.used = static_cast<int>(estimates.size());
  if (estimates.empty()) return row;
  const double r = static_cast<double>(estimates.size());
  double sum = 0.0, sq = 0.0, covered = 0.0, se_sum = 0.0;
  for (const auto& e : estimates) sum += e.beta_x;
  row.mean_estimate = sum / r;
  for (const auto& e : estimates) {
    const double se = draws_index < 0 ? e.se : e.se_by_draws.at(draws_index);
    const double lo = e.beta_x - kNormalQuantile975 * se;
    const double hi = e.beta_x + kNormalQuantile975 * se;
    sq += (e.beta_x - row.mean_estimate) * (e.beta_x - row.mean_estimate);
    row.mse += (e.beta_x - beta_x_true) * (e.beta_x - beta_x_true);
    covered += (lo <= beta_x_true && beta_x_true <= hi) ? 1.0 : 0.0;
    se_sum += se;
  }
  row.percent_bias = 100.0 * (row.mean_estimate - beta_x_true) / beta_x_true;
  row.empirical_se = estimates.size() > 1 ? std::sqrt(sq / (r - 1.0)) : 0.0;
  row.mse /= r;
  row.coverage_95 = covered / r;
  row.mean_se = se_sum / r;
  return row;
}

const MetricsRow* ScenarioReport::find(Method method, double odds_ratio, int pseudo_datasets) const {
  for (const auto& row : rows) {
    if (row.method != method || std::abs(row.odds_ratio - odds_ratio) > 1e-9) continue;
    if (method == Method::repeated) {
      const int want = pseudo_datasets == 0 ? config.pseudo_datasets : pseudo_datasets;
      if (row.pseudo_datasets != want) continue;
    }
    return &row;
  }
  return nullptr;
}

ScenarioReport run_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  if (!cfg.seed) throw ValidationError("scenario '" + cfg.name + "' has no seed");
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t seed = *cfg.seed;

  ScenarioReport report;
  report.config = cfg;
  const std::size_t n_methods = cfg.methods.size();
  const std::size_t n_or = cfg.odds_ratios.size();
  const std::size_t n_rep = static_cast<std::size_t>(cfg.replicates);

  MethodRunOptions mo;
  mo.pseudo_datasets = cfg.pseudo_datasets;
  mo.pseudo_dataset_grid = cfg.pseudo_dataset_grid;
  mo.rule = cfg.rule;
  mo.minque = cfg.minque;

  for (std::size_t o = 0; o < n_or; ++o) {
    const double beta_x = std::log(cfg.odds_ratios[o]);
    Rng irng = child_rng(seed, {kInterceptStream, o});
    const std::vector<double> beta0 = solve_intercepts_for_prevalence(cfg, beta_x, irng);
    report.intercepts.push_back(beta0);

    std::vector<ReplicateRecord> records(n_rep * n_methods);
    parallel_for(n_rep, cfg.threads, [&](std::size_t r) {
      Rng rng = child_rng(seed, {kDatasetStream, o, r});
      const SimulatedData sim = generate_dataset(cfg, beta_x, beta0, rng);
      MethodRunOptions local = mo;
      auto pseudo = child_rng(seed, {kPseudoStream, o, r});
      local.seed = pseudo();
      for (std::size_t k = 0; k < n_methods; ++k) {
        ReplicateRecord& rec = records[r * n_methods + k];
        rec.or_index = static_cast<int>(o);
        rec.replicate = static_cast<int>(r);
        rec.method = cfg.methods[k];
        try {
          const MethodEstimate est = run_method(cfg.methods[k], sim, local);
          rec.ok = std::isfinite(est.beta_x) && std::isfinite(est.se);
          rec.beta_x = est.beta_x;
          rec.se = est.se;
          rec.se_by_draws = est.se_by_draws;
        } catch (const NumericalError&) {
          rec.ok = false;
        }
      }
    });

    for (std::size_t k = 0; k < n_methods; ++k) {
      std::vector<MethodEstimate> ok;
      int excluded = 0;
      for (std::size_t r = 0; r < n_rep; ++r) {
        const auto& rec = records[r * n_methods + k];
        if (!rec.ok) {
          ++excluded;
          continue;
        }
        MethodEstimate e;
        e.beta_x = rec.beta_x;
        e.se = rec.se;
        e.se_by_draws = rec.se_by_draws;
        ok.push_back(std::move(e));
      }
      auto add_row = [&](int draws_index, int pseudo) {
        MetricsRow row = summarize_estimates(ok, beta_x, draws_index);
        row.scenario = cfg.name;
        row.method = cfg.methods[k];
        row.odds_ratio = cfg.odds_ratios[o];
        row.pseudo_datasets = pseudo;
        row.excluded = excluded;
        report.rows.push_back(row);
      };
      if (cfg.methods[k] == Method::repeated) {
        add_row(-1, cfg.pseudo_datasets);
        for (std::size_t g = 0; g < cfg.pseudo_dataset_grid.size(); ++g)
          if (cfg.pseudo_dataset_grid[g] != cfg.pseudo_datasets)
            add_row(static_cast<int>(g), cfg.pseudo_dataset_grid[g]);
      } else {
        add_row(-1, 0);
      }
      report.exclusions += excluded;
      if (static_cast<double>(excluded) >= 0.01 * static_cast<double>(n_rep)) {
        report.ok = false;
        report.warnings.push_back(std::string("method ") + to_string(cfg.methods[k]) + " at OR " +
                                  format_or(cfg.odds_ratios[o]) + ": " + std::to_string(excluded) +
                                  " of " + std::to_string(n_rep) +
                                  " replicates excluded (limit is under 1%)");
      } else if (excluded > 0) {
        report.warnings.push_back(std::string("method ") + to_string(cfg.methods[k]) + " at OR " +
                                  format_or(cfg.odds_ratios[o]) + ": " + std::to_string(excluded) +
                                  " replicate(s) excluded after separation or numerical failure");
      }
    }
    report.replicates.insert(report.replicates.end(), records.begin(), records.end());
  }
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

ParameterRecovery recover_parameters(const ScenarioConfig& cfg) {
  cfg.validate();
  if (!cfg.seed) throw ValidationError("scenario '" + cfg.name + "' has no seed");
  const std::size_t n_rep = static_cast<std::size_t>(cfg.replicates);
  const int m = cfg.studies;
  const double beta_x = std::log(cfg.odds_ratios.front());
  // The measurement model ignores outcomes; any intercepts will do.
  const std::vector<double> beta0(m, 0.0);

  struct Sample {
    VectorXd theta, sigma2, xi_diff;
    bool floored = false;
  };
  std::vector<Sample> samples(n_rep);
  parallel_for(n_rep, cfg.threads, [&](std::size_t r) {
    Rng rng = child_rng(*cfg.seed, {kRecoveryStream, r});
    const SimulatedData sim = generate_dataset(cfg, beta_x, beta0, rng);
    const LmmFit fit = fit_lmm(assemble_design(sim.dataset), cfg.minque);
    samples[r] = {fit.gls.theta, fit.minque.sigma2.to_vector(), sim.truth.xi - fit.blup.xi,
                  !fit.minque.floored.empty()};
  });

  ParameterRecovery out;
  out.replicates = static_cast<int>(n_rep);
  out.theta_true.resize(m + cfg.p());
  for (int j = 0; j < m; ++j) out.theta_true[j] = cfg.alpha0[j];
  for (int c = 0; c < cfg.p(); ++c) out.theta_true[m + c] = cfg.tau[c];
  VarianceComponents s2;
  s2.lab = Eigen::Map<const VectorXd>(cfg.sigma2_lab.data(), m + 1);
  s2.xi = cfg.sigma2_xi;
  s2.x = cfg.sigma2_x;
  out.sigma2_true = s2.to_vector();

  auto mean_and_se = [&](auto member, Index size, VectorXd& mean, VectorXd& se) {
    mean = VectorXd::Zero(size);
    VectorXd sq = VectorXd::Zero(size);
    for (const auto& s : samples) mean += s.*member;
    mean /= static_cast<double>(n_rep);
    for (const auto& s : samples) sq += (s.*member - mean).cwiseAbs2();
    se = n_rep > 1 ? VectorXd((sq / (n_rep - 1.0) / static_cast<double>(n_rep)).cwiseSqrt())
                   : VectorXd::Zero(size);
  };
  mean_and_se(&Sample::theta, out.theta_true.size(), out.theta_mean, out.theta_mc_se);
  mean_and_se(&Sample::sigma2, out.sigma2_true.size(), out.sigma2_mean, out.sigma2_mc_se);
  mean_and_se(&Sample::xi_diff, m + 1, out.xi_diff_mean, out.xi_diff_mc_se);
  out.theta_percent_bias =
      100.0 * (out.theta_mean - out.theta_true).cwiseQuotient(out.theta_true);
  out.sigma2_percent_bias =
      100.0 * (out.sigma2_mean - out.sigma2_true).cwiseQuotient(out.sigma2_true);
  for (const auto& s : samples) out.floored_fits += s.floored ? 1 : 0;
  return out;
}

}  // namespace poolcal
