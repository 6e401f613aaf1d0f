#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "poolcal/data.hpp"
#include "poolcal/mixed_model.hpp"
#include "poolcal/params.hpp"
#include "poolcal/rng.hpp"
#include "poolcal/uncertainty.hpp"

namespace poolcal {

enum class ErrorFamily { normal, uniform, skew_normal };
enum class Method { naive, true_values, known_params, repeated };

const char* to_string(ErrorFamily family) noexcept;
const char* to_string(Method method) noexcept;
ErrorFamily parse_error_family(const std::string& name);
Method parse_method(const std::string& name);

// One simulation scenario. Defaults are the base setting: five studies of 500
// subjects with 50 re-assayed centrally, W = Z ~ N(0, 1).
struct ScenarioConfig {
  std::string name = "base";
  int studies = 5;
  int n_per_study = 500;
  int n_calibration_per_study = 50;
  std::vector<double> alpha0{-0.1, -0.2, -0.3, -0.4, -0.5};
  std::vector<double> tau{1.0};
  double sigma2_x = 5.0;
  std::vector<double> sigma2_lab{2.0, 3.0, 4.0, 5.0, 6.0, 7.0};  // d = 0..m
  double sigma2_xi = 3.0;
  std::vector<double> odds_ratios{0.5, 0.67, 0.8, 1.25, 1.5, 2.0};
  std::vector<double> beta_z{0.22314355131420976};  // log(1.25)
  double target_prevalence = 0.10;
  ErrorFamily error_family = ErrorFamily::normal;
  bool uniform_printed_bounds = false;  // Uniform(-sqrt(s2x), sqrt(s2x)) instead of matching variance
  double xi_mean = 0.0;
  int replicates = 1000;
  int pseudo_datasets = 20;
  std::vector<int> pseudo_dataset_grid;  // extra I values reported for the repeated method
  std::vector<Method> methods{Method::naive, Method::true_values, Method::known_params,
                              Method::repeated};
  VarianceRule rule = VarianceRule::standard;
  MinqueOptions minque;
  int prevalence_draws = 200000;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;

  // Throws ValidationError on inconsistent settings.
  void validate() const;
  int p() const noexcept { return static_cast<int>(tau.size()); }
};

// Named scenario families. `prevalence` applies to table1 only.
std::vector<ScenarioConfig> preset_scenarios(const std::string& preset, double prevalence = 0.10);
const std::vector<std::string>& preset_names();

// Per-study intercepts whose expected prevalence hits the target, found by
// bisection on a Monte Carlo average over `prevalence_draws` (X, Z) draws.
std::vector<double> solve_intercepts_for_prevalence(const ScenarioConfig& cfg, double beta_x, Rng& rng);

struct SimulatedData {
  PooledDataset dataset;
  ParameterSet truth;  // theta = (alpha0, tau), drawn xi, configured variances
};

SimulatedData generate_dataset(const ScenarioConfig& cfg, double beta_x,
                               const std::vector<double>& beta0, Rng& rng);

// Draws one error term with mean 0 and variance sigma2 from `family`.
double draw_error(ErrorFamily family, double sigma2, bool uniform_printed_bounds, NormalSampler& normal,
                  Rng& rng);

struct MethodEstimate {
  double beta_x = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::vector<double> se_by_draws;  // repeated method: SE for each pseudo_dataset_grid entry
};

struct MethodRunOptions {
  int pseudo_datasets = 20;
  std::vector<int> pseudo_dataset_grid;
  VarianceRule rule = VarianceRule::standard;
  MinqueOptions minque;
  std::uint64_t seed = 0;
};

MethodEstimate run_method(Method method, const SimulatedData& sim, const MethodRunOptions& options);

struct MetricsRow {
  std::string scenario;
  Method method = Method::naive;
  double odds_ratio = 1.0;
  double beta_x_true = 0.0;
  int pseudo_datasets = 0;  // 0 unless the row belongs to the repeated method
  double mean_estimate = 0.0;
  double percent_bias = 0.0;
  double empirical_se = 0.0;
  double mse = 0.0;
  double coverage_95 = 0.0;
  double mean_se = 0.0;
  int used = 0;
  int excluded = 0;
};

struct ReplicateRecord {
  int or_index = 0;
  int replicate = 0;
  Method method = Method::naive;
  bool ok = false;
  double beta_x = 0.0;
  double se = 0.0;
  std::vector<double> se_by_draws;
};

struct ScenarioReport {
  ScenarioConfig config;
  std::vector<MetricsRow> rows;
  std::vector<ReplicateRecord> replicates;
  std::vector<std::vector<double>> intercepts;  // per odds ratio
  int exclusions = 0;
  bool ok = true;
  std::vector<std::string> warnings;
  double runtime_seconds = 0.0;

  // Row lookup; pseudo_datasets = 0 selects the primary repeated row.
  const MetricsRow* find(Method method, double odds_ratio, int pseudo_datasets = 0) const;
};

// Aggregates estimates of one method at one true beta_x.
MetricsRow summarize_estimates(const std::vector<MethodEstimate>& estimates, double beta_x_true,
                               int draws_index = -1);

ScenarioReport run_scenario(const ScenarioConfig& cfg);

struct ParameterRecovery {
  int replicates = 0;
  Eigen::VectorXd theta_true;
  Eigen::VectorXd theta_mean;
  Eigen::VectorXd theta_percent_bias;
  Eigen::VectorXd theta_mc_se;      // Monte Carlo SE of the mean estimate
  Eigen::VectorXd sigma2_true;      // packed order
  Eigen::VectorXd sigma2_mean;
  Eigen::VectorXd sigma2_percent_bias;
  Eigen::VectorXd sigma2_mc_se;
  Eigen::VectorXd xi_diff_mean;     // mean of xi - xi_hat per lab
  Eigen::VectorXd xi_diff_mc_se;
  int floored_fits = 0;
};

// Fits only the measurement model on `replicates` datasets.
ParameterRecovery recover_parameters(const ScenarioConfig& cfg);

}  // namespace poolcal
