#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "poolcal/calibration.hpp"
#include "poolcal/data.hpp"
#include "poolcal/logistic.hpp"
#include "poolcal/mixed_model.hpp"
#include "poolcal/params.hpp"
#include "poolcal/rng.hpp"

namespace poolcal {

// Outcome-model inputs pulled out of a dataset once and reused across fits.
struct OutcomeData {
  Eigen::MatrixXd Z;
  std::vector<int> Y;
  std::vector<int> study;
  int num_studies = 0;
};

OutcomeData outcome_data(const PooledDataset& ds);

// Logistic fit of the outcome on a given exposure column.
LogisticFit fit_outcome(const OutcomeData& outcome, const Eigen::VectorXd& exposure,
                        const LogisticOptions& options = {});

struct PseudoDraw {
  Eigen::VectorXd theta;
  Eigen::VectorXd xi;
  int index = 0;  // 1-based draw index
};

// Draws theta ~ N(theta_hat, var_theta) and, independently,
// xi ~ N(xi_hat, var_xi) through symmetric square roots of the covariances.
// Negative eigenvalues are clipped to zero and reported in warnings().
class PseudoSampler {
 public:
  PseudoSampler(Eigen::VectorXd theta_hat, const Eigen::MatrixXd& var_theta,
                Eigen::VectorXd xi_hat, const Eigen::MatrixXd& var_xi);

  PseudoDraw draw(Rng& rng, int index) const;
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

 private:
  Eigen::VectorXd theta_hat_, xi_hat_;
  Eigen::MatrixXd theta_root_, xi_root_;
  std::vector<std::string> warnings_;
};

PseudoDraw draw_pseudo_parameters(const Eigen::VectorXd& theta_hat, const Eigen::MatrixXd& var_theta,
                                  const Eigen::VectorXd& xi_hat, const Eigen::MatrixXd& var_xi,
                                  Rng& rng, int index = 1);

// Re-calibrates with the drawn first moments and the frozen variance
// components of params_hat, then refits the outcome model.
LogisticFit pseudo_fit(const PooledDataset& ds, const OutcomeData& outcome,
                       const ParameterSet& params_hat, const PseudoDraw& draw,
                       const LogisticOptions& options = {});

enum class VarianceRule { standard, inflated };

const char* to_string(VarianceRule rule) noexcept;
VarianceRule parse_variance_rule(const std::string& name);

// total = within + f * between with f = 1 (standard) or (I + 1) / I (inflated).
struct CombinedVariance {
  Eigen::MatrixXd within;
  Eigen::MatrixXd between;
  Eigen::MatrixXd total;
  Eigen::VectorXd mean_beta;
  VarianceRule rule = VarianceRule::standard;
  int draws = 0;

  double between_factor() const noexcept {
    return rule == VarianceRule::inflated ? (draws + 1.0) / draws : 1.0;
  }
};

CombinedVariance combine_variance(const std::vector<Eigen::VectorXd>& beta_draws,
                                  const std::vector<Eigen::MatrixXd>& naive_covs,
                                  VarianceRule rule = VarianceRule::standard);

struct FitOptions {
  int pseudo_datasets = 20;
  VarianceRule rule = VarianceRule::standard;
  std::uint64_t seed = 0;
  MinqueOptions minque;
  IccConvention icc = IccConvention::paper;
  LogisticOptions logistic;
  unsigned threads = 1;
};

struct FitResult {
  LmmFit lmm;
  LogisticFit point;  // outcome fit on the calibrated exposure
  CombinedVariance variance;
  std::vector<Eigen::VectorXd> pseudo_betas;
  std::vector<Eigen::MatrixXd> pseudo_covs;
  std::vector<std::string> coefficient_names;
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  double beta_x = 0.0;
  double se_x = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  Eigen::VectorXd icc;
  IccConvention icc_convention = IccConvention::paper;
  int redraws = 0;  // pseudo draws replaced after a separation failure
  FitOptions options;
  std::vector<std::string> warnings;

  double odds_ratio() const;
  double or_ci_low() const;
  double or_ci_high() const;
};

inline constexpr double kNormalQuantile975 = 1.96;

// Full pipeline: MINQUE, GLS, EBLUP, calibration, outcome fit, I pseudo
// fits and the combined variance.
FitResult fit_with_uncertainty(const PooledDataset& ds, const FitOptions& options = {});

// Variance of beta_x using only the first `draws` pseudo fits of `result`.
double combined_variance_x(const FitResult& result, int draws, VarianceRule rule);

}  // namespace poolcal
