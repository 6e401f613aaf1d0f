#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace poolcal {

struct LogisticOptions {
  double score_tolerance = 1e-8;
  double deviance_tolerance = 1e-10;  // relative change
  int max_iterations = 50;
  double divergence_bound = 30.0;     // |beta| beyond this is treated as separation
  // Largest conditional SD of the exposure; enables the approximation guard.
  std::optional<double> max_conditional_sd;
};

// Logistic fit with one intercept per study:
//   logit P(Y = 1) = beta_0j + beta_x x + beta_z' z.
// beta = [beta_01..beta_0m, beta_x, beta_z].
struct LogisticFit {
  Eigen::VectorXd beta;
  Eigen::MatrixXd naive_cov;  // inverse observed information at the optimum
  bool converged = false;
  int iterations = 0;
  double max_abs_score = 0.0;
  double deviance = 0.0;
  std::vector<double> deviance_trace;
  std::vector<std::string> warnings;
  int num_studies = 0;

  double beta_x() const { return beta[num_studies]; }
  double se_x() const;
};

LogisticFit fit_logistic(const Eigen::Ref<const Eigen::VectorXd>& x,
                         const Eigen::Ref<const Eigen::MatrixXd>& Z, std::span<const int> Y,
                         std::span<const int> study, int num_studies,
                         const LogisticOptions& options = {});

double expit(double eta) noexcept;

}  // namespace poolcal
