#include "poolcal/logistic.hpp"

#include <cmath>
#include <sstream>

#include "poolcal/errors.hpp"

namespace poolcal {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// log(1 + exp(eta)) without overflow.
double softplus(double eta) noexcept {
  return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

double deviance(const VectorXd& eta, std::span<const int> y) {
  double dev = 0.0;
  for (Index i = 0; i < eta.size(); ++i) dev += softplus(eta[i]) - y[i] * eta[i];
  return 2.0 * dev;
}

}  // namespace

double expit(double eta) noexcept {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double LogisticFit::se_x() const {
  return std::sqrt(naive_cov(num_studies, num_studies));
}

LogisticFit fit_logistic(const Eigen::Ref<const Eigen::VectorXd>& x,
                         const Eigen::Ref<const Eigen::MatrixXd>& Z, std::span<const int> Y,
                         std::span<const int> study, int num_studies,
                         const LogisticOptions& options) {
  const Index n = x.size();
  if (Z.rows() != n || static_cast<Index>(Y.size()) != n || static_cast<Index>(study.size()) != n)
    throw ContractError("fit_logistic: x, Z, Y and study must have equal length");
  if (num_studies < 1) throw ContractError("fit_logistic: need at least one study");

  std::vector<double> n_study(num_studies, 0.0), cases(num_studies, 0.0);
  for (Index i = 0; i < n; ++i) {
    if (study[i] < 0 || study[i] >= num_studies)
      throw ContractError("fit_logistic: study index out of range");
    if (Y[i] != 0 && Y[i] != 1) throw ContractError("fit_logistic: outcome must be 0 or 1");
    n_study[study[i]] += 1.0;
    cases[study[i]] += Y[i];
  }
  for (int j = 0; j < num_studies; ++j) {
    if (n_study[j] == 0.0)
      throw ContractError("fit_logistic: study " + std::to_string(j) + " has no observations");
    if (cases[j] == 0.0 || cases[j] == n_study[j])
      throw SeparationError("study " + std::to_string(j) + " has outcome " +
                            (cases[j] == 0.0 ? "0" : "1") +
                            " for every subject; its intercept diverges");
  }

  const Index k = num_studies + 1 + Z.cols();
  MatrixXd X = MatrixXd::Zero(n, k);
  for (Index i = 0; i < n; ++i) X(i, study[i]) = 1.0;
  X.col(num_studies) = x;
  X.rightCols(Z.cols()) = Z;
  VectorXd y(n);
  for (Index i = 0; i < n; ++i) y[i] = Y[i];

  LogisticFit fit;
  fit.num_studies = num_studies;
  fit.beta = VectorXd::Zero(k);
  for (int j = 0; j < num_studies; ++j) {
    const double prev = cases[j] / n_study[j];
    fit.beta[j] = std::log(prev / (1.0 - prev));
  }

  VectorXd eta = X * fit.beta;
  double dev = deviance(eta, Y);
  fit.deviance_trace.push_back(dev);
  Eigen::LLT<MatrixXd> info;
  VectorXd score(k);

  auto evaluate = [&] {
    VectorXd p(n), w(n);
    for (Index i = 0; i < n; ++i) {
      p[i] = expit(eta[i]);
      w[i] = p[i] * (1.0 - p[i]);
    }
    score = X.transpose() * (y - p);
    fit.max_abs_score = score.cwiseAbs().maxCoeff();
    const MatrixXd xtwx = X.transpose() * w.asDiagonal() * X;
    info.compute(xtwx);
    if (info.info() != Eigen::Success)
      throw SeparationError("observed information is singular (weights collapsed)");
  };

  evaluate();
  for (fit.iterations = 0; fit.iterations < options.max_iterations;) {
    if (fit.max_abs_score < options.score_tolerance) {
      fit.converged = true;
      break;
    }
    ++fit.iterations;
    const VectorXd step = info.solve(score);
    double t = 1.0;
    VectorXd beta_new = fit.beta + step;
    VectorXd eta_new = X * beta_new;
    double dev_new = deviance(eta_new, Y);
    for (int halving = 0; halving < 40 && !(dev_new <= dev); ++halving) {
      t *= 0.5;
      beta_new = fit.beta + t * step;
      eta_new = X * beta_new;
      dev_new = deviance(eta_new, Y);
    }
    if (!(dev_new <= dev)) {
      // No descent along the Newton direction: we are at the optimum to
      // working precision.
      fit.converged = fit.max_abs_score < std::sqrt(options.score_tolerance);
      break;
    }
    if (beta_new.cwiseAbs().maxCoeff() > options.divergence_bound)
      throw SeparationError("coefficient magnitude exceeded " +
                            std::to_string(options.divergence_bound) +
                            "; the data are (quasi-)separated");
    const double rel_change = std::abs(dev - dev_new) / (std::abs(dev_new) + 0.1);
    fit.beta = beta_new;
    eta = eta_new;
    dev = dev_new;
    fit.deviance_trace.push_back(dev);
    evaluate();
    if (rel_change < options.deviance_tolerance) {
      fit.converged = true;
      break;
    }
  }
  fit.deviance = dev;
  fit.naive_cov = info.solve(MatrixXd::Identity(k, k));
  fit.naive_cov = 0.5 * (fit.naive_cov + fit.naive_cov.transpose()).eval();

  if (!fit.converged)
    fit.warnings.push_back("logistic fit did not converge in " +
                           std::to_string(options.max_iterations) +
                           " iterations (max |score| = " + std::to_string(fit.max_abs_score) + ")");
  if (options.max_conditional_sd &&
      std::abs(fit.beta_x()) * *options.max_conditional_sd > 1.0) {
    std::ostringstream msg;
    msg << "|beta_x| * max conditional SD = " << std::abs(fit.beta_x()) * *options.max_conditional_sd
        << " exceeds 1; the plug-in approximation may be biased";
    fit.warnings.push_back(msg.str());
  }
  return fit;
}

}  // namespace poolcal
