#include "poolcal/uncertainty.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

#include "poolcal/errors.hpp"
#include "poolcal/parallel.hpp"

namespace poolcal {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd symmetric_root(const MatrixXd& cov, const char* what, std::vector<std::string>& warnings) {
  if (cov.rows() != cov.cols()) throw ContractError(std::string(what) + " covariance is not square");
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw ContractError(std::string(what) + " covariance is not symmetric");
  if (!cov.allFinite()) throw NumericalError(std::string(what) + " covariance has non-finite entries");
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success)
    throw NumericalError(std::string(what) + " covariance factorization failed");
  VectorXd ev = eig.eigenvalues();
  if (ev.size() > 0 && ev.minCoeff() < -1e-10 * std::max(1e-300, ev.cwiseAbs().maxCoeff())) {
    std::ostringstream msg;
    msg << what << " covariance not positive semi-definite (min eigenvalue " << ev.minCoeff()
        << "); clipped to zero";
    warnings.push_back(msg.str());
  }
  ev = ev.cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

OutcomeData outcome_data(const PooledDataset& ds) {
  OutcomeData o;
  o.num_studies = ds.num_studies();
  o.Z.resize(static_cast<Index>(ds.size()), ds.q());
  o.Y.reserve(ds.size());
  o.study.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds.subjects()[i];
    for (int k = 0; k < ds.q(); ++k) o.Z(static_cast<Index>(i), k) = r.z[k];
    o.Y.push_back(r.outcome);
    o.study.push_back(r.study);
  }
  return o;
}

LogisticFit fit_outcome(const OutcomeData& outcome, const Eigen::VectorXd& exposure,
                        const LogisticOptions& options) {
  return fit_logistic(exposure, outcome.Z, outcome.Y, outcome.study, outcome.num_studies, options);
}

PseudoSampler::PseudoSampler(Eigen::VectorXd theta_hat, const Eigen::MatrixXd& var_theta,
                             Eigen::VectorXd xi_hat, const Eigen::MatrixXd& var_xi)
    : theta_hat_(std::move(theta_hat)), xi_hat_(std::move(xi_hat)) {
  if (var_theta.rows() != theta_hat_.size() || var_xi.rows() != xi_hat_.size())
    throw ContractError("pseudo draw covariance dimensions do not match the estimates");
  theta_root_ = symmetric_root(var_theta, "fixed-effect", warnings_);
  xi_root_ = symmetric_root(var_xi, "random-effect", warnings_);
}

PseudoDraw PseudoSampler::draw(Rng& rng, int index) const {
  NormalSampler normal;
  VectorXd zt(theta_hat_.size()), zx(xi_hat_.size());
  for (Index k = 0; k < zt.size(); ++k) zt[k] = normal(rng);
  for (Index k = 0; k < zx.size(); ++k) zx[k] = normal(rng);
  return {theta_hat_ + theta_root_ * zt, xi_hat_ + xi_root_ * zx, index};
}

PseudoDraw draw_pseudo_parameters(const Eigen::VectorXd& theta_hat, const Eigen::MatrixXd& var_theta,
                                  const Eigen::VectorXd& xi_hat, const Eigen::MatrixXd& var_xi,
                                  Rng& rng, int index) {
  return PseudoSampler(theta_hat, var_theta, xi_hat, var_xi).draw(rng, index);
}

LogisticFit pseudo_fit(const PooledDataset& ds, const OutcomeData& outcome,
                       const ParameterSet& params_hat, const PseudoDraw& draw,
                       const LogisticOptions& options) {
  if (draw.theta.size() != params_hat.theta.size() || draw.xi.size() != params_hat.xi.size())
    throw ContractError("pseudo draw dimensions do not match the parameter set");
  const ParameterSet drawn{draw.theta, draw.xi, params_hat.sigma2};
  return fit_outcome(outcome, calibrated_means(ds, drawn), options);
}

const char* to_string(VarianceRule rule) noexcept {
  return rule == VarianceRule::inflated ? "inflated" : "standard";
}

VarianceRule parse_variance_rule(const std::string& name) {
  if (name == "standard") return VarianceRule::standard;
  if (name == "inflated") return VarianceRule::inflated;
  throw ValidationError("unknown variance rule '" + name + "' (expected standard|inflated)");
}

CombinedVariance combine_variance(const std::vector<Eigen::VectorXd>& beta_draws,
                                  const std::vector<Eigen::MatrixXd>& naive_covs,
                                  VarianceRule rule) {
  const auto draws = beta_draws.size();
  if (draws < 2) throw ContractError("combine_variance needs at least two pseudo datasets");
  if (naive_covs.size() != draws)
    throw ContractError("combine_variance: one naive covariance per draw is required");
  const Index k = beta_draws.front().size();

  CombinedVariance c;
  c.rule = rule;
  c.draws = static_cast<int>(draws);
  c.mean_beta = VectorXd::Zero(k);
  c.within = MatrixXd::Zero(k, k);
  for (std::size_t i = 0; i < draws; ++i) {
    if (beta_draws[i].size() != k || naive_covs[i].rows() != k || naive_covs[i].cols() != k)
      throw ContractError("combine_variance: inconsistent dimensions across draws");
    c.mean_beta += beta_draws[i];
    c.within += naive_covs[i];
  }
  c.mean_beta /= static_cast<double>(draws);
  c.within /= static_cast<double>(draws);
  c.between = MatrixXd::Zero(k, k);
  for (const auto& b : beta_draws) {
    const VectorXd d = b - c.mean_beta;
    c.between.noalias() += d * d.transpose();
  }
  c.between /= static_cast<double>(draws - 1);
  c.total = c.within + c.between_factor() * c.between;
  return c;
}

double FitResult::odds_ratio() const { return std::exp(beta_x); }
double FitResult::or_ci_low() const { return std::exp(ci_low); }
double FitResult::or_ci_high() const { return std::exp(ci_high); }

FitResult fit_with_uncertainty(const PooledDataset& ds, const FitOptions& options) {
  if (options.pseudo_datasets < 2)
    throw ContractError("at least two pseudo datasets are required, got " +
                        std::to_string(options.pseudo_datasets));
  ds.require_fit_ready();

  FitResult res;
  res.options = options;
  const DesignSystem design = assemble_design(ds);
  res.lmm = fit_lmm(design, options.minque);
  res.warnings = res.lmm.warnings;
  const ParameterSet params = res.lmm.params();

  const auto calibrated = calibrate_dataset(ds, params);
  VectorXd exposure(static_cast<Index>(calibrated.size()));
  double max_var = 0.0;
  for (std::size_t i = 0; i < calibrated.size(); ++i) {
    exposure[static_cast<Index>(i)] = calibrated[i].x_tilde;
    max_var = std::max(max_var, calibrated[i].conditional_variance);
  }
  const OutcomeData outcome = outcome_data(ds);
  LogisticOptions point_options = options.logistic;
  point_options.max_conditional_sd = std::sqrt(max_var);
  res.point = fit_outcome(outcome, exposure, point_options);
  for (const auto& w : res.point.warnings) res.warnings.push_back("outcome: " + w);

  const PseudoSampler sampler(res.lmm.gls.theta, res.lmm.gls.cov, res.lmm.blup.xi,
                              res.lmm.blup.cov);
  for (const auto& w : sampler.warnings()) res.warnings.push_back("uncertainty: " + w);

  const int draws = options.pseudo_datasets;
  LogisticOptions pseudo_options = options.logistic;
  pseudo_options.max_conditional_sd.reset();
  std::vector<std::optional<LogisticFit>> fits(draws);
  std::vector<int> redrawn(draws, 0);
  parallel_for(static_cast<std::size_t>(draws), options.threads, [&](std::size_t i) {
    Rng rng = child_rng(options.seed, {0x9e11, i});
    const int index = static_cast<int>(i) + 1;
    try {
      fits[i] = pseudo_fit(ds, outcome, params, sampler.draw(rng, index), pseudo_options);
    } catch (const SeparationError&) {
      redrawn[i] = 1;
      try {
        fits[i] = pseudo_fit(ds, outcome, params, sampler.draw(rng, index), pseudo_options);
      } catch (const SeparationError& again) {
        throw NumericalError("pseudo dataset " + std::to_string(index) +
                             " failed twice with separation: " + again.what());
      }
    }
  });

  for (int i = 0; i < draws; ++i) {
    res.pseudo_betas.push_back(fits[i]->beta);
    res.pseudo_covs.push_back(fits[i]->naive_cov);
    res.redraws += redrawn[i];
    if (!fits[i]->converged)
      res.warnings.push_back("uncertainty: pseudo fit " + std::to_string(i + 1) + " not converged");
  }
  if (res.redraws > 0)
    res.warnings.push_back("uncertainty: " + std::to_string(res.redraws) +
                           " pseudo draw(s) redrawn after separation");

  res.variance = combine_variance(res.pseudo_betas, res.pseudo_covs, options.rule);
  res.beta = res.point.beta;
  res.se = res.variance.total.diagonal().cwiseMax(0.0).cwiseSqrt();
  res.beta_x = res.point.beta_x();
  res.se_x = res.se[ds.num_studies()];
  res.ci_low = res.beta_x - kNormalQuantile975 * res.se_x;
  res.ci_high = res.beta_x + kNormalQuantile975 * res.se_x;
  res.icc_convention = options.icc;
  res.icc = compute_icc(params.sigma2, options.icc);

  for (const auto& s : ds.studies()) res.coefficient_names.push_back("beta0[" + s.label + "]");
  res.coefficient_names.push_back("beta_x");
  for (const auto& z : ds.z_names()) res.coefficient_names.push_back("beta_z[" + z + "]");
  return res;
}

double combined_variance_x(const FitResult& result, int draws, VarianceRule rule) {
  if (draws < 2 || draws > static_cast<int>(result.pseudo_betas.size()))
    throw ContractError("combined_variance_x: draws must be in [2, " +
                        std::to_string(result.pseudo_betas.size()) + "]");
  const int x = result.point.num_studies;
  double within = 0.0, mean = 0.0;
  for (int i = 0; i < draws; ++i) {
    within += result.pseudo_covs[i](x, x);
    mean += result.pseudo_betas[i][x];
  }
  within /= draws;
  mean /= draws;
  double between = 0.0;
  for (int i = 0; i < draws; ++i) {
    const double d = result.pseudo_betas[i][x] - mean;
    between += d * d;
  }
  between /= draws - 1;
  const double factor = rule == VarianceRule::inflated ? (draws + 1.0) / draws : 1.0;
  return within + factor * between;
}

}  // namespace poolcal
