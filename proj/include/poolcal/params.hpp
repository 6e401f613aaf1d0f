#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>

namespace poolcal {

// Variance components of the measurement model, one residual variance per
// laboratory (d = 0 is the central lab), the lab random-effect variance and
// the true-biomarker variance.
struct VarianceComponents {
  Eigen::VectorXd lab;
  double xi = 0.0;
  double x = 0.0;

  int num_labs() const noexcept { return static_cast<int>(lab.size()); }
  int size() const noexcept { return num_labs() + 2; }

  // Packed as [sigma2_0, ..., sigma2_L, sigma2_xi, sigma2_x].
  Eigen::VectorXd to_vector() const;
  static VarianceComponents from_vector(const Eigen::VectorXd& packed);
  // Name of packed component `k`, e.g. "sigma2_lab[0]", "sigma2_xi".
  static std::string component_name(int k, int num_labs);
};

// Fixed effects theta = [alpha_01..alpha_0m, tau], lab effects xi_0..xi_L and
// the variance components.
struct ParameterSet {
  Eigen::VectorXd theta;
  Eigen::VectorXd xi;
  VarianceComponents sigma2;

  double alpha0(int study) const { return theta[study]; }
  // alpha_0j + tau' w: the covariate-predicted mean of the true biomarker.
  double predicted_mean(int study, int num_studies, std::span<const double> w) const {
    double mu = theta[study];
    for (std::size_t k = 0; k < w.size(); ++k) mu += theta[num_studies + static_cast<int>(k)] * w[k];
    return mu;
  }
};

}  // namespace poolcal
