#pragma once

#include <Eigen/Dense>
#include <vector>

#include "poolcal/data.hpp"
#include "poolcal/params.hpp"

namespace poolcal {

enum class SubjectKind { calibration, noncalibration };

const char* to_string(SubjectKind kind) noexcept;

// Conditional mean and variance of the true biomarker given the subject's
// measurements and covariates.
struct CalibratedValue {
  double x_tilde = 0.0;
  double conditional_variance = 0.0;
  SubjectKind kind = SubjectKind::noncalibration;
};

// w_j = s2x / (s2x + s2j s20 / (s2j + s20)). Requires all arguments > 0.
double calibration_weight(double sigma2_x, double sigma2_j, double sigma2_0);

// Zero variances are accepted as limits (a noiseless lab, no true-value
// spread) as long as the conditional distribution stays defined.
CalibratedValue calibrate_subject(const SubjectRecord& rec, int local_lab,
                                  const ParameterSet& params);

std::vector<CalibratedValue> calibrate_dataset(const PooledDataset& ds, const ParameterSet& params);

// Only the conditional means, in subject order.
Eigen::VectorXd calibrated_means(const PooledDataset& ds, const ParameterSet& params);

// paper:        sigma2_d / (sigma2_xi + sigma2_d)
// conventional: sigma2_xi / (sigma2_xi + sigma2_d)
enum class IccConvention { paper, conventional };

Eigen::VectorXd compute_icc(const VarianceComponents& s2, IccConvention convention = IccConvention::paper);

}  // namespace poolcal
