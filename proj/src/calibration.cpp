#include "poolcal/calibration.hpp"

#include <cmath>
#include <string>

#include "poolcal/errors.hpp"

namespace poolcal {

const char* to_string(SubjectKind kind) noexcept {
  return kind == SubjectKind::calibration ? "calibration" : "noncalibration";
}

double calibration_weight(double sigma2_x, double sigma2_j, double sigma2_0) {
  if (!(sigma2_x > 0.0) || !(sigma2_j > 0.0) || !(sigma2_0 > 0.0))
    throw ContractError("calibration_weight needs positive variances, got sigma2_x=" +
                        std::to_string(sigma2_x) + " sigma2_j=" + std::to_string(sigma2_j) +
                        " sigma2_0=" + std::to_string(sigma2_0));
  return sigma2_x / (sigma2_x + sigma2_j * sigma2_0 / (sigma2_j + sigma2_0));
}

CalibratedValue calibrate_subject(const SubjectRecord& rec, int local_lab,
                                  const ParameterSet& params) {
  const auto& s2 = params.sigma2;
  if (local_lab < 1 || local_lab >= s2.num_labs() || params.xi.size() != s2.num_labs())
    throw ContractError("subject '" + rec.id + "': lab " + std::to_string(local_lab) +
                        " not covered by the parameter set");
  const int m = static_cast<int>(params.theta.size()) - static_cast<int>(rec.w.size());
  if (rec.study < 0 || rec.study >= m)
    throw ContractError("subject '" + rec.id + "': study outside the fixed-effect vector");
  const double sx = s2.x;
  const double sj = s2.lab[local_lab];
  if (sx < 0.0 || sj < 0.0) throw ContractError("negative variance component in calibration");

  const double mu = params.predicted_mean(rec.study, m, rec.w);
  const double local = rec.local - params.xi[local_lab];
  CalibratedValue out;

  if (rec.is_calibration()) {
    const double s0 = s2.lab[0];
    if (s0 < 0.0) throw ContractError("negative central-lab variance in calibration");
    const double sum = s0 + sj;
    // Both labs noiseless: either measurement pins X down, weight them equally.
    const double on_local = sum > 0.0 ? s0 / sum : 0.5;
    const double on_central = sum > 0.0 ? sj / sum : 0.5;
    const double harmonic = sum > 0.0 ? sj * s0 / sum : 0.0;
    if (!(sx + harmonic > 0.0))
      throw ContractError("subject '" + rec.id + "': conditional distribution undefined");
    const double w = sx / (sx + harmonic);
    const double central = *rec.central - params.xi[0];
    out.x_tilde = w * (on_local * local + on_central * central) + (1.0 - w) * mu;
    out.conditional_variance = sx * (1.0 - w);
    out.kind = SubjectKind::calibration;
  } else {
    const double denom = sx + sj;
    if (!(denom > 0.0))
      throw ContractError("subject '" + rec.id + "': conditional distribution undefined");
    out.x_tilde = sx / denom * local + sj / denom * mu;
    out.conditional_variance = sx * sj / denom;
    out.kind = SubjectKind::noncalibration;
  }
  return out;
}

std::vector<CalibratedValue> calibrate_dataset(const PooledDataset& ds, const ParameterSet& params) {
  std::vector<CalibratedValue> out;
  out.reserve(ds.size());
  for (const auto& r : ds.subjects())
    out.push_back(calibrate_subject(r, ds.lab_of_study(r.study), params));
  return out;
}

Eigen::VectorXd calibrated_means(const PooledDataset& ds, const ParameterSet& params) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(ds.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds.subjects()[i];
    x[static_cast<Eigen::Index>(i)] = calibrate_subject(r, ds.lab_of_study(r.study), params).x_tilde;
  }
  return x;
}

Eigen::VectorXd compute_icc(const VarianceComponents& s2, IccConvention convention) {
  Eigen::VectorXd icc(s2.num_labs());
  for (int d = 0; d < s2.num_labs(); ++d) {
    const double numerator = convention == IccConvention::paper ? s2.lab[d] : s2.xi;
    icc[d] = numerator / (s2.xi + s2.lab[d]);
  }
  return icc;
}

}  // namespace poolcal
