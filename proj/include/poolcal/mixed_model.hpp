#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "poolcal/data.hpp"
#include "poolcal/params.hpp"

namespace poolcal {

// Measurement-level linear mixed model H = C theta + U xi + delta.
//
// Every subject contributes a row for its local measurement; calibration
// subjects contribute a central-lab row first. C holds study-intercept
// indicators followed by the W covariates; U is the lab indicator matrix.
struct DesignSystem {
  Eigen::VectorXd H;
  Eigen::MatrixXd C;
  std::vector<int> lab_of_row;
  std::vector<int> study_of_row;
  std::vector<int> subject_of_row;
  std::vector<int> partner_of_row;           // other row of the same subject, or -1
  std::vector<std::array<int, 2>> pairs;     // {central row, local row}
  std::vector<std::string> column_names;     // names of the columns of C
  int num_labs = 0;                          // including the central lab
  int num_studies = 0;
  int num_subjects = 0;

  Eigen::Index rows() const noexcept { return H.size(); }
  Eigen::MatrixXd U() const;
  Eigen::SparseMatrix<double> U_sparse() const;
  // N x num_subjects indicator; S S' links all rows of a subject.
  Eigen::SparseMatrix<double> subject_indicator() const;
};

DesignSystem assemble_design(const PooledDataset& ds);

// Dense V = U G U' + R. Meant for tests and small instances.
Eigen::MatrixXd dense_covariance(const DesignSystem& design, const VarianceComponents& s2);

// V^{-1} for block-diagonal R (1x1 solo rows, 2x2 calibration pairs) plus the
// lab random effect, via
//   V^{-1} = R^{-1} - R^{-1} U Lambda U' R^{-1},
//   Lambda = s (I + s U' R^{-1} U)^{-1},  s = sigma2_xi,
// which equals the usual (G^{-1} + U'R^{-1}U)^{-1} core and stays defined at
// sigma2_xi = 0. Holds a reference to the design.
class VInverse {
 public:
  VInverse(const DesignSystem& design, const VarianceComponents& s2);

  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;
  Eigen::MatrixXd apply_r_inverse(const Eigen::MatrixXd& rhs) const;
  Eigen::SparseMatrix<double> r_inverse() const;
  // R^{-1} U and Lambda, so that V^{-1} = R^{-1} - RinvU Lambda RinvU'.
  const Eigen::MatrixXd& r_inverse_u() const noexcept { return rinv_u_; }
  const Eigen::MatrixXd& core() const noexcept { return lambda_; }

 private:
  const DesignSystem& design_;
  std::vector<double> diag_;  // R^{-1}(i, i)
  std::vector<double> off_;   // R^{-1}(i, partner(i))
  Eigen::MatrixXd rinv_u_;
  Eigen::MatrixXd lambda_;
};

// V^{-1} rhs.
Eigen::MatrixXd solve_with_v(const DesignSystem& design, const VarianceComponents& s2,
                             const Eigen::MatrixXd& rhs);

struct MinqueOptions {
  bool iterate = true;      // re-weight with the previous estimate as prior
  int max_iterations = 5;   // refinements after the identity-prior pass
  double tolerance = 1e-6;  // max relative change that stops iteration
};

// S sigma2 = q with S_ab = tr(Q V_a Q V_b), q_a = H'Q V_a Q H.
struct MinqueSystem {
  Eigen::MatrixXd S;
  Eigen::VectorXd q;
};

// Without a prior V0 = I (MINQUE(1)); otherwise V0 = V(prior).
MinqueSystem minque_system(const DesignSystem& design,
                           const std::optional<VarianceComponents>& prior = std::nullopt);

struct MinqueResult {
  VarianceComponents sigma2;  // floored estimate
  Eigen::VectorXd raw;        // last unfloored solution, packed order
  std::vector<int> floored;   // packed indices raised to the floor
  double floor_value = 0.0;
  int iterations = 1;
  bool converged = true;
  double last_change = 0.0;   // max relative change of the final refinement
  std::vector<std::string> warnings;
};

MinqueResult minque_variance_components(const DesignSystem& design,
                                        const MinqueOptions& options = {});

struct GlsResult {
  Eigen::VectorXd theta;
  Eigen::MatrixXd cov;  // (C'V^{-1}C)^{-1}
};

GlsResult gls_fixed_effects(const DesignSystem& design, const VarianceComponents& s2);
GlsResult gls_fixed_effects(const DesignSystem& design, const VInverse& vinv);

struct BlupResult {
  Eigen::VectorXd xi;
  Eigen::MatrixXd cov;  // G U' P U G
};

BlupResult eblup_random_effects(const DesignSystem& design, const VarianceComponents& s2,
                                const Eigen::VectorXd& theta_hat);
BlupResult eblup_random_effects(const DesignSystem& design, const VarianceComponents& s2,
                                const VInverse& vinv, const Eigen::VectorXd& theta_hat);

// Throws IdentifiabilityError naming the collinear columns of C.
void require_full_column_rank(const DesignSystem& design);

// The three estimation steps in sequence.
struct LmmFit {
  MinqueResult minque;
  GlsResult gls;
  BlupResult blup;
  std::vector<std::string> warnings;

  ParameterSet params() const { return {gls.theta, blup.xi, minque.sigma2}; }
};

LmmFit fit_lmm(const DesignSystem& design, const MinqueOptions& options = {});

}  // namespace poolcal
