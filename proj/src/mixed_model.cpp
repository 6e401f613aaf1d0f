#include "poolcal/mixed_model.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "poolcal/errors.hpp"

namespace poolcal {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

std::string lab_component(int d) {
  return d == 0 ? std::string("sigma2_lab[0] (central)") : "sigma2_lab[" + std::to_string(d) + "]";
}

constexpr double kPriorFraction = 0.01;

double sample_variance(const VectorXd& v) {
  if (v.size() < 2) return 0.0;
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
}

// Q = A - Y Lambda Y', the MINQUE projection in sparse-plus-low-rank form.
struct Projection {
  SpMat A;
  MatrixXd Y;
  MatrixXd lambda;
};

Projection identity_projection(const DesignSystem& design) {
  const Index n = design.rows();
  Projection q;
  q.A.resize(n, n);
  q.A.setIdentity();
  q.Y = design.C;
  const MatrixXd ctc = design.C.transpose() * design.C;
  Eigen::LLT<MatrixXd> llt(ctc);
  if (llt.info() != Eigen::Success)
    throw IdentifiabilityError("fixed-effect design C'C is not positive definite");
  q.lambda = llt.solve(MatrixXd::Identity(ctc.rows(), ctc.cols()));
  return q;
}

Projection weighted_projection(const DesignSystem& design, const VarianceComponents& prior) {
  const VInverse vinv(design, prior);
  const MatrixXd Z = vinv.solve(design.C);
  const MatrixXd ctvc = design.C.transpose() * Z;
  Eigen::LLT<MatrixXd> llt(ctvc);
  if (llt.info() != Eigen::Success)
    throw IdentifiabilityError("C'V^{-1}C is not positive definite under the MINQUE prior");
  const Index r1 = vinv.r_inverse_u().cols();
  const Index r2 = Z.cols();
  Projection q;
  q.A = vinv.r_inverse();
  q.Y.resize(design.rows(), r1 + r2);
  q.Y << vinv.r_inverse_u(), Z;
  q.lambda = MatrixXd::Zero(r1 + r2, r1 + r2);
  q.lambda.topLeftCorner(r1, r1) = vinv.core();
  q.lambda.bottomRightCorner(r2, r2) = llt.solve(MatrixXd::Identity(r2, r2));
  return q;
}

// Factors F_a with V_a = F_a F_a': one selector per lab, then U, then S.
std::vector<SpMat> component_factors(const DesignSystem& design) {
  const Index n = design.rows();
  std::vector<SpMat> factors;
  for (int d = 0; d < design.num_labs; ++d) {
    std::vector<Triplet> t;
    Index col = 0;
    for (Index i = 0; i < n; ++i)
      if (design.lab_of_row[i] == d) t.emplace_back(i, col++, 1.0);
    SpMat e(n, col);
    e.setFromTriplets(t.begin(), t.end());
    factors.push_back(std::move(e));
  }
  factors.push_back(design.U_sparse());
  factors.push_back(design.subject_indicator());
  return factors;
}

// Eigen-decomposes the diagonally scaled S and throws when it is singular.
VectorXd solve_minque(const MinqueSystem& sys, int num_labs) {
  const Index k = sys.S.rows();
  VectorXd scale(k);
  for (Index a = 0; a < k; ++a) {
    if (!(sys.S(a, a) > 0.0))
      throw IdentifiabilityError("variance component " +
                                 VarianceComponents::component_name(static_cast<int>(a), num_labs) +
                                 " has no information in this design");
    scale[a] = 1.0 / std::sqrt(sys.S(a, a));
  }
  const MatrixXd scaled = scale.asDiagonal() * sys.S * scale.asDiagonal();
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(scaled);
  const VectorXd& ev = eig.eigenvalues();
  if (!(ev[0] > 1e-11 * ev[k - 1])) {
    std::ostringstream msg;
    msg << "MINQUE system is singular; confounded components:";
    const VectorXd v = eig.eigenvectors().col(0);
    const double vmax = v.cwiseAbs().maxCoeff();
    for (Index a = 0; a < k; ++a)
      if (std::abs(v[a]) > 0.1 * vmax)
        msg << ' ' << VarianceComponents::component_name(static_cast<int>(a), num_labs);
    throw IdentifiabilityError(msg.str());
  }
  const MatrixXd& vecs = eig.eigenvectors();
  const VectorXd rhs = scale.asDiagonal() * sys.q;
  const VectorXd y = vecs * (ev.cwiseInverse().asDiagonal() * (vecs.transpose() * rhs));
  return scale.asDiagonal() * y;
}

}  // namespace

Eigen::MatrixXd DesignSystem::U() const {
  MatrixXd u = MatrixXd::Zero(rows(), num_labs);
  for (Index i = 0; i < rows(); ++i) u(i, lab_of_row[i]) = 1.0;
  return u;
}

Eigen::SparseMatrix<double> DesignSystem::U_sparse() const {
  std::vector<Triplet> t;
  t.reserve(rows());
  for (Index i = 0; i < rows(); ++i) t.emplace_back(i, lab_of_row[i], 1.0);
  SpMat u(rows(), num_labs);
  u.setFromTriplets(t.begin(), t.end());
  return u;
}

Eigen::SparseMatrix<double> DesignSystem::subject_indicator() const {
  std::vector<Triplet> t;
  t.reserve(rows());
  for (Index i = 0; i < rows(); ++i) t.emplace_back(i, subject_of_row[i], 1.0);
  SpMat s(rows(), num_subjects);
  s.setFromTriplets(t.begin(), t.end());
  return s;
}

DesignSystem assemble_design(const PooledDataset& ds) {
  DesignSystem d;
  const int m = ds.num_studies();
  const int p = ds.p();
  std::size_t n_rows = 0;
  for (const auto& r : ds.subjects()) n_rows += r.is_calibration() ? 2 : 1;

  d.num_labs = ds.num_labs();
  d.num_studies = m;
  d.num_subjects = static_cast<int>(ds.size());
  d.H.resize(static_cast<Index>(n_rows));
  d.C = MatrixXd::Zero(static_cast<Index>(n_rows), m + p);
  for (const auto& s : ds.studies()) d.column_names.push_back("alpha0[" + s.label + "]");
  for (const auto& w : ds.w_names()) d.column_names.push_back("tau[" + w + "]");

  Index row = 0;
  auto emit = [&](const SubjectRecord& r, int subject, int lab, double value) {
    d.H[row] = value;
    d.C(row, r.study) = 1.0;
    for (int k = 0; k < p; ++k) d.C(row, m + k) = r.w[k];
    d.lab_of_row.push_back(lab);
    d.study_of_row.push_back(r.study);
    d.subject_of_row.push_back(subject);
    d.partner_of_row.push_back(-1);
    return row++;
  };
  for (std::size_t s = 0; s < ds.size(); ++s) {
    const auto& r = ds.subjects()[s];
    const int subject = static_cast<int>(s);
    if (r.is_calibration()) {
      const Index c = emit(r, subject, 0, *r.central);
      const Index l = emit(r, subject, ds.lab_of_study(r.study), r.local);
      d.partner_of_row[c] = static_cast<int>(l);
      d.partner_of_row[l] = static_cast<int>(c);
      d.pairs.push_back({static_cast<int>(c), static_cast<int>(l)});
    } else {
      emit(r, subject, ds.lab_of_study(r.study), r.local);
    }
  }
  return d;
}

Eigen::MatrixXd dense_covariance(const DesignSystem& design, const VarianceComponents& s2) {
  const Index n = design.rows();
  MatrixXd v = MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j)
      if (design.lab_of_row[i] == design.lab_of_row[j]) v(i, j) += s2.xi;
    v(i, i) += s2.x + s2.lab[design.lab_of_row[i]];
    if (design.partner_of_row[i] >= 0) v(i, design.partner_of_row[i]) += s2.x;
  }
  return v;
}

VInverse::VInverse(const DesignSystem& design, const VarianceComponents& s2)
    : design_(design), diag_(design.rows(), 0.0), off_(design.rows(), 0.0) {
  if (s2.num_labs() != design.num_labs)
    throw ContractError("variance components cover " + std::to_string(s2.num_labs()) +
                        " labs, design has " + std::to_string(design.num_labs));
  if (!(s2.xi >= 0.0))
    throw NumericalError("sigma2_xi must be non-negative, got " + std::to_string(s2.xi));
  for (Index i = 0; i < design.rows(); ++i) {
    const int partner = design.partner_of_row[i];
    const int d = design.lab_of_row[i];
    const double a = s2.x + s2.lab[d];
    if (!(a > 0.0))
      throw NumericalError("residual variance sigma2_x + " + lab_component(d) + " = " +
                           std::to_string(a) + " is not positive");
    if (partner < 0) {
      diag_[i] = 1.0 / a;
    } else if (partner > i) {
      const double b = s2.x + s2.lab[design.lab_of_row[partner]];
      const double det = a * b - s2.x * s2.x;
      if (!(b > 0.0) || !(det > 0.0))
        throw NumericalError("paired residual block for " + lab_component(d) + " and " +
                             lab_component(design.lab_of_row[partner]) +
                             " is not positive definite (sigma2_x = " + std::to_string(s2.x) +
                             ")");
      diag_[i] = b / det;
      diag_[partner] = a / det;
      off_[i] = off_[partner] = -s2.x / det;
    }
  }
  rinv_u_ = apply_r_inverse(design.U());
  const Index k = design.num_labs;
  if (s2.xi == 0.0) {
    lambda_ = MatrixXd::Zero(k, k);
  } else {
    const MatrixXd m = MatrixXd::Identity(k, k) + s2.xi * (design.U().transpose() * rinv_u_);
    Eigen::LLT<MatrixXd> llt(m);
    if (llt.info() != Eigen::Success)
      throw NumericalError("lab random-effect core matrix is not positive definite");
    lambda_ = s2.xi * llt.solve(MatrixXd::Identity(k, k));
  }
}

Eigen::MatrixXd VInverse::apply_r_inverse(const Eigen::MatrixXd& rhs) const {
  if (rhs.rows() != design_.rows())
    throw ContractError("right-hand side has " + std::to_string(rhs.rows()) + " rows, expected " +
                        std::to_string(design_.rows()));
  MatrixXd out(rhs.rows(), rhs.cols());
  for (Index i = 0; i < rhs.rows(); ++i) {
    const int partner = design_.partner_of_row[i];
    out.row(i) = diag_[i] * rhs.row(i);
    if (partner >= 0) out.row(i) += off_[i] * rhs.row(partner);
  }
  return out;
}

Eigen::SparseMatrix<double> VInverse::r_inverse() const {
  std::vector<Triplet> t;
  t.reserve(design_.rows() + 2 * design_.pairs.size());
  for (Index i = 0; i < design_.rows(); ++i) {
    t.emplace_back(i, i, diag_[i]);
    if (design_.partner_of_row[i] >= 0) t.emplace_back(i, design_.partner_of_row[i], off_[i]);
  }
  SpMat r(design_.rows(), design_.rows());
  r.setFromTriplets(t.begin(), t.end());
  return r;
}

Eigen::MatrixXd VInverse::solve(const Eigen::MatrixXd& rhs) const {
  MatrixXd out = apply_r_inverse(rhs);
  out.noalias() -= rinv_u_ * (lambda_ * (rinv_u_.transpose() * rhs));
  return out;
}

Eigen::MatrixXd solve_with_v(const DesignSystem& design, const VarianceComponents& s2,
                             const Eigen::MatrixXd& rhs) {
  return VInverse(design, s2).solve(rhs);
}

MinqueSystem minque_system(const DesignSystem& design,
                           const std::optional<VarianceComponents>& prior) {
  const Projection proj = prior ? weighted_projection(design, *prior) : identity_projection(design);
  const std::vector<SpMat> factors = component_factors(design);
  const std::size_t k = factors.size();

  std::vector<SpMat> fa_a(k);
  std::vector<MatrixXd> ya(k), gram(k);
  for (std::size_t a = 0; a < k; ++a) {
    fa_a[a] = SpMat(factors[a].transpose()) * proj.A;
    ya[a] = factors[a].transpose() * proj.Y;
    gram[a] = ya[a].transpose() * ya[a];
  }

  MinqueSystem sys;
  sys.S.resize(static_cast<Index>(k), static_cast<Index>(k));
  for (std::size_t a = 0; a < k; ++a) {
    const MatrixXd lg = proj.lambda * gram[a] * proj.lambda;
    for (std::size_t b = a; b < k; ++b) {
      const SpMat t = fa_a[a] * factors[b];
      const MatrixXd cross = ya[a].transpose() * (t * ya[b]);
      const double value = t.squaredNorm() - 2.0 * proj.lambda.cwiseProduct(cross).sum() +
                           (lg * gram[b]).trace();
      sys.S(a, b) = sys.S(b, a) = value;
    }
  }

  const VectorXd qh = proj.A * design.H - proj.Y * (proj.lambda * (proj.Y.transpose() * design.H));
  sys.q.resize(static_cast<Index>(k));
  for (std::size_t a = 0; a < k; ++a)
    sys.q[static_cast<Index>(a)] = (factors[a].transpose() * qh).squaredNorm();
  return sys;
}

MinqueResult minque_variance_components(const DesignSystem& design, const MinqueOptions& options) {
  MinqueResult result;
  result.floor_value = std::max(1e-8, 1e-6 * sample_variance(design.H));

  auto floor_solution = [&](const VectorXd& raw) {
    VectorXd v = raw;
    result.floored.clear();
    for (Index a = 0; a < v.size(); ++a)
      if (!(v[a] >= result.floor_value)) {
        v[a] = result.floor_value;
        result.floored.push_back(static_cast<int>(a));
      }
    return v;
  };

  result.raw = solve_minque(minque_system(design), design.num_labs);
  VectorXd current = floor_solution(result.raw);
  result.iterations = 1;
  result.converged = true;

  if (options.iterate) {
    result.converged = false;
    // Any positive prior keeps MINQUE unbiased. Near-zero priors make R almost
    // singular and the trace expansion loses all precision, so the prior is
    // held at a small fraction of the total variance.
    const double prior_floor = std::max(result.floor_value, kPriorFraction * sample_variance(design.H));
    for (int it = 0; it < options.max_iterations; ++it) {
      const auto prior = VarianceComponents::from_vector(current.cwiseMax(prior_floor));
      result.raw = solve_minque(minque_system(design, prior), design.num_labs);
      const VectorXd next = floor_solution(result.raw);
      ++result.iterations;
      const double change =
          ((next - current).cwiseAbs().array() / current.cwiseAbs().array().max(result.floor_value))
              .maxCoeff();
      current = next;
      result.last_change = change;
      if (change < options.tolerance) {
        result.converged = true;
        break;
      }
    }
    if (!result.converged) {
      std::ostringstream msg;
      msg << "iterated MINQUE stopped after " << options.max_iterations
          << " refinements with relative change " << result.last_change << " (tolerance "
          << options.tolerance << ")";
      result.warnings.push_back(msg.str());
    }
  }

  result.sigma2 = VarianceComponents::from_vector(current);
  if (!result.floored.empty()) {
    std::ostringstream msg;
    msg << "negative or tiny variance estimates floored at " << result.floor_value << ":";
    for (int a : result.floored) msg << ' ' << VarianceComponents::component_name(a, design.num_labs);
    result.warnings.push_back(msg.str());
  }
  return result;
}

void require_full_column_rank(const DesignSystem& design) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(design.C);
  if (qr.rank() == design.C.cols()) return;
  Eigen::FullPivLU<MatrixXd> lu(design.C);
  const MatrixXd kernel = lu.kernel();
  std::ostringstream msg;
  msg << "fixed-effect design is rank deficient; collinear columns:";
  const VectorXd v = kernel.col(0);
  const double vmax = v.cwiseAbs().maxCoeff();
  for (Index c = 0; c < v.size(); ++c)
    if (std::abs(v[c]) > 1e-8 * vmax) msg << ' ' << design.column_names[c];
  throw IdentifiabilityError(msg.str());
}

GlsResult gls_fixed_effects(const DesignSystem& design, const VInverse& vinv) {
  const MatrixXd z = vinv.solve(design.C);
  const MatrixXd ctvc = design.C.transpose() * z;
  Eigen::LLT<MatrixXd> llt(ctvc);
  if (llt.info() != Eigen::Success) {
    require_full_column_rank(design);
    throw NumericalError("C'V^{-1}C is not positive definite");
  }
  GlsResult g;
  g.theta = llt.solve(z.transpose() * design.H);
  g.cov = llt.solve(MatrixXd::Identity(ctvc.rows(), ctvc.cols()));
  return g;
}

GlsResult gls_fixed_effects(const DesignSystem& design, const VarianceComponents& s2) {
  require_full_column_rank(design);
  return gls_fixed_effects(design, VInverse(design, s2));
}

BlupResult eblup_random_effects(const DesignSystem& design, const VarianceComponents& s2,
                                const VInverse& vinv, const Eigen::VectorXd& theta_hat) {
  const MatrixXd u = design.U();
  const MatrixXd vinv_u = vinv.solve(u);
  const VectorXd resid = design.H - design.C * theta_hat;
  BlupResult b;
  b.xi = s2.xi * (vinv_u.transpose() * resid);

  const MatrixXd z = vinv.solve(design.C);
  Eigen::LLT<MatrixXd> llt(design.C.transpose() * z);
  if (llt.info() != Eigen::Success) throw NumericalError("C'V^{-1}C is not positive definite");
  const MatrixXd pu = vinv_u - z * llt.solve(z.transpose() * u);
  MatrixXd cov = (s2.xi * s2.xi) * (u.transpose() * pu);
  b.cov = 0.5 * (cov + cov.transpose());
  return b;
}

BlupResult eblup_random_effects(const DesignSystem& design, const VarianceComponents& s2,
                                const Eigen::VectorXd& theta_hat) {
  return eblup_random_effects(design, s2, VInverse(design, s2), theta_hat);
}

LmmFit fit_lmm(const DesignSystem& design, const MinqueOptions& options) {
  require_full_column_rank(design);
  LmmFit fit;
  fit.minque = minque_variance_components(design, options);
  const VInverse vinv(design, fit.minque.sigma2);
  fit.gls = gls_fixed_effects(design, vinv);
  fit.blup = eblup_random_effects(design, fit.minque.sigma2, vinv, fit.gls.theta);
  fit.warnings = fit.minque.warnings;
  return fit;
}

}  // namespace poolcal
