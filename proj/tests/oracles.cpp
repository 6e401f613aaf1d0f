#include "oracles.hpp"

#include <cmath>
#include <stdexcept>

#include "poolcal/rng.hpp"

namespace oracle {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using poolcal::DesignSystem;
using poolcal::VarianceComponents;

poolcal::SimulatedData small_dataset(std::uint64_t seed, int studies, int n, int n_cal, double beta_x) {
  poolcal::ScenarioConfig cfg;
  cfg.studies = studies;
  cfg.n_per_study = n;
  cfg.n_calibration_per_study = n_cal;
  cfg.alpha0.clear();
  cfg.sigma2_lab.clear();
  for (int j = 1; j <= studies; ++j) cfg.alpha0.push_back(-0.1 * j);
  for (int d = 0; d <= studies; ++d) cfg.sigma2_lab.push_back(2.0 + d);
  poolcal::Rng rng = poolcal::child_rng(seed, {77});
  std::vector<double> beta0(static_cast<std::size_t>(studies), -1.5);
  return poolcal::generate_dataset(cfg, beta_x, beta0, rng);
}

MatrixXd covariance(const DesignSystem& d, const VarianceComponents& s2) {
  const Index n = d.rows();
  MatrixXd v(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      double e = 0.0;
      if (d.lab_of_row[i] == d.lab_of_row[j]) e += s2.xi;
      if (d.subject_of_row[i] == d.subject_of_row[j]) e += s2.x;
      if (i == j) e += s2.lab[d.lab_of_row[i]];
      v(i, j) = e;
    }
  return v;
}

MatrixXd component_matrix(const DesignSystem& d, int a) {
  const Index n = d.rows();
  MatrixXd v = MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      if (a < d.num_labs)
        v(i, j) = (i == j && d.lab_of_row[i] == a) ? 1.0 : 0.0;
      else if (a == d.num_labs)
        v(i, j) = d.lab_of_row[i] == d.lab_of_row[j] ? 1.0 : 0.0;
      else
        v(i, j) = d.subject_of_row[i] == d.subject_of_row[j] ? 1.0 : 0.0;
    }
  return v;
}

namespace {

MatrixXd projector(const DesignSystem& d, const MatrixXd& v0) {
  const MatrixXd v0inv = v0.fullPivLu().inverse();
  const MatrixXd ct = d.C.transpose() * v0inv;
  return v0inv - v0inv * d.C * (ct * d.C).fullPivLu().inverse() * ct;
}

}  // namespace

poolcal::MinqueSystem minque(const DesignSystem& d, const std::optional<VarianceComponents>& prior) {
  const Index n = d.rows();
  const MatrixXd v0 = prior ? covariance(d, *prior) : MatrixXd::Identity(n, n);
  const MatrixXd q = projector(d, v0);
  const int k = d.num_labs + 2;
  std::vector<MatrixXd> qv;
  for (int a = 0; a < k; ++a) qv.push_back(q * component_matrix(d, a));
  poolcal::MinqueSystem sys;
  sys.S.resize(k, k);
  sys.q.resize(k);
  const VectorXd qh = q * d.H;
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) sys.S(a, b) = (qv[a] * qv[b]).trace();
    sys.q[a] = qh.dot(component_matrix(d, a) * qh);
  }
  return sys;
}

VectorXd minque_expectation(const DesignSystem& d, const VarianceComponents& s2) {
  const Index n = d.rows();
  const MatrixXd q = projector(d, MatrixXd::Identity(n, n));
  const MatrixXd qvq = q * covariance(d, s2) * q;
  const int k = d.num_labs + 2;
  VectorXd e(k);
  for (int a = 0; a < k; ++a) e[a] = (component_matrix(d, a) * qvq).trace();
  return e;
}

Gls gls(const DesignSystem& d, const VarianceComponents& s2) {
  const MatrixXd vinv = covariance(d, s2).inverse();
  Gls g;
  g.cov = (d.C.transpose() * vinv * d.C).inverse();
  g.theta = g.cov * d.C.transpose() * vinv * d.H;
  return g;
}

Blup blup(const DesignSystem& d, const VarianceComponents& s2, const VectorXd& theta) {
  const MatrixXd vinv = covariance(d, s2).inverse();
  const MatrixXd u = d.U();
  const MatrixXd g = s2.xi * MatrixXd::Identity(d.num_labs, d.num_labs);
  const MatrixXd p =
      vinv - vinv * d.C * (d.C.transpose() * vinv * d.C).inverse() * d.C.transpose() * vinv;
  Blup b;
  b.xi = g * u.transpose() * vinv * (d.H - d.C * theta);
  b.cov = g * u.transpose() * p * u * g;
  return b;
}

poolcal::CalibratedValue condition(const poolcal::SubjectRecord& rec, int local_lab,
                                   const poolcal::ParameterSet& params) {
  const int m = static_cast<int>(params.theta.size() - static_cast<Index>(rec.w.size()));
  double mu = params.theta[rec.study];
  for (std::size_t k = 0; k < rec.w.size(); ++k) mu += params.theta[m + static_cast<Index>(k)] * rec.w[k];
  const auto& s2 = params.sigma2;

  std::vector<int> labs{local_lab};
  std::vector<double> obs{rec.local};
  if (rec.central) {
    labs.push_back(0);
    obs.push_back(*rec.central);
  }
  const Index k = static_cast<Index>(labs.size());
  MatrixXd shh(k, k);
  VectorXd sxh(k), resid(k);
  for (Index i = 0; i < k; ++i) {
    sxh[i] = s2.x;
    resid[i] = obs[static_cast<std::size_t>(i)] - mu - params.xi[labs[static_cast<std::size_t>(i)]];
    for (Index j = 0; j < k; ++j) shh(i, j) = s2.x + (i == j ? s2.lab[labs[static_cast<std::size_t>(i)]] : 0.0);
  }
  const VectorXd sol = shh.fullPivLu().solve(resid);
  const VectorXd gain = shh.fullPivLu().solve(sxh);
  poolcal::CalibratedValue out;
  out.x_tilde = mu + sxh.dot(sol);
  out.conditional_variance = s2.x - sxh.dot(gain);
  out.kind = rec.central ? poolcal::SubjectKind::calibration : poolcal::SubjectKind::noncalibration;
  return out;
}

Mle logistic_coordinate_newton(const VectorXd& x, const MatrixXd& Z, const std::vector<int>& Y,
                               const std::vector<int>& study, int num_studies) {
  const Index n = x.size();
  const Index p = num_studies + 1 + Z.cols();
  MatrixXd D = MatrixXd::Zero(n, p);
  for (Index i = 0; i < n; ++i) {
    D(i, study[static_cast<std::size_t>(i)]) = 1.0;
    D(i, num_studies) = x[i];
    D.block(i, num_studies + 1, 1, Z.cols()) = Z.row(i);
  }
  VectorXd y(n);
  for (Index i = 0; i < n; ++i) y[i] = Y[static_cast<std::size_t>(i)];

  Mle out;
  out.beta = VectorXd::Zero(p);
  VectorXd eta = VectorXd::Zero(n);
  for (out.sweeps = 0; out.sweeps < 200000; ++out.sweeps) {
    double max_score = 0.0;
    for (Index c = 0; c < p; ++c) {
      double g = 0.0, h = 0.0;
      for (Index i = 0; i < n; ++i) {
        const double pr = 1.0 / (1.0 + std::exp(-eta[i]));
        g += D(i, c) * (y[i] - pr);
        h += D(i, c) * D(i, c) * pr * (1.0 - pr);
      }
      max_score = std::max(max_score, std::abs(g));
      const double step = g / h;
      out.beta[c] += step;
      eta += step * D.col(c);
    }
    if (max_score < 1e-11) break;
  }
  MatrixXd info = MatrixXd::Zero(p, p);
  for (Index i = 0; i < n; ++i) {
    const double pr = 1.0 / (1.0 + std::exp(-eta[i]));
    info += pr * (1.0 - pr) * D.row(i).transpose() * D.row(i);
  }
  out.cov = info.inverse();
  return out;
}

double max_rel_diff(const MatrixXd& a, const MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("shape mismatch");
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace oracle
