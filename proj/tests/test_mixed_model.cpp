#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "poolcal/errors.hpp"
#include "poolcal/mixed_model.hpp"
#include "poolcal/rng.hpp"

using namespace poolcal;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VarianceComponents components(std::initializer_list<double> lab, double xi, double x) {
  VarianceComponents s2;
  s2.lab = VectorXd(static_cast<Eigen::Index>(lab.size()));
  int k = 0;
  for (double v : lab) s2.lab[k++] = v;
  s2.xi = xi;
  s2.x = x;
  return s2;
}

MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng = child_rng(seed, {});
  NormalSampler normal;
  MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = normal(rng);
  return m;
}

}  // namespace

TEST_SUITE("mixed_model") {
  TEST_CASE("design layout: central row first, one row per measurement") {
    const auto sim = oracle::small_dataset(1);
    const auto& ds = sim.dataset;
    const DesignSystem d = assemble_design(ds);
    std::size_t n_cal = 0;
    for (const auto& r : ds.subjects()) n_cal += r.is_calibration();
    CHECK(d.rows() == static_cast<Eigen::Index>(ds.size() + n_cal));
    CHECK(d.pairs.size() == n_cal);
    CHECK(d.C.cols() == ds.num_studies() + ds.p());
    CHECK(d.num_labs == ds.num_labs());
    for (const auto& pr : d.pairs) {
      CHECK(pr[0] < pr[1]);
      CHECK(d.lab_of_row[pr[0]] == 0);
      CHECK(d.lab_of_row[pr[1]] == ds.lab_of_study(d.study_of_row[pr[1]]));
      CHECK(d.partner_of_row[pr[0]] == pr[1]);
      const auto& rec = ds.subjects()[d.subject_of_row[pr[0]]];
      CHECK(d.H[pr[0]] == *rec.central);
      CHECK(d.H[pr[1]] == rec.local);
    }
    CHECK(d.column_names.front() == "alpha0[study1]");
    CHECK(d.column_names.back() == "tau[w_1]");
  }

  TEST_CASE("dense covariance matches the entrywise oracle") {
    const auto sim = oracle::small_dataset(2);
    const DesignSystem d = assemble_design(sim.dataset);
    const auto s2 = components({2, 3, 4, 5}, 3, 5);
    CHECK(oracle::max_rel_diff(dense_covariance(d, s2), oracle::covariance(d, s2)) < 1e-14);
  }

  TEST_CASE("structured V^-1 agrees with a dense solve") {
    const auto sim = oracle::small_dataset(3);
    const DesignSystem d = assemble_design(sim.dataset);
    const MatrixXd rhs = random_matrix(d.rows(), 3, 99);
    for (const auto& s2 : {components({2, 3, 4, 5}, 3, 5), components({0.01, 9, 0.5, 2}, 0.2, 12),
                           components({2, 3, 4, 5}, 0.0, 5), components({1, 1, 1, 1}, 50, 0.1)}) {
      const MatrixXd dense = oracle::covariance(d, s2).fullPivLu().solve(rhs);
      const MatrixXd fast = solve_with_v(d, s2, rhs);
      CHECK(oracle::max_rel_diff(fast, dense) < 1e-8);
    }
  }

  TEST_CASE("a non-positive-definite lab block names the component") {
    const auto sim = oracle::small_dataset(4);
    const DesignSystem d = assemble_design(sim.dataset);
    try {
      VInverse vinv(d, components({2, -6, 4, 5}, 3, 5));
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("sigma2_lab[1]") != std::string::npos);
    }
  }

  TEST_CASE("MINQUE system matches dense traces") {
    const auto sim = oracle::small_dataset(5);
    const DesignSystem d = assemble_design(sim.dataset);
    const auto fast = minque_system(d);
    const auto dense = oracle::minque(d);
    CHECK(oracle::max_rel_diff(fast.S, dense.S) < 1e-8);
    CHECK(oracle::max_rel_diff(fast.q, dense.q) < 1e-8);

    const auto prior = components({2.5, 1.5, 4, 6}, 2, 4);
    const auto fast_p = minque_system(d, prior);
    const auto dense_p = oracle::minque(d, prior);
    CHECK(oracle::max_rel_diff(fast_p.S, dense_p.S) < 1e-8);
    CHECK(oracle::max_rel_diff(fast_p.q, dense_p.q) < 1e-8);
  }

  TEST_CASE("MINQUE is exactly unbiased in expectation") {
    // E[q] = S sigma2 because QC = 0.
    const auto sim = oracle::small_dataset(6);
    const DesignSystem d = assemble_design(sim.dataset);
    const auto s2 = components({2, 3, 4, 5}, 3, 5);
    const auto sys = minque_system(d);
    CHECK(oracle::max_rel_diff(sys.S * s2.to_vector(), oracle::minque_expectation(d, s2)) < 1e-9);
  }

  TEST_CASE("MINQUE raw estimates are unbiased over replicates") {
    const int reps = 500;
    const int k = 6;
    VectorXd sum = VectorXd::Zero(k), sq = VectorXd::Zero(k);
    MinqueOptions single;
    single.iterate = false;
    for (int r = 0; r < reps; ++r) {
      const auto sim = oracle::small_dataset(1000 + static_cast<std::uint64_t>(r), 3, 60, 20);
      const auto m = minque_variance_components(assemble_design(sim.dataset), single);
      sum += m.raw;
      sq += m.raw.cwiseProduct(m.raw);
    }
    const VectorXd mean = sum / reps;
    const VectorXd se = ((sq / reps - mean.cwiseProduct(mean)) / (reps - 1)).cwiseSqrt();
    // sigma2_xi has only four labs behind it; its sampling spread is the
    // widest, so the check uses the same 3-SE rule for every component.
    const VectorXd truth = (VectorXd(k) << 2, 3, 4, 5, 3, 5).finished();
    for (int a = 0; a < k; ++a) {
      CAPTURE(a);
      CHECK(std::abs(mean[a] - truth[a]) < 3.0 * se[a]);
    }
  }

  TEST_CASE("iterated MINQUE returns positive estimates and reports its iterations") {
    const auto sim = oracle::small_dataset(7, 3, 80, 20);
    const DesignSystem d = assemble_design(sim.dataset);
    MinqueOptions opts;
    opts.max_iterations = 30;
    const auto m = minque_variance_components(d, opts);
    CHECK(m.converged);
    CHECK(m.iterations > 1);
    CHECK(m.last_change < 1e-6);
    CHECK(m.sigma2.to_vector().minCoeff() > 0.0);
  }

  TEST_CASE("negative MINQUE solutions are floored with a warning") {
    // sigma2_xi = 0 in truth: the unconstrained estimate is negative for a
    // good share of datasets.
    MinqueOptions single;
    single.iterate = false;
    bool seen = false;
    for (std::uint64_t seed = 0; seed < 200 && !seen; ++seed) {
      ScenarioConfig cfg;
      cfg.studies = 3;
      cfg.n_per_study = 40;
      cfg.n_calibration_per_study = 10;
      cfg.alpha0 = {0, 0, 0};
      cfg.sigma2_lab = {1, 1, 1, 1};
      cfg.sigma2_xi = 0.0;
      Rng rng = child_rng(seed, {5});
      const auto sim = generate_dataset(cfg, 0.0, {-1, -1, -1}, rng);
      const auto m = minque_variance_components(assemble_design(sim.dataset), single);
      const int xi = m.sigma2.num_labs();
      if (m.raw[xi] >= 0.0) continue;
      seen = true;
      CHECK(m.sigma2.xi == m.floor_value);
      REQUIRE(m.floored.size() >= 1);
      CHECK(!m.warnings.empty());
      CHECK(m.warnings.back().find("sigma2_xi") != std::string::npos);
    }
    CHECK(seen);
  }

  TEST_CASE("GLS and EBLUP match the dense formulas") {
    const auto sim = oracle::small_dataset(8);
    const DesignSystem d = assemble_design(sim.dataset);
    const auto s2 = components({2, 3, 4, 5}, 3, 5);
    const auto g = gls_fixed_effects(d, s2);
    const auto go = oracle::gls(d, s2);
    CHECK(oracle::max_rel_diff(g.theta, go.theta) < 1e-8);
    CHECK(oracle::max_rel_diff(g.cov, go.cov) < 1e-8);
    const auto b = eblup_random_effects(d, s2, g.theta);
    const auto bo = oracle::blup(d, s2, g.theta);
    CHECK(oracle::max_rel_diff(b.xi, bo.xi) < 1e-8);
    CHECK(oracle::max_rel_diff(b.cov, bo.cov) < 1e-8);
  }

  TEST_CASE("GLS is invariant to a common scale of the variance components") {
    const auto sim = oracle::small_dataset(9);
    const DesignSystem d = assemble_design(sim.dataset);
    const auto s2 = components({2, 3, 4, 5}, 3, 5);
    auto scaled = s2;
    scaled.lab *= 7.5;
    scaled.xi *= 7.5;
    scaled.x *= 7.5;
    const auto a = gls_fixed_effects(d, s2);
    const auto b = gls_fixed_effects(d, scaled);
    CHECK(oracle::max_rel_diff(a.theta, b.theta) < 1e-10);
    CHECK(oracle::max_rel_diff(b.cov, 7.5 * a.cov) < 1e-10);
  }

  TEST_CASE("GLS residuals are V^-1-orthogonal to C") {
    const auto sim = oracle::small_dataset(10);
    const DesignSystem d = assemble_design(sim.dataset);
    const auto s2 = components({2, 3, 4, 5}, 3, 5);
    const auto g = gls_fixed_effects(d, s2);
    const VectorXd score = d.C.transpose() * solve_with_v(d, s2, d.H - d.C * g.theta);
    CHECK(score.cwiseAbs().maxCoeff() < 1e-9);
  }

  TEST_CASE("a study-level shift is absorbed by that study's intercept") {
    const auto sim = oracle::small_dataset(11);
    DesignSystem d = assemble_design(sim.dataset);
    const auto s2 = components({2, 3, 4, 5}, 3, 5);
    const auto before = gls_fixed_effects(d, s2);
    const auto xi_before = eblup_random_effects(d, s2, before.theta);
    for (Eigen::Index i = 0; i < d.rows(); ++i)
      if (d.study_of_row[i] == 1) d.H[i] += 4.0;
    const auto after = gls_fixed_effects(d, s2);
    const auto xi_after = eblup_random_effects(d, s2, after.theta);
    VectorXd expected = before.theta;
    expected[1] += 4.0;
    CHECK(oracle::max_rel_diff(after.theta, expected) < 1e-10);
    CHECK(oracle::max_rel_diff(xi_after.xi, xi_before.xi) < 1e-10);
  }

  TEST_CASE("BLUP shrinks to zero when sigma2_xi = 0") {
    const auto sim = oracle::small_dataset(12);
    const DesignSystem d = assemble_design(sim.dataset);
    const auto s2 = components({2, 3, 4, 5}, 0.0, 5);
    const auto g = gls_fixed_effects(d, s2);
    const auto b = eblup_random_effects(d, s2, g.theta);
    CHECK(b.xi.cwiseAbs().maxCoeff() == 0.0);
    CHECK(b.cov.cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("collinear fixed effects are named") {
    std::vector<SubjectRecord> subjects;
    for (int i = 0; i < 8; ++i) {
      SubjectRecord r;
      r.id = std::to_string(i);
      r.study = i % 2;
      r.outcome = i % 3 == 0;
      r.w = {r.study == 0 ? 1.0 : 2.0};  // constant within study
      r.local = 0.5 * i;
      if (i < 4) r.central = 0.4 * i;
      subjects.push_back(r);
    }
    const PooledDataset ds(subjects, {{"A", 1}, {"B", 2}}, {"LA", "LB"}, {"w_c"}, {});
    const DesignSystem d = assemble_design(ds);
    try {
      require_full_column_rank(d);
      FAIL("expected IdentifiabilityError");
    } catch (const IdentifiabilityError& e) {
      CHECK(std::string(e.what()).find("tau[w_c]") != std::string::npos);
    }
  }

  TEST_CASE("fit_lmm chains the three steps") {
    const auto sim = oracle::small_dataset(13, 3, 60, 15);
    const DesignSystem d = assemble_design(sim.dataset);
    const LmmFit fit = fit_lmm(d);
    const auto g = oracle::gls(d, fit.minque.sigma2);
    CHECK(oracle::max_rel_diff(fit.gls.theta, g.theta) < 1e-8);
    const auto b = oracle::blup(d, fit.minque.sigma2, fit.gls.theta);
    CHECK(oracle::max_rel_diff(fit.blup.xi, b.xi) < 1e-8);
    const ParameterSet p = fit.params();
    CHECK(p.theta.size() == d.C.cols());
    CHECK(p.xi.size() == d.num_labs);
  }
}
