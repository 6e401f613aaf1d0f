#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "poolcal/calibration.hpp"
#include "poolcal/errors.hpp"
#include "poolcal/rng.hpp"

using namespace poolcal;
using Eigen::VectorXd;

namespace {

ParameterSet random_params(std::uint64_t seed, int studies, int p) {
  Rng rng = child_rng(seed, {});
  std::uniform_real_distribution<double> u(0.2, 8.0), v(-2.0, 2.0);
  ParameterSet params;
  params.theta.resize(studies + p);
  for (int k = 0; k < studies + p; ++k) params.theta[k] = v(rng);
  params.xi.resize(studies + 1);
  params.sigma2.lab.resize(studies + 1);
  for (int d = 0; d <= studies; ++d) {
    params.xi[d] = v(rng);
    params.sigma2.lab[d] = u(rng);
  }
  params.sigma2.xi = u(rng);
  params.sigma2.x = u(rng);
  return params;
}

SubjectRecord subject(int study, double local, std::optional<double> central, std::vector<double> w) {
  SubjectRecord r;
  r.id = "s";
  r.study = study;
  r.local = local;
  r.central = central;
  r.w = std::move(w);
  return r;
}

}  // namespace

TEST_SUITE("calibration") {
  TEST_CASE("weight formula on a hand case") {
    // 5 / (5 + 3*2/5)
    CHECK(calibration_weight(5, 3, 2) == doctest::Approx(0.8064516129032258).epsilon(1e-15));
    CHECK_THROWS_AS(calibration_weight(5, 0, 2), ContractError);
    CHECK_THROWS_AS(calibration_weight(-1, 3, 2), ContractError);
  }

  TEST_CASE("matches Gaussian conditioning for both subject kinds") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto params = random_params(seed, 3, 2);
      Rng rng = child_rng(seed, {1});
      std::normal_distribution<double> n(0.0, 3.0);
      for (int study = 0; study < 3; ++study) {
        const int lab = study + 1;
        const auto cal = subject(study, n(rng), n(rng), {n(rng), n(rng)});
        const auto solo = subject(study, n(rng), std::nullopt, {n(rng), n(rng)});
        for (const auto& rec : {cal, solo}) {
          const auto got = calibrate_subject(rec, lab, params);
          const auto want = oracle::condition(rec, lab, params);
          CHECK(got.kind == want.kind);
          CHECK(std::abs(got.x_tilde - want.x_tilde) < 1e-10 * std::max(1.0, std::abs(want.x_tilde)));
          CHECK(std::abs(got.conditional_variance - want.conditional_variance) <
                1e-10 * std::max(1.0, want.conditional_variance));
        }
      }
    }
  }

  TEST_CASE("hand case for a non-calibration subject") {
    ParameterSet p;
    p.theta = (VectorXd(2) << 1.0, 0.5).finished();  // one study, one w
    p.xi = (VectorXd(2) << 0.0, 2.0).finished();
    p.sigma2.lab = (VectorXd(2) << 1.0, 3.0).finished();
    p.sigma2.x = 5.0;
    p.sigma2.xi = 1.0;
    const auto got = calibrate_subject(subject(0, 10.0, std::nullopt, {2.0}), 1, p);
    // mu = 1 + 0.5*2 = 2; (5/8)(10-2) + (3/8)*2 = 5.75
    CHECK(got.x_tilde == doctest::Approx(5.75));
    CHECK(got.conditional_variance == doctest::Approx(15.0 / 8.0));
  }

  TEST_CASE("noiseless labs reproduce the measurement") {
    ParameterSet p;
    p.theta = (VectorXd(1) << 0.3).finished();
    p.xi = (VectorXd(2) << 0.5, -1.0).finished();
    p.sigma2.lab = VectorXd::Zero(2);
    p.sigma2.x = 5.0;
    const auto solo = calibrate_subject(subject(0, 4.0, std::nullopt, {}), 1, p);
    CHECK(solo.x_tilde == doctest::Approx(5.0));
    CHECK(solo.conditional_variance == 0.0);
    // Both labs exact: equal weights on the two de-biased readings.
    const auto both = calibrate_subject(subject(0, 4.0, 4.5, {}), 1, p);
    CHECK(both.x_tilde == doctest::Approx(0.5 * (5.0 + 4.0)));
    CHECK(both.conditional_variance == 0.0);
  }

  TEST_CASE("calibration subjects gain precision") {
    const auto params = random_params(3, 2, 1);
    const auto cal = calibrate_subject(subject(1, 1.0, 2.0, {0.5}), 2, params);
    const auto solo = calibrate_subject(subject(1, 1.0, std::nullopt, {0.5}), 2, params);
    CHECK(cal.conditional_variance < solo.conditional_variance);
  }

  TEST_CASE("lab outside the parameter set is a contract error") {
    const auto params = random_params(4, 2, 1);
    CHECK_THROWS_AS(calibrate_subject(subject(0, 1.0, std::nullopt, {0.0}), 5, params), ContractError);
  }

  TEST_CASE("dataset helpers agree") {
    const auto sim = oracle::small_dataset(21);
    const auto all = calibrate_dataset(sim.dataset, sim.truth);
    const VectorXd means = calibrated_means(sim.dataset, sim.truth);
    REQUIRE(all.size() == sim.dataset.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
      CHECK(all[i].x_tilde == means[static_cast<Eigen::Index>(i)]);
      CHECK((all[i].kind == SubjectKind::calibration) == sim.dataset.subjects()[i].is_calibration());
    }
  }

  TEST_CASE("ICC conventions are complementary") {
    VarianceComponents s2;
    s2.lab = (VectorXd(3) << 2, 3, 6).finished();
    s2.xi = 3;
    s2.x = 5;
    const VectorXd paper = compute_icc(s2, IccConvention::paper);
    const VectorXd conventional = compute_icc(s2, IccConvention::conventional);
    CHECK(paper[0] == doctest::Approx(0.4));
    CHECK(paper[2] == doctest::Approx(6.0 / 9.0));
    CHECK(conventional[1] == doctest::Approx(0.5));
    for (int d = 0; d < 3; ++d) CHECK(paper[d] + conventional[d] == doctest::Approx(1.0));
  }
}
