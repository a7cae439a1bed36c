#include <doctest.h>

#include <cmath>
#include <random>

#include "poolerc/error.hpp"
#include "poolerc/outcome_fit.hpp"

using namespace poolerc;

namespace {

struct StudySpec {
  std::string name;
  double x_lo, x_hi;  // log exposure range
  double psi;
};

// Binomial records with logit = psi + xi + 1.2 * logistic-shaped effect of x.
OutcomeDataset synthetic(const std::vector<StudySpec>& studies, int subjects, int periods, int trials,
                         double sigma_xi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  OutcomeDatasetBuilder b;
  for (const auto& s : studies) {
    std::uniform_real_distribution<double> ux(s.x_lo, s.x_hi);
    for (int i = 0; i < subjects; ++i) {
      const double xi = sigma_xi * nd(rng);
      const double x = ux(rng);
      const double effect = 1.2 / (1.0 + std::exp(-2.5 * (x - 5.0)));
      const double p = 1.0 / (1.0 + std::exp(-(s.psi + xi + effect)));
      std::binomial_distribution<int> bin(trials, p);
      for (int t = 0; t < periods; ++t) b.add(s.name, s.name + "_" + std::to_string(i), t + 1, bin(rng), trials, x);
    }
  }
  return b.build();
}

ERCSpec small_erc(ERCMode mode, BetaConstraint constraint) {
  ERCSpec e;
  e.knots = {3.5, 6.5, {4.5, 5.0, 5.5}};
  e.order = 3;
  e.mode = mode;
  e.constraint = constraint;
  e.x_ref = 3.5;
  return e;
}

OutcomePriors no_time() {
  OutcomePriors p;
  p.time_df = 0;
  return p;
}

SamplerSettings settings(std::uint64_t seed, int n = 250) {
  SamplerSettings s;
  s.seed = seed;
  s.n_warmup = n;
  s.n_draws = n;
  return s;
}

}  // namespace

TEST_CASE("curve extraction from fixed draws") {
  const ERCSpec erc = small_erc(ERCMode::Shared, BetaConstraint::Free);
  const ISplineBasis basis(erc.knots, erc.order);
  const std::vector<double> grid = curve_grid(erc, 50);
  CHECK(grid.size() == 50);
  CHECK(grid.front() == erc.knots.lower);
  CHECK(grid.back() == erc.knots.upper);

  SUBCASE("zero coefficients give a flat curve") {
    const ERCCurve c = curve_from_draws(basis, Eigen::MatrixXd::Zero(20, basis.size()), erc.x_ref, grid);
    CHECK(c.mean.cwiseAbs().maxCoeff() == 0.0);
    CHECK(c.q025.cwiseAbs().maxCoeff() == 0.0);
    CHECK(c.q975.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("a single basis function passes through") {
    for (int j = 0; j < basis.size(); ++j) {
      Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(5, basis.size());
      beta.col(j).setOnes();
      const double ref = 4.2;
      const ERCCurve c = curve_from_draws(basis, beta, ref, grid);
      for (std::size_t r = 0; r < grid.size(); ++r) {
        const double expected = basis.row(grid[r])(j) - basis.row(ref)(j);
        CHECK(c.mean(static_cast<Eigen::Index>(r)) == doctest::Approx(expected).epsilon(1e-12));
        CHECK(std::exp(c.q975(static_cast<Eigen::Index>(r))) == doctest::Approx(std::exp(expected)).epsilon(1e-12));
      }
    }
  }
  SUBCASE("anchor changes shift every draw by a constant") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::MatrixXd beta(30, basis.size());
    for (Eigen::Index i = 0; i < beta.size(); ++i) beta.data()[i] = nd(rng);
    const ERCCurve a = curve_from_draws(basis, beta, 3.5, grid);
    const ERCCurve b = curve_from_draws(basis, beta, 5.1, grid);
    const Eigen::MatrixXd diff = a.draws - b.draws;
    for (Eigen::Index d = 0; d < diff.rows(); ++d) {
      CHECK((diff.row(d).array() - diff(d, 0)).abs().maxCoeff() < 1e-12);
    }
  }
  SUBCASE("grid extension and clamping") {
    const std::vector<double> ext = curve_grid(erc, 10, 3.0, 7.0);
    CHECK(ext.size() == 12);
    CHECK(ext.front() == 3.0);
    CHECK(ext.back() == 7.0);
    Eigen::MatrixXd beta = Eigen::MatrixXd::Ones(3, basis.size());
    const ERCCurve c = curve_from_draws(basis, beta, erc.x_ref, ext);
    CHECK(c.mean(0) == c.mean(1));
    CHECK(c.mean(11) == c.mean(10));
  }
  CHECK_THROWS_AS(curve_from_draws(basis, Eigen::MatrixXd::Zero(3, 2), erc.x_ref, grid), ConfigError);
}

TEST_CASE("intercept-only data recovers the pooled rate") {
  // A flat exposure effect, negligible subject variation and a prior pinning
  // beta near zero: psi is the logit of the pooled rate.
  const OutcomeDataset data = synthetic({{"a", 3.6, 3.6, -1.5}}, 200, 10, 1, 0.0, 2);
  OutcomePriors priors = no_time();
  priors.sigma_xi = {{0.0, 1.0}, true, 0.01};
  priors.sigma_beta = {{0.0, 1.0}, true, 0.01};
  const OutcomePosterior post = fit_outcome(data, priors, small_erc(ERCMode::Shared, BetaConstraint::Free),
                                            settings(5));
  double cases = 0.0, trials = 0.0;
  for (const auto& r : data.records) {
    cases += r.cases;
    trials += r.trials;
  }
  const double rate = cases / trials;
  const ParameterSummary& psi = post.summary("psi[a]");
  CHECK(std::abs(psi.mean - std::log(rate / (1.0 - rate))) < 4.0 * psi.sd / std::sqrt(psi.ess) + 0.01);
  CHECK(psi.q025 <= psi.q500);
  CHECK(psi.q500 <= psi.q975);
  CHECK(post.converged);
}

TEST_CASE("monotone fits store non-negative draws and non-decreasing curves") {
  const OutcomeDataset data = synthetic({{"a", 3.6, 6.4, -2.0}, {"b", 3.8, 6.2, -1.5}}, 120, 6, 1, 0.3, 3);
  for (ERCMode mode : {ERCMode::Shared, ERCMode::Hierarchical}) {
    const OutcomePosterior post =
        fit_outcome(data, no_time(), small_erc(mode, BetaConstraint::NonNegative), settings(6, 250));
    const std::vector<double> grid = curve_grid(small_erc(mode, BetaConstraint::NonNegative));
    const int curves = mode == ERCMode::Shared ? 1 : 2;
    for (int c = 0; c < curves; ++c) {
      CHECK(post.beta_draws(c).minCoeff() >= 0.0);
      CurveOptions opt;
      opt.curve = c;
      opt.intercept_study = c;
      const ERCCurve curve = extract_curve(post, grid, opt);
      int violations = 0;
      for (Eigen::Index r = 1; r < curve.draws.cols(); ++r) {
        violations += (curve.draws.col(r).array() < curve.draws.col(r - 1).array()).count();
        violations += curve.mean(r) < curve.mean(r - 1);
      }
      CHECK(violations == 0);
      CHECK((curve.q025.array() <= curve.mean.array()).all());
      CHECK((curve.mean.array() <= curve.q975.array()).all());
    }
  }
}

TEST_CASE("per-study curves collapse onto the shared curve as xi0 vanishes") {
  // With a per-basis beta0 ~ N(0, sigma_beta^2) and V -> 0 every study's
  // coefficients equal beta0, which is the shared-curve model.
  const OutcomeDataset data = synthetic({{"a", 3.6, 6.4, -2.0}, {"b", 3.6, 6.4, -1.0}}, 150, 6, 1, 0.2, 4);
  const std::vector<double> grid = curve_grid(small_erc(ERCMode::Shared, BetaConstraint::Free), 40);
  const OutcomePosterior shared =
      fit_outcome(data, no_time(), small_erc(ERCMode::Shared, BetaConstraint::Free), settings(7, 300));
  OutcomePriors priors = no_time();
  priors.beta0_per_basis = true;
  priors.xi0 = {1e-4, 1e-4};
  const OutcomePosterior hier =
      fit_outcome(data, priors, small_erc(ERCMode::Hierarchical, BetaConstraint::Free), settings(7, 300));
  const ERCCurve ref = extract_curve(shared, grid);
  for (const ERCCurve& c : hierarchical_curves(hier, grid)) {
    // Two independent fits of the same posterior: means agree to a fraction
    // of the band width.
    const Eigen::ArrayXd tol = 0.25 * (ref.q975 - ref.q025).array() + 1e-3;
    CHECK(((c.mean - ref.mean).array().abs() <= tol).all());
    CHECK(c.mean(0) == 0.0);
    CHECK((c.q975 - c.q025).mean() == doctest::Approx(ref.mean_band_width()).epsilon(0.2));
  }
  CHECK_THROWS_AS(hierarchical_curves(shared, grid), ConfigError);
}

TEST_CASE("studies with identical data get exchangeable per-study curves") {
  // Same records under two study labels; with ones for xi0 and an LKJ(1)
  // prior the two studies' beta posteriors must agree.
  OutcomeDataset base = synthetic({{"a", 3.6, 6.4, -1.5}}, 150, 6, 1, 0.2, 9);
  OutcomeDatasetBuilder b;
  for (const auto& r : base.records) {
    for (const char* s : {"s1", "s2"}) {
      b.add(s, std::string(s) + base.subjects[static_cast<std::size_t>(r.subject)], r.period, r.cases, r.trials, r.x);
    }
  }
  const OutcomePosterior post = fit_outcome(b.build(), no_time(), small_erc(ERCMode::Hierarchical, BetaConstraint::Free),
                                            settings(10));
  for (int j = 1; j <= post.model->n_basis(); ++j) {
    const ParameterSummary& a = post.summary("beta[s1," + std::to_string(j) + "]");
    const ParameterSummary& c = post.summary("beta[s2," + std::to_string(j) + "]");
    const double mcse = std::sqrt(a.sd * a.sd / a.ess + c.sd * c.sd / c.ess);
    CHECK(std::abs(a.mean - c.mean) < 4.0 * mcse);
  }
}

TEST_CASE("disjoint exposure ranges widen per-study bands") {
  const OutcomeDataset data = synthetic({{"lo", 3.6, 4.9, -2.0}, {"hi", 5.1, 6.4, -1.5}}, 150, 6, 1, 0.2, 11);
  const std::vector<double> grid = curve_grid(small_erc(ERCMode::Shared, BetaConstraint::Free), 40);
  const OutcomePosterior shared =
      fit_outcome(data, no_time(), small_erc(ERCMode::Shared, BetaConstraint::NonNegative), settings(12));
  const OutcomePosterior hier =
      fit_outcome(data, no_time(), small_erc(ERCMode::Hierarchical, BetaConstraint::NonNegative), settings(12));
  const double shared_width = extract_curve(shared, grid).mean_band_width();
  double hier_width = 0.0;
  for (const ERCCurve& c : hierarchical_curves(hier, grid)) hier_width += c.mean_band_width() / 2.0;
  CHECK(hier_width > shared_width);
}

TEST_CASE("study order and case-control scaling leave the shared curve unchanged") {
  const std::vector<StudySpec> studies{{"a", 3.6, 6.4, -2.0}, {"b", 3.7, 6.3, -1.0}};
  const OutcomeDataset data = synthetic(studies, 150, 6, 1, 0.2, 13);
  const ERCSpec erc = small_erc(ERCMode::Shared, BetaConstraint::Free);
  const std::vector<double> grid = curve_grid(erc, 40);
  const OutcomePosterior base = fit_outcome(data, no_time(), erc, settings(14));
  const ERCCurve ref = extract_curve(base, grid);

  SUBCASE("permuted studies") {
    OutcomeDatasetBuilder b;
    for (int s : {1, 0}) {
      for (const auto& r : data.records) {
        if (r.study != s) continue;
        b.add(data.studies[static_cast<std::size_t>(s)], data.subjects[static_cast<std::size_t>(r.subject)], r.period,
              r.cases, r.trials, r.x);
      }
    }
    const OutcomePosterior perm = fit_outcome(b.build(), no_time(), erc, settings(14));
    CHECK(perm.data().studies[0] == "b");
    const ERCCurve c = extract_curve(perm, grid);
    CHECK(((c.mean - ref.mean).array().abs() <= 0.25 * (ref.q975 - ref.q025).array() + 1e-3).all());
    for (const char* s : {"psi[a]", "psi[b]"}) {
      CHECK(std::abs(perm.summary(s).mean - base.summary(s).mean) < 0.5 * base.summary(s).sd + 0.05);
    }
  }
  SUBCASE("trials multiplied by a constant") {
    OutcomeDatasetBuilder b;
    for (const auto& r : data.records) {
      b.add(data.studies[static_cast<std::size_t>(r.study)], data.subjects[static_cast<std::size_t>(r.subject)],
            r.period, r.cases, 4 * r.trials, r.x);
    }
    const OutcomePosterior scaled = fit_outcome(b.build(), no_time(), erc, settings(15));
    const ERCCurve c = extract_curve(scaled, grid);
    // Bands overlap at every grid point.
    CHECK(((c.q025.array() <= ref.q975.array()) && (ref.q025.array() <= c.q975.array())).all());
    CHECK(scaled.summary("psi[a]").mean < base.summary("psi[a]").mean - 1.0);
  }
}

TEST_CASE("single-study hierarchical fit has no correlation block") {
  const OutcomeDataset data = synthetic({{"only", 3.6, 6.4, -1.5}}, 60, 4, 1, 0.2, 16);
  const OutcomePosterior post =
      fit_outcome(data, no_time(), small_erc(ERCMode::Hierarchical, BetaConstraint::Free), settings(17, 150));
  CHECK(post.model->layout().find("corr") == nullptr);
  const auto curves = hierarchical_curves(post, curve_grid(post.model->erc(), 20));
  CHECK(curves.size() == 1);
  CHECK(curves[0].study == "only");
  CHECK(curves[0].mean.allFinite());
}
