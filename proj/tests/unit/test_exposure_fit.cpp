#include <doctest.h>

#include <cmath>
#include <random>

#include "poolerc/error.hpp"
#include "poolerc/exposure_fit.hpp"

using namespace poolerc;

namespace {

SamplerSettings quick_settings(std::uint64_t seed) {
  SamplerSettings s;
  s.seed = seed;
  s.n_warmup = 500;
  s.n_draws = 500;
  return s;
}

ExposurePriors fixed_priors(double sigma_obs, double sigma_household, double sigma_group) {
  ExposurePriors p;
  p.trend_df = 0;
  p.sigma_obs = {{0.0, 1.0}, true, sigma_obs};
  p.sigma_household = {{0.0, 1.0}, true, sigma_household};
  p.sigma_group = {{0.0, 1.0}, true, sigma_group};
  return p;
}

// Unbalanced three-group dataset without clusters.
ExposureDataset conjugate_data(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  ExposureDatasetBuilder b("conj", false);
  const double centre[] = {3.0, 4.0, 5.5};
  for (int g = 0; g < 3; ++g) {
    for (int h = 0; h < 6; ++h) {
      const double alpha = 0.4 * nd(rng);
      const int n = 1 + (h + g) % 4;
      for (int r = 0; r < n; ++r) {
        b.add("g" + std::to_string(g), "", "h" + std::to_string(g) + "_" + std::to_string(h), r, r,
              centre[g] + alpha + 0.3 * nd(rng));
      }
    }
  }
  return b.build();
}

// Joint posterior mean of (eta, alpha_household) for fixed scales by solving
// the normal equations of the Gaussian linear model.
Eigen::VectorXd gls_posterior_mean(const ExposureDataset& d, double eta0, double so, double sh, double sg) {
  const int G = d.n_groups(), H = d.n_households();
  Eigen::MatrixXd prec = Eigen::MatrixXd::Zero(G + H, G + H);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(G + H);
  for (int g = 0; g < G; ++g) {
    prec(g, g) += 1.0 / (sg * sg);
    rhs(g) += eta0 / (sg * sg);
  }
  for (int h = 0; h < H; ++h) prec(G + h, G + h) += 1.0 / (sh * sh);
  for (const auto& o : d.observations) {
    const int a = o.group, c = G + o.household;
    prec(a, a) += 1.0 / (so * so);
    prec(c, c) += 1.0 / (so * so);
    prec(a, c) += 1.0 / (so * so);
    prec(c, a) += 1.0 / (so * so);
    rhs(a) += o.w / (so * so);
    rhs(c) += o.w / (so * so);
  }
  return prec.ldlt().solve(rhs);
}

Eigen::MatrixXd gls_posterior_cov(const ExposureDataset& d, double so, double sh, double sg) {
  const int G = d.n_groups(), H = d.n_households();
  Eigen::MatrixXd prec = Eigen::MatrixXd::Zero(G + H, G + H);
  for (int g = 0; g < G; ++g) prec(g, g) += 1.0 / (sg * sg);
  for (int h = 0; h < H; ++h) prec(G + h, G + h) += 1.0 / (sh * sh);
  for (const auto& o : d.observations) {
    const int a = o.group, c = G + o.household;
    prec(a, a) += 1.0 / (so * so);
    prec(c, c) += 1.0 / (so * so);
    prec(a, c) += 1.0 / (so * so);
    prec(c, a) += 1.0 / (so * so);
  }
  return prec.inverse();
}

}  // namespace

TEST_CASE("pooling factor edge cases") {
  SUBCASE("zero-mean effects with draw-to-draw noise pool completely") {
    Eigen::MatrixXd e(400, 10);
    for (int d = 0; d < 400; ++d) {
      for (int j = 0; j < 10; ++j) e(d, j) = (d % 2 == 0 ? 1.0 : -1.0) * (0.5 + 0.1 * j);
    }
    CHECK(std::abs(pooling_factor(e) - 1.0) < 1e-9);
  }
  SUBCASE("degenerate distinct effects do not pool") {
    Eigen::MatrixXd e(300, 8);
    for (int j = 0; j < 8; ++j) e.col(j).setConstant(0.37 * j - 1.0);
    CHECK(std::abs(pooling_factor(e)) < 1e-9);
  }
  SUBCASE("zero denominator") {
    CHECK(pooling_factor(Eigen::MatrixXd::Constant(50, 4, 2.0)) == 1.0);
  }
  SUBCASE("half-shrunk effects") {
    // Means c/2 and within-draw variance Var(c)/4 + Var(c)/4, so the ratio is 1/2.
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::MatrixXd e(2000, 300);
    Eigen::VectorXd c(300);
    for (int j = 0; j < 300; ++j) c(j) = 2.0 * nd(rng);
    const double noise = std::sqrt((c.array() - c.mean()).square().sum() / 299.0) / 2.0;
    for (int d = 0; d < 2000; ++d) {
      for (int j = 0; j < 300; ++j) e(d, j) = c(j) / 2.0 + noise * nd(rng);
    }
    CHECK(std::abs(pooling_factor(e) - 0.5) < 0.02);
  }
  SUBCASE("plug-in variant") {
    Eigen::MatrixXd e(2, 3);
    e << 1.0, 2.0, 3.0, 1.0, 2.0, 3.0;
    CHECK(pooling_factor_plugin(e, 4.0) == doctest::Approx(0.75));
    CHECK(pooling_factor_plugin(e, 0.5) == 0.0);
    CHECK(pooling_factor_plugin(e, 0.0) == 1.0);
  }
  CHECK_THROWS_AS(pooling_factor(Eigen::MatrixXd::Zero(10, 1)), DomainError);
}

TEST_CASE("household pooling factor decreases as the household scale grows") {
  // Normal-normal posteriors: unit j has n_j observations with noise sd 1.
  const double sigma = 1.0;
  double previous = 2.0;
  for (double sh : {0.1, 0.3, 1.0, 3.0}) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0.0, 1.0);
    const int units = 400, draws = 1000;
    Eigen::MatrixXd e(draws, units);
    for (int j = 0; j < units; ++j) {
      const double n = 1 + j % 5;
      const double v = sigma * sigma / n;
      const double ybar = sh * nd(rng) + std::sqrt(v) * nd(rng);
      const double shrink = v / (v + sh * sh);
      const double mean = (1.0 - shrink) * ybar, sd = std::sqrt((1.0 - shrink) * v);
      for (int d = 0; d < draws; ++d) e(d, j) = mean + sd * nd(rng);
    }
    const double lambda = pooling_factor(e);
    CHECK(lambda <= previous);
    previous = lambda;
  }
  CHECK(previous < 0.2);
}

TEST_CASE("conjugate fit matches the closed-form posterior") {
  const ExposureDataset data = conjugate_data(21);
  const double so = 0.3, sh = 0.4, sg = 2.0, eta0 = 4.0;
  ExposurePriors priors = fixed_priors(so, sh, sg);
  priors.eta0 = eta0;
  const ExposurePosterior post = fit_exposure(data, priors, quick_settings(8));
  const Eigen::VectorXd mean = gls_posterior_mean(data, eta0, so, sh, sg);
  const Eigen::MatrixXd cov = gls_posterior_cov(data, so, sh, sg);

  for (int g = 0; g < 3; ++g) {
    const ParameterSummary& s = post.summary("eta[" + data.groups[static_cast<std::size_t>(g)] + "]");
    const double mcse = std::sqrt(cov(g, g)) / std::sqrt(s.ess);
    CHECK(std::abs(s.mean - mean(g)) < 3.0 * mcse);
    CHECK(s.q025 <= s.q500);
    CHECK(s.q500 <= s.q975);
  }
  CHECK(post.converged);
  CHECK(post.fitted.allFinite());

  // Household means: E[eta_g + alpha_i | w] against the same linear solve.
  const HouseholdMeans hm = household_means(post);
  CHECK(hm.rows.size() == 18);
  const Eigen::MatrixXd values = unit_draws(post, data.units());
  for (std::size_t j = 0; j < hm.rows.size(); ++j) {
    const auto& r = hm.rows[j];
    const int a = r.unit.group, c = data.n_groups() + r.unit.household;
    const double expected = mean(a) + mean(c);
    const double sd = std::sqrt(cov(a, a) + cov(c, c) + 2.0 * cov(a, c));
    std::vector<Eigen::VectorXd> chains;
    for (int k = 0; k < post.draws.n_chains(); ++k) {
      chains.push_back(values.col(static_cast<Eigen::Index>(j)).segment(k * post.draws.n_draws(), post.draws.n_draws()));
    }
    CHECK(std::abs(r.mean - expected) < 4.0 * sd / std::sqrt(ess_bulk(chains)));
    CHECK(std::abs(r.sd / sd - 1.0) < 0.15);
    CHECK(r.q025 < r.mean);
    CHECK(r.mean < r.q975);
  }
}

TEST_CASE("a declared household without observations keeps its prior") {
  ExposureDataset data = conjugate_data(4);
  ExposureDatasetBuilder b("conj", false);
  for (const auto& o : data.observations) {
    b.add(data.groups[static_cast<std::size_t>(o.group)], "", data.households[static_cast<std::size_t>(o.household)],
          o.day, o.time_step, o.w);
  }
  b.declare("g1", "", "empty");
  data = b.build();
  const ExposurePosterior post = fit_exposure(data, fixed_priors(0.3, 0.5, 2.0), quick_settings(3));
  const ParameterSummary& s = post.summary("alpha_household[empty]");
  CHECK(std::abs(s.mean) < 4.0 * 0.5 / std::sqrt(s.ess));
  CHECK(std::abs(s.sd / 0.5 - 1.0) < 0.1);
  CHECK(household_means(post).find("g1", "", "empty") != nullptr);
}

TEST_CASE("shrinkage is stronger for households with fewer observations") {
  ExposureDatasetBuilder b("shrink", true);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (int h = 0; h < 8; ++h) {
    for (int r = 0; r < 4; ++r) b.add("g", "k", "h" + std::to_string(h), r, r, 4.0 + nd(rng));
  }
  b.add("g", "k", "one", 0, 0, 5.0);
  for (int r = 0; r < 10; ++r) b.add("g", "k", "ten", r, r, 5.0);
  for (int h = 0; h < 6; ++h) b.add("g", "k2", "o" + std::to_string(h), 0, 0, 4.0 + nd(rng));
  ExposurePriors priors;
  priors.trend_df = 0;
  const ExposurePosterior post = fit_exposure(b.build(), priors, quick_settings(12));
  const HouseholdMeans hm = household_means(post);
  const double cluster = post.summary("eta[g]").mean + post.summary("alpha_cluster[k]").mean;
  const double one = hm.find("g", "k", "one")->mean, ten = hm.find("g", "k", "ten")->mean;
  CHECK(std::abs(one - cluster) < std::abs(ten - cluster));
  CHECK(std::abs(ten - cluster) < 5.0 - cluster);

  const PoolingFactors pf = pooling_factors(post);
  CHECK(pf.cluster.has_value());
  for (double l : {pf.household, *pf.cluster, pf.observation}) {
    CHECK(l >= 0.0);
    CHECK(l <= 1.0);
  }
  const PoolingFactors plug = pooling_factors(post, PoolingEstimator::PlugIn);
  CHECK(plug.household >= 0.0);
  CHECK(plug.household <= 1.0);
}

TEST_CASE("household means exclude the time trend") {
  ExposureDatasetBuilder b("trend", false);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd(0.0, 0.2);
  for (int h = 0; h < 10; ++h) {
    for (int t = 0; t < 12; ++t) {
      b.add(h < 5 ? "a" : "b", "", "h" + std::to_string(h), 7 * t, t, 4.0 + std::sin(t / 2.0) + nd(rng));
    }
  }
  SamplerSettings s = quick_settings(2);
  s.n_warmup = 300;
  s.n_draws = 200;
  ExposurePosterior post = fit_exposure(b.build(), ExposurePriors{}, s);
  const HouseholdMeans before = household_means(post);
  const Eigen::Index theta = post.model->layout().at("theta").offset;
  for (auto& c : post.draws.chains) c.draws.col(theta).array() += 3.0;
  const HouseholdMeans after = household_means(post);
  for (std::size_t j = 0; j < before.rows.size(); ++j) CHECK(before.rows[j].mean == after.rows[j].mean);

  const HouseholdMeans one = household_means_at_draw(post, 17);
  CHECK(one.provenance == "draw:17");
  const ExposureParams p = post.params(17);
  CHECK(one.rows[0].mean == doctest::Approx(p.eta(one.rows[0].unit.group) + p.alpha_household(one.rows[0].unit.household)));
  CHECK_THROWS_AS(household_means_at_draw(post, 100000), ValidationError);
}

TEST_CASE("exposure assignment") {
  HouseholdMeans means;
  means.rows = {
      {{}, "a", "k", "h1", 2.0, 0, 0, 0},
      {{}, "b", "k", "h1", 5.0, 0, 0, 0},
      {{}, "a", "k", "h2", -1.0, 0, 0, 0},
  };
  SubjectTimeline single{"s1", {{0, 200, "a", "k", "h1"}}};
  SubjectTimeline switched{"s2", {{0, 99, "a", "k", "h1"}, {100, 200, "b", "k", "h1"}}};

  SUBCASE("single segment") {
    for (int washout : {1, 7, 28, 90}) {
      const ExposureAssignment a = assign_exposure({single}, means, washout, {{"s1", 1, 150}, {"s1", 2, 199}});
      for (const auto& r : a.rows) CHECK(r.x == 2.0);
    }
  }
  SUBCASE("two-piece window") {
    // Switch exactly 14 days before t = 113.
    const ExposureAssignment a = assign_exposure({switched}, means, 28, {{"s2", 1, 113}});
    CHECK(a.rows[0].x == doctest::Approx((14 * 2.0 + 14 * 5.0) / 28.0).epsilon(1e-14));
    CHECK(a.rows[0].days_used == 28);
  }
  SUBCASE("linearity in the household means") {
    HouseholdMeans scaled = means;
    for (auto& r : scaled.rows) r.mean *= -2.5;
    const std::vector<PeriodRequest> req{{"s2", 1, 105}, {"s2", 2, 130}, {"s2", 3, 90}};
    const ExposureAssignment a = assign_exposure({switched}, means, 28, req);
    const ExposureAssignment b2 = assign_exposure({switched}, scaled, 28, req);
    for (std::size_t i = 0; i < req.size(); ++i) CHECK(b2.rows[i].x == doctest::Approx(-2.5 * a.rows[i].x));
  }
  SUBCASE("truncation policy") {
    const ExposureAssignment a = assign_exposure({single}, means, 28, {{"s1", 1, 10}});
    CHECK(a.rows[0].days_used == 11);
    CHECK(a.rows[0].x == 2.0);
    CHECK(a.warnings.size() == 1);
    CHECK_THROWS_AS(assign_exposure({single}, means, 28, {{"s1", 1, 10}}, WindowPolicy::Error), ValidationError);
  }
  SUBCASE("invalid inputs") {
    CHECK_THROWS_AS(assign_exposure({single}, means, 28, {{"s1", 1, 201}}), ValidationError);
    CHECK_THROWS_AS(assign_exposure({single}, means, 0, {{"s1", 1, 100}}), ValidationError);
    CHECK_THROWS_AS(assign_exposure({single}, means, 28, {{"nobody", 1, 100}}), ValidationError);
    SubjectTimeline missing{"s3", {{0, 50, "z", "k", "h9"}}};
    CHECK_THROWS_AS(assign_exposure({missing}, means, 28, {{"s3", 1, 40}}), ValidationError);
    SubjectTimeline gap{"s4", {{0, 50, "a", "k", "h1"}, {52, 80, "a", "k", "h2"}}};
    CHECK_THROWS_AS(assign_exposure({gap}, means, 28, {{"s4", 1, 60}}), ValidationError);
    SubjectTimeline overlap{"s5", {{0, 50, "a", "k", "h1"}, {40, 80, "a", "k", "h2"}}};
    CHECK_THROWS_AS(overlap.validate(), ValidationError);
  }
}

TEST_CASE("assignment matches a day-by-day loop on random timelines") {
  std::mt19937_64 rng(77);
  HouseholdMeans means;
  std::normal_distribution<double> nd(4.0, 1.0);
  for (int u = 0; u < 6; ++u) means.rows.push_back({{}, "g", "k", "h" + std::to_string(u), nd(rng), 0, 0, 0});
  std::uniform_int_distribution<int> unit(0, 5), len(1, 60);
  for (int trial = 0; trial < 200; ++trial) {
    SubjectTimeline tl{"s", {}};
    int day = 0;
    std::vector<double> daily;
    while (day < 365) {
      const int u = unit(rng), n = len(rng);
      tl.segments.push_back({day, day + n - 1, "g", "k", "h" + std::to_string(u)});
      for (int i = 0; i < n; ++i) daily.push_back(means.rows[static_cast<std::size_t>(u)].mean);
      day += n;
    }
    std::vector<PeriodRequest> req;
    for (int p = 0; p < 10; ++p) req.push_back({"s", p, 27 + 30 * p + p % 3});
    const ExposureAssignment a = assign_exposure({tl}, means, 28, req, WindowPolicy::Error);
    for (std::size_t i = 0; i < req.size(); ++i) {
      double sum = 0.0;
      for (int t = req[i].day - 27; t <= req[i].day; ++t) sum += daily[static_cast<std::size_t>(t)];
      CHECK(std::abs(a.rows[i].x - sum / 28.0) < 1e-12);
    }
  }
}
