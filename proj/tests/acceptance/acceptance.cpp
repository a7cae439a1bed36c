// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero when any selected criterion fails.
//
//   acceptance            run every criterion
//   acceptance 1 3 7      run the listed criteria

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <unistd.h>

#include "poolerc/commands.hpp"
#include "poolerc/diagnostics.hpp"
#include "poolerc/exposure_fit.hpp"
#include "poolerc/outcome_fit.hpp"
#include "poolerc/sampler.hpp"
#include "poolerc/simulation.hpp"
#include "poolerc/spline_basis.hpp"

using namespace poolerc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

struct Criterion {
  int id;
  std::string name;
  double time_limit_s;
  std::function<Outcome()> run;
};

double variance(const Eigen::VectorXd& x) {
  return (x.array() - x.mean()).square().sum() / static_cast<double>(x.size() - 1);
}

// ---------------------------------------------------------------------------
// 1. Sampler calibration.

class Gaussian final : public LogDensity {
 public:
  explicit Gaussian(Eigen::MatrixXd precision) : precision_(std::move(precision)) {}
  Eigen::Index dimension() const override { return precision_.rows(); }
  double log_density_gradient(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const override {
    grad = -precision_ * u;
    return 0.5 * u.dot(grad);
  }

 private:
  Eigen::MatrixXd precision_;
};

constexpr double kMeanTol = 0.05;
constexpr double kUnitVarTol = 0.10;
constexpr double kScaledVarTol = 0.15;
constexpr double kCorrTol = 0.05;
constexpr double kRhatMax = 1.01;
constexpr double kEssMin = 400.0;

void check_chain_health(const PosteriorDraws& d, const std::string& target, Outcome& out) {
  const Diagnostics diag = compute_diagnostics(d);
  double worst_rhat = 0.0, min_ess = 1e300;
  for (const auto& p : diag.parameters) {
    worst_rhat = std::max(worst_rhat, p.rhat);
    min_ess = std::min(min_ess, p.ess_bulk);
  }
  out.require(worst_rhat < kRhatMax, target + " R-hat " + fmt::format("{:.4f}", worst_rhat));
  out.require(min_ess >= kEssMin, target + " ESS " + fmt::format("{:.0f}", min_ess));
  out.require(d.divergences() == 0, target + " divergences " + std::to_string(d.divergences()));
  out.note(fmt::format("{} rhat {:.4f} ess {:.0f}", target, worst_rhat, min_ess));
}

Outcome sampler_calibration() {
  Outcome out;
  SamplerSettings s;  // 4 chains x 1000 warmup x 1000 draws

  {
    s.seed = 2024;
    const PosteriorDraws d = nuts_sample(Gaussian(Eigen::MatrixXd::Identity(1, 1)), s);
    const Eigen::VectorXd x = d.pooled(0);
    out.require(std::abs(x.mean()) < kMeanTol, fmt::format("std normal mean {:.4f}", x.mean()));
    out.require(std::abs(variance(x) - 1.0) < kUnitVarTol, fmt::format("std normal var {:.4f}", variance(x)));
    check_chain_health(d, "std-normal", out);
  }
  {
    const std::vector<double> scales{0.01, 0.1, 1.0, 10.0, 100.0};
    Eigen::VectorXd prec(5);
    for (int k = 0; k < 5; ++k) prec(k) = 1.0 / (scales[static_cast<std::size_t>(k)] * scales[static_cast<std::size_t>(k)]);
    s.seed = 7;
    const PosteriorDraws d = nuts_sample(Gaussian(Eigen::MatrixXd(prec.asDiagonal())), s);
    double worst = 0.0;
    for (int k = 0; k < 5; ++k) {
      const double sc = scales[static_cast<std::size_t>(k)];
      worst = std::max(worst, std::abs(variance(d.pooled(k)) / (sc * sc) - 1.0));
    }
    out.require(worst < kScaledVarTol, fmt::format("scaled normals worst relative variance error {:.4f}", worst));
    check_chain_health(d, "scaled", out);
  }
  {
    Eigen::Matrix2d cov;
    cov << 1.0, 0.9, 0.9, 1.0;
    s.seed = 99;
    const PosteriorDraws d = nuts_sample(Gaussian(cov.inverse()), s);
    const Eigen::VectorXd a = d.pooled(0), b = d.pooled(1);
    const double corr = ((a.array() - a.mean()) * (b.array() - b.mean())).sum() /
                        std::sqrt((a.array() - a.mean()).square().sum() * (b.array() - b.mean()).square().sum());
    out.require(std::abs(corr - 0.9) < kCorrTol, fmt::format("correlation {:.4f}", corr));
    out.require(std::abs(a.mean()) < kMeanTol && std::abs(b.mean()) < kMeanTol, "correlated means");
    check_chain_health(d, "correlated", out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// 2. Gradients against central finite differences.

constexpr double kFdStep = 1e-5;
constexpr double kGradTol = 1e-6;
constexpr int kGradPoints = 100;

double gradient_error(const LogDensity& model, const Eigen::VectorXd& u) {
  Eigen::VectorXd grad, tmp;
  model.log_density_gradient(u, grad);
  double worst = 0.0;
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    Eigen::VectorXd up = u, dn = u;
    up(k) += kFdStep;
    dn(k) -= kFdStep;
    const double fd = (model.log_density_gradient(up, tmp) - model.log_density_gradient(dn, tmp)) / (2 * kFdStep);
    worst = std::max(worst, std::abs(fd - grad(k)) / std::max(1.0, std::abs(grad(k))));
  }
  return worst;
}

Eigen::VectorXd random_point(std::mt19937_64& rng, Eigen::Index n, double scale) {
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::VectorXd u(n);
  for (Eigen::Index k = 0; k < n; ++k) u(k) = nd(rng);
  return u;
}

ExposureDataset gradient_exposure_data(std::mt19937_64& rng, bool clusters) {
  ExposureDatasetBuilder b("S", clusters);
  std::normal_distribution<double> noise(0.0, 0.7);
  std::uniform_int_distribution<int> day(0, 364);
  for (int g = 0; g < 2; ++g) {
    for (int k = 0; k < 3; ++k) {
      for (int i = 0; i < 4; ++i) {
        for (int o = 0; o < 1 + i % 3; ++o) {
          const int d = day(rng);
          const std::string kl = clusters ? "k" + std::to_string(g) + std::to_string(k) : "";
          b.add("g" + std::to_string(g), kl, "h" + std::to_string(g) + std::to_string(k) + std::to_string(i), d,
                d / 7, 4.0 + g + noise(rng));
        }
      }
    }
  }
  return b.build();
}

OutcomeDataset gradient_outcome_data(std::mt19937_64& rng) {
  OutcomeDatasetBuilder b({"age", "sex"});
  std::uniform_real_distribution<double> xdist(std::log(40.0), std::log(2500.0));
  std::normal_distribution<double> cov(0.0, 1.0);
  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < 8; ++i) {
      const double x = xdist(rng), c0 = cov(rng);
      for (int t = 1; t <= 6; ++t) {
        const int trials = 1 + (i + t) % 3;
        std::binomial_distribution<int> cases(trials, 0.3);
        b.add("study" + std::to_string(s), "s" + std::to_string(s) + "_" + std::to_string(i), t, cases(rng), trials,
              t > 3 ? x : x - 0.5, {c0, static_cast<double>(i % 2)});
      }
    }
  }
  return b.build();
}

Outcome gradient_suites() {
  Outcome out;
  std::mt19937_64 rng(2718);
  for (bool clusters : {true, false}) {
    ExposurePriors priors;
    priors.sigma_theta.fixed = false;
    const ExposureModel model(gradient_exposure_data(rng, clusters), priors);
    double worst = 0.0;
    for (int p = 0; p < kGradPoints; ++p) {
      worst = std::max(worst, gradient_error(model, model.initial_point() + random_point(rng, model.dimension(), 0.7)));
    }
    const std::string name = std::string("exposure/") + (clusters ? "clusters" : "no-clusters");
    out.require(worst < kGradTol, name);
    out.note(fmt::format("{} {:.1e}", name, worst));
  }
  for (ERCMode mode : {ERCMode::Shared, ERCMode::Hierarchical}) {
    for (BetaConstraint constraint : {BetaConstraint::Free, BetaConstraint::NonNegative}) {
      ERCSpec erc = ERCSpec::application_default();
      erc.mode = mode;
      erc.constraint = constraint;
      OutcomePriors priors;
      priors.time_df = 3;
      priors.lkj_shape = 2.0;
      priors.xi0 = {1.0, 0.5, 2.0};
      const OutcomeModel model(gradient_outcome_data(rng), priors, erc);
      double worst = 0.0;
      for (int p = 0; p < kGradPoints; ++p) {
        worst = std::max(worst, gradient_error(model, model.initial_point() + random_point(rng, model.dimension(), 0.6)));
      }
      const std::string name = std::string("outcome/") + to_string(mode) + "/" + to_string(constraint);
      out.require(worst < kGradTol, name);
      out.note(fmt::format("{} {:.1e}", name, worst));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// 3. Spline properties.

constexpr double kUnityTol = 1e-10;
constexpr double kLinearityTol = 1e-9;
constexpr int kSplineGrid = 10000;

Outcome spline_properties() {
  Outcome out;
  const ERCSpec app = ERCSpec::application_default();
  const KnotSet& k = app.knots;

  std::vector<double> inside(kSplineGrid);
  for (int i = 0; i < kSplineGrid; ++i) inside[static_cast<std::size_t>(i)] = k.lower + (k.upper - k.lower) * i / (kSplineGrid - 1.0);
  inside.back() = k.upper;
  double unity = 0.0;
  for (int degree : {1, 2, 3}) {
    const BasisMatrix b = bspline_basis(inside, degree, k);
    unity = std::max(unity, (b.values.rowwise().sum().array() - 1.0).abs().maxCoeff());
  }
  out.require(unity < kUnityTol, "B-spline partition of unity");
  out.note(fmt::format("partition of unity {:.1e}", unity));

  std::vector<double> wide(kSplineGrid);
  for (int i = 0; i < kSplineGrid; ++i) {
    wide[static_cast<std::size_t>(i)] = k.lower - 0.5 + (k.upper - k.lower + 1.0) * i / (kSplineGrid - 1.0);
  }
  for (int order : {2, 3, 4}) {
    const Eigen::MatrixXd m = ISplineBasis(k, order).evaluate(wide);
    int decreasing = 0;
    for (Eigen::Index r = 1; r < m.rows(); ++r) decreasing += (m.row(r).array() < m.row(r - 1).array()).count();
    out.require(decreasing == 0 && m.minCoeff() >= 0.0 && m.maxCoeff() <= 1.0,
                "I-spline order " + std::to_string(order) + " monotone within [0, 1]");
  }

  // Collinearity from each boundary outward, including the boundary point.
  std::vector<double> weeks(53);
  for (int i = 0; i < 53; ++i) weeks[static_cast<std::size_t>(i)] = i;
  const KnotSet tk = quantile_knots(weeks, 7);
  const NaturalCubicBasis ncs(tk, 8, weeks);
  double worst = 0.0;
  for (double step : {0.5, 3.0, 40.0}) {
    for (int side : {-1, 1}) {
      const double edge = side > 0 ? tk.upper : tk.lower;
      const std::vector<double> xs{edge, edge + side * step, edge + 2 * side * step};
      const Eigen::MatrixXd m = ncs.evaluate(xs);
      const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
      worst = std::max(worst, (m.row(2) - 2.0 * m.row(1) + m.row(0)).cwiseAbs().maxCoeff() / scale);
    }
  }
  out.require(worst < kLinearityTol, "natural cubic boundary linearity");
  out.note(fmt::format("boundary second difference {:.1e}", worst));
  return out;
}

// ---------------------------------------------------------------------------
// 4. Conjugate oracle.

constexpr double kMcseMultiple = 3.0;

Outcome conjugate_oracle() {
  Outcome out;
  std::mt19937_64 rng(21);
  std::normal_distribution<double> nd(0.0, 1.0);
  ExposureDatasetBuilder b("conj", false);
  const double centre[] = {3.0, 4.0, 5.5};
  for (int g = 0; g < 3; ++g) {
    for (int h = 0; h < 6; ++h) {
      const double alpha = 0.4 * nd(rng);
      for (int r = 0; r < 1 + (h + g) % 4; ++r) {
        b.add("g" + std::to_string(g), "", "h" + std::to_string(g) + "_" + std::to_string(h), r, r,
              centre[g] + alpha + 0.3 * nd(rng));
      }
    }
  }
  const ExposureDataset data = b.build();
  const double so = 0.3, sh = 0.4, sg = 2.0, eta0 = 4.0;
  ExposurePriors priors;
  priors.trend_df = 0;
  priors.eta0 = eta0;
  priors.sigma_obs = {{0.0, 1.0}, true, so};
  priors.sigma_household = {{0.0, 1.0}, true, sh};
  priors.sigma_group = {{0.0, 1.0}, true, sg};

  // Gaussian linear model in (eta, alpha): normal equations.
  const int G = data.n_groups(), H = data.n_households();
  Eigen::MatrixXd prec = Eigen::MatrixXd::Zero(G + H, G + H);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(G + H);
  for (int g = 0; g < G; ++g) {
    prec(g, g) += 1.0 / (sg * sg);
    rhs(g) += eta0 / (sg * sg);
  }
  for (int h = 0; h < H; ++h) prec(G + h, G + h) += 1.0 / (sh * sh);
  for (const auto& o : data.observations) {
    const int a = o.group, c = G + o.household;
    const double w = 1.0 / (so * so);
    prec(a, a) += w;
    prec(c, c) += w;
    prec(a, c) += w;
    prec(c, a) += w;
    rhs(a) += o.w * w;
    rhs(c) += o.w * w;
  }
  const Eigen::VectorXd mean = prec.ldlt().solve(rhs);
  const Eigen::MatrixXd cov = prec.inverse();

  SamplerSettings s;
  s.seed = 8;
  const ExposurePosterior post = fit_exposure(data, priors, s);
  for (int g = 0; g < G; ++g) {
    const ParameterSummary& ps = post.summary("eta[" + data.groups[static_cast<std::size_t>(g)] + "]");
    const double mcse = std::sqrt(cov(g, g) / ps.ess);
    const double z = (ps.mean - mean(g)) / mcse;
    out.require(std::abs(z) < kMcseMultiple, "eta[" + data.groups[static_cast<std::size_t>(g)] + "]");
    out.note(fmt::format("eta[{}] {:.4f} vs {:.4f} ({:+.2f} MCSE)", data.groups[static_cast<std::size_t>(g)], ps.mean,
                         mean(g), z));
  }
  return out;
}

// ---------------------------------------------------------------------------
// 5. Exposure simulation error pattern.

constexpr int kExposureReplications = 100;
constexpr double kHouseholdRatioMax = 0.35;

Outcome exposure_error_pattern() {
  Outcome out;
  ExposureStudyConfig cfg;
  cfg.setups = {ExposureSimSetup::preset(1), ExposureSimSetup::preset(2), ExposureSimSetup::preset(3)};
  cfg.replications = kExposureReplications;
  cfg.seed = 20240101;
  cfg.sampler.n_chains = 1;
  cfg.sampler.n_warmup = 200;
  cfg.sampler.n_draws = 200;
  const auto reps = run_exposure_study(cfg);
  const auto table = error_table(reps);
  auto row = [&](int setup, const std::string& est) {
    for (const auto& r : table) {
      if (r.setup == setup && r.estimator == est) return r;
    }
    throw std::runtime_error("missing error table row");
  };
  for (int setup : {1, 2, 3}) {
    const ErrorTableRow m1 = row(setup, "mu1"), m2 = row(setup, "mu2"), m3 = row(setup, "mu3");
    const std::string tag = "setup " + std::to_string(setup);
    out.require(m3.household < m2.household && m2.household < m1.household, tag + " household ordering");
    std::string line = fmt::format("{} household {:.4f}/{:.4f}/{:.4f} group {:.5f}/{:.5f}/{:.5f}", tag, m1.household,
                                   m2.household, m3.household, m1.group, m2.group, m3.group);
    if (setup == 1) {
      const double ratio = m3.household / m1.household;
      out.require(ratio <= kHouseholdRatioMax, fmt::format("setup 1 ratio {:.3f}", ratio));
      line += fmt::format(" ratio {:.3f}", ratio);
    }
    if (setup != 2) out.require(m1.group <= m3.group, tag + " group mu1 <= mu3");
    out.note(line);
  }
  int divergences = 0;
  for (const auto& r : reps) divergences += r.divergences;
  out.note("divergent transitions " + std::to_string(divergences));
  return out;
}

// ---------------------------------------------------------------------------
// 6. Outcome curve recovery.

constexpr int kOutcomeReplications = 50;
constexpr double kBiasFraction = 0.70;
constexpr double kRmseFraction = 0.60;

Outcome curve_recovery() {
  Outcome out;
  OutcomeStudyConfig cfg;
  cfg.outcome.form = ERCForm::Logistic;
  cfg.erc = OutcomeStudyConfig::default_erc();
  cfg.grid = curve_grid(cfg.erc, 50);
  cfg.replications = kOutcomeReplications;
  cfg.seed = 20240202;
  cfg.outcome_priors.time_df = 4;
  cfg.exposure_sampler.n_chains = 1;
  cfg.exposure_sampler.n_warmup = 200;
  cfg.exposure_sampler.n_draws = 200;
  cfg.outcome_sampler.n_chains = 1;
  cfg.outcome_sampler.n_warmup = 150;
  cfg.outcome_sampler.n_draws = 150;
  cfg.cells = {{kCombinedSet, ExposureSource::Modeled, BetaConstraint::Free},
               {kCombinedSet, ExposureSource::Observed, BetaConstraint::Free},
               {0, ExposureSource::Modeled, BetaConstraint::Free},
               {1, ExposureSource::Modeled, BetaConstraint::Free},
               {2, ExposureSource::Modeled, BetaConstraint::Free}};
  const OutcomeStudyResult res = run_outcome_study(cfg);
  const CurveMetrics& modeled = res.cells[0].metrics;
  const CurveMetrics& observed = res.cells[1].metrics;

  int interior = 0, better_bias = 0;
  for (std::size_t g = 0; g < res.grid.size(); ++g) {
    if (res.grid[g] <= cfg.erc.knots.lower || res.grid[g] >= cfg.erc.knots.upper) continue;
    const auto i = static_cast<Eigen::Index>(g);
    ++interior;
    better_bias += std::abs(modeled.relative_bias(i)) < std::abs(observed.relative_bias(i)) ? 1 : 0;
  }
  const double bias_frac = static_cast<double>(better_bias) / interior;
  out.require(bias_frac >= kBiasFraction, "modeled vs observed relative bias");
  out.note(fmt::format("|bias| modeled < observed at {}/{} interior points ({:.2f})", better_bias, interior, bias_frac));

  for (int s = 0; s < 3; ++s) {
    const CurveMetrics& single = res.cells[static_cast<std::size_t>(2 + s)].metrics;
    int better = 0;
    for (Eigen::Index i = 0; i < single.rmse.size(); ++i) better += modeled.rmse(i) < single.rmse(i) ? 1 : 0;
    const double frac = static_cast<double>(better) / static_cast<double>(single.rmse.size());
    out.require(frac >= kRmseFraction, "combined vs setup " + std::to_string(s + 1) + " RMSE");
    out.note(fmt::format("RMSE combined < setup {} at {}/{} ({:.2f})", s + 1, better, single.rmse.size(), frac));
  }
  int unconverged = 0, divergences = 0;
  for (const auto& c : res.cells) {
    unconverged += c.unconverged;
    divergences += c.divergences;
  }
  out.note(fmt::format("unconverged fits {}, divergent transitions {}", unconverged, divergences));
  return out;
}

// ---------------------------------------------------------------------------
// 7. Monotone mode.

Outcome monotone_mode() {
  Outcome out;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 1.0);
  OutcomeDatasetBuilder b;
  struct Study {
    const char* name;
    double lo, hi, psi;
  };
  for (const Study& s : {Study{"a", 3.6, 6.4, -2.0}, Study{"b", 3.8, 6.2, -1.5}}) {
    std::uniform_real_distribution<double> ux(s.lo, s.hi);
    for (int i = 0; i < 120; ++i) {
      const double xi = 0.3 * nd(rng), x = ux(rng);
      const double p = 1.0 / (1.0 + std::exp(-(s.psi + xi + 1.2 / (1.0 + std::exp(-2.5 * (x - 5.0))))));
      std::bernoulli_distribution y(p);
      for (int t = 1; t <= 6; ++t) b.add(s.name, std::string(s.name) + std::to_string(i), t, y(rng), 1, x);
    }
  }
  const OutcomeDataset data = b.build();
  OutcomePriors priors;
  priors.time_df = 0;
  for (ERCMode mode : {ERCMode::Shared, ERCMode::Hierarchical}) {
    ERCSpec erc;
    erc.knots = {3.5, 6.5, {4.5, 5.0, 5.5}};
    erc.mode = mode;
    erc.constraint = BetaConstraint::NonNegative;
    erc.x_ref = 3.5;
    SamplerSettings s;
    s.seed = 6;
    s.n_warmup = 300;
    s.n_draws = 300;
    const OutcomePosterior post = fit_outcome(data, priors, erc, s);
    const std::vector<double> grid = curve_grid(erc, 200, 3.0, 7.0);

    // Every stored coefficient draw, then every curve draw and summary.
    long negative = 0;
    for (int k = 0; k < post.draws.dim(); ++k) {
      if (post.draws.names[static_cast<std::size_t>(k)].rfind("beta[", 0) != 0) continue;
      negative += (post.draws.pooled(k).array() < 0.0).count();
    }
    const int curves = mode == ERCMode::Shared ? 1 : data.n_studies();
    long decreasing = 0;
    for (int c = 0; c < curves; ++c) {
      negative += (post.beta_draws(c).array() < 0.0).count();
      for (const bool absolute : {false, true}) {
        CurveOptions opt;
        opt.curve = c;
        if (absolute) opt.intercept_study = c;
        const ERCCurve curve = extract_curve(post, grid, opt);
        for (Eigen::Index r = 1; r < curve.draws.cols(); ++r) {
          decreasing += (curve.draws.col(r).array() < curve.draws.col(r - 1).array()).count();
          decreasing += curve.mean(r) < curve.mean(r - 1);
          decreasing += curve.q025(r) < curve.q025(r - 1);
          decreasing += curve.q975(r) < curve.q975(r - 1);
        }
      }
    }
    const std::string tag = to_string(mode);
    out.require(negative == 0, tag + " negative beta draws " + std::to_string(negative));
    out.require(decreasing == 0, tag + " decreasing curve steps " + std::to_string(decreasing));
    out.note(fmt::format("{}: {} draws, {} curve(s)", tag, post.n_total_draws(), curves));
  }
  return out;
}

// ---------------------------------------------------------------------------
// 8. Pooling factor edge cases.

constexpr double kExactTol = 1e-9;
constexpr double kHalfTol = 0.02;

Outcome pooling_edges() {
  Outcome out;
  Eigen::MatrixXd complete(400, 10);
  for (int d = 0; d < 400; ++d) {
    for (int j = 0; j < 10; ++j) complete(d, j) = (d % 2 == 0 ? 1.0 : -1.0) * (0.5 + 0.1 * j);
  }
  const double l1 = pooling_factor(complete);
  out.require(std::abs(l1 - 1.0) < kExactTol, "complete pooling");

  Eigen::MatrixXd none(300, 8);
  for (int j = 0; j < 8; ++j) none.col(j).setConstant(0.37 * j - 1.0);
  const double l0 = pooling_factor(none);
  out.require(std::abs(l0) < kExactTol, "no pooling");

  // Means c/2, draw noise with variance Var(c)/4: ratio 1/2 by construction.
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::MatrixXd half(2000, 300);
  Eigen::VectorXd c(300);
  for (int j = 0; j < 300; ++j) c(j) = 2.0 * nd(rng);
  const double noise = std::sqrt(variance(c)) / 2.0;
  for (int d = 0; d < 2000; ++d) {
    for (int j = 0; j < 300; ++j) half(d, j) = c(j) / 2.0 + noise * nd(rng);
  }
  const double lh = pooling_factor(half);
  out.require(std::abs(lh - 0.5) < kHalfTol, "half pooling");
  out.note(fmt::format("lambda complete {} none {} half {:.4f}", l1, l0, lh));
  return out;
}

// ---------------------------------------------------------------------------
// 9. End-to-end determinism.

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  Outcome out;
  const fs::path dir = fs::temp_directory_path() / ("poolerc_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  std::ostringstream log;
  write_example_data(dir, 17, log);
  for (const char* run : {"run1", "run2"}) {
    CommandOptions opt;
    opt.out = dir / run;
    const RunConfig cfg = apply_options(load_config(dir / "config.json"), opt);
    fit_exposure_command(cfg, log);
    assign_exposure_command(cfg, std::nullopt, log);
    fit_outcome_command(cfg, log);
  }
  int files = 0, differ = 0;
  for (const auto& e : fs::directory_iterator(dir / "run1")) {
    if (e.path().extension() != ".csv") continue;
    ++files;
    const fs::path other = dir / "run2" / e.path().filename();
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) ++differ;
  }
  int files2 = 0;
  for (const auto& e : fs::directory_iterator(dir / "run2")) files2 += e.path().extension() == ".csv" ? 1 : 0;
  out.require(files >= 10 && files == files2, "output file sets");
  out.require(differ == 0, std::to_string(differ) + " files differ");
  out.note(fmt::format("{} CSV files compared byte for byte", files));
  fs::remove_all(dir);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "sampler calibration", 30.0, sampler_calibration},
      {2, "gradient suites", 10.0, gradient_suites},
      {3, "spline properties", 5.0, spline_properties},
      {4, "conjugate oracle", 60.0, conjugate_oracle},
      {5, "exposure simulation pattern", 1800.0, exposure_error_pattern},
      {6, "outcome curve recovery", 3600.0, curve_recovery},
      {7, "monotone mode", 600.0, monotone_mode},
      {8, "pooling factor edge cases", 10.0, pooling_edges},
      {9, "end-to-end determinism", 600.0, determinism},
  };
  std::vector<int> selected;
  for (int a = 1; a < argc; ++a) selected.push_back(std::atoi(argv[a]));

  bool all = true;
  for (const auto& c : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.require(secs <= c.time_limit_s, fmt::format("runtime over {:.0f} s", c.time_limit_s));
    all = all && o.pass;
    std::cout << fmt::format("[{}] {}. {} ({:.1f} s): {}", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail)
              << std::endl;
  }
  return all ? 0 : 1;
}
