#pragma once

// Posterior fitting of the pooled outcome model and exposure-response curve
// extraction.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "poolerc/diagnostics.hpp"
#include "poolerc/outcome_model.hpp"
#include "poolerc/sampler.hpp"

namespace poolerc {

struct OutcomeFitOptions {
  // When false only psi, beta0 and the scales are diagnosed.
  bool full_diagnostics = true;
  double rhat_threshold = 1.05;
};

struct OutcomePosterior {
  std::shared_ptr<const OutcomeModel> model;
  PosteriorDraws draws;
  Diagnostics diagnostics;
  std::vector<ParameterSummary> summaries;
  std::vector<std::string> warnings;
  bool converged = true;

  const OutcomeDataset& data() const { return model->data(); }
  int n_total_draws() const { return draws.n_chains() * draws.n_draws(); }
  const ParameterSummary& summary(const std::string& name) const;

  // Pooled beta draws of one curve (n_total_draws x n_basis). `curve` is 0
  // for a shared curve and the study index for per-study curves.
  Eigen::MatrixXd beta_draws(int curve = 0) const;
  // Pooled draws of psi[study].
  Eigen::VectorXd psi_draws(int study) const;
};

OutcomePosterior fit_outcome(const OutcomeDataset& data, const OutcomePriors& priors,
                             const ERCSpec& erc, const SamplerSettings& settings,
                             const OutcomeFitOptions& options = {});

// `n` evenly spaced log exposures between the boundary knots, extended by the
// observed extremes when these fall outside (the basis is clamped there).
std::vector<double> curve_grid(const ERCSpec& erc, int n = 200,
                               std::optional<double> observed_min = std::nullopt,
                               std::optional<double> observed_max = std::nullopt);

struct ERCCurve {
  std::string study;  // empty for a shared curve
  ERCMode mode = ERCMode::Shared;
  BetaConstraint constraint = BetaConstraint::Free;
  std::vector<double> x_log;
  Eigen::VectorXd mean;   // log odds relative to x_ref (plus intercept if absolute)
  Eigen::VectorXd q025;
  Eigen::VectorXd q975;
  Eigen::MatrixXd draws;  // n_draws x grid

  double mean_band_width() const { return (q975 - q025).mean(); }
};

// Per-draw curves (g(x) - g(x_ref))' beta, plus the intercept draw when given.
// `beta` is n_draws x n_basis.
ERCCurve curve_from_draws(const ISplineBasis& basis, const Eigen::MatrixXd& beta, double x_ref,
                          const std::vector<double>& grid,
                          const Eigen::VectorXd* intercept = nullptr);

struct CurveOptions {
  int curve = 0;  // study index for per-study curves
  // Study whose psi draws are added for an absolute curve; unset gives the
  // intercept-free relative curve.
  std::optional<int> intercept_study;
};

ERCCurve extract_curve(const OutcomePosterior& posterior, const std::vector<double>& grid,
                       const CurveOptions& options = {});

// One relative curve per study, anchored at x_ref (the lower boundary knot by
// default). Requires per-study curves.
std::vector<ERCCurve> hierarchical_curves(const OutcomePosterior& posterior,
                                          const std::vector<double>& grid);

}  // namespace poolerc
