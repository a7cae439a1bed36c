#pragma once

// Posterior fitting and summaries for the exposure model, pooling factors,
// and assignment of long-term exposures to subjects.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "poolerc/diagnostics.hpp"
#include "poolerc/exposure_model.hpp"
#include "poolerc/sampler.hpp"

namespace poolerc {

struct ExposureFitOptions {
  // Diagnostics for every parameter. When false only the variance components
  // and group means are diagnosed (the rest report NaN).
  bool full_diagnostics = true;
  double rhat_threshold = 1.05;
};

struct ExposurePosterior {
  std::shared_ptr<const ExposureModel> model;
  PosteriorDraws draws;
  Diagnostics diagnostics;
  std::vector<ParameterSummary> summaries;
  Eigen::VectorXd fitted;  // posterior mean of eta + alpha + trend per observation
  std::vector<std::string> warnings;
  bool converged = true;  // false when a variance component has R-hat above threshold

  const ExposureDataset& data() const { return model->data(); }
  int n_total_draws() const { return draws.n_chains() * draws.n_draws(); }
  // Parameters of pooled draw d (chain-major).
  ExposureParams params(int d) const;
  const ParameterSummary& summary(const std::string& name) const;
};

ExposurePosterior fit_exposure(const ExposureDataset& data, const ExposurePriors& priors,
                               const SamplerSettings& settings,
                               const ExposureFitOptions& options = {});

// Draws of eta[g] + alpha_cluster[k] + alpha_household[i] for each unit
// (n_total_draws x units.size()).
Eigen::MatrixXd unit_draws(const ExposurePosterior& posterior,
                           const std::vector<ExposureUnit>& units);

// Pooled draws of the observation-level errors w - (eta + alpha + trend)
// (n_total_draws x n_obs).
Eigen::MatrixXd residual_draws(const ExposurePosterior& posterior);

// ---------------------------------------------------------------------------
// Pooling factors.

enum class PoolingEstimator { DrawWise, PlugIn };

// lambda = 1 - V(posterior means) / mean over draws of V(effects), with V the
// sample variance across units. `effects` is n_draws x n_units. A zero
// denominator gives 1; the result is clipped to [0, 1].
double pooling_factor(const Eigen::MatrixXd& effects);

// Same numerator with the denominator replaced by a plug-in variance
// (e.g. the posterior mean of sigma^2 for the level).
double pooling_factor_plugin(const Eigen::MatrixXd& effects, double variance);

struct PoolingFactors {
  double household = 0.0;
  std::optional<double> cluster;  // absent without a cluster level or with < 2 clusters
  double observation = 0.0;
};

PoolingFactors pooling_factors(const ExposurePosterior& posterior,
                               PoolingEstimator estimator = PoolingEstimator::DrawWise);

// ---------------------------------------------------------------------------
// Household means.

struct HouseholdMean {
  ExposureUnit unit;
  std::string group, cluster, household;  // labels; cluster empty without a cluster level
  double mean = 0.0;  // E[eta_g + alpha_k + alpha_i | w]
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
};

struct HouseholdMeans {
  std::string study;
  std::vector<HouseholdMean> rows;
  // "posterior_mean" or "draw:<index>".
  std::string provenance = "posterior_mean";

  // Row for the labelled unit; nullptr when absent.
  const HouseholdMean* find(const std::string& group, const std::string& cluster,
                            const std::string& household) const;
};

// Posterior summaries over every unit of the dataset (observed or declared).
HouseholdMeans household_means(const ExposurePosterior& posterior);

// The unit values of a single pooled draw (sd and quantiles are zero).
HouseholdMeans household_means_at_draw(const ExposurePosterior& posterior, int draw);

// ---------------------------------------------------------------------------
// Exposure assignment.

struct TimelineSegment {
  int start_day = 0;
  int end_day = 0;  // inclusive
  std::string group, cluster, household;
};

struct SubjectTimeline {
  std::string subject;
  std::vector<TimelineSegment> segments;

  // Segments ordered, non-empty, contiguous and non-overlapping.
  void validate() const;
};

struct PeriodRequest {
  std::string subject;
  int period = 0;
  int day = 0;  // last day t of the period
};

enum class WindowPolicy { Truncate, Error };

struct AssignedExposure {
  std::string subject;
  int period = 0;
  int day = 0;
  double x = 0.0;
  int washout = 0;
  int days_used = 0;  // < washout when the window was truncated
};

struct ExposureAssignment {
  std::string study;
  std::string provenance;
  std::vector<AssignedExposure> rows;
  std::vector<std::string> warnings;
};

// x_it = mean over days t - washout + 1 .. t of the household mean of the
// unit the subject occupies that day.
ExposureAssignment assign_exposure(const std::vector<SubjectTimeline>& timelines,
                                   const HouseholdMeans& means, int washout,
                                   const std::vector<PeriodRequest>& periods,
                                   WindowPolicy policy = WindowPolicy::Truncate);

}  // namespace poolerc
