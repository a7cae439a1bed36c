#pragma once

// Simulation studies for the exposure and outcome models: data generators,
// the three long-term exposure estimators, error tables, and pointwise
// exposure-response curve metrics.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "poolerc/exposure_fit.hpp"
#include "poolerc/outcome_fit.hpp"

namespace poolerc {

// ---------------------------------------------------------------------------
// Exposure simulation.

struct ExposureSimSetup {
  int id = 1;
  std::vector<double> group_means{4.0, 5.0};
  int clusters_per_group = 12;      // 0: no cluster level
  int households_per_cluster = 50;  // households per group without clusters
  int obs_per_household = 2;
  double sigma_w = 0.8;
  double sigma_h = 0.3;
  double sigma_k = 0.2;
  double trend_amplitude = 0.5;
  double trend_period = 365.0;  // days
  int n_days = 365;             // observation days 0 .. n_days - 1
  int time_step_days = 7;

  // Defaults for setups 1, 2 and 3. Throws ConfigError for other ids.
  static ExposureSimSetup preset(int id);
  // One observation per household (sensitivity variant of a preset).
  static ExposureSimSetup single_observation(int id);
  void validate() const;

  bool has_clusters() const { return clusters_per_group > 0; }
  int n_groups() const { return static_cast<int>(group_means.size()); }
  int n_households() const;
  double trend(double day) const;
};

struct SimTruths {
  std::vector<double> group;      // eta_g
  std::vector<double> cluster;    // eta_g + alpha_k, indexed by dataset cluster
  std::vector<double> household;  // eta_g + alpha_k + alpha_i, indexed by dataset household
  std::vector<int> household_group;
  std::vector<int> household_cluster;  // -1 without clusters
  std::vector<int> cluster_group;
};

struct ExposureSim {
  ExposureDataset data;
  SimTruths truths;
};

ExposureSim simulate_exposure(const ExposureSimSetup& setup, std::uint64_t seed);

// Estimates of the group, cluster and household means (indexed like SimTruths).
struct LevelEstimates {
  std::vector<double> group;
  std::vector<double> cluster;
  std::vector<double> household;
};

struct Estimators {
  LevelEstimates observed;     // averages of the raw observations
  LevelEstimates with_trend;   // posterior mean including the average fitted trend
  LevelEstimates model;        // posterior mean of the long-term mean
};

// Household-level estimates are averaged uniformly to clusters and groups.
Estimators estimators(const ExposureSim& sim, const ExposurePosterior& posterior);

// Squared errors summed over the units of one replication, with counts.
struct LevelErrors {
  std::array<double, 3> sse{};  // group, cluster, household
  std::array<int, 3> count{};
};

LevelErrors level_errors(const LevelEstimates& estimate, const SimTruths& truths);

struct ErrorTableRow {
  int setup = 0;
  std::string estimator;  // "mu1", "mu2", "mu3"
  double group = 0.0;     // MSE against eta_g
  std::optional<double> cluster;  // MSEP; absent without clusters
  double household = 0.0;         // MSEP
};

struct ExposureReplication {
  int setup = 0;
  int replication = 0;
  std::array<LevelErrors, 3> errors;  // mu1, mu2, mu3
  bool converged = true;
  int divergences = 0;
};

std::vector<ErrorTableRow> error_table(const std::vector<ExposureReplication>& replications);

struct ExposureStudyConfig {
  std::vector<ExposureSimSetup> setups;
  int replications = 100;
  std::uint64_t seed = 1;
  ExposurePriors priors;
  SamplerSettings sampler;
  int n_threads = 0;  // replications in parallel; 0: hardware concurrency
};

std::vector<ExposureReplication> run_exposure_study(const ExposureStudyConfig& config);

// ---------------------------------------------------------------------------
// Outcome simulation.

enum class ERCForm { Linear, Logistic };
enum class ExposureSource { True, Modeled, Observed };

const char* to_string(ERCForm form);
const char* to_string(ExposureSource source);

// LINEAR: log(1 + 0.5 (x - log 5)); LOGISTIC: log(1 + 1 / (1 + exp(-3 (x - 4)))).
double true_erc(ERCForm form, double x);

struct OutcomeSimSetup {
  ERCForm form = ERCForm::Logistic;
  double psi = -3.0;
  double sigma_xi = 0.25;
  int n_periods = 12;
  int trials = 1;
  double time_amplitude = 1.0;  // cosine over one year of periods
};

// One subject per entry of `exposure`, observed for every period with
// logit mu = psi + xi_i + h(t) + g(x_i).
OutcomeDataset simulate_outcome(const OutcomeSimSetup& setup, const std::string& study,
                                const std::vector<double>& exposure, std::uint64_t seed);

// Copy of `data` with each subject's exposure replaced (x[subject index]).
OutcomeDataset with_exposure(const OutcomeDataset& data, const std::vector<double>& x);

// Studies concatenated in order; subject labels are prefixed by the study.
OutcomeDataset combine_outcomes(const std::vector<OutcomeDataset>& parts);

struct CurveMetrics {
  std::vector<double> x_log;
  Eigen::VectorXd truth;          // psi + g(x)
  Eigen::VectorXd relative_bias;  // mean(estimate - truth) / truth
  Eigen::VectorXd rmse;
};

// `estimates` is replications x grid (absolute log-odds curves).
CurveMetrics curve_metrics(const Eigen::MatrixXd& estimates, const std::vector<double>& grid,
                           ERCForm form, double psi);

// Posterior mean of psi + (g(x) - g(x_ref))' beta on the grid, with psi the
// draw-wise average over studies.
Eigen::VectorXd absolute_curve(const OutcomePosterior& posterior, const std::vector<double>& grid);

// Fit sets: setups 1..3 are 0..2, the combined fit is 3.
inline constexpr int kCombinedSet = 3;

struct OutcomeCell {
  int set = kCombinedSet;
  ExposureSource source = ExposureSource::Modeled;
  BetaConstraint constraint = BetaConstraint::Free;
};

struct OutcomeStudyConfig {
  std::array<ExposureSimSetup, 3> setups{ExposureSimSetup::preset(1), ExposureSimSetup::preset(2),
                                          ExposureSimSetup::preset(3)};
  OutcomeSimSetup outcome;
  ERCSpec erc;  // common knots; shared curve
  std::vector<OutcomeCell> cells;
  int replications = 50;
  std::uint64_t seed = 1;
  ExposurePriors exposure_priors;
  OutcomePriors outcome_priors;
  SamplerSettings exposure_sampler;
  SamplerSettings outcome_sampler;
  std::vector<double> grid;
  int n_threads = 0;

  // Knots at (2, 7) with interior knots 3, 4, 5 and 6; x_ref = 2.
  static ERCSpec default_erc();
  // Every set, source and constraint.
  static std::vector<OutcomeCell> all_cells();
};

struct OutcomeCellResult {
  OutcomeCell cell;
  Eigen::MatrixXd estimates;  // replications x grid
  CurveMetrics metrics;
  int divergences = 0;
  int unconverged = 0;
};

struct OutcomeStudyResult {
  std::vector<double> grid;
  std::vector<OutcomeCellResult> cells;
};

OutcomeStudyResult run_outcome_study(const OutcomeStudyConfig& config);

// Independent stream seed for (master seed, replication, stream).
std::uint64_t stream_seed(std::uint64_t seed, int replication, int stream);

}  // namespace poolerc
