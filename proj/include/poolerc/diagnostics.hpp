#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "poolerc/sampler.hpp"

namespace poolerc {

struct ParameterDiagnostics {
  double rhat = 0.0;      // NaN with a single chain or degenerate draws
  double ess_bulk = 0.0;  // 0 for degenerate draws
  bool degenerate = false;
};

struct Diagnostics {
  std::vector<ParameterDiagnostics> parameters;
  int divergences = 0;
  std::vector<double> mean_accept_stat;  // per chain
  std::vector<std::string> warnings;
};

// Rank-normalized split R-hat (the larger of the bulk and folded versions).
// Each element of `chains` holds one chain's draws; all must have equal length.
double split_rhat(const std::vector<Eigen::VectorXd>& chains);

// Rank-normalized split-chain bulk effective sample size, capped at the total
// number of draws.
double ess_bulk(const std::vector<Eigen::VectorXd>& chains);

// Effective sample size of the given (already transformed) chains, Geyer's
// initial monotone sequence estimator.
double ess_basic(const std::vector<Eigen::VectorXd>& chains);

// Standard normal scores of the pooled ranks (average ranks for ties).
std::vector<Eigen::VectorXd> rank_normalize(const std::vector<Eigen::VectorXd>& chains);

ParameterDiagnostics parameter_diagnostics(const std::vector<Eigen::VectorXd>& chains);
Diagnostics compute_diagnostics(const PosteriorDraws& draws);
// Only parameters with include[k] set are diagnosed; the rest report NaN.
Diagnostics compute_diagnostics(const PosteriorDraws& draws, const std::vector<bool>& include);

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q500 = 0.0;
  double q975 = 0.0;
  double rhat = 0.0;
  double ess = 0.0;
};

// Mean, sd and quantiles of pooled draws; rhat and ess left NaN.
ParameterSummary summarize_values(const std::string& name, const Eigen::VectorXd& values);
std::vector<ParameterSummary> summarize(const PosteriorDraws& draws, const Diagnostics& diagnostics);

}  // namespace poolerc
