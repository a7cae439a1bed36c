#pragma once

// Hierarchical model for log pollutant concentrations:
//
//   w[gkit] ~ N(eta[g] + alpha_cluster[k] + alpha_household[i] + f(tau_t)' theta, sigma_obs^2)
//   alpha_household ~ N(0, sigma_household^2), alpha_cluster ~ N(0, sigma_cluster^2)
//   eta[g] ~ N(eta0, sigma_group^2), theta ~ N(theta0, sigma_theta^2 I)
//
// f is a centered natural cubic spline of the coarse model time. Random
// effects are sampled non-centered (standard normal deviates times their
// scale).

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "poolerc/log_density.hpp"
#include "poolerc/spline_basis.hpp"
#include "poolerc/transforms.hpp"

namespace poolerc {

struct ExposureObservation {
  int group = 0;
  int cluster = -1;  // -1 when the study has no cluster level
  int household = 0;
  int day = 0;
  int time_step = 0;  // coarse model time containing `day`
  double w = 0.0;     // natural-log concentration
};

// A (group, cluster, household) combination with its own long-term mean.
struct ExposureUnit {
  int group = 0;
  int cluster = -1;
  int household = 0;
  auto operator<=>(const ExposureUnit&) const = default;
};

struct ExposureDataset {
  std::string study;
  std::vector<std::string> groups;
  std::vector<std::string> clusters;
  std::vector<std::string> households;
  std::vector<ExposureObservation> observations;
  // Units referenced elsewhere (e.g. timelines) that have no observations.
  std::vector<ExposureUnit> declared_units;
  bool has_clusters = true;

  int n_groups() const { return static_cast<int>(groups.size()); }
  int n_clusters() const { return has_clusters ? static_cast<int>(clusters.size()) : 0; }
  int n_households() const { return static_cast<int>(households.size()); }
  int n_obs() const { return static_cast<int>(observations.size()); }

  // Throws ValidationError on inconsistent indices, non-finite w, or a
  // household recorded in two clusters.
  void validate() const;

  // Sorted unique units from observations and declarations.
  std::vector<ExposureUnit> units() const;
};

// Builds an ExposureDataset from labelled records.
class ExposureDatasetBuilder {
 public:
  explicit ExposureDatasetBuilder(std::string study, bool has_clusters = true);

  void add(const std::string& group, const std::string& cluster,
           const std::string& household, int day, int time_step, double w);
  void declare(const std::string& group, const std::string& cluster,
               const std::string& household);
  ExposureDataset build() const;

 private:
  int index(std::map<std::string, int>& map, std::vector<std::string>& labels,
            const std::string& key);

  ExposureDataset data_;
  std::map<std::string, int> group_index_, cluster_index_, household_index_;
};

struct ExposurePriors {
  std::optional<double> eta0;  // defaults to the mean of w
  ScaleComponent sigma_group{{0.0, 2.0}};
  ScaleComponent sigma_theta{{0.0, 5.0}, true, 5.0};
  std::vector<double> theta0;  // empty: zeros
  ScaleComponent sigma_obs{{0.0, 1.0}};
  ScaleComponent sigma_household{{0.0, 1.0}};
  ScaleComponent sigma_cluster{{0.0, 1.0}};
  int trend_df = 4;  // 0 disables the time trend

  void validate() const;
};

struct ExposureParams {
  Eigen::VectorXd eta;
  Eigen::VectorXd alpha_cluster;
  Eigen::VectorXd alpha_household;
  Eigen::VectorXd theta;
  double sigma_obs = 1.0;
  double sigma_household = 1.0;
  double sigma_cluster = 1.0;
  double sigma_group = 1.0;
  double sigma_theta = 1.0;
};

class ExposureModel final : public LogDensity {
 public:
  ExposureModel(ExposureDataset data, ExposurePriors priors);

  Eigen::Index dimension() const override { return layout_.size(); }
  double log_density_gradient(const Eigen::VectorXd& u,
                              Eigen::VectorXd& grad) const override;
  Eigen::VectorXd constrain(const Eigen::VectorXd& u) const override;
  std::vector<std::string> parameter_names() const override;
  Eigen::VectorXd initial_point() const override;

  LogDensityTerms terms(const Eigen::VectorXd& u) const;

  ExposureParams unpack(const Eigen::VectorXd& u) const;
  // Inverse of unpack; fixed scales are ignored.
  Eigen::VectorXd pack(const ExposureParams& p) const;
  // Natural-parameter vector (the layout of constrain()) to ExposureParams.
  ExposureParams unpack_constrained(const Eigen::VectorXd& c) const;

  const ParameterLayout& layout() const { return layout_; }
  const ExposureDataset& data() const { return data_; }
  const ExposurePriors& priors() const { return priors_; }
  double eta0() const { return eta0_; }
  int trend_df() const { return trend_df_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  // Trend basis row for each observation (n_obs x trend_df).
  Eigen::MatrixXd observation_trend_basis() const;
  // Trend basis evaluated at arbitrary model times.
  Eigen::MatrixXd trend_basis(std::span<const double> time_steps) const;

 private:
  double evaluate(const Eigen::VectorXd& u, Eigen::VectorXd* grad,
                  LogDensityTerms* terms) const;

  ExposureDataset data_;
  ExposurePriors priors_;
  ParameterLayout layout_;
  double eta0_ = 0.0;
  int trend_df_ = 0;
  std::optional<NaturalCubicBasis> trend_;
  Eigen::MatrixXd trend_rows_;          // unique time steps x df
  std::vector<int> obs_time_row_;
  std::vector<std::string> warnings_;

  Eigen::Index off_eta_ = 0, off_cluster_ = -1, off_household_ = 0, off_theta_ = -1;
  Eigen::Index off_sigma_obs_ = -1, off_sigma_household_ = -1, off_sigma_cluster_ = -1,
               off_sigma_group_ = -1, off_sigma_theta_ = -1;
};

}  // namespace poolerc
