#include "poolerc/exposure_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "poolerc/error.hpp"

namespace poolerc {

using detail::half_normal_lpdf;
using detail::kHalfLog2Pi;
using detail::normal_lpdf;

void ExposureDataset::validate() const {
  auto fail = [&](std::size_t row, const std::string& what) {
    throw ValidationError("exposure data (" + study + "), observation " +
                          std::to_string(row + 1) + ": " + what);
  };
  for (std::size_t r = 0; r < observations.size(); ++r) {
    const auto& o = observations[r];
    if (o.group < 0 || o.group >= n_groups()) fail(r, "group index out of range");
    if (o.household < 0 || o.household >= n_households()) fail(r, "household index out of range");
    if (has_clusters) {
      if (o.cluster < 0 || o.cluster >= static_cast<int>(clusters.size())) {
        fail(r, "cluster index out of range");
      }
    } else if (o.cluster != -1) {
      fail(r, "cluster given for a study without cluster level");
    }
    if (!std::isfinite(o.w)) fail(r, "log concentration is not finite");
  }
  for (const auto& u : declared_units) {
    if (u.group < 0 || u.group >= n_groups() || u.household < 0 ||
        u.household >= n_households() ||
        (has_clusters ? (u.cluster < 0 || u.cluster >= static_cast<int>(clusters.size()))
                      : u.cluster != -1)) {
      throw ValidationError("exposure data (" + study + "): declared unit out of range");
    }
  }
  if (groups.empty()) throw ValidationError("exposure data (" + study + "): no groups");
}

std::vector<ExposureUnit> ExposureDataset::units() const {
  std::set<ExposureUnit> set(declared_units.begin(), declared_units.end());
  for (const auto& o : observations) set.insert({o.group, o.cluster, o.household});
  return {set.begin(), set.end()};
}

ExposureDatasetBuilder::ExposureDatasetBuilder(std::string study, bool has_clusters) {
  data_.study = std::move(study);
  data_.has_clusters = has_clusters;
}

int ExposureDatasetBuilder::index(std::map<std::string, int>& map,
                                  std::vector<std::string>& labels,
                                  const std::string& key) {
  auto [it, inserted] = map.try_emplace(key, static_cast<int>(labels.size()));
  if (inserted) labels.push_back(key);
  return it->second;
}

void ExposureDatasetBuilder::add(const std::string& group, const std::string& cluster,
                                 const std::string& household, int day, int time_step,
                                 double w) {
  ExposureObservation o;
  o.group = index(group_index_, data_.groups, group);
  o.cluster = data_.has_clusters ? index(cluster_index_, data_.clusters, cluster) : -1;
  o.household = index(household_index_, data_.households, household);
  o.day = day;
  o.time_step = time_step;
  o.w = w;
  data_.observations.push_back(o);
}

void ExposureDatasetBuilder::declare(const std::string& group, const std::string& cluster,
                                     const std::string& household) {
  ExposureUnit u;
  u.group = index(group_index_, data_.groups, group);
  u.cluster = data_.has_clusters ? index(cluster_index_, data_.clusters, cluster) : -1;
  u.household = index(household_index_, data_.households, household);
  data_.declared_units.push_back(u);
}

ExposureDataset ExposureDatasetBuilder::build() const {
  ExposureDataset out = data_;
  out.validate();
  return out;
}

void ExposurePriors::validate() const {
  for (const ScaleComponent* c :
       {&sigma_group, &sigma_theta, &sigma_obs, &sigma_household, &sigma_cluster}) {
    if (!(c->prior.scale > 0.0)) throw ConfigError("exposure priors: half-normal scale must be > 0");
    if (c->fixed && !(c->fixed_value > 0.0)) {
      throw ConfigError("exposure priors: fixed scales must be > 0");
    }
  }
  if (trend_df < 0) throw ConfigError("exposure priors: trend df must be >= 0");
}

ExposureModel::ExposureModel(ExposureDataset data, ExposurePriors priors)
    : data_(std::move(data)), priors_(std::move(priors)) {
  data_.validate();
  priors_.validate();

  if (priors_.eta0) {
    eta0_ = *priors_.eta0;
  } else if (!data_.observations.empty()) {
    double s = 0.0;
    for (const auto& o : data_.observations) s += o.w;
    eta0_ = s / data_.n_obs();
  }

  // Time trend over the coarse model time.
  trend_df_ = priors_.trend_df;
  std::vector<double> steps;
  for (const auto& o : data_.observations) steps.push_back(o.time_step);
  std::vector<double> unique_steps(steps);
  std::sort(unique_steps.begin(), unique_steps.end());
  unique_steps.erase(std::unique(unique_steps.begin(), unique_steps.end()), unique_steps.end());
  if (trend_df_ > 0 && unique_steps.size() < 2) {
    warnings_.push_back("time trend disabled: fewer than two distinct model times");
    trend_df_ = 0;
  }
  if (trend_df_ > 0) {
    KnotSet knots = quantile_knots(steps, trend_df_ - 1);
    if (knots.n_interior() != trend_df_ - 1) {
      warnings_.push_back("time trend df reduced to " + std::to_string(knots.n_interior() + 1) +
                          ": too few distinct model times for the requested knots");
      trend_df_ = knots.n_interior() + 1;
    }
    std::vector<double> grid;
    for (int t = static_cast<int>(unique_steps.front()); t <= static_cast<int>(unique_steps.back()); ++t) {
      grid.push_back(t);
    }
    trend_.emplace(knots, trend_df_, grid);
    trend_rows_ = trend_->evaluate(unique_steps);
    obs_time_row_.reserve(data_.observations.size());
    for (const auto& o : data_.observations) {
      const auto it = std::lower_bound(unique_steps.begin(), unique_steps.end(),
                                       static_cast<double>(o.time_step));
      obs_time_row_.push_back(static_cast<int>(it - unique_steps.begin()));
    }
  }
  if (!priors_.theta0.empty() && static_cast<int>(priors_.theta0.size()) != trend_df_) {
    throw ConfigError("exposure priors: theta0 length must equal the trend df");
  }

  off_eta_ = layout_.add("eta", data_.n_groups(), Transform::Identity, data_.groups);
  if (data_.has_clusters) {
    off_cluster_ = layout_.add("alpha_cluster", data_.n_clusters(), Transform::Identity,
                               data_.clusters);
  }
  off_household_ = layout_.add("alpha_household", data_.n_households(), Transform::Identity,
                               data_.households);
  if (trend_df_ > 0) off_theta_ = layout_.add("theta", trend_df_, Transform::Identity);
  auto add_scale = [&](const char* name, const ScaleComponent& c) -> Eigen::Index {
    return c.fixed ? -1 : layout_.add(name, 1, Transform::Log);
  };
  off_sigma_obs_ = add_scale("sigma_obs", priors_.sigma_obs);
  off_sigma_household_ = add_scale("sigma_household", priors_.sigma_household);
  if (data_.has_clusters) off_sigma_cluster_ = add_scale("sigma_cluster", priors_.sigma_cluster);
  off_sigma_group_ = add_scale("sigma_group", priors_.sigma_group);
  if (trend_df_ > 0) off_sigma_theta_ = add_scale("sigma_theta", priors_.sigma_theta);
}

std::vector<std::string> ExposureModel::parameter_names() const {
  return layout_.element_names();
}

Eigen::MatrixXd ExposureModel::observation_trend_basis() const {
  Eigen::MatrixXd out(data_.n_obs(), trend_df_);
  for (int n = 0; n < data_.n_obs(); ++n) {
    if (trend_df_ > 0) out.row(n) = trend_rows_.row(obs_time_row_[static_cast<std::size_t>(n)]);
  }
  return out;
}

Eigen::MatrixXd ExposureModel::trend_basis(std::span<const double> time_steps) const {
  if (trend_df_ == 0) return Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(time_steps.size()), 0);
  return trend_->evaluate(time_steps);
}

namespace {

double scale_value(const Eigen::VectorXd& u, Eigen::Index offset, const ScaleComponent& c) {
  return offset < 0 ? c.fixed_value : std::exp(u(offset));
}

}  // namespace

ExposureParams ExposureModel::unpack(const Eigen::VectorXd& u) const {
  ExposureParams p;
  p.sigma_obs = scale_value(u, off_sigma_obs_, priors_.sigma_obs);
  p.sigma_household = scale_value(u, off_sigma_household_, priors_.sigma_household);
  p.sigma_cluster = data_.has_clusters ? scale_value(u, off_sigma_cluster_, priors_.sigma_cluster) : 0.0;
  p.sigma_group = scale_value(u, off_sigma_group_, priors_.sigma_group);
  p.sigma_theta = trend_df_ > 0 ? scale_value(u, off_sigma_theta_, priors_.sigma_theta) : 0.0;
  p.eta = u.segment(off_eta_, data_.n_groups());
  p.alpha_cluster = data_.has_clusters
                        ? Eigen::VectorXd(p.sigma_cluster * u.segment(off_cluster_, data_.n_clusters()))
                        : Eigen::VectorXd();
  p.alpha_household = p.sigma_household * u.segment(off_household_, data_.n_households());
  p.theta = trend_df_ > 0 ? Eigen::VectorXd(u.segment(off_theta_, trend_df_)) : Eigen::VectorXd();
  return p;
}

Eigen::VectorXd ExposureModel::pack(const ExposureParams& p) const {
  Eigen::VectorXd u(layout_.size());
  u.segment(off_eta_, data_.n_groups()) = p.eta;
  if (data_.has_clusters) u.segment(off_cluster_, data_.n_clusters()) = p.alpha_cluster / p.sigma_cluster;
  u.segment(off_household_, data_.n_households()) = p.alpha_household / p.sigma_household;
  if (trend_df_ > 0) u.segment(off_theta_, trend_df_) = p.theta;
  if (off_sigma_obs_ >= 0) u(off_sigma_obs_) = std::log(p.sigma_obs);
  if (off_sigma_household_ >= 0) u(off_sigma_household_) = std::log(p.sigma_household);
  if (off_sigma_cluster_ >= 0) u(off_sigma_cluster_) = std::log(p.sigma_cluster);
  if (off_sigma_group_ >= 0) u(off_sigma_group_) = std::log(p.sigma_group);
  if (off_sigma_theta_ >= 0) u(off_sigma_theta_) = std::log(p.sigma_theta);
  return u;
}

Eigen::VectorXd ExposureModel::constrain(const Eigen::VectorXd& u) const {
  const ExposureParams p = unpack(u);
  Eigen::VectorXd c = u;
  if (data_.has_clusters) c.segment(off_cluster_, data_.n_clusters()) = p.alpha_cluster;
  c.segment(off_household_, data_.n_households()) = p.alpha_household;
  if (off_sigma_obs_ >= 0) c(off_sigma_obs_) = p.sigma_obs;
  if (off_sigma_household_ >= 0) c(off_sigma_household_) = p.sigma_household;
  if (off_sigma_cluster_ >= 0) c(off_sigma_cluster_) = p.sigma_cluster;
  if (off_sigma_group_ >= 0) c(off_sigma_group_) = p.sigma_group;
  if (off_sigma_theta_ >= 0) c(off_sigma_theta_) = p.sigma_theta;
  return c;
}

ExposureParams ExposureModel::unpack_constrained(const Eigen::VectorXd& c) const {
  ExposureParams p;
  auto scale = [&](Eigen::Index off, const ScaleComponent& comp) {
    return off < 0 ? comp.fixed_value : c(off);
  };
  p.sigma_obs = scale(off_sigma_obs_, priors_.sigma_obs);
  p.sigma_household = scale(off_sigma_household_, priors_.sigma_household);
  p.sigma_cluster = data_.has_clusters ? scale(off_sigma_cluster_, priors_.sigma_cluster) : 0.0;
  p.sigma_group = scale(off_sigma_group_, priors_.sigma_group);
  p.sigma_theta = trend_df_ > 0 ? scale(off_sigma_theta_, priors_.sigma_theta) : 0.0;
  p.eta = c.segment(off_eta_, data_.n_groups());
  if (data_.has_clusters) p.alpha_cluster = c.segment(off_cluster_, data_.n_clusters());
  p.alpha_household = c.segment(off_household_, data_.n_households());
  if (trend_df_ > 0) p.theta = c.segment(off_theta_, trend_df_);
  return p;
}

Eigen::VectorXd ExposureModel::initial_point() const {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(layout_.size());
  std::vector<double> sum(static_cast<std::size_t>(data_.n_groups()), 0.0);
  std::vector<int> count(static_cast<std::size_t>(data_.n_groups()), 0);
  double ss = 0.0;
  for (const auto& o : data_.observations) {
    sum[static_cast<std::size_t>(o.group)] += o.w;
    ++count[static_cast<std::size_t>(o.group)];
    ss += (o.w - eta0_) * (o.w - eta0_);
  }
  for (int g = 0; g < data_.n_groups(); ++g) {
    u(off_eta_ + g) = count[static_cast<std::size_t>(g)] > 0
                          ? sum[static_cast<std::size_t>(g)] / count[static_cast<std::size_t>(g)]
                          : eta0_;
  }
  const double sd = data_.n_obs() > 1 ? std::sqrt(ss / (data_.n_obs() - 1)) : 1.0;
  if (off_sigma_obs_ >= 0) u(off_sigma_obs_) = std::log(std::max(0.5 * sd, 1e-3));
  if (off_sigma_household_ >= 0) u(off_sigma_household_) = std::log(std::max(0.25 * sd, 1e-3));
  if (off_sigma_cluster_ >= 0) u(off_sigma_cluster_) = std::log(std::max(0.25 * sd, 1e-3));
  return u;
}

double ExposureModel::log_density_gradient(const Eigen::VectorXd& u,
                                           Eigen::VectorXd& grad) const {
  grad.setZero(layout_.size());
  const double lp = evaluate(u, &grad, nullptr);
  if (!std::isfinite(lp)) return -std::numeric_limits<double>::infinity();
  return lp;
}

LogDensityTerms ExposureModel::terms(const Eigen::VectorXd& u) const {
  LogDensityTerms t;
  evaluate(u, nullptr, &t);
  return t;
}

double ExposureModel::evaluate(const Eigen::VectorXd& u, Eigen::VectorXd* grad,
                               LogDensityTerms* terms) const {
  const int n_groups = data_.n_groups();
  const int n_clusters = data_.n_clusters();
  const int n_households = data_.n_households();

  const double s_obs = scale_value(u, off_sigma_obs_, priors_.sigma_obs);
  const double s_hh = scale_value(u, off_sigma_household_, priors_.sigma_household);
  const double s_cl = data_.has_clusters ? scale_value(u, off_sigma_cluster_, priors_.sigma_cluster) : 0.0;
  const double s_grp = scale_value(u, off_sigma_group_, priors_.sigma_group);
  const double s_th = trend_df_ > 0 ? scale_value(u, off_sigma_theta_, priors_.sigma_theta) : 0.0;

  const double* eta = u.data() + off_eta_;
  const double* z_cl = data_.has_clusters ? u.data() + off_cluster_ : nullptr;
  const double* z_hh = u.data() + off_household_;

  Eigen::VectorXd trend_value;
  if (trend_df_ > 0) trend_value = trend_rows_ * u.segment(off_theta_, trend_df_);

  double d_s_obs = 0.0, d_s_hh = 0.0, d_s_cl = 0.0, d_s_grp = 0.0, d_s_th = 0.0;
  double* g = grad != nullptr ? grad->data() : nullptr;
  Eigen::VectorXd d_trend;
  if (g != nullptr && trend_df_ > 0) d_trend = Eigen::VectorXd::Zero(trend_rows_.rows());

  // Likelihood.
  const double inv_var = 1.0 / (s_obs * s_obs);
  double ssr = 0.0;
  const int n_obs = data_.n_obs();
  for (int n = 0; n < n_obs; ++n) {
    const auto& o = data_.observations[static_cast<std::size_t>(n)];
    double mu = eta[o.group] + s_hh * z_hh[o.household];
    if (z_cl != nullptr) mu += s_cl * z_cl[o.cluster];
    const int trow = trend_df_ > 0 ? obs_time_row_[static_cast<std::size_t>(n)] : 0;
    if (trend_df_ > 0) mu += trend_value(trow);
    const double r = o.w - mu;
    ssr += r * r;
    if (g != nullptr) {
      const double e = r * inv_var;
      g[off_eta_ + o.group] += e;
      g[off_household_ + o.household] += s_hh * e;
      d_s_hh += z_hh[o.household] * e;
      if (z_cl != nullptr) {
        g[off_cluster_ + o.cluster] += s_cl * e;
        d_s_cl += z_cl[o.cluster] * e;
      }
      if (trend_df_ > 0) d_trend(trow) += e;
    }
  }
  const double lik = -n_obs * (std::log(s_obs) + kHalfLog2Pi) - 0.5 * ssr * inv_var;
  d_s_obs += -n_obs / s_obs + ssr / (s_obs * s_obs * s_obs);
  if (g != nullptr && trend_df_ > 0) {
    grad->segment(off_theta_, trend_df_) += trend_rows_.transpose() * d_trend;
  }

  // Priors.
  double prior = 0.0;
  for (int i = 0; i < n_households; ++i) {
    prior += -0.5 * z_hh[i] * z_hh[i] - kHalfLog2Pi;
    if (g != nullptr) g[off_household_ + i] -= z_hh[i];
  }
  for (int k = 0; k < n_clusters; ++k) {
    prior += -0.5 * z_cl[k] * z_cl[k] - kHalfLog2Pi;
    if (g != nullptr) g[off_cluster_ + k] -= z_cl[k];
  }
  for (int gi = 0; gi < n_groups; ++gi) {
    double d_eta = 0.0;
    prior += normal_lpdf(eta[gi], eta0_, s_grp, &d_eta, &d_s_grp);
    if (g != nullptr) g[off_eta_ + gi] += d_eta;
  }
  for (int j = 0; j < trend_df_; ++j) {
    const double mean = priors_.theta0.empty() ? 0.0 : priors_.theta0[static_cast<std::size_t>(j)];
    double d_th = 0.0;
    prior += normal_lpdf(u(off_theta_ + j), mean, s_th, &d_th, &d_s_th);
    if (g != nullptr) g[off_theta_ + j] += d_th;
  }

  // Scale hyperpriors and log-Jacobians.
  double jacobian = 0.0;
  auto finish_scale = [&](Eigen::Index off, const ScaleComponent& c, double sigma, double d_sigma) {
    if (off < 0) return;
    prior += half_normal_lpdf(sigma, c.prior, &d_sigma);
    jacobian += u(off);
    if (g != nullptr) g[off] += d_sigma * sigma + 1.0;
  };
  finish_scale(off_sigma_obs_, priors_.sigma_obs, s_obs, d_s_obs);
  finish_scale(off_sigma_household_, priors_.sigma_household, s_hh, d_s_hh);
  finish_scale(off_sigma_cluster_, priors_.sigma_cluster, s_cl, d_s_cl);
  finish_scale(off_sigma_group_, priors_.sigma_group, s_grp, d_s_grp);
  finish_scale(off_sigma_theta_, priors_.sigma_theta, s_th, d_s_th);

  if (terms != nullptr) *terms = {lik, prior, jacobian};
  return lik + prior + jacobian;
}

}  // namespace poolerc
