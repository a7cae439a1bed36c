#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "poolerc/transforms.hpp"

namespace poolerc {

// A differentiable log density on an unconstrained real vector.
// Implementations must be reentrant: the sampler calls them from several
// chains at once.
class LogDensity {
 public:
  virtual ~LogDensity() = default;

  virtual Eigen::Index dimension() const = 0;

  // Log density (up to an additive constant) and its gradient at u.
  // Points where the density is not finite return -infinity; the gradient is
  // then unspecified and the sampler treats the point as rejected.
  virtual double log_density_gradient(const Eigen::VectorXd& u,
                                      Eigen::VectorXd& grad) const = 0;

  // Map to the natural parameterization stored in posterior draws.
  virtual Eigen::VectorXd constrain(const Eigen::VectorXd& u) const { return u; }

  virtual std::vector<std::string> parameter_names() const;

  // Centre of the random initialization.
  virtual Eigen::VectorXd initial_point() const {
    return Eigen::VectorXd::Zero(dimension());
  }
};

// Additive decomposition of a log density.
struct LogDensityTerms {
  double likelihood = 0.0;
  double prior = 0.0;
  double jacobian = 0.0;
  double total() const { return likelihood + prior + jacobian; }
};

// Half-normal N+(location, scale^2) prior on a positive scale parameter.
struct HalfNormal {
  double location = 0.0;
  double scale = 1.0;
};

// A standard deviation that is either sampled under a half-normal prior or
// held fixed.
struct ScaleComponent {
  HalfNormal prior;
  bool fixed = false;
  double fixed_value = 1.0;
};

namespace detail {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

// log N+(sigma | m, s^2), dropping the truncation constant (it depends only on
// fixed hyperparameters).
inline double half_normal_lpdf(double sigma, const HalfNormal& p, double* d_sigma) {
  const double z = (sigma - p.location) / p.scale;
  if (d_sigma != nullptr) *d_sigma += -z / p.scale;
  return -0.5 * z * z - std::log(p.scale) - kHalfLog2Pi + std::log(2.0);
}

// log N(x | mean, sd^2) with derivatives.
inline double normal_lpdf(double x, double mean, double sd, double* d_x, double* d_sd) {
  const double z = (x - mean) / sd;
  if (d_x != nullptr) *d_x += -z / sd;
  if (d_sd != nullptr) *d_sd += (z * z - 1.0) / sd;
  return -0.5 * z * z - std::log(sd) - kHalfLog2Pi;
}

inline double log1p_exp(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double inv_logit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

}  // namespace poolerc
