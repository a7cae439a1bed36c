#pragma once

// Unconstrained parameterization shared by both models.
//
// Every model parameter lives in a named block of a flat real vector. Blocks
// carry their transform; the constrained vector has the same length as the
// unconstrained one (correlation blocks store the strictly-lower correlations).

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace poolerc {

enum class Transform {
  Identity,      // real line
  Log,           // positive: value = exp(u), log-Jacobian u
  CorrCholesky,  // K x K correlation Cholesky factor from K(K-1)/2 reals
};

struct ParameterBlock {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
  Transform transform = Transform::Identity;
  std::vector<std::string> labels;  // one per element; empty means 0..size-1
  int corr_dim = 0;                 // K for CorrCholesky blocks
};

class ParameterLayout {
 public:
  Eigen::Index add(std::string name, Eigen::Index size, Transform transform,
                   std::vector<std::string> labels = {});
  Eigen::Index add_corr_cholesky(std::string name, int dim,
                                 std::vector<std::string> labels = {});

  Eigen::Index size() const { return size_; }
  const std::vector<ParameterBlock>& blocks() const { return blocks_; }
  // nullptr when absent.
  const ParameterBlock* find(const std::string& name) const;
  const ParameterBlock& at(const std::string& name) const;

  // Flat element names, e.g. "sigma_obs", "eta[Biomass]", "corr[2,1]".
  std::vector<std::string> element_names() const;

 private:
  std::vector<ParameterBlock> blocks_;
  Eigen::Index size_ = 0;
};

// ---------------------------------------------------------------------------
// Positive scalars.

inline double positive_constrain(double u) { return std::exp(u); }
inline double positive_free(double value) { return std::log(value); }

// ---------------------------------------------------------------------------
// Correlation Cholesky factors via canonical partial correlations.
//
// Row-major ordering of the K(K-1)/2 unconstrained values: (1,0), (2,0),
// (2,1), (3,0), ... Each value maps through tanh to a partial correlation z,
// and row i of the factor is
//   L(i,j) = z(i,j) * sqrt(1 - sum_{l<j} L(i,l)^2),  L(i,i) = sqrt(1 - sum_{l<i} L(i,l)^2).

int corr_free_size(int dim);

struct CorrCholesky {
  Eigen::MatrixXd factor;  // lower triangular, unit-norm rows
  double log_jacobian = 0.0;
};

CorrCholesky corr_cholesky_constrain(std::span<const double> unconstrained, int dim);

// Inverse map. Throws DomainError unless `factor` is lower triangular with
// positive diagonal and unit-norm rows.
Eigen::VectorXd corr_cholesky_free(const Eigen::MatrixXd& factor);

// Reverse-mode step: given d(target)/d(factor) for the lower triangle,
// accumulates d(target)/d(unconstrained) into `grad`, including the gradient of
// the transform's log-Jacobian.
void corr_cholesky_backprop(std::span<const double> unconstrained,
                            const Eigen::MatrixXd& factor,
                            const Eigen::MatrixXd& d_factor,
                            std::span<double> grad);

// Unnormalized LKJ density on the correlation matrix: (eta - 1) * log det(Sigma).
double lkj_log_density(const Eigen::MatrixXd& factor, double eta);
// Same, given the correlation matrix itself. Throws DomainError when it is not
// positive definite.
double lkj_log_density_corr(const Eigen::MatrixXd& corr, double eta);

// LKJ density expressed on the Cholesky factor: adds the Jacobian of
// Sigma = L L^T, i.e. sum_i (K - 1 - i + 2(eta - 1)) log L(i,i).
// When d_factor is non-null its diagonal receives the gradient.
double lkj_cholesky_log_density(const Eigen::MatrixXd& factor, double eta,
                                Eigen::MatrixXd* d_factor = nullptr);

}  // namespace poolerc
