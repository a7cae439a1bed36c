#include "poolerc/transforms.hpp"

#include <cmath>

#include "poolerc/error.hpp"

namespace poolerc {

Eigen::Index ParameterLayout::add(std::string name, Eigen::Index size,
                                  Transform transform,
                                  std::vector<std::string> labels) {
  if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != size) {
    throw ConfigError("layout: label count mismatch for block " + name);
  }
  ParameterBlock block;
  block.name = std::move(name);
  block.offset = size_;
  block.size = size;
  block.transform = transform;
  block.labels = std::move(labels);
  blocks_.push_back(std::move(block));
  size_ += size;
  return blocks_.back().offset;
}

Eigen::Index ParameterLayout::add_corr_cholesky(std::string name, int dim,
                                                std::vector<std::string> labels) {
  const Eigen::Index offset = add(std::move(name), corr_free_size(dim),
                                  Transform::CorrCholesky, std::move(labels));
  blocks_.back().corr_dim = dim;
  return offset;
}

const ParameterBlock* ParameterLayout::find(const std::string& name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

const ParameterBlock& ParameterLayout::at(const std::string& name) const {
  const ParameterBlock* b = find(name);
  if (b == nullptr) throw ConfigError("layout: no parameter block named " + name);
  return *b;
}

std::vector<std::string> ParameterLayout::element_names() const {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(size_));
  for (const auto& b : blocks_) {
    if (b.transform == Transform::CorrCholesky) {
      for (int i = 1; i < b.corr_dim; ++i) {
        for (int j = 0; j < i; ++j) {
          names.push_back(b.name + "[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]");
        }
      }
      continue;
    }
    if (b.size == 1 && b.labels.empty()) {
      names.push_back(b.name);
      continue;
    }
    for (Eigen::Index k = 0; k < b.size; ++k) {
      const std::string label = b.labels.empty() ? std::to_string(k + 1)
                                                 : b.labels[static_cast<std::size_t>(k)];
      names.push_back(b.name + "[" + label + "]");
    }
  }
  return names;
}

int corr_free_size(int dim) { return dim * (dim - 1) / 2; }

CorrCholesky corr_cholesky_constrain(std::span<const double> y, int dim) {
  if (static_cast<int>(y.size()) != corr_free_size(dim)) {
    throw ConfigError("corr_cholesky_constrain: size mismatch");
  }
  CorrCholesky out;
  out.factor = Eigen::MatrixXd::Zero(dim, dim);
  if (dim == 0) return out;
  out.factor(0, 0) = 1.0;
  std::size_t idx = 0;
  for (int i = 1; i < dim; ++i) {
    double log_w = 0.0;  // log sqrt(1 - s_j) = 0.5 * sum_{l<j} log(1 - z_l^2)
    for (int j = 0; j < i; ++j, ++idx) {
      const double z = std::tanh(y[idx]);
      // log(1 - tanh^2) = -2 log cosh, computed stably
      const double a = std::abs(y[idx]);
      const double log1mz2 = -2.0 * (a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0));
      out.factor(i, j) = z * std::exp(log_w);
      out.log_jacobian += log_w + log1mz2;
      log_w += 0.5 * log1mz2;
    }
    out.factor(i, i) = std::exp(log_w);
  }
  return out;
}

Eigen::VectorXd corr_cholesky_free(const Eigen::MatrixXd& factor) {
  const Eigen::Index dim = factor.rows();
  if (factor.cols() != dim) throw DomainError("correlation factor must be square");
  Eigen::VectorXd y(corr_free_size(static_cast<int>(dim)));
  Eigen::Index idx = 0;
  for (Eigen::Index i = 0; i < dim; ++i) {
    if (!(factor(i, i) > 0.0)) throw DomainError("correlation factor: non-positive diagonal");
    if (std::abs(factor.row(i).squaredNorm() - 1.0) > 1e-8) {
      throw DomainError("correlation factor: rows must have unit norm");
    }
    for (Eigen::Index j = i + 1; j < dim; ++j) {
      if (factor(i, j) != 0.0) throw DomainError("correlation factor must be lower triangular");
    }
    double remaining = 1.0;
    for (Eigen::Index j = 0; j < i; ++j, ++idx) {
      const double z = factor(i, j) / std::sqrt(remaining);
      y(idx) = std::atanh(z);
      remaining -= factor(i, j) * factor(i, j);
    }
  }
  return y;
}

void corr_cholesky_backprop(std::span<const double> y, const Eigen::MatrixXd& factor,
                            const Eigen::MatrixXd& d_factor, std::span<double> grad) {
  const Eigen::Index dim = factor.rows();
  std::size_t idx = 0;
  for (Eigen::Index i = 1; i < dim; ++i) {
    // suffix[j] = sum_{m=j+1}^{i} G(i,m) L(i,m)
    double suffix = d_factor(i, i) * factor(i, i);
    std::vector<double> tail(static_cast<std::size_t>(i));
    for (Eigen::Index j = i - 1; j >= 0; --j) {
      tail[static_cast<std::size_t>(j)] = suffix;
      suffix += d_factor(i, j) * factor(i, j);
    }
    double sum_sq = 0.0;
    for (Eigen::Index j = 0; j < i; ++j, ++idx) {
      const double z = std::tanh(y[idx]);
      const double w = std::sqrt(1.0 - sum_sq);
      sum_sq += factor(i, j) * factor(i, j);
      double g = d_factor(i, j) * w * (1.0 - z * z) - z * tail[static_cast<std::size_t>(j)];
      g += -z * static_cast<double>(i - j + 1);  // log-Jacobian
      grad[idx] += g;
    }
  }
}

double lkj_log_density(const Eigen::MatrixXd& factor, double eta) {
  if (!(eta > 0.0)) throw DomainError("LKJ shape must be positive");
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < factor.rows(); ++i) {
    if (!(factor(i, i) > 0.0)) throw DomainError("LKJ: factor is not positive definite");
    log_det += 2.0 * std::log(factor(i, i));
  }
  return (eta - 1.0) * log_det;
}

double lkj_log_density_corr(const Eigen::MatrixXd& corr, double eta) {
  Eigen::LLT<Eigen::MatrixXd> llt(corr);
  if (llt.info() != Eigen::Success) {
    throw DomainError("LKJ: correlation matrix is not positive definite");
  }
  const Eigen::MatrixXd factor = llt.matrixL();
  return lkj_log_density(factor, eta);
}

double lkj_cholesky_log_density(const Eigen::MatrixXd& factor, double eta,
                                Eigen::MatrixXd* d_factor) {
  const Eigen::Index k = factor.rows();
  double lp = 0.0;
  for (Eigen::Index i = 1; i < k; ++i) {
    const double coef = static_cast<double>(k - 1 - i) + 2.0 * (eta - 1.0);
    lp += coef * std::log(factor(i, i));
    if (d_factor != nullptr) (*d_factor)(i, i) += coef / factor(i, i);
  }
  return lp;
}

}  // namespace poolerc
