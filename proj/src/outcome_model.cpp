#include "poolerc/outcome_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "poolerc/error.hpp"

namespace poolerc {

using detail::half_normal_lpdf;
using detail::inv_logit;
using detail::kHalfLog2Pi;
using detail::log1p_exp;
using detail::normal_lpdf;

// Largest |eta| bound for the factorized likelihood; (1 + e^40)^16 stays finite.
constexpr double kFastPathBound = 40.0;

void OutcomeDataset::validate() const {
  auto fail = [](std::size_t row, const std::string& what) {
    throw ValidationError("outcome data, record " + std::to_string(row + 1) + ": " + what);
  };
  if (covariates.rows() != n_records() || covariates.cols() != n_covariates()) {
    throw ValidationError("outcome data: covariate matrix has the wrong shape");
  }
  std::vector<int> subject_study(subjects.size(), -1);
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.study < 0 || rec.study >= n_studies()) fail(r, "study index out of range");
    if (rec.subject < 0 || rec.subject >= n_subjects()) fail(r, "subject index out of range");
    if (rec.trials < 1) fail(r, "trials must be >= 1");
    if (rec.cases < 0 || rec.cases > rec.trials) fail(r, "cases must lie in [0, trials]");
    if (!std::isfinite(rec.x)) fail(r, "exposure is not finite");
    int& owner = subject_study[static_cast<std::size_t>(rec.subject)];
    if (owner >= 0 && owner != rec.study) {
      fail(r, "subject " + subjects[static_cast<std::size_t>(rec.subject)] +
                  " appears in more than one study");
    }
    owner = rec.study;
    for (int c = 0; c < n_covariates(); ++c) {
      if (!std::isfinite(covariates(static_cast<Eigen::Index>(r), c))) {
        fail(r, "covariate " + covariate_names[static_cast<std::size_t>(c)] + " is not finite");
      }
    }
  }
  if (studies.empty()) throw ValidationError("outcome data: no studies");
}

OutcomeDatasetBuilder::OutcomeDatasetBuilder(std::vector<std::string> covariate_names) {
  data_.covariate_names = std::move(covariate_names);
}

void OutcomeDatasetBuilder::add(const std::string& study, const std::string& subject,
                                int period, int cases, int trials, double x,
                                const std::vector<double>& covariates) {
  if (covariates.size() != data_.covariate_names.size()) {
    throw ValidationError("outcome data, record " + std::to_string(data_.records.size() + 1) +
                          ": expected " + std::to_string(data_.covariate_names.size()) +
                          " covariates");
  }
  auto index = [](std::map<std::string, int>& map, std::vector<std::string>& labels,
                  const std::string& key) {
    auto [it, inserted] = map.try_emplace(key, static_cast<int>(labels.size()));
    if (inserted) labels.push_back(key);
    return it->second;
  };
  OutcomeRecord rec;
  rec.study = index(study_index_, data_.studies, study);
  rec.subject = index(subject_index_, data_.subjects, subject);
  rec.period = period;
  rec.cases = cases;
  rec.trials = trials;
  rec.x = x;
  data_.records.push_back(rec);
  covariate_values_.insert(covariate_values_.end(), covariates.begin(), covariates.end());
}

OutcomeDataset OutcomeDatasetBuilder::build() const {
  OutcomeDataset out = data_;
  const Eigen::Index p = out.n_covariates();
  out.covariates.resize(out.n_records(), p);
  for (Eigen::Index r = 0; r < out.n_records(); ++r) {
    for (Eigen::Index c = 0; c < p; ++c) {
      out.covariates(r, c) = covariate_values_[static_cast<std::size_t>(r * p + c)];
    }
  }
  out.validate();
  return out;
}

ERCSpec ERCSpec::application_default() {
  ERCSpec spec;
  spec.knots.lower = std::log(50.0);
  spec.knots.upper = std::log(2200.0);
  for (double v : {60.0, 85.0, 100.0, 125.0, 200.0, 500.0}) spec.knots.interior.push_back(std::log(v));
  spec.x_ref = spec.knots.lower;
  return spec;
}

void ERCSpec::validate() const {
  knots.validate();
  if (order < 1) throw ConfigError("exposure-response basis order must be >= 1");
  if (!std::isfinite(x_ref)) throw ConfigError("reference exposure must be finite");
}

const char* to_string(ERCMode mode) {
  return mode == ERCMode::Shared ? "shared" : "hierarchical";
}

const char* to_string(BetaConstraint constraint) {
  return constraint == BetaConstraint::Free ? "free" : "nonneg";
}

void OutcomePriors::validate() const {
  for (const ScaleComponent* c : {&sigma_psi, &sigma_xi, &sigma_gamma, &sigma_delta, &sigma_beta}) {
    if (!(c->prior.scale > 0.0)) throw ConfigError("outcome priors: half-normal scale must be > 0");
    if (c->fixed && !(c->fixed_value > 0.0)) throw ConfigError("outcome priors: fixed scales must be > 0");
  }
  if (time_df < 0) throw ConfigError("outcome priors: time df must be >= 0");
  for (const auto& [study, df] : time_df_by_study) {
    if (df < 0) throw ConfigError("outcome priors: time df for study " + study + " must be >= 0");
  }
  for (double v : xi0) {
    if (!(v > 0.0)) throw ConfigError("outcome priors: xi0 entries must be > 0");
  }
  if (!(lkj_shape > 0.0)) throw ConfigError("outcome priors: LKJ shape must be > 0");
}

OutcomeModel::OutcomeModel(OutcomeDataset data, OutcomePriors priors, ERCSpec erc)
    : data_(std::move(data)),
      priors_(std::move(priors)),
      erc_(std::move(erc)),
      basis_(erc_.knots, erc_.order) {
  data_.validate();
  priors_.validate();
  erc_.validate();
  const int n_studies = data_.n_studies();
  const bool hierarchical = erc_.mode == ERCMode::Hierarchical;

  if (hierarchical) {
    xi0_ = priors_.xi0.empty() ? std::vector<double>(static_cast<std::size_t>(n_studies), 1.0)
                               : priors_.xi0;
    if (static_cast<int>(xi0_.size()) != n_studies) {
      throw ConfigError("outcome priors: xi0 must have one entry per study");
    }
  }

  // Distinct ERC rows.
  std::map<std::pair<int, double>, int> erc_index;
  std::vector<double> erc_x;
  record_erc_row_.reserve(data_.records.size());
  for (const auto& rec : data_.records) {
    const int curve = hierarchical ? rec.study : 0;
    auto [it, inserted] = erc_index.try_emplace({curve, rec.x}, static_cast<int>(erc_x.size()));
    if (inserted) {
      erc_x.push_back(rec.x);
      erc_row_study_.push_back(curve);
    }
    record_erc_row_.push_back(it->second);
  }
  erc_rows_ = basis_.evaluate(erc_x);
  psi_center_ = Eigen::MatrixXd::Zero(n_studies, basis_.size());
  {
    std::vector<double> count(static_cast<std::size_t>(n_studies), 0.0);
    for (std::size_t n = 0; n < data_.records.size(); ++n) {
      const int s = data_.records[n].study;
      psi_center_.row(s) += erc_rows_.row(record_erc_row_[n]);
      count[static_cast<std::size_t>(s)] += 1.0;
    }
    for (int s = 0; s < n_studies; ++s) {
      if (count[static_cast<std::size_t>(s)] > 0) psi_center_.row(s) /= count[static_cast<std::size_t>(s)];
    }
  }

  // Rank check: a column constant within every study carries no information.
  {
    std::vector<double> lo(static_cast<std::size_t>(n_studies), std::numeric_limits<double>::infinity());
    std::vector<double> hi(static_cast<std::size_t>(n_studies), -std::numeric_limits<double>::infinity());
    for (const auto& rec : data_.records) {
      lo[static_cast<std::size_t>(rec.study)] = std::min(lo[static_cast<std::size_t>(rec.study)], rec.x);
      hi[static_cast<std::size_t>(rec.study)] = std::max(hi[static_cast<std::size_t>(rec.study)], rec.x);
    }
    for (int j = 0; j < basis_.size(); ++j) {
      bool varies = false;
      for (int s = 0; s < n_studies && !varies; ++s) {
        if (!std::isfinite(lo[static_cast<std::size_t>(s)])) continue;
        varies = basis_.row(lo[static_cast<std::size_t>(s)])(j) !=
                 basis_.row(hi[static_cast<std::size_t>(s)])(j);
      }
      if (!varies) {
        warnings_.push_back("exposure-response basis column " + std::to_string(j + 1) +
                            " is constant within every study; its coefficient is informed by the prior only");
      }
    }
  }

  // Per-study time bases.
  std::vector<std::vector<double>> study_periods(static_cast<std::size_t>(n_studies));
  for (const auto& rec : data_.records) {
    study_periods[static_cast<std::size_t>(rec.study)].push_back(rec.period);
  }
  std::vector<std::vector<double>> unique_periods(static_cast<std::size_t>(n_studies));
  time_rows_.resize(static_cast<std::size_t>(n_studies));
  time_df_.assign(static_cast<std::size_t>(n_studies), 0);
  time_row_offset_.assign(static_cast<std::size_t>(n_studies), 0);
  for (int s = 0; s < n_studies; ++s) {
    const std::string& name = data_.studies[static_cast<std::size_t>(s)];
    auto& periods = study_periods[static_cast<std::size_t>(s)];
    auto& uniq = unique_periods[static_cast<std::size_t>(s)];
    uniq = periods;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    const auto it = priors_.time_df_by_study.find(name);
    int df = it != priors_.time_df_by_study.end() ? it->second : priors_.time_df;
    if (df > 0 && uniq.size() < 2) {
      warnings_.push_back("study " + name + ": time spline disabled, fewer than two distinct periods");
      df = 0;
    }
    time_row_offset_[static_cast<std::size_t>(s)] = n_time_rows_;
    n_time_rows_ += static_cast<int>(uniq.size());
    if (df == 0) {
      time_rows_[static_cast<std::size_t>(s)] = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(uniq.size()), 0);
      continue;
    }
    KnotSet knots = quantile_knots(periods, df - 1);
    if (knots.n_interior() != df - 1) {
      warnings_.push_back("study " + name + ": time spline df reduced to " +
                          std::to_string(knots.n_interior() + 1));
      df = knots.n_interior() + 1;
    }
    std::vector<double> grid;
    for (int t = static_cast<int>(uniq.front()); t <= static_cast<int>(uniq.back()); ++t) grid.push_back(t);
    NaturalCubicBasis basis(knots, df, grid);
    time_rows_[static_cast<std::size_t>(s)] = basis.evaluate(uniq);
    time_df_[static_cast<std::size_t>(s)] = df;
  }
  record_time_row_.reserve(data_.records.size());
  for (const auto& rec : data_.records) {
    const auto& uniq = unique_periods[static_cast<std::size_t>(rec.study)];
    const auto pos = std::lower_bound(uniq.begin(), uniq.end(), static_cast<double>(rec.period)) - uniq.begin();
    record_time_row_.push_back(time_row_offset_[static_cast<std::size_t>(rec.study)] + static_cast<int>(pos));
  }

  cases_.resize(data_.n_records());
  trials_.resize(data_.n_records());
  for (int n = 0; n < data_.n_records(); ++n) {
    const auto& rec = data_.records[static_cast<std::size_t>(n)];
    log_binom_const_ += std::lgamma(rec.trials + 1.0) - std::lgamma(rec.cases + 1.0) -
                        std::lgamma(rec.trials - rec.cases + 1.0);
    cases_(n) = rec.cases;
    trials_(n) = rec.trials;
    record_subject_.push_back(rec.subject);
  }
  subject_study_.assign(static_cast<std::size_t>(data_.n_subjects()), 0);
  cases_by_subject_ = Eigen::ArrayXd::Zero(data_.n_subjects());
  cases_by_erc_row_ = Eigen::ArrayXd::Zero(erc_rows_.rows());
  cases_by_time_row_ = Eigen::ArrayXd::Zero(n_time_rows_);
  uniform_trials_ = data_.records.empty() ? 0 : data_.records.front().trials;
  for (int n = 0; n < data_.n_records(); ++n) {
    const auto& rec = data_.records[static_cast<std::size_t>(n)];
    subject_study_[static_cast<std::size_t>(rec.subject)] = rec.study;
    cases_by_subject_(rec.subject) += rec.cases;
    cases_by_erc_row_(record_erc_row_[static_cast<std::size_t>(n)]) += rec.cases;
    cases_by_time_row_(record_time_row_[static_cast<std::size_t>(n)]) += rec.cases;
    if (rec.trials != uniform_trials_) uniform_trials_ = 0;
  }

  // Layout.
  off_psi_ = layout_.add("psi", n_studies, Transform::Identity, data_.studies);
  off_xi_ = layout_.add("xi", data_.n_subjects(), Transform::Identity, data_.subjects);
  if (data_.n_covariates() > 0) {
    off_gamma_ = layout_.add("gamma", data_.n_covariates(), Transform::Identity, data_.covariate_names);
  }
  std::vector<std::string> delta_labels;
  off_delta_.assign(static_cast<std::size_t>(n_studies), -1);
  Eigen::Index delta_size = 0;
  for (int s = 0; s < n_studies; ++s) {
    const int df = time_df_[static_cast<std::size_t>(s)];
    if (df == 0) continue;
    off_delta_[static_cast<std::size_t>(s)] = delta_size;
    delta_size += df;
    for (int j = 0; j < df; ++j) {
      delta_labels.push_back(data_.studies[static_cast<std::size_t>(s)] + "," + std::to_string(j + 1));
    }
  }
  if (delta_size > 0) {
    const Eigen::Index base = layout_.add("delta", delta_size, Transform::Identity, delta_labels);
    for (auto& off : off_delta_) {
      if (off >= 0) off += base;
    }
  }
  const int n_basis = basis_.size();
  const Transform beta_transform =
      erc_.constraint == BetaConstraint::NonNegative ? Transform::Log : Transform::Identity;
  if (!hierarchical) {
    off_beta_ = layout_.add("beta", n_basis, beta_transform);
  } else {
    std::vector<std::string> labels;
    for (int s = 0; s < n_studies; ++s) {
      for (int j = 0; j < n_basis; ++j) {
        labels.push_back(data_.studies[static_cast<std::size_t>(s)] + "," + std::to_string(j + 1));
      }
    }
    off_beta_ = layout_.add("beta", static_cast<Eigen::Index>(n_studies) * n_basis, beta_transform, labels);
    off_beta0_ = layout_.add("beta0", priors_.beta0_per_basis ? n_basis : 1, Transform::Identity);
    if (n_studies > 1) off_corr_ = layout_.add_corr_cholesky("corr", n_studies);
  }
  auto add_scale = [&](const char* name, const ScaleComponent& c) -> Eigen::Index {
    return c.fixed ? -1 : layout_.add(name, 1, Transform::Log);
  };
  off_sigma_psi_ = add_scale("sigma_psi", priors_.sigma_psi);
  off_sigma_xi_ = add_scale("sigma_xi", priors_.sigma_xi);
  if (off_gamma_ >= 0) off_sigma_gamma_ = add_scale("sigma_gamma", priors_.sigma_gamma);
  if (delta_size > 0) off_sigma_delta_ = add_scale("sigma_delta", priors_.sigma_delta);
  off_sigma_beta_ = add_scale("sigma_beta", priors_.sigma_beta);
}

std::vector<std::string> OutcomeModel::parameter_names() const {
  return layout_.element_names();
}

namespace {

double scale_value(const Eigen::VectorXd& u, Eigen::Index offset, const ScaleComponent& c) {
  return offset < 0 ? c.fixed_value : std::exp(u(offset));
}

}  // namespace

void OutcomeModel::beta_matrix(const Eigen::VectorXd& u, double sigma_beta,
                               Eigen::MatrixXd& beta, CorrCholesky* corr) const {
  const int n_basis = basis_.size();
  const bool nonneg = erc_.constraint == BetaConstraint::NonNegative;
  if (erc_.mode == ERCMode::Shared) {
    beta = u.segment(off_beta_, n_basis);
    if (nonneg) beta = beta.array().exp().matrix();
    return;
  }
  const int n_studies = data_.n_studies();
  CorrCholesky local;
  CorrCholesky& c = corr != nullptr ? *corr : local;
  if (off_corr_ >= 0) {
    c = corr_cholesky_constrain(std::span<const double>(u.data() + off_corr_, corr_free_size(n_studies)),
                                n_studies);
  } else {
    c.factor = Eigen::MatrixXd::Ones(1, 1);
    c.log_jacobian = 0.0;
  }
  // Column s of `beta` holds study s. Storage in u is study-major.
  const Eigen::Map<const Eigen::MatrixXd> raw(u.data() + off_beta_, n_basis, n_studies);
  if (nonneg) {
    beta = raw.array().exp().matrix();
    return;
  }
  Eigen::VectorXd beta0(n_basis);
  if (priors_.beta0_per_basis) {
    beta0 = u.segment(off_beta0_, n_basis);
  } else {
    beta0.setConstant(u(off_beta0_));
  }
  const Eigen::Map<const Eigen::VectorXd> d(xi0_.data(), n_studies);
  // beta' (S x J) = beta0' + sigma_beta * D L Z, with Z = raw' (S x J).
  const Eigen::MatrixXd scaled = sigma_beta * (d.asDiagonal() * (c.factor * raw.transpose()));
  beta = scaled.transpose();
  beta.colwise() += beta0;
}

OutcomeParams OutcomeModel::unpack(const Eigen::VectorXd& u) const {
  OutcomeParams p;
  p.sigma_psi = scale_value(u, off_sigma_psi_, priors_.sigma_psi);
  p.sigma_xi = scale_value(u, off_sigma_xi_, priors_.sigma_xi);
  p.sigma_gamma = scale_value(u, off_sigma_gamma_, priors_.sigma_gamma);
  p.sigma_delta = scale_value(u, off_sigma_delta_, priors_.sigma_delta);
  p.sigma_beta = scale_value(u, off_sigma_beta_, priors_.sigma_beta);
  p.xi = p.sigma_xi * u.segment(off_xi_, data_.n_subjects());
  if (off_gamma_ >= 0) p.gamma = u.segment(off_gamma_, data_.n_covariates());
  for (int s = 0; s < data_.n_studies(); ++s) {
    const Eigen::Index off = off_delta_[static_cast<std::size_t>(s)];
    p.delta.push_back(off >= 0 ? Eigen::VectorXd(p.sigma_delta * u.segment(off, time_df(s)))
                               : Eigen::VectorXd());
  }
  CorrCholesky corr;
  beta_matrix(u, p.sigma_beta, p.beta, &corr);
  p.psi = psi_values(u, p.beta);
  if (erc_.mode == ERCMode::Hierarchical) {
    p.beta0 = u.segment(off_beta0_, priors_.beta0_per_basis ? n_basis() : 1);
    p.corr_factor = corr.factor;
  }
  return p;
}

Eigen::VectorXd OutcomeModel::constrain(const Eigen::VectorXd& u) const {
  const OutcomeParams p = unpack(u);
  Eigen::VectorXd c = u;
  c.segment(off_psi_, data_.n_studies()) = p.psi;
  c.segment(off_xi_, data_.n_subjects()) = p.xi;
  for (int s = 0; s < data_.n_studies(); ++s) {
    const Eigen::Index off = off_delta_[static_cast<std::size_t>(s)];
    if (off >= 0) c.segment(off, time_df(s)) = p.delta[static_cast<std::size_t>(s)];
  }
  c.segment(off_beta_, p.beta.size()) = Eigen::Map<const Eigen::VectorXd>(p.beta.data(), p.beta.size());
  if (off_corr_ >= 0) {
    const Eigen::MatrixXd sigma = p.corr_factor * p.corr_factor.transpose();
    Eigen::Index idx = off_corr_;
    for (Eigen::Index i = 1; i < sigma.rows(); ++i) {
      for (Eigen::Index j = 0; j < i; ++j) c(idx++) = sigma(i, j);
    }
  }
  if (off_sigma_psi_ >= 0) c(off_sigma_psi_) = p.sigma_psi;
  if (off_sigma_xi_ >= 0) c(off_sigma_xi_) = p.sigma_xi;
  if (off_sigma_gamma_ >= 0) c(off_sigma_gamma_) = p.sigma_gamma;
  if (off_sigma_delta_ >= 0) c(off_sigma_delta_) = p.sigma_delta;
  if (off_sigma_beta_ >= 0) c(off_sigma_beta_) = p.sigma_beta;
  return c;
}

Eigen::VectorXd OutcomeModel::psi_values(const Eigen::VectorXd& u, const Eigen::MatrixXd& beta) const {
  Eigen::VectorXd psi = u.segment(off_psi_, data_.n_studies());
  for (int s = 0; s < data_.n_studies(); ++s) {
    psi(s) -= psi_center_.row(s).dot(beta.col(beta.cols() == 1 ? 0 : s));
  }
  return psi;
}

Eigen::MatrixXd OutcomeModel::beta_from_constrained(const Eigen::VectorXd& c) const {
  const int curves = erc_.mode == ERCMode::Shared ? 1 : data_.n_studies();
  return Eigen::Map<const Eigen::MatrixXd>(c.data() + off_beta_, n_basis(), curves);
}

Eigen::VectorXd OutcomeModel::initial_point() const {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(layout_.size());
  std::vector<double> cases(static_cast<std::size_t>(data_.n_studies()), 0.0);
  std::vector<double> trials(cases.size(), 0.0);
  for (const auto& rec : data_.records) {
    cases[static_cast<std::size_t>(rec.study)] += rec.cases;
    trials[static_cast<std::size_t>(rec.study)] += rec.trials;
  }
  for (int s = 0; s < data_.n_studies(); ++s) {
    const double rate = (cases[static_cast<std::size_t>(s)] + 0.5) / (trials[static_cast<std::size_t>(s)] + 1.0);
    u(off_psi_ + s) = std::log(rate / (1.0 - rate));
  }
  if (off_sigma_psi_ >= 0) {
    u(off_sigma_psi_) = std::log(std::max(1.0, u.segment(off_psi_, data_.n_studies()).cwiseAbs().maxCoeff()));
  }
  if (erc_.constraint == BetaConstraint::NonNegative) {
    const int curves = erc_.mode == ERCMode::Shared ? 1 : data_.n_studies();
    u.segment(off_beta_, static_cast<Eigen::Index>(curves) * n_basis()).setConstant(std::log(0.1));
  }
  if (off_sigma_xi_ >= 0) u(off_sigma_xi_) = std::log(0.5);
  return u;
}

Eigen::VectorXd OutcomeModel::linear_predictor(const Eigen::VectorXd& u) const {
  const OutcomeParams p = unpack(u);
  Eigen::VectorXd erc_value(erc_rows_.rows());
  for (Eigen::Index r = 0; r < erc_rows_.rows(); ++r) {
    erc_value(r) = erc_rows_.row(r).dot(p.beta.col(erc_row_study_[static_cast<std::size_t>(r)]));
  }
  Eigen::VectorXd eta(data_.n_records());
  for (int n = 0; n < data_.n_records(); ++n) {
    const auto& rec = data_.records[static_cast<std::size_t>(n)];
    double v = p.psi(rec.study) + p.xi(rec.subject) + erc_value(record_erc_row_[static_cast<std::size_t>(n)]);
    if (off_gamma_ >= 0) v += data_.covariates.row(n).dot(p.gamma);
    const int df = time_df(rec.study);
    if (df > 0) {
      const int row = record_time_row_[static_cast<std::size_t>(n)] - time_row_offset_[static_cast<std::size_t>(rec.study)];
      v += time_rows_[static_cast<std::size_t>(rec.study)].row(row).dot(p.delta[static_cast<std::size_t>(rec.study)]);
    }
    eta(n) = v;
  }
  return eta;
}

double OutcomeModel::log_density_gradient(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const {
  grad.setZero(layout_.size());
  const double lp = evaluate(u, &grad, nullptr);
  if (!std::isfinite(lp) || !grad.allFinite()) return -std::numeric_limits<double>::infinity();
  return lp;
}

LogDensityTerms OutcomeModel::terms(const Eigen::VectorXd& u) const {
  LogDensityTerms t;
  evaluate(u, nullptr, &t);
  return t;
}

double OutcomeModel::evaluate(const Eigen::VectorXd& u, Eigen::VectorXd* grad,
                              LogDensityTerms* terms) const {
  const int n_studies = data_.n_studies();
  const int n_subjects = data_.n_subjects();
  const int n_basis = basis_.size();
  const bool hierarchical = erc_.mode == ERCMode::Hierarchical;
  const bool nonneg = erc_.constraint == BetaConstraint::NonNegative;
  double* g = grad != nullptr ? grad->data() : nullptr;

  const double s_psi = scale_value(u, off_sigma_psi_, priors_.sigma_psi);
  const double s_xi = scale_value(u, off_sigma_xi_, priors_.sigma_xi);
  const double s_gamma = scale_value(u, off_sigma_gamma_, priors_.sigma_gamma);
  const double s_delta = scale_value(u, off_sigma_delta_, priors_.sigma_delta);
  const double s_beta = scale_value(u, off_sigma_beta_, priors_.sigma_beta);
  double d_s_psi = 0.0, d_s_xi = 0.0, d_s_gamma = 0.0, d_s_delta = 0.0, d_s_beta = 0.0;

  Eigen::MatrixXd beta;
  CorrCholesky corr;
  beta_matrix(u, s_beta, beta, &corr);

  // Linear predictor pieces on distinct rows.
  Eigen::VectorXd erc_value(erc_rows_.rows());
  for (Eigen::Index r = 0; r < erc_rows_.rows(); ++r) {
    erc_value(r) = erc_rows_.row(r).dot(beta.col(erc_row_study_[static_cast<std::size_t>(r)]));
  }
  Eigen::VectorXd time_value = Eigen::VectorXd::Zero(n_time_rows_);
  for (int s = 0; s < n_studies; ++s) {
    const Eigen::Index off = off_delta_[static_cast<std::size_t>(s)];
    if (off < 0) continue;
    const auto& rows = time_rows_[static_cast<std::size_t>(s)];
    time_value.segment(time_row_offset_[static_cast<std::size_t>(s)], rows.rows()) =
        s_delta * (rows * u.segment(off, time_df(s)));
  }
  Eigen::VectorXd cov_value;
  if (off_gamma_ >= 0) cov_value = data_.covariates * u.segment(off_gamma_, data_.n_covariates());

  const Eigen::VectorXd psi = psi_values(u, beta);
  const double* z_xi = u.data() + off_xi_;
  Eigen::ArrayXd subject_value(n_subjects);
  for (int i = 0; i < n_subjects; ++i) {
    subject_value(i) = psi(subject_study_[static_cast<std::size_t>(i)]) + s_xi * z_xi[i];
  }
  // Per-subject, per-row and per-record sums of y - T * inv_logit(eta).
  Eigen::ArrayXd d_subject, d_erc, d_time, d_cov;
  if (g != nullptr) {
    d_subject = Eigen::ArrayXd::Zero(n_subjects);
    d_erc = Eigen::ArrayXd::Zero(erc_rows_.rows());
    d_time = Eigen::ArrayXd::Zero(n_time_rows_);
    if (off_gamma_ >= 0) d_cov.resize(data_.n_records());
  }

  // Binomial likelihood.
  const int n_records = data_.n_records();
  double lik = log_binom_const_;
  double bound = subject_value.abs().maxCoeff();
  if (erc_value.size() > 0) bound += erc_value.cwiseAbs().maxCoeff();
  if (time_value.size() > 0) bound += time_value.cwiseAbs().maxCoeff();
  if (off_gamma_ >= 0 && n_records > 0) bound += cov_value.cwiseAbs().maxCoeff();
  if (bound <= kFastPathBound) {
    // exp(eta) factorizes over the predictor pieces, and sum log(1 + E) is
    // taken as the log of running products over blocks of records.
    lik += (subject_value * cases_by_subject_).sum() + (erc_value.array() * cases_by_erc_row_).sum() +
           (time_value.array() * cases_by_time_row_).sum();
    if (off_gamma_ >= 0) lik += (cases_ * cov_value.array()).sum();
    const Eigen::ArrayXd e_subject = subject_value.exp();
    const Eigen::ArrayXd e_erc = erc_value.array().exp();
    const Eigen::ArrayXd e_time = time_value.array().exp();
    Eigen::ArrayXd e_cov;
    if (off_gamma_ >= 0) e_cov = cov_value.array().exp();
    double log_sum = 0.0;
    double product = 1.0;
    for (int n = 0; n < n_records; ++n) {
      const int subject = record_subject_[static_cast<std::size_t>(n)];
      const int er = record_erc_row_[static_cast<std::size_t>(n)];
      const int tr = record_time_row_[static_cast<std::size_t>(n)];
      double en = e_subject(subject) * e_erc(er) * e_time(tr);
      if (off_gamma_ >= 0) en *= e_cov(n);
      if (uniform_trials_ > 0) {
        product *= 1.0 + en;
        if ((n & 15) == 15) {
          log_sum += std::log(product);
          product = 1.0;
        }
      } else {
        log_sum += trials_(n) * std::log1p(en);
      }
      if (g != nullptr) {
        const double tp = trials_(n) * en / (1.0 + en);
        d_subject(subject) -= tp;
        d_erc(er) -= tp;
        d_time(tr) -= tp;
        if (off_gamma_ >= 0) d_cov(n) = cases_(n) - tp;
      }
    }
    if (uniform_trials_ > 0) log_sum = uniform_trials_ * (log_sum + std::log(product));
    lik -= log_sum;
    if (g != nullptr) {
      d_subject += cases_by_subject_;
      d_erc += cases_by_erc_row_;
      d_time += cases_by_time_row_;
    }
  } else {
    for (int n = 0; n < n_records; ++n) {
      const int subject = record_subject_[static_cast<std::size_t>(n)];
      const int er = record_erc_row_[static_cast<std::size_t>(n)];
      const int tr = record_time_row_[static_cast<std::size_t>(n)];
      double eta = subject_value(subject) + erc_value(er) + time_value(tr);
      if (off_gamma_ >= 0) eta += cov_value(n);
      lik += cases_(n) * eta - trials_(n) * log1p_exp(eta);
      if (g != nullptr) {
        const double d = cases_(n) - trials_(n) * inv_logit(eta);
        d_subject(subject) += d;
        d_erc(er) += d;
        d_time(tr) += d;
        if (off_gamma_ >= 0) d_cov(n) = d;
      }
    }
  }
  Eigen::VectorXd d_psi = Eigen::VectorXd::Zero(n_studies);
  if (g != nullptr) {
    for (int i = 0; i < n_subjects; ++i) {
      d_psi(subject_study_[static_cast<std::size_t>(i)]) += d_subject(i);
      g[off_xi_ + i] += s_xi * d_subject(i);
      d_s_xi += z_xi[i] * d_subject(i);
    }
  }

  Eigen::MatrixXd d_beta;
  if (g != nullptr) {
    d_beta = Eigen::MatrixXd::Zero(n_basis, beta.cols());
    for (Eigen::Index r = 0; r < erc_rows_.rows(); ++r) {
      d_beta.col(erc_row_study_[static_cast<std::size_t>(r)]) += d_erc(r) * erc_rows_.row(r).transpose();
    }
    for (int s = 0; s < n_studies; ++s) {
      const Eigen::Index off = off_delta_[static_cast<std::size_t>(s)];
      if (off < 0) continue;
      const auto& rows = time_rows_[static_cast<std::size_t>(s)];
      const Eigen::VectorXd back =
          rows.transpose() * d_time.segment(time_row_offset_[static_cast<std::size_t>(s)], rows.rows()).matrix();
      grad->segment(off, time_df(s)) += s_delta * back;
      d_s_delta += u.segment(off, time_df(s)).dot(back);
    }
    if (off_gamma_ >= 0) grad->segment(off_gamma_, data_.n_covariates()) += data_.covariates.transpose() * d_cov.matrix();
  }

  // Priors on psi, xi, gamma, delta.
  double prior = 0.0;
  double jacobian = 0.0;
  for (int s = 0; s < n_studies; ++s) {
    double d = 0.0;
    prior += normal_lpdf(psi(s), 0.0, s_psi, &d, &d_s_psi);
    d_psi(s) += d;
  }
  if (g != nullptr) {
    for (int s = 0; s < n_studies; ++s) {
      g[off_psi_ + s] += d_psi(s);
      d_beta.col(hierarchical ? s : 0) -= d_psi(s) * psi_center_.row(s).transpose();
    }
  }
  for (int i = 0; i < n_subjects; ++i) {
    prior += -0.5 * z_xi[i] * z_xi[i] - kHalfLog2Pi;
    if (g != nullptr) g[off_xi_ + i] -= z_xi[i];
  }
  for (int c = 0; off_gamma_ >= 0 && c < data_.n_covariates(); ++c) {
    double d = 0.0;
    prior += normal_lpdf(u(off_gamma_ + c), 0.0, s_gamma, &d, &d_s_gamma);
    if (g != nullptr) g[off_gamma_ + c] += d;
  }
  for (int s = 0; s < n_studies; ++s) {
    const Eigen::Index off = off_delta_[static_cast<std::size_t>(s)];
    if (off < 0) continue;
    for (int j = 0; j < time_df(s); ++j) {
      const double z = u(off + j);
      prior += -0.5 * z * z - kHalfLog2Pi;
      if (g != nullptr) g[off + j] -= z;
    }
  }

  // Exposure-response coefficients.
  if (!hierarchical) {
    for (int j = 0; j < n_basis; ++j) {
      double d = 0.0;
      prior += normal_lpdf(beta(j, 0), 0.0, s_beta, &d, &d_s_beta);
      if (nonneg) {
        prior += std::log(2.0);
        jacobian += u(off_beta_ + j);
        if (g != nullptr) g[off_beta_ + j] += (d_beta(j, 0) + d) * beta(j, 0) + 1.0;
      } else if (g != nullptr) {
        g[off_beta_ + j] += d_beta(j, 0) + d;
      }
    }
  } else {
    const Eigen::MatrixXd& L = corr.factor;
    const Eigen::Map<const Eigen::VectorXd> xi0(xi0_.data(), n_studies);
    const Eigen::Index n_beta0 = priors_.beta0_per_basis ? n_basis : 1;
    Eigen::MatrixXd d_L = Eigen::MatrixXd::Zero(n_studies, n_studies);
    Eigen::VectorXd d_beta0 = Eigen::VectorXd::Zero(n_beta0);
    for (Eigen::Index k = 0; k < n_beta0; ++k) {
      double d = 0.0;
      prior += normal_lpdf(u(off_beta0_ + k), 0.0, s_beta, &d, &d_s_beta);
      d_beta0(k) += d;
    }
    auto beta0_at = [&](int j) { return u(off_beta0_ + (priors_.beta0_per_basis ? j : 0)); };
    if (!nonneg) {
      const Eigen::Map<const Eigen::MatrixXd> z(u.data() + off_beta_, n_basis, n_studies);
      prior += -0.5 * z.squaredNorm() - kHalfLog2Pi * static_cast<double>(z.size());
      if (g != nullptr) {
        Eigen::Map<Eigen::MatrixXd> gz(g + off_beta_, n_basis, n_studies);
        gz -= z;
        // beta' = beta0' + sigma D L Z', G = d_beta' (S x J).
        const Eigen::MatrixXd G = d_beta.transpose();
        const Eigen::MatrixXd DG = xi0.asDiagonal() * G;
        gz += (s_beta * (L.transpose() * DG)).transpose();
        const Eigen::MatrixXd LZ = L * z.transpose();
        d_s_beta += (DG.array() * LZ.array()).sum();
        d_L += s_beta * DG * z;
        if (priors_.beta0_per_basis) {
          d_beta0 += G.colwise().sum().transpose();
        } else {
          d_beta0(0) += G.sum();
        }
      }
    } else {
      // Multivariate normal on each column of beta', evaluated through L.
      double log_det_l = 0.0;
      for (int s = 0; s < n_studies; ++s) log_det_l += std::log(L(s, s));
      const double log_xi0 = xi0.array().log().sum();
      for (int j = 0; j < n_basis; ++j) {
        const Eigen::VectorXd beta_j = beta.row(j).transpose();
        const Eigen::VectorXd r = (beta_j.array() - beta0_at(j)).matrix().cwiseQuotient(s_beta * xi0);
        const Eigen::VectorXd a = L.triangularView<Eigen::Lower>().solve(r);
        prior += -0.5 * a.squaredNorm() - n_studies * (std::log(s_beta) + kHalfLog2Pi) - log_xi0 - log_det_l;
        if (g == nullptr) continue;
        const Eigen::VectorXd b = L.transpose().triangularView<Eigen::Upper>().solve(a);
        const Eigen::VectorXd d_r_beta = -b.cwiseQuotient(s_beta * xi0);
        for (int s = 0; s < n_studies; ++s) d_beta(j, s) += d_r_beta(s);
        d_beta0(priors_.beta0_per_basis ? j : 0) -= d_r_beta.sum();
        d_s_beta += b.dot(r) / s_beta - n_studies / s_beta;
        d_L += (b * a.transpose()).triangularView<Eigen::Lower>().toDenseMatrix();
        for (int s = 0; s < n_studies; ++s) d_L(s, s) -= 1.0 / L(s, s);
      }
      if (g == nullptr) {
        for (Eigen::Index k = 0; k < beta.size(); ++k) jacobian += u(off_beta_ + k);
      } else {
        for (int s = 0; s < n_studies; ++s) {
          for (int j = 0; j < n_basis; ++j) {
            const Eigen::Index k = off_beta_ + static_cast<Eigen::Index>(s) * n_basis + j;
            jacobian += u(k);
            g[k] += d_beta(j, s) * beta(j, s) + 1.0;
          }
        }
      }
    }
    if (g != nullptr) grad->segment(off_beta0_, n_beta0) += d_beta0;
    if (off_corr_ >= 0) {
      prior += lkj_cholesky_log_density(L, priors_.lkj_shape, g != nullptr ? &d_L : nullptr);
      jacobian += corr.log_jacobian;
      if (g != nullptr) {
        const int m = corr_free_size(n_studies);
        corr_cholesky_backprop(std::span<const double>(u.data() + off_corr_, m), L, d_L,
                               std::span<double>(g + off_corr_, m));
      }
    }
  }

  // Scale hyperpriors.
  auto finish_scale = [&](Eigen::Index off, const ScaleComponent& c, double sigma, double d_sigma) {
    if (off < 0) return;
    prior += half_normal_lpdf(sigma, c.prior, &d_sigma);
    jacobian += u(off);
    if (g != nullptr) g[off] += d_sigma * sigma + 1.0;
  };
  finish_scale(off_sigma_psi_, priors_.sigma_psi, s_psi, d_s_psi);
  finish_scale(off_sigma_xi_, priors_.sigma_xi, s_xi, d_s_xi);
  finish_scale(off_sigma_gamma_, priors_.sigma_gamma, s_gamma, d_s_gamma);
  finish_scale(off_sigma_delta_, priors_.sigma_delta, s_delta, d_s_delta);
  finish_scale(off_sigma_beta_, priors_.sigma_beta, s_beta, d_s_beta);

  if (terms != nullptr) *terms = {lik, prior, jacobian};
  return lik + prior + jacobian;
}

}  // namespace poolerc
