#pragma once

// Pooled binomial-logit outcome model:
//
//   Y[it] ~ Binomial(T[it], mu[it])
//   logit mu[it] = psi[s] + xi[i] + z[it]' gamma + h_s(t)' delta_s + g(x[it])' beta_s
//
// psi ~ N(0, sigma_psi^2), xi ~ N(0, sigma_xi^2), gamma ~ N(0, sigma_gamma^2),
// delta ~ N(0, sigma_delta^2). g is an I-spline basis of log exposure. With a
// shared curve beta ~ N(0, sigma_beta^2) (half-normal when restricted to be
// non-negative). With per-study curves, for each basis index j
//   (beta[1j], ..., beta[Sj]) ~ N(beta0, sigma_beta^2 diag(xi0) Sigma diag(xi0))
// with an LKJ prior on the S x S correlation matrix Sigma.

#include <map>
#include <string>
#include <vector>

#include "poolerc/log_density.hpp"
#include "poolerc/spline_basis.hpp"
#include "poolerc/transforms.hpp"

namespace poolerc {

struct OutcomeRecord {
  int study = 0;
  int subject = 0;
  int period = 0;
  int cases = 0;
  int trials = 1;
  double x = 0.0;  // assigned log exposure
};

struct OutcomeDataset {
  std::vector<std::string> studies;
  std::vector<std::string> subjects;
  std::vector<std::string> covariate_names;
  std::vector<OutcomeRecord> records;
  Eigen::MatrixXd covariates;  // n_records x n_covariates

  int n_studies() const { return static_cast<int>(studies.size()); }
  int n_subjects() const { return static_cast<int>(subjects.size()); }
  int n_records() const { return static_cast<int>(records.size()); }
  int n_covariates() const { return static_cast<int>(covariate_names.size()); }

  // Throws ValidationError on cases outside [0, trials], non-positive trials,
  // a subject in two studies, or non-finite exposures/covariates.
  void validate() const;
};

class OutcomeDatasetBuilder {
 public:
  explicit OutcomeDatasetBuilder(std::vector<std::string> covariate_names = {});

  void add(const std::string& study, const std::string& subject, int period, int cases,
           int trials, double x, const std::vector<double>& covariates = {});
  OutcomeDataset build() const;

 private:
  OutcomeDataset data_;
  std::vector<double> covariate_values_;
  std::map<std::string, int> study_index_, subject_index_;
};

enum class ERCMode { Shared, Hierarchical };
enum class BetaConstraint { Free, NonNegative };

struct ERCSpec {
  KnotSet knots;
  int order = 3;
  ERCMode mode = ERCMode::Shared;
  BetaConstraint constraint = BetaConstraint::Free;
  double x_ref = 0.0;

  // Boundary knots at log 50 and log 2200 with interior knots at the logs of
  // 60, 85, 100, 125, 200 and 500; x_ref at the lower boundary.
  static ERCSpec application_default();
  void validate() const;
};

const char* to_string(ERCMode mode);
const char* to_string(BetaConstraint constraint);

struct OutcomePriors {
  ScaleComponent sigma_psi{{0.0, 5.0}};
  ScaleComponent sigma_xi{{0.0, 1.0}};
  ScaleComponent sigma_gamma{{0.0, 1.0}};
  ScaleComponent sigma_delta{{0.0, 1.0}};
  ScaleComponent sigma_beta{{0.0, 1.0}};

  // Time-spline df per study (0 disables); studies not listed use time_df.
  int time_df = 8;
  std::map<std::string, int> time_df_by_study;

  // Per-study curves only.
  bool beta0_per_basis = false;
  std::vector<double> xi0;  // length n_studies; empty means ones
  double lkj_shape = 1.0;

  void validate() const;
};

struct OutcomeParams {
  Eigen::VectorXd psi;
  Eigen::VectorXd xi;
  Eigen::VectorXd gamma;
  std::vector<Eigen::VectorXd> delta;  // per study
  Eigen::MatrixXd beta;                // n_basis x (1 shared, or n_studies)
  Eigen::VectorXd beta0;               // per-study curves only
  Eigen::MatrixXd corr_factor;         // per-study curves only
  double sigma_psi = 1.0;
  double sigma_xi = 1.0;
  double sigma_gamma = 1.0;
  double sigma_delta = 1.0;
  double sigma_beta = 1.0;
};

class OutcomeModel final : public LogDensity {
 public:
  OutcomeModel(OutcomeDataset data, OutcomePriors priors, ERCSpec erc);

  Eigen::Index dimension() const override { return layout_.size(); }
  double log_density_gradient(const Eigen::VectorXd& u,
                              Eigen::VectorXd& grad) const override;
  Eigen::VectorXd constrain(const Eigen::VectorXd& u) const override;
  std::vector<std::string> parameter_names() const override;
  Eigen::VectorXd initial_point() const override;

  LogDensityTerms terms(const Eigen::VectorXd& u) const;
  OutcomeParams unpack(const Eigen::VectorXd& u) const;
  // Beta matrix (n_basis x 1 or n_basis x n_studies) from a constrained draw.
  Eigen::MatrixXd beta_from_constrained(const Eigen::VectorXd& c) const;
  // Linear predictor for every record.
  Eigen::VectorXd linear_predictor(const Eigen::VectorXd& u) const;

  const ParameterLayout& layout() const { return layout_; }
  const OutcomeDataset& data() const { return data_; }
  const OutcomePriors& priors() const { return priors_; }
  const ERCSpec& erc() const { return erc_; }
  const ISplineBasis& erc_basis() const { return basis_; }
  int n_basis() const { return basis_.size(); }
  int time_df(int study) const { return time_df_[static_cast<std::size_t>(study)]; }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  double evaluate(const Eigen::VectorXd& u, Eigen::VectorXd* grad, LogDensityTerms* terms) const;
  // Beta (n_basis x n_curves) and the correlation factor from u.
  void beta_matrix(const Eigen::VectorXd& u, double sigma_beta, Eigen::MatrixXd& beta,
                   CorrCholesky* corr) const;
  // The sampled intercept is centred at each study's mean ERC row.
  Eigen::VectorXd psi_values(const Eigen::VectorXd& u, const Eigen::MatrixXd& beta) const;

  OutcomeDataset data_;
  OutcomePriors priors_;
  ERCSpec erc_;
  ISplineBasis basis_;
  ParameterLayout layout_;
  std::vector<std::string> warnings_;

  // Distinct (study, x) ERC rows; distinct (study, period) time rows.
  Eigen::MatrixXd erc_rows_;
  std::vector<int> erc_row_study_;
  Eigen::MatrixXd psi_center_;  // per study: mean ERC row over its records
  std::vector<int> record_erc_row_;
  std::vector<Eigen::MatrixXd> time_rows_;  // per study: distinct periods x df
  std::vector<int> time_row_offset_;        // first global time row of each study
  std::vector<int> record_time_row_;
  std::vector<int> record_subject_;
  std::vector<int> subject_study_;
  Eigen::ArrayXd cases_, trials_;
  Eigen::ArrayXd cases_by_subject_, cases_by_erc_row_, cases_by_time_row_;
  int uniform_trials_ = 0;  // common trial count, 0 when records differ
  std::vector<int> time_df_;
  std::vector<Eigen::Index> off_delta_;     // per study, -1 when df = 0
  double log_binom_const_ = 0.0;
  int n_time_rows_ = 0;
  std::vector<double> xi0_;

  Eigen::Index off_psi_ = 0, off_xi_ = 0, off_gamma_ = -1, off_beta_ = 0, off_beta0_ = -1,
               off_corr_ = -1;
  Eigen::Index off_sigma_psi_ = -1, off_sigma_xi_ = -1, off_sigma_gamma_ = -1,
               off_sigma_delta_ = -1, off_sigma_beta_ = -1;
};

}  // namespace poolerc
