#include "poolerc/outcome_fit.hpp"

#include <algorithm>
#include <sstream>

#include "poolerc/error.hpp"

namespace poolerc {

namespace {

bool always_diagnosed(const ParameterLayout& layout, int k) {
  for (const auto& b : layout.blocks()) {
    if (k >= b.offset && k < b.offset + b.size) {
      return b.name == "psi" || b.name == "beta0" || b.name.rfind("sigma_", 0) == 0;
    }
  }
  return false;
}

}  // namespace

const ParameterSummary& OutcomePosterior::summary(const std::string& name) const {
  for (const auto& s : summaries) {
    if (s.name == name) return s;
  }
  throw ConfigError("unknown parameter '" + name + "'");
}

Eigen::MatrixXd OutcomePosterior::beta_draws(int curve) const {
  const int curves = model->erc().mode == ERCMode::Shared ? 1 : data().n_studies();
  if (curve < 0 || curve >= curves) throw ConfigError("curve index out of range");
  const int J = model->n_basis();
  const Eigen::Index offset = model->layout().at("beta").offset + static_cast<Eigen::Index>(curve) * J;
  Eigen::MatrixXd out(n_total_draws(), J);
  const int n = draws.n_draws();
  for (int d = 0; d < out.rows(); ++d) {
    out.row(d) = draws.chains[static_cast<std::size_t>(d / n)].draws.row(d % n).segment(offset, J);
  }
  return out;
}

Eigen::VectorXd OutcomePosterior::psi_draws(int study) const {
  if (study < 0 || study >= data().n_studies()) throw ConfigError("study index out of range");
  return draws.pooled(static_cast<int>(model->layout().at("psi").offset) + study);
}

OutcomePosterior fit_outcome(const OutcomeDataset& data, const OutcomePriors& priors,
                             const ERCSpec& erc, const SamplerSettings& settings,
                             const OutcomeFitOptions& options) {
  OutcomePosterior post;
  auto model = std::make_shared<OutcomeModel>(data, priors, erc);
  post.model = model;
  post.warnings = model->warnings();
  post.draws = nuts_sample(*model, settings);

  const int dim = post.draws.dim();
  std::vector<bool> include(static_cast<std::size_t>(dim), true);
  if (!options.full_diagnostics) {
    for (int k = 0; k < dim; ++k) include[static_cast<std::size_t>(k)] = always_diagnosed(model->layout(), k);
  }
  post.diagnostics = compute_diagnostics(post.draws, include);
  post.summaries = summarize(post.draws, post.diagnostics);
  post.warnings.insert(post.warnings.end(), post.diagnostics.warnings.begin(), post.diagnostics.warnings.end());
  for (int k = 0; k < dim; ++k) {
    const std::string& name = post.draws.names[static_cast<std::size_t>(k)];
    if (name.rfind("sigma_", 0) != 0) continue;
    const double rhat = post.diagnostics.parameters[static_cast<std::size_t>(k)].rhat;
    if (rhat > options.rhat_threshold) {
      post.converged = false;
      std::ostringstream msg;
      msg << "variance component " << name << " has R-hat " << rhat << " > "
          << options.rhat_threshold << "; the outcome fit has not converged";
      post.warnings.push_back(msg.str());
    }
  }
  return post;
}

std::vector<double> curve_grid(const ERCSpec& erc, int n, std::optional<double> observed_min,
                               std::optional<double> observed_max) {
  if (n < 2) throw ConfigError("curve grid needs at least two points");
  const double lo = erc.knots.lower, hi = erc.knots.upper;
  std::vector<double> grid;
  if (observed_min && *observed_min < lo) grid.push_back(*observed_min);
  for (int i = 0; i < n; ++i) {
    grid.push_back(i == n - 1 ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  if (observed_max && *observed_max > hi) grid.push_back(*observed_max);
  return grid;
}

ERCCurve curve_from_draws(const ISplineBasis& basis, const Eigen::MatrixXd& beta, double x_ref,
                          const std::vector<double>& grid, const Eigen::VectorXd* intercept) {
  const int J = basis.size();
  if (beta.cols() != J) throw ConfigError("beta draws do not match the basis size");
  if (intercept != nullptr && intercept->size() != beta.rows()) {
    throw ConfigError("intercept draws do not match the beta draws");
  }
  const Eigen::Index n_grid = static_cast<Eigen::Index>(grid.size());
  Eigen::MatrixXd g(n_grid, J);
  const Eigen::RowVectorXd ref = basis.row(x_ref);
  for (Eigen::Index r = 0; r < n_grid; ++r) g.row(r) = basis.row(grid[static_cast<std::size_t>(r)]) - ref;

  ERCCurve out;
  out.x_log = grid;
  out.draws.resize(beta.rows(), n_grid);
  // Fixed summation order per grid point, so monotone basis columns and
  // non-negative coefficients give exactly non-decreasing curves.
  for (Eigen::Index d = 0; d < beta.rows(); ++d) {
    for (Eigen::Index r = 0; r < n_grid; ++r) {
      double v = 0.0;
      for (int j = 0; j < J; ++j) v += g(r, j) * beta(d, j);
      if (intercept != nullptr) v += (*intercept)(d);
      out.draws(d, r) = v;
    }
  }
  out.mean.resize(n_grid);
  out.q025.resize(n_grid);
  out.q975.resize(n_grid);
  for (Eigen::Index r = 0; r < n_grid; ++r) {
    const ParameterSummary s = summarize_values("", out.draws.col(r));
    out.mean(r) = s.mean;
    out.q025(r) = s.q025;
    out.q975(r) = s.q975;
  }
  return out;
}

ERCCurve extract_curve(const OutcomePosterior& posterior, const std::vector<double>& grid,
                       const CurveOptions& options) {
  const OutcomeModel& model = *posterior.model;
  const Eigen::MatrixXd beta = posterior.beta_draws(options.curve);
  Eigen::VectorXd intercept;
  if (options.intercept_study) intercept = posterior.psi_draws(*options.intercept_study);
  ERCCurve curve = curve_from_draws(model.erc_basis(), beta, model.erc().x_ref, grid,
                                    options.intercept_study ? &intercept : nullptr);
  curve.mode = model.erc().mode;
  curve.constraint = model.erc().constraint;
  if (curve.mode == ERCMode::Hierarchical) curve.study = posterior.data().studies[static_cast<std::size_t>(options.curve)];
  return curve;
}

std::vector<ERCCurve> hierarchical_curves(const OutcomePosterior& posterior, const std::vector<double>& grid) {
  if (posterior.model->erc().mode != ERCMode::Hierarchical) {
    throw ConfigError("per-study curves need a hierarchical fit");
  }
  std::vector<ERCCurve> out;
  for (int s = 0; s < posterior.data().n_studies(); ++s) {
    CurveOptions opt;
    opt.curve = s;
    out.push_back(extract_curve(posterior, grid, opt));
  }
  return out;
}

}  // namespace poolerc
