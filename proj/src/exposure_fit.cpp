#include "poolerc/exposure_fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "poolerc/error.hpp"
#include "poolerc/spline_basis.hpp"

namespace poolerc {

namespace {

Eigen::VectorXd draw_row(const PosteriorDraws& draws, int d) {
  const int n = draws.n_draws();
  if (n == 0 || d < 0 || d >= n * draws.n_chains()) {
    throw ValidationError("draw index " + std::to_string(d) + " out of range");
  }
  return draws.chains[static_cast<std::size_t>(d / n)].draws.row(d % n).transpose();
}

bool always_diagnosed(const ParameterLayout& layout, int k) {
  for (const auto& b : layout.blocks()) {
    if (k >= b.offset && k < b.offset + b.size) {
      return b.name == "eta" || b.name.rfind("sigma_", 0) == 0;
    }
  }
  return false;
}

double sample_variance(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1);
}

double clip_lambda(double numerator, double denominator) {
  if (!(denominator > 0.0)) return 1.0;
  return std::clamp(1.0 - numerator / denominator, 0.0, 1.0);
}

std::string unit_labels(const ExposureDataset& data, const ExposureUnit& u, std::string* group,
                        std::string* cluster, std::string* household) {
  *group = data.groups[static_cast<std::size_t>(u.group)];
  *cluster = u.cluster >= 0 ? data.clusters[static_cast<std::size_t>(u.cluster)] : std::string();
  *household = data.households[static_cast<std::size_t>(u.household)];
  return *group + "/" + *cluster + "/" + *household;
}

}  // namespace

ExposureParams ExposurePosterior::params(int d) const {
  return model->unpack_constrained(draw_row(draws, d));
}

const ParameterSummary& ExposurePosterior::summary(const std::string& name) const {
  for (const auto& s : summaries) {
    if (s.name == name) return s;
  }
  throw ConfigError("unknown parameter '" + name + "'");
}

ExposurePosterior fit_exposure(const ExposureDataset& data, const ExposurePriors& priors,
                               const SamplerSettings& settings,
                               const ExposureFitOptions& options) {
  ExposurePosterior post;
  auto model = std::make_shared<ExposureModel>(data, priors);
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
          << options.rhat_threshold << "; the exposure fit has not converged";
      post.warnings.push_back(msg.str());
    }
  }

  const Eigen::MatrixXd residuals = residual_draws(post);
  Eigen::VectorXd w(data.n_obs());
  for (int n = 0; n < data.n_obs(); ++n) w(n) = data.observations[static_cast<std::size_t>(n)].w;
  post.fitted = w - residuals.colwise().mean().transpose();
  return post;
}

Eigen::MatrixXd unit_draws(const ExposurePosterior& posterior, const std::vector<ExposureUnit>& units) {
  const ParameterLayout& layout = posterior.model->layout();
  const Eigen::Index eta = layout.at("eta").offset;
  const Eigen::Index hh = layout.at("alpha_household").offset;
  const ParameterBlock* cl = layout.find("alpha_cluster");
  const int n_groups = posterior.data().n_groups();
  const int n_households = posterior.data().n_households();
  for (const auto& u : units) {
    if (u.group < 0 || u.group >= n_groups || u.household < 0 || u.household >= n_households ||
        (u.cluster >= 0 && (cl == nullptr || u.cluster >= cl->size))) {
      throw ValidationError("unit index out of range");
    }
  }
  const int total = posterior.n_total_draws();
  Eigen::MatrixXd out(total, static_cast<Eigen::Index>(units.size()));
  const int n = posterior.draws.n_draws();
  for (int d = 0; d < total; ++d) {
    const auto& m = posterior.draws.chains[static_cast<std::size_t>(d / n)].draws;
    const Eigen::Index r = d % n;
    for (std::size_t j = 0; j < units.size(); ++j) {
      const ExposureUnit& u = units[j];
      double v = m(r, eta + u.group) + m(r, hh + u.household);
      if (u.cluster >= 0) v += m(r, cl->offset + u.cluster);
      out(d, static_cast<Eigen::Index>(j)) = v;
    }
  }
  return out;
}

Eigen::MatrixXd residual_draws(const ExposurePosterior& posterior) {
  const ExposureDataset& data = posterior.data();
  std::vector<ExposureUnit> units;
  units.reserve(static_cast<std::size_t>(data.n_obs()));
  Eigen::VectorXd w(data.n_obs());
  for (int n = 0; n < data.n_obs(); ++n) {
    const auto& o = data.observations[static_cast<std::size_t>(n)];
    units.push_back({o.group, data.has_clusters ? o.cluster : -1, o.household});
    w(n) = o.w;
  }
  Eigen::MatrixXd out = unit_draws(posterior, units);
  const int df = posterior.model->trend_df();
  if (df > 0) {
    const Eigen::MatrixXd basis = posterior.model->observation_trend_basis();
    const Eigen::Index theta = posterior.model->layout().at("theta").offset;
    const int n = posterior.draws.n_draws();
    for (int d = 0; d < out.rows(); ++d) {
      const auto& m = posterior.draws.chains[static_cast<std::size_t>(d / n)].draws;
      out.row(d) += (basis * m.row(d % n).segment(theta, df).transpose()).transpose();
    }
  }
  out = (-out).rowwise() + w.transpose();
  return out;
}

double pooling_factor(const Eigen::MatrixXd& effects) {
  if (effects.cols() < 2) throw DomainError("pooling factor needs at least two units");
  if (effects.rows() < 1) throw DomainError("pooling factor needs at least one draw");
  const double numerator = sample_variance(effects.colwise().mean().transpose());
  double denominator = 0.0;
  for (Eigen::Index d = 0; d < effects.rows(); ++d) denominator += sample_variance(effects.row(d).transpose());
  denominator /= static_cast<double>(effects.rows());
  return clip_lambda(numerator, denominator);
}

double pooling_factor_plugin(const Eigen::MatrixXd& effects, double variance) {
  if (effects.cols() < 2) throw DomainError("pooling factor needs at least two units");
  if (effects.rows() < 1) throw DomainError("pooling factor needs at least one draw");
  return clip_lambda(sample_variance(effects.colwise().mean().transpose()), variance);
}

PoolingFactors pooling_factors(const ExposurePosterior& posterior, PoolingEstimator estimator) {
  const ParameterLayout& layout = posterior.model->layout();
  const PosteriorDraws& draws = posterior.draws;
  const int total = posterior.n_total_draws();

  auto block_draws = [&](const std::string& name) {
    const ParameterBlock& b = layout.at(name);
    Eigen::MatrixXd out(total, b.size);
    const int n = draws.n_draws();
    for (int d = 0; d < total; ++d) {
      out.row(d) = draws.chains[static_cast<std::size_t>(d / n)].draws.row(d % n).segment(b.offset, b.size);
    }
    return out;
  };
  // Posterior mean of sigma^2 for a scale, or the fixed value squared.
  auto mean_square = [&](const std::string& name, const ScaleComponent& comp) {
    if (layout.find(name) == nullptr) return comp.fixed_value * comp.fixed_value;
    return draws.stacked().col(layout.at(name).offset).array().square().mean();
  };
  auto lambda = [&](const Eigen::MatrixXd& effects, const std::string& scale, const ScaleComponent& comp) {
    return estimator == PoolingEstimator::DrawWise ? pooling_factor(effects)
                                                   : pooling_factor_plugin(effects, mean_square(scale, comp));
  };

  const ExposurePriors& priors = posterior.model->priors();
  PoolingFactors out;
  out.household = lambda(block_draws("alpha_household"), "sigma_household", priors.sigma_household);
  if (posterior.data().has_clusters && posterior.data().n_clusters() >= 2) {
    out.cluster = lambda(block_draws("alpha_cluster"), "sigma_cluster", priors.sigma_cluster);
  }
  out.observation = lambda(residual_draws(posterior), "sigma_obs", priors.sigma_obs);
  return out;
}

const HouseholdMean* HouseholdMeans::find(const std::string& group, const std::string& cluster,
                                          const std::string& household) const {
  for (const auto& r : rows) {
    if (r.group == group && r.cluster == cluster && r.household == household) return &r;
  }
  return nullptr;
}

HouseholdMeans household_means(const ExposurePosterior& posterior) {
  const ExposureDataset& data = posterior.data();
  const std::vector<ExposureUnit> units = data.units();
  const Eigen::MatrixXd values = unit_draws(posterior, units);
  HouseholdMeans out;
  out.study = data.study;
  for (std::size_t j = 0; j < units.size(); ++j) {
    HouseholdMean row;
    row.unit = units[j];
    unit_labels(data, units[j], &row.group, &row.cluster, &row.household);
    const ParameterSummary s = summarize_values("", values.col(static_cast<Eigen::Index>(j)));
    row.mean = s.mean;
    row.sd = s.sd;
    row.q025 = s.q025;
    row.q975 = s.q975;
    out.rows.push_back(std::move(row));
  }
  return out;
}

HouseholdMeans household_means_at_draw(const ExposurePosterior& posterior, int draw) {
  const ExposureDataset& data = posterior.data();
  const std::vector<ExposureUnit> units = data.units();
  const ExposureParams p = posterior.params(draw);
  HouseholdMeans out;
  out.study = data.study;
  out.provenance = "draw:" + std::to_string(draw);
  for (const auto& u : units) {
    HouseholdMean row;
    row.unit = u;
    unit_labels(data, u, &row.group, &row.cluster, &row.household);
    row.mean = p.eta(u.group) + p.alpha_household(u.household);
    if (u.cluster >= 0) row.mean += p.alpha_cluster(u.cluster);
    row.q025 = row.q975 = row.mean;
    out.rows.push_back(std::move(row));
  }
  return out;
}

void SubjectTimeline::validate() const {
  if (segments.empty()) throw ValidationError("subject " + subject + ": empty timeline");
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& seg = segments[s];
    if (seg.end_day < seg.start_day) {
      throw ValidationError("subject " + subject + ": segment ends before it starts");
    }
    if (s > 0 && seg.start_day != segments[s - 1].end_day + 1) {
      throw ValidationError("subject " + subject + ": segments must be contiguous and non-overlapping");
    }
  }
}

ExposureAssignment assign_exposure(const std::vector<SubjectTimeline>& timelines,
                                   const HouseholdMeans& means, int washout,
                                   const std::vector<PeriodRequest>& periods, WindowPolicy policy) {
  if (washout < 1) throw ValidationError("washout must be at least 1 day");
  std::map<std::string, const SubjectTimeline*> by_subject;
  for (const auto& t : timelines) {
    t.validate();
    if (!by_subject.emplace(t.subject, &t).second) {
      throw ValidationError("duplicate timeline for subject " + t.subject);
    }
  }
  std::map<std::tuple<std::string, std::string, std::string>, double> lookup;
  for (const auto& r : means.rows) lookup[{r.group, r.cluster, r.household}] = r.mean;

  ExposureAssignment out;
  out.study = means.study;
  out.provenance = means.provenance;
  std::set<std::string> truncated;
  for (const auto& req : periods) {
    const auto it = by_subject.find(req.subject);
    if (it == by_subject.end()) throw ValidationError("no timeline for subject " + req.subject);
    const SubjectTimeline& tl = *it->second;
    if (req.day > tl.segments.back().end_day || req.day < tl.segments.front().start_day) {
      throw ValidationError("subject " + req.subject + ": period " + std::to_string(req.period) +
                            " ends outside the timeline");
    }
    int first = req.day - washout + 1;
    if (first < tl.segments.front().start_day) {
      if (policy == WindowPolicy::Error) {
        throw ValidationError("subject " + req.subject + ": washout window for period " +
                              std::to_string(req.period) + " starts before the timeline");
      }
      first = tl.segments.front().start_day;
      truncated.insert(req.subject);
    }
    double sum = 0.0;
    for (const auto& seg : tl.segments) {
      const int lo = std::max(first, seg.start_day);
      const int hi = std::min(req.day, seg.end_day);
      if (lo > hi) continue;
      const auto m = lookup.find({seg.group, seg.cluster, seg.household});
      if (m == lookup.end()) {
        throw ValidationError("subject " + req.subject + ": no household mean for " + seg.group + "/" +
                              seg.cluster + "/" + seg.household);
      }
      sum += static_cast<double>(hi - lo + 1) * m->second;
    }
    const int used = req.day - first + 1;
    out.rows.push_back({req.subject, req.period, req.day, sum / used, washout, used});
  }
  for (const auto& s : truncated) {
    out.warnings.push_back("subject " + s + ": washout window truncated at the timeline start");
  }
  return out;
}

}  // namespace poolerc
