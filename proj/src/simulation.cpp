#include "poolerc/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <random>
#include <thread>

#include "poolerc/error.hpp"

namespace poolerc {

namespace {

std::string label(const char* prefix, int i) { return prefix + std::to_string(i + 1); }

// Runs task(i) for i in [0, n) on up to `threads` workers; rethrows the first
// failure.
template <class Task>
void parallel_for(int n, int threads, Task task) {
  int workers = threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(mutex);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<double> average_by(const std::vector<double>& values, const std::vector<int>& index, int n) {
  std::vector<double> sum(static_cast<std::size_t>(n), 0.0), count(static_cast<std::size_t>(n), 0.0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (index[i] < 0) continue;
    sum[static_cast<std::size_t>(index[i])] += values[i];
    count[static_cast<std::size_t>(index[i])] += 1.0;
  }
  for (std::size_t k = 0; k < sum.size(); ++k) sum[k] /= count[k];
  return sum;
}

LevelEstimates from_households(std::vector<double> household, const SimTruths& truths) {
  LevelEstimates out;
  out.group = average_by(household, truths.household_group, static_cast<int>(truths.group.size()));
  out.cluster = average_by(household, truths.household_cluster, static_cast<int>(truths.cluster.size()));
  out.household = std::move(household);
  return out;
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t seed, int replication, int stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replication), static_cast<std::uint32_t>(stream)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

// ---------------------------------------------------------------------------
// Exposure simulation.

ExposureSimSetup ExposureSimSetup::preset(int id) {
  ExposureSimSetup s;
  s.id = id;
  switch (id) {
    case 1:
      break;
    case 2:
      s.group_means = {3.0, 6.0};
      s.sigma_w = 0.4;
      s.trend_amplitude = 0.2;
      break;
    case 3:
      s.group_means = {4.0, 4.3, 4.8, 6.0};
      s.clusters_per_group = 0;
      s.households_per_cluster = 200;
      s.obs_per_household = 1;
      s.sigma_w = 1.0;
      s.sigma_h = 0.5;
      s.sigma_k = 0.0;
      break;
    default:
      throw ConfigError("simulation setup must be 1, 2 or 3");
  }
  return s;
}

ExposureSimSetup ExposureSimSetup::single_observation(int id) {
  ExposureSimSetup s = preset(id);
  s.obs_per_household = 1;
  return s;
}

void ExposureSimSetup::validate() const {
  if (group_means.empty()) throw ConfigError("simulation setup needs at least one group");
  if (clusters_per_group < 0 || households_per_cluster < 1 || obs_per_household < 1) {
    throw ConfigError("simulation setup sizes must be positive");
  }
  if (sigma_w < 0 || sigma_h < 0 || sigma_k < 0) throw ConfigError("simulation scales must be >= 0");
  if (n_days < 1 || time_step_days < 1 || trend_period <= 0) {
    throw ConfigError("simulation day grid must be positive");
  }
}

int ExposureSimSetup::n_households() const {
  return n_groups() * std::max(clusters_per_group, 1) * households_per_cluster;
}

double ExposureSimSetup::trend(double day) const {
  return trend_amplitude * std::sin(2.0 * std::numbers::pi * day / trend_period);
}

ExposureSim simulate_exposure(const ExposureSimSetup& setup, std::uint64_t seed) {
  setup.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> day_dist(0, setup.n_days - 1);

  ExposureSim sim;
  ExposureDatasetBuilder builder("setup" + std::to_string(setup.id), setup.has_clusters());
  SimTruths& t = sim.truths;
  const int clusters = std::max(setup.clusters_per_group, 1);
  for (int g = 0; g < setup.n_groups(); ++g) {
    const double eta = setup.group_means[static_cast<std::size_t>(g)];
    t.group.push_back(eta);
    for (int k = 0; k < clusters; ++k) {
      const std::string cluster = setup.has_clusters() ? label("g", g) + "-" + label("k", k) : "";
      double mu_k = eta;
      int cluster_index = -1;
      if (setup.has_clusters()) {
        mu_k += setup.sigma_k * normal(rng);
        cluster_index = static_cast<int>(t.cluster.size());
        t.cluster.push_back(mu_k);
        t.cluster_group.push_back(g);
      }
      for (int i = 0; i < setup.households_per_cluster; ++i) {
        const std::string household =
            (setup.has_clusters() ? cluster : label("g", g)) + "-" + label("h", i);
        const double mu = mu_k + setup.sigma_h * normal(rng);
        t.household.push_back(mu);
        t.household_group.push_back(g);
        t.household_cluster.push_back(cluster_index);
        for (int o = 0; o < setup.obs_per_household; ++o) {
          const int day = day_dist(rng);
          const double w = mu + setup.trend(day) + setup.sigma_w * normal(rng);
          builder.add(label("g", g), cluster, household, day, day / setup.time_step_days, w);
        }
      }
    }
  }
  sim.data = builder.build();
  return sim;
}

Estimators estimators(const ExposureSim& sim, const ExposurePosterior& posterior) {
  const ExposureDataset& data = sim.data;
  const SimTruths& truths = sim.truths;
  const auto n_households = static_cast<std::size_t>(data.n_households());
  if (truths.household.size() != n_households) throw ConfigError("truths do not match the dataset");

  std::vector<double> w_sum(n_households, 0.0), trend_sum(n_households, 0.0), count(n_households, 0.0);
  const ExposureModel& model = *posterior.model;
  Eigen::VectorXd trend_fit = Eigen::VectorXd::Zero(data.n_obs());
  if (model.trend_df() > 0) {
    const auto& block = model.layout().at("theta");
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(block.size);
    for (const auto& chain : posterior.draws.chains) {
      theta += chain.draws.middleCols(block.offset, block.size).colwise().sum().transpose();
    }
    theta /= static_cast<double>(posterior.n_total_draws());
    trend_fit = model.observation_trend_basis() * theta;
  }
  for (int n = 0; n < data.n_obs(); ++n) {
    const auto h = static_cast<std::size_t>(data.observations[static_cast<std::size_t>(n)].household);
    w_sum[h] += data.observations[static_cast<std::size_t>(n)].w;
    trend_sum[h] += trend_fit(n);
    count[h] += 1.0;
  }

  std::vector<ExposureUnit> units(n_households);
  for (std::size_t h = 0; h < n_households; ++h) {
    units[h] = {truths.household_group[h], truths.household_cluster[h], static_cast<int>(h)};
  }
  const Eigen::VectorXd unit_mean = unit_draws(posterior, units).colwise().mean().transpose();

  std::vector<double> observed(n_households), with_trend(n_households), model_mean(n_households);
  for (std::size_t h = 0; h < n_households; ++h) {
    if (count[h] == 0.0) throw ConfigError("simulated household without observations");
    observed[h] = w_sum[h] / count[h];
    model_mean[h] = unit_mean(static_cast<Eigen::Index>(h));
    with_trend[h] = model_mean[h] + trend_sum[h] / count[h];
  }
  Estimators out;
  out.observed = from_households(std::move(observed), truths);
  out.with_trend = from_households(std::move(with_trend), truths);
  out.model = from_households(std::move(model_mean), truths);
  return out;
}

LevelErrors level_errors(const LevelEstimates& estimate, const SimTruths& truths) {
  LevelErrors e;
  const std::array<const std::vector<double>*, 3> est{&estimate.group, &estimate.cluster, &estimate.household};
  const std::array<const std::vector<double>*, 3> truth{&truths.group, &truths.cluster, &truths.household};
  for (std::size_t level = 0; level < 3; ++level) {
    if (est[level]->size() != truth[level]->size()) throw ConfigError("estimate and truth sizes differ");
    for (std::size_t i = 0; i < est[level]->size(); ++i) {
      const double d = (*est[level])[i] - (*truth[level])[i];
      e.sse[level] += d * d;
    }
    e.count[level] = static_cast<int>(est[level]->size());
  }
  return e;
}

std::vector<ErrorTableRow> error_table(const std::vector<ExposureReplication>& replications) {
  std::vector<int> setups;
  for (const auto& r : replications) setups.push_back(r.setup);
  std::sort(setups.begin(), setups.end());
  setups.erase(std::unique(setups.begin(), setups.end()), setups.end());

  static const std::array<const char*, 3> names{"mu1", "mu2", "mu3"};
  std::vector<ErrorTableRow> table;
  for (int setup : setups) {
    int n_reps = 0;
    for (const auto& r : replications) n_reps += r.setup == setup;
    if (n_reps < 2) throw ConfigError("error table needs at least two replications per setup");
    for (std::size_t e = 0; e < 3; ++e) {
      std::array<double, 3> sse{};
      std::array<double, 3> count{};
      for (const auto& r : replications) {
        if (r.setup != setup) continue;
        for (std::size_t level = 0; level < 3; ++level) {
          sse[level] += r.errors[e].sse[level];
          count[level] += r.errors[e].count[level];
        }
      }
      ErrorTableRow row;
      row.setup = setup;
      row.estimator = names[e];
      row.group = sse[0] / count[0];
      if (count[1] > 0) row.cluster = sse[1] / count[1];
      row.household = sse[2] / count[2];
      table.push_back(row);
    }
  }
  return table;
}

std::vector<ExposureReplication> run_exposure_study(const ExposureStudyConfig& config) {
  if (config.replications < 1) throw ConfigError("replications must be >= 1");
  for (const auto& s : config.setups) s.validate();
  const int n_setups = static_cast<int>(config.setups.size());
  std::vector<ExposureReplication> out(static_cast<std::size_t>(n_setups * config.replications));
  parallel_for(static_cast<int>(out.size()), config.n_threads, [&](int task) {
    const int b = task / n_setups;
    const ExposureSimSetup& setup = config.setups[static_cast<std::size_t>(task % n_setups)];
    const ExposureSim sim = simulate_exposure(setup, stream_seed(config.seed, b, setup.id));
    SamplerSettings settings = config.sampler;
    settings.seed = stream_seed(config.seed, b, 100 + setup.id);
    settings.n_threads = 1;
    ExposureFitOptions options;
    options.full_diagnostics = false;
    const ExposurePosterior post = fit_exposure(sim.data, config.priors, settings, options);
    const Estimators est = estimators(sim, post);
    ExposureReplication& r = out[static_cast<std::size_t>(task)];
    r.setup = setup.id;
    r.replication = b;
    r.errors = {level_errors(est.observed, sim.truths), level_errors(est.with_trend, sim.truths),
                level_errors(est.model, sim.truths)};
    r.converged = post.converged;
    r.divergences = post.draws.divergences();
  });
  return out;
}

// ---------------------------------------------------------------------------
// Outcome simulation.

const char* to_string(ERCForm form) { return form == ERCForm::Linear ? "linear" : "logistic"; }

const char* to_string(ExposureSource source) {
  switch (source) {
    case ExposureSource::True:
      return "true";
    case ExposureSource::Modeled:
      return "modeled";
    case ExposureSource::Observed:
      return "observed";
  }
  return "";
}

double true_erc(ERCForm form, double x) {
  if (form == ERCForm::Linear) {
    const double v = 1.0 + 0.5 * (x - std::log(5.0));
    if (v <= 0.0) throw DomainError("linear exposure-response is undefined below log 5 - 2");
    return std::log(v);
  }
  return std::log1p(1.0 / (1.0 + std::exp(-3.0 * (x - 4.0))));
}

OutcomeDataset simulate_outcome(const OutcomeSimSetup& setup, const std::string& study,
                                const std::vector<double>& exposure, std::uint64_t seed) {
  if (setup.n_periods < 1 || setup.trials < 1) throw ConfigError("outcome simulation needs periods and trials");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  OutcomeDatasetBuilder builder;
  for (std::size_t i = 0; i < exposure.size(); ++i) {
    const double xi = setup.sigma_xi * normal(rng);
    const double base = setup.psi + xi + true_erc(setup.form, exposure[i]);
    const std::string subject = label("s", static_cast<int>(i));
    for (int t = 1; t <= setup.n_periods; ++t) {
      const double h = setup.time_amplitude *
                       std::cos(2.0 * std::numbers::pi * t / static_cast<double>(setup.n_periods));
      std::binomial_distribution<int> draw(setup.trials, 1.0 / (1.0 + std::exp(-(base + h))));
      builder.add(study, subject, t, draw(rng), setup.trials, exposure[i]);
    }
  }
  return builder.build();
}

OutcomeDataset with_exposure(const OutcomeDataset& data, const std::vector<double>& x) {
  if (static_cast<int>(x.size()) != data.n_subjects()) throw ConfigError("one exposure per subject required");
  OutcomeDataset out = data;
  for (auto& rec : out.records) rec.x = x[static_cast<std::size_t>(rec.subject)];
  out.validate();
  return out;
}

OutcomeDataset combine_outcomes(const std::vector<OutcomeDataset>& parts) {
  OutcomeDatasetBuilder builder;
  for (const auto& part : parts) {
    if (part.n_covariates() > 0) throw ConfigError("combining datasets with covariates is not supported");
    for (const auto& rec : part.records) {
      const std::string& study = part.studies[static_cast<std::size_t>(rec.study)];
      builder.add(study, study + ":" + part.subjects[static_cast<std::size_t>(rec.subject)], rec.period,
                  rec.cases, rec.trials, rec.x);
    }
  }
  return builder.build();
}

CurveMetrics curve_metrics(const Eigen::MatrixXd& estimates, const std::vector<double>& grid,
                           ERCForm form, double psi) {
  const auto n_grid = static_cast<Eigen::Index>(grid.size());
  if (estimates.cols() != n_grid) throw ConfigError("estimates do not match the grid");
  if (estimates.rows() < 1) throw ConfigError("curve metrics need at least one replication");
  CurveMetrics m;
  m.x_log = grid;
  m.truth.resize(n_grid);
  m.relative_bias.resize(n_grid);
  m.rmse.resize(n_grid);
  for (Eigen::Index r = 0; r < n_grid; ++r) {
    const double truth = psi + true_erc(form, grid[static_cast<std::size_t>(r)]);
    const Eigen::ArrayXd err = estimates.col(r).array() - truth;
    m.truth(r) = truth;
    m.relative_bias(r) = err.mean() / truth;
    m.rmse(r) = std::sqrt(err.square().mean());
  }
  return m;
}

Eigen::VectorXd absolute_curve(const OutcomePosterior& posterior, const std::vector<double>& grid) {
  if (posterior.model->erc().mode != ERCMode::Shared) throw ConfigError("absolute curves need a shared fit");
  const int n_studies = posterior.data().n_studies();
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(posterior.n_total_draws());
  for (int s = 0; s < n_studies; ++s) psi += posterior.psi_draws(s);
  psi /= static_cast<double>(n_studies);
  const OutcomeModel& model = *posterior.model;
  return curve_from_draws(model.erc_basis(), posterior.beta_draws(0), model.erc().x_ref, grid, &psi).mean;
}

ERCSpec OutcomeStudyConfig::default_erc() {
  ERCSpec e;
  e.knots = {2.0, 7.0, {3.0, 4.0, 5.0, 6.0}};
  e.x_ref = 2.0;
  return e;
}

std::vector<OutcomeCell> OutcomeStudyConfig::all_cells() {
  std::vector<OutcomeCell> cells;
  for (BetaConstraint c : {BetaConstraint::Free, BetaConstraint::NonNegative}) {
    for (int set = 0; set <= kCombinedSet; ++set) {
      for (ExposureSource s : {ExposureSource::True, ExposureSource::Modeled, ExposureSource::Observed}) {
        cells.push_back({set, s, c});
      }
    }
  }
  return cells;
}

OutcomeStudyResult run_outcome_study(const OutcomeStudyConfig& config) {
  if (config.replications < 1) throw ConfigError("replications must be >= 1");
  if (config.cells.empty()) throw ConfigError("outcome study needs at least one cell");
  if (config.erc.mode != ERCMode::Shared) throw ConfigError("outcome study fits a shared curve");
  config.erc.validate();
  for (const auto& s : config.setups) s.validate();
  for (const auto& c : config.cells) {
    if (c.set < 0 || c.set > kCombinedSet) throw ConfigError("outcome cell set must be 0..3");
  }

  OutcomeStudyResult result;
  result.grid = config.grid.empty() ? curve_grid(config.erc) : config.grid;
  const auto n_grid = static_cast<Eigen::Index>(result.grid.size());
  for (const auto& c : config.cells) {
    OutcomeCellResult r;
    r.cell = c;
    r.estimates.resize(config.replications, n_grid);
    result.cells.push_back(std::move(r));
  }

  std::array<bool, 3> need_set{};
  bool need_model = false;
  for (const auto& c : config.cells) {
    for (int s = 0; s < 3; ++s) need_set[static_cast<std::size_t>(s)] |= c.set == s || c.set == kCombinedSet;
    need_model |= c.source == ExposureSource::Modeled;
  }

  std::mutex mutex;
  parallel_for(config.replications, config.n_threads, [&](int b) {
    std::array<std::array<std::vector<double>, 3>, 3> x;  // [setup][source]
    std::array<OutcomeDataset, 3> outcomes;
    for (int s = 0; s < 3; ++s) {
      if (!need_set[static_cast<std::size_t>(s)]) continue;
      const ExposureSimSetup& setup = config.setups[static_cast<std::size_t>(s)];
      const ExposureSim sim = simulate_exposure(setup, stream_seed(config.seed, b, s));
      auto& xs = x[static_cast<std::size_t>(s)];
      xs[static_cast<std::size_t>(ExposureSource::True)] = sim.truths.household;
      std::vector<double> w_sum(sim.truths.household.size(), 0.0), count(w_sum.size(), 0.0);
      for (const auto& o : sim.data.observations) {
        w_sum[static_cast<std::size_t>(o.household)] += o.w;
        count[static_cast<std::size_t>(o.household)] += 1.0;
      }
      auto& observed = xs[static_cast<std::size_t>(ExposureSource::Observed)];
      for (std::size_t h = 0; h < w_sum.size(); ++h) observed.push_back(w_sum[h] / count[h]);
      if (need_model) {
        SamplerSettings settings = config.exposure_sampler;
        settings.seed = stream_seed(config.seed, b, 10 + s);
        settings.n_threads = 1;
        ExposureFitOptions options;
        options.full_diagnostics = false;
        const ExposurePosterior post = fit_exposure(sim.data, config.exposure_priors, settings, options);
        xs[static_cast<std::size_t>(ExposureSource::Modeled)] = estimators(sim, post).model.household;
      }
      outcomes[static_cast<std::size_t>(s)] =
          simulate_outcome(config.outcome, "setup" + std::to_string(setup.id),
                           xs[static_cast<std::size_t>(ExposureSource::True)], stream_seed(config.seed, b, 20 + s));
    }

    for (std::size_t c = 0; c < config.cells.size(); ++c) {
      const OutcomeCell& cell = config.cells[c];
      const auto source = static_cast<std::size_t>(cell.source);
      OutcomeDataset data;
      if (cell.set == kCombinedSet) {
        std::vector<OutcomeDataset> parts;
        for (std::size_t s = 0; s < 3; ++s) parts.push_back(with_exposure(outcomes[s], x[s][source]));
        data = combine_outcomes(parts);
      } else {
        const auto s = static_cast<std::size_t>(cell.set);
        data = with_exposure(outcomes[s], x[s][source]);
      }
      ERCSpec erc = config.erc;
      erc.constraint = cell.constraint;
      SamplerSettings settings = config.outcome_sampler;
      settings.seed = stream_seed(config.seed, b, 100 + static_cast<int>(c));
      settings.n_threads = 1;
      OutcomeFitOptions options;
      options.full_diagnostics = false;
      const OutcomePosterior post = fit_outcome(data, config.outcome_priors, erc, settings, options);
      const Eigen::VectorXd curve = absolute_curve(post, result.grid);
      std::lock_guard lock(mutex);
      OutcomeCellResult& r = result.cells[c];
      r.estimates.row(b) = curve.transpose();
      r.divergences += post.draws.divergences();
      r.unconverged += post.converged ? 0 : 1;
    }
  });

  for (auto& r : result.cells) {
    r.metrics = curve_metrics(r.estimates, result.grid, config.outcome.form, config.outcome.psi);
  }
  return result;
}

}  // namespace poolerc
