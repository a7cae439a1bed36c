#include "poolerc/commands.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <tuple>

#include "poolerc/error.hpp"
#include "poolerc/io.hpp"

namespace poolerc {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
      dynamic_cast<const DomainError*>(&e)) {
    return kExitValidation;
  }
  return kExitInternal;
}

RunConfig apply_options(RunConfig config, const CommandOptions& options) {
  if (options.seed) {
    config.seed = *options.seed;
    config.simulation.exposure_study.seed = *options.seed;
    config.simulation.outcome_study.seed = *options.seed;
  }
  if (options.restrict_nonneg) config.outcome.erc.constraint = BetaConstraint::NonNegative;
  if (options.hierarchical) config.outcome.erc.mode = ERCMode::Hierarchical;
  if (options.threads) {
    if (*options.threads < 0) throw ValidationError("--threads must be >= 0");
    config.sampler.n_threads = *options.threads;
    config.simulation.exposure_study.n_threads = *options.threads;
    config.simulation.outcome_study.n_threads = *options.threads;
  }
  if (options.out) config.output_dir = *options.out;
  return config;
}

namespace {

const std::filesystem::path& required(const std::optional<std::filesystem::path>& p, const char* key) {
  if (!p) throw ValidationError(std::string("config: data.") + key + " is required for this command");
  return *p;
}

std::filesystem::path means_path(const RunConfig& cfg) {
  return cfg.data.household_means.value_or(cfg.output_dir / "household_means.csv");
}

std::filesystem::path assignment_path(const RunConfig& cfg) {
  return cfg.data.assignment.value_or(cfg.output_dir / "assignment.csv");
}

std::filesystem::path draws_path(const RunConfig& cfg, const std::string& study) {
  return cfg.data.exposure_draws.value_or(cfg.output_dir) / ("exposure_draws_" + file_token(study) + ".csv");
}

void write_file(const std::filesystem::path& path, const std::string& content, std::ostream& log) {
  write_atomic(path, content);
  log << "wrote " << path.string() << '\n';
}

std::string study_of(const CsvTable& t, std::size_t r, int col, const std::optional<std::string>& fallback) {
  if (col >= 0) {
    if (t.empty(r, col)) throw ValidationError(t.where(r, col) + ": empty study id");
    return t.text(r, col);
  }
  if (!fallback) throw ValidationError(t.source + ": missing column 'study_id'");
  return *fallback;
}

const std::string& label(const CsvTable& t, std::size_t r, int col) {
  if (t.empty(r, col)) throw ValidationError(t.where(r, col) + ": empty value");
  return t.text(r, col);
}

// Cluster mode of each study: every row has a cluster id, or none does.
std::map<std::string, bool> cluster_modes(const CsvTable& t, int study_col, int cluster_col) {
  std::map<std::string, bool> mode;
  for (std::size_t r = 0; r < t.size(); ++r) {
    const std::string study = label(t, r, study_col);
    const bool has = !t.empty(r, cluster_col);
    const auto [it, inserted] = mode.try_emplace(study, has);
    if (!inserted && it->second != has) {
      throw ValidationError(t.where(r, cluster_col) + ": study " + study +
                            " mixes rows with and without a cluster id");
    }
  }
  return mode;
}

struct OutcomeKey {
  std::string study, subject;
  int period = 0;
  auto operator<=>(const OutcomeKey&) const = default;
};

}  // namespace

// ---------------------------------------------------------------------------
// Exposure data.

std::vector<ExposureDataset> read_exposure_csv(const std::filesystem::path& path, ValueScale value_scale,
                                               const std::optional<std::filesystem::path>& declared) {
  const CsvTable t = read_csv(path);
  const int c_study = t.require("study_id");
  const int c_group = t.require("group_id");
  const int c_cluster = t.column("cluster_id");
  const int c_household = t.require("household_id");
  const int c_day = t.require("day");
  const int c_time = t.require("model_time");
  const int c_log = t.column("log_value");
  const int c_raw = t.column("raw_value");
  const int c_value = t.column("value");
  if ((c_log >= 0) + (c_raw >= 0) + (c_value >= 0) != 1) {
    throw ValidationError(t.source + ": expected exactly one of the columns 'log_value', 'raw_value', 'value'");
  }
  const bool logged = c_log >= 0 || (c_value >= 0 && value_scale == ValueScale::Log);
  const int c_w = c_log >= 0 ? c_log : (c_raw >= 0 ? c_raw : c_value);
  if (t.size() == 0) throw ValidationError(t.source + ": no observations");

  const std::map<std::string, bool> modes =
      c_cluster >= 0 ? cluster_modes(t, c_study, c_cluster) : std::map<std::string, bool>{};
  std::vector<std::string> order;
  std::map<std::string, ExposureDatasetBuilder> builders;
  for (std::size_t r = 0; r < t.size(); ++r) {
    const std::string& study = label(t, r, c_study);
    if (!builders.count(study)) {
      const bool clusters = c_cluster >= 0 && modes.at(study);
      builders.emplace(study, ExposureDatasetBuilder(study, clusters));
      order.push_back(study);
    }
    double w = t.number(r, c_w);
    if (!std::isfinite(w)) throw ValidationError(t.where(r, c_w) + ": value must be finite");
    if (!logged) {
      if (w <= 0.0) throw ValidationError(t.where(r, c_w) + ": raw concentration must be positive");
      w = std::log(w);
    }
    const std::string cluster = c_cluster >= 0 ? t.text(r, c_cluster) : std::string();
    builders.at(study).add(label(t, r, c_group), cluster, label(t, r, c_household), t.integer(r, c_day),
                           t.integer(r, c_time), w);
  }

  if (declared) {
    const CsvTable d = read_csv(*declared);
    const int d_study = d.require("study_id");
    const int d_group = d.require("group_id");
    const int d_cluster = d.column("cluster_id");
    const int d_household = d.require("household_id");
    for (std::size_t r = 0; r < d.size(); ++r) {
      const std::string& study = label(d, r, d_study);
      const auto it = builders.find(study);
      if (it == builders.end()) {
        throw ValidationError(d.where(r, d_study) + ": study " + study + " has no exposure observations");
      }
      const std::string cluster = d_cluster >= 0 ? d.text(r, d_cluster) : std::string();
      const bool clusters = c_cluster >= 0 && modes.at(study);
      if (clusters == cluster.empty()) {
        throw ValidationError(d.where(r, d_cluster >= 0 ? d_cluster : d_household) +
                              (clusters ? ": a cluster id is required" : ": study has no cluster level"));
      }
      it->second.declare(label(d, r, d_group), cluster, label(d, r, d_household));
    }
  }

  std::vector<ExposureDataset> out;
  for (const auto& study : order) {
    try {
      out.push_back(builders.at(study).build());
    } catch (const ValidationError& e) {
      throw ValidationError(t.source + ": study " + study + ": " + e.what());
    }
  }
  return out;
}

std::string summary_csv(const std::vector<ParameterSummary>& summaries) {
  CsvWriter w({"parameter", "mean", "sd", "q025", "q500", "q975", "rhat", "ess"});
  for (const auto& s : summaries) {
    w.row({s.name, format_number(s.mean), format_number(s.sd), format_number(s.q025), format_number(s.q500),
           format_number(s.q975), format_number(s.rhat), format_number(s.ess)});
  }
  return w.str();
}

std::string household_means_csv(const std::vector<HouseholdMeans>& means) {
  CsvWriter w({"study", "group", "cluster", "household", "posterior_mean_log", "sd", "q025", "q975", "provenance"});
  for (const auto& m : means) {
    for (const auto& r : m.rows) {
      w.row({m.study, r.group, r.cluster, r.household, format_number(r.mean), format_number(r.sd),
             format_number(r.q025), format_number(r.q975), m.provenance});
    }
  }
  return w.str();
}

std::vector<HouseholdMeans> read_household_means(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const int c_study = t.require("study");
  const int c_group = t.require("group");
  const int c_cluster = t.require("cluster");
  const int c_household = t.require("household");
  const int c_mean = t.require("posterior_mean_log");
  const int c_sd = t.require("sd");
  const int c_lo = t.require("q025");
  const int c_hi = t.require("q975");
  const int c_prov = t.column("provenance");

  std::vector<HouseholdMeans> out;
  std::set<std::tuple<std::string, std::string, std::string, std::string>> seen;
  for (std::size_t r = 0; r < t.size(); ++r) {
    const std::string& study = label(t, r, c_study);
    if (out.empty() || out.back().study != study) {
      for (const auto& m : out) {
        if (m.study == study) throw ValidationError(t.where(r, c_study) + ": rows of a study must be contiguous");
      }
      out.emplace_back();
      out.back().study = study;
      if (c_prov >= 0) out.back().provenance = t.text(r, c_prov);
    }
    HouseholdMean row;
    row.group = label(t, r, c_group);
    row.cluster = t.text(r, c_cluster);
    row.household = label(t, r, c_household);
    row.mean = t.number(r, c_mean);
    if (!std::isfinite(row.mean)) throw ValidationError(t.where(r, c_mean) + ": mean must be finite");
    row.sd = t.number(r, c_sd);
    row.q025 = t.number(r, c_lo);
    row.q975 = t.number(r, c_hi);
    if (!seen.insert({study, row.group, row.cluster, row.household}).second) {
      throw ValidationError(t.where(r, c_household) + ": duplicate household");
    }
    out.back().rows.push_back(std::move(row));
  }
  if (out.empty()) throw ValidationError(t.source + ": no household means");
  return out;
}

// ---------------------------------------------------------------------------
// Timelines and assignment.

Timelines read_timelines(const std::filesystem::path& path, const std::optional<std::string>& default_study) {
  const CsvTable t = read_csv(path);
  const int c_study = t.column("study_id");
  const int c_subject = t.require("subject_id");
  const int c_start = t.require("start_day");
  const int c_end = t.require("end_day");
  const int c_group = t.require("group_id");
  const int c_cluster = t.column("cluster_id");
  const int c_household = t.require("household_id");

  Timelines out;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  for (std::size_t r = 0; r < t.size(); ++r) {
    const std::string study = study_of(t, r, c_study, default_study);
    const std::string& subject = label(t, r, c_subject);
    auto& list = out.by_study[study];
    const auto [it, inserted] = index.try_emplace({study, subject}, list.size());
    if (inserted) list.push_back({subject, {}});
    TimelineSegment seg;
    seg.start_day = t.integer(r, c_start);
    seg.end_day = t.integer(r, c_end);
    if (seg.end_day < seg.start_day) throw ValidationError(t.where(r, c_end) + ": end_day before start_day");
    seg.group = label(t, r, c_group);
    seg.cluster = c_cluster >= 0 ? t.text(r, c_cluster) : std::string();
    seg.household = label(t, r, c_household);
    list[it->second].segments.push_back(std::move(seg));
  }
  for (auto& [study, list] : out.by_study) {
    for (auto& tl : list) {
      std::sort(tl.segments.begin(), tl.segments.end(),
                [](const TimelineSegment& a, const TimelineSegment& b) { return a.start_day < b.start_day; });
      try {
        tl.validate();
      } catch (const ValidationError& e) {
        throw ValidationError(t.source + ": study " + study + ": " + e.what());
      }
    }
  }
  return out;
}

std::map<std::string, std::vector<PeriodRequest>> read_periods(const std::filesystem::path& path,
                                                               const std::optional<std::string>& default_study) {
  const CsvTable t = read_csv(path);
  const int c_study = t.column("study_id");
  const int c_subject = t.require("subject_id");
  const int c_period = t.require("period");
  const int c_day = t.require("day");
  std::map<std::string, std::vector<PeriodRequest>> out;
  std::set<std::tuple<std::string, std::string, int>> seen;
  for (std::size_t r = 0; r < t.size(); ++r) {
    const std::string study = study_of(t, r, c_study, default_study);
    PeriodRequest req{label(t, r, c_subject), t.integer(r, c_period), t.integer(r, c_day)};
    if (!seen.insert({study, req.subject, req.period}).second) {
      throw ValidationError(t.where(r, c_period) + ": duplicate period for subject " + req.subject);
    }
    out[study].push_back(std::move(req));
  }
  return out;
}

std::string assignment_csv(const std::vector<ExposureAssignment>& assignments) {
  CsvWriter w({"study", "subject", "period", "day", "x_it", "washout", "days_used", "provenance"});
  for (const auto& a : assignments) {
    for (const auto& r : a.rows) {
      w.row({a.study, r.subject, format_number(r.period), format_number(r.day), format_number(r.x),
             format_number(r.washout), format_number(r.days_used), a.provenance});
    }
  }
  return w.str();
}

// ---------------------------------------------------------------------------
// Outcome data.

OutcomeDataset read_outcome(const std::filesystem::path& outcome, const std::filesystem::path& assignment) {
  const CsvTable a = read_csv(assignment);
  const int a_study = a.require("study");
  const int a_subject = a.require("subject");
  const int a_period = a.require("period");
  const int a_x = a.require("x_it");
  std::map<OutcomeKey, double> exposure;
  for (std::size_t r = 0; r < a.size(); ++r) {
    const double x = a.number(r, a_x);
    if (!std::isfinite(x)) throw ValidationError(a.where(r, a_x) + ": exposure must be finite");
    if (!exposure.emplace(OutcomeKey{label(a, r, a_study), label(a, r, a_subject), a.integer(r, a_period)}, x)
             .second) {
      throw ValidationError(a.where(r, a_period) + ": duplicate assignment");
    }
  }

  const CsvTable t = read_csv(outcome);
  const int c_study = t.require("study_id");
  const int c_subject = t.require("subject_id");
  const int c_period = t.require("period");
  const int c_cases = t.require("cases");
  const int c_trials = t.require("trials");
  std::vector<int> cov_cols;
  std::vector<std::string> cov_names;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    const int ci = static_cast<int>(c);
    if (ci == c_study || ci == c_subject || ci == c_period || ci == c_cases || ci == c_trials) continue;
    cov_cols.push_back(ci);
    cov_names.push_back(t.header[c]);
  }

  OutcomeDatasetBuilder builder(cov_names);
  std::set<OutcomeKey> seen;
  std::vector<double> cov(cov_cols.size());
  for (std::size_t r = 0; r < t.size(); ++r) {
    OutcomeKey key{label(t, r, c_study), label(t, r, c_subject), t.integer(r, c_period)};
    const int trials = t.integer(r, c_trials);
    if (trials < 1) throw ValidationError(t.where(r, c_trials) + ": trials must be >= 1");
    const int cases = t.integer(r, c_cases);
    if (cases < 0 || cases > trials) {
      throw ValidationError(t.where(r, c_cases) + ": cases must lie in [0, trials] (trials = " +
                            std::to_string(trials) + ")");
    }
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      cov[k] = t.number(r, cov_cols[k]);
      if (!std::isfinite(cov[k])) throw ValidationError(t.where(r, cov_cols[k]) + ": covariate must be finite");
    }
    const auto x = exposure.find(key);
    if (x == exposure.end()) {
      throw ValidationError(t.where(r, c_period) + ": no assigned exposure for study " + key.study + ", subject " +
                            key.subject + ", period " + std::to_string(key.period));
    }
    if (!seen.insert(key).second) throw ValidationError(t.where(r, c_period) + ": duplicate outcome record");
    // Subject ids only need to be unique within a study.
    builder.add(key.study, key.study + ":" + key.subject, key.period, cases, trials, x->second, cov);
  }
  if (t.size() == 0) throw ValidationError(t.source + ": no outcome records");
  OutcomeDataset data = builder.build();
  data.validate();
  return data;
}

std::string curve_csv(const std::vector<ERCCurve>& curves) {
  CsvWriter w({"x_ugm3", "x_log", "mean_logodds", "q025", "q975", "odds_ratio", "or_q025", "or_q975", "mode",
               "constraint", "study"});
  for (const auto& c : curves) {
    for (std::size_t g = 0; g < c.x_log.size(); ++g) {
      const auto i = static_cast<Eigen::Index>(g);
      w.row({format_number(std::exp(c.x_log[g])), format_number(c.x_log[g]), format_number(c.mean(i)),
             format_number(c.q025(i)), format_number(c.q975(i)), format_number(std::exp(c.mean(i))),
             format_number(std::exp(c.q025(i))), format_number(std::exp(c.q975(i))), to_string(c.mode),
             to_string(c.constraint), c.study});
    }
  }
  return w.str();
}

// ---------------------------------------------------------------------------
// Commands.

int fit_exposure_command(const RunConfig& cfg, std::ostream& log) {
  const auto datasets = read_exposure_csv(required(cfg.data.exposure, "exposure"), cfg.exposure.value_scale,
                                          cfg.data.declared_households);
  bool converged = true;
  std::vector<HouseholdMeans> means;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    const ExposureDataset& data = datasets[i];
    SamplerSettings settings = cfg.sampler;
    settings.seed = stream_seed(cfg.seed, static_cast<int>(i), 0);
    log << "fitting exposure model for study " << data.study << " (" << data.n_obs() << " observations, "
        << data.n_households() << " households)\n";
    const ExposurePosterior post = fit_exposure(data, cfg.exposure.priors, settings);
    for (const auto& w : post.warnings) log << "warning: study " << data.study << ": " << w << '\n';
    converged = converged && post.converged;

    const std::string tok = file_token(data.study);
    write_file(cfg.output_dir / ("exposure_draws_" + tok + ".csv"), draws_csv(post.draws), log);
    write_file(cfg.output_dir / ("exposure_summary_" + tok + ".csv"), summary_csv(post.summaries), log);

    CsvWriter fitted({"group_id", "cluster_id", "household_id", "day", "model_time", "log_value", "fitted"});
    for (int n = 0; n < data.n_obs(); ++n) {
      const ExposureObservation& o = data.observations[static_cast<std::size_t>(n)];
      fitted.row({data.groups[static_cast<std::size_t>(o.group)],
                  o.cluster >= 0 ? data.clusters[static_cast<std::size_t>(o.cluster)] : std::string(),
                  data.households[static_cast<std::size_t>(o.household)], format_number(o.day),
                  format_number(o.time_step), format_number(o.w), format_number(post.fitted(n))});
    }
    write_file(cfg.output_dir / ("exposure_fitted_" + tok + ".csv"), fitted.str(), log);

    const PoolingFactors pf = pooling_factors(post);
    CsvWriter pooling({"level", "lambda"});
    pooling.row({"household", format_number(pf.household)});
    if (pf.cluster) pooling.row({"cluster", format_number(*pf.cluster)});
    pooling.row({"observation", format_number(pf.observation)});
    write_file(cfg.output_dir / ("pooling_" + tok + ".csv"), pooling.str(), log);

    means.push_back(household_means(post));
  }
  write_file(cfg.output_dir / "household_means.csv", household_means_csv(means), log);
  if (!converged) {
    log << "warning: R-hat above threshold for a variance component; outputs written\n";
    return kExitConvergence;
  }
  return kExitOk;
}

int assign_exposure_command(const RunConfig& cfg, std::optional<int> draw, std::ostream& log) {
  std::vector<HouseholdMeans> means;
  if (draw) {
    // Unit values of one posterior draw, rebuilt from the saved exposure draws.
    const auto datasets = read_exposure_csv(required(cfg.data.exposure, "exposure"), cfg.exposure.value_scale,
                                            cfg.data.declared_households);
    for (const auto& data : datasets) {
      ExposurePosterior post;
      post.model = std::make_shared<const ExposureModel>(data, cfg.exposure.priors);
      post.draws = read_draws(draws_path(cfg, data.study));
      if (post.draws.names != post.model->parameter_names()) {
        throw ValidationError(draws_path(cfg, data.study).string() +
                              ": parameters do not match the exposure data and priors in the config");
      }
      if (*draw < 0 || *draw >= post.n_total_draws()) {
        throw ValidationError("--draw must lie in [0, " + std::to_string(post.n_total_draws() - 1) + "]");
      }
      means.push_back(household_means_at_draw(post, *draw));
    }
  } else {
    means = read_household_means(means_path(cfg));
  }
  std::optional<std::string> default_study;
  if (means.size() == 1) default_study = means.front().study;
  const Timelines timelines = read_timelines(required(cfg.data.timeline, "timeline"), default_study);
  const auto periods = read_periods(required(cfg.data.periods, "periods"), default_study);

  std::vector<ExposureAssignment> out;
  for (const auto& [study, requests] : periods) {
    const auto m = std::find_if(means.begin(), means.end(), [&](const HouseholdMeans& h) { return h.study == study; });
    if (m == means.end()) throw ValidationError("periods: study " + study + " has no household means");
    const auto tl = timelines.by_study.find(study);
    if (tl == timelines.by_study.end()) throw ValidationError("timeline: study " + study + " has no timelines");
    try {
      out.push_back(assign_exposure(tl->second, *m, cfg.exposure.washout, requests, cfg.exposure.window_policy));
    } catch (const ValidationError& e) {
      throw ValidationError("study " + study + ": " + e.what());
    }
    for (const auto& w : out.back().warnings) log << "warning: study " << study << ": " << w << '\n';
  }
  write_file(cfg.output_dir / "assignment.csv", assignment_csv(out), log);
  return kExitOk;
}

int fit_outcome_command(const RunConfig& cfg, std::ostream& log) {
  const OutcomeDataset data = read_outcome(required(cfg.data.outcome, "outcome"), assignment_path(cfg));
  SamplerSettings settings = cfg.sampler;
  settings.seed = stream_seed(cfg.seed, 0, 1);
  log << "fitting outcome model (" << data.n_records() << " records, " << data.n_studies() << " studies, "
      << to_string(cfg.outcome.erc.mode) << ", " << to_string(cfg.outcome.erc.constraint) << ")\n";
  const OutcomePosterior post = fit_outcome(data, cfg.outcome.priors, cfg.outcome.erc, settings);
  for (const auto& w : post.warnings) log << "warning: " << w << '\n';

  write_file(cfg.output_dir / "outcome_draws.csv", draws_csv(post.draws), log);
  write_file(cfg.output_dir / "outcome_summary.csv", summary_csv(post.summaries), log);

  double lo = data.records.front().x, hi = lo;
  for (const auto& r : data.records) {
    lo = std::min(lo, r.x);
    hi = std::max(hi, r.x);
  }
  const std::vector<double> grid = curve_grid(cfg.outcome.erc, cfg.outcome.grid_points, lo, hi);
  std::vector<ERCCurve> curves;
  if (cfg.outcome.erc.mode == ERCMode::Shared) {
    curves.push_back(extract_curve(post, grid));
  } else {
    curves = hierarchical_curves(post, grid);
  }
  write_file(cfg.output_dir / "curve.csv", curve_csv(curves), log);
  if (!post.converged) {
    log << "warning: R-hat above threshold; outputs written\n";
    return kExitConvergence;
  }
  return kExitOk;
}

int simulate_command(const RunConfig& cfg, std::ostream& log) {
  const SimulationSection& sim = cfg.simulation;
  if (sim.kind == "exposure") {
    const ExposureStudyConfig& es = sim.exposure_study;
    if (es.replications < 2) throw ValidationError("simulation.replications must be >= 2 for an error table");
    log << "exposure simulation: " << es.setups.size() << " setups x " << es.replications << " replications\n";
    const auto reps = run_exposure_study(es);
    int unconverged = 0, divergences = 0;
    for (const auto& r : reps) {
      unconverged += r.converged ? 0 : 1;
      divergences += r.divergences;
    }
    CsvWriter w({"setup", "estimator", "group", "cluster", "household"});
    for (const auto& row : error_table(reps)) {
      w.row({format_number(row.setup), row.estimator, format_number(row.group),
             row.cluster ? format_number(*row.cluster) : "NA", format_number(row.household)});
    }
    write_file(cfg.output_dir / "error_table.csv", w.str(), log);
    log << "unconverged fits: " << unconverged << ", divergences: " << divergences << '\n';
    return kExitOk;
  }

  const OutcomeStudyConfig& os = sim.outcome_study;
  if (os.replications < 2) throw ValidationError("simulation.replications must be >= 2 for curve metrics");
  log << "outcome simulation: " << os.cells.size() << " cells x " << os.replications << " replications\n";
  const OutcomeStudyResult result = run_outcome_study(os);
  CsvWriter w({"set", "source", "constraint", "x_log", "truth", "mean_estimate", "relative_bias", "rmse"});
  for (const auto& c : result.cells) {
    const std::string set = c.cell.set == kCombinedSet ? "combined" : std::to_string(c.cell.set + 1);
    const Eigen::VectorXd mean = c.estimates.colwise().mean().transpose();
    for (std::size_t g = 0; g < result.grid.size(); ++g) {
      const auto i = static_cast<Eigen::Index>(g);
      w.row({set, to_string(c.cell.source), to_string(c.cell.constraint), format_number(result.grid[g]),
             format_number(c.metrics.truth(i)), format_number(mean(i)), format_number(c.metrics.relative_bias(i)),
             format_number(c.metrics.rmse(i))});
    }
    log << "cell " << set << '/' << to_string(c.cell.source) << '/' << to_string(c.cell.constraint)
        << ": divergences " << c.divergences << ", unconverged " << c.unconverged << '\n';
  }
  write_file(cfg.output_dir / "curve_metrics.csv", w.str(), log);
  return kExitOk;
}

int diagnostics_command(const std::filesystem::path& draws_file, const std::optional<std::filesystem::path>& out_dir,
                        std::ostream& report, std::ostream& log) {
  const PosteriorDraws draws = read_draws(draws_file);
  const Diagnostics diag = compute_diagnostics(draws);
  const std::string table = summary_csv(summarize(draws, diag));
  if (out_dir) {
    write_file(*out_dir / "diagnostics.csv", table, log);
  } else {
    report << table;
  }
  log << draws.n_chains() << " chains x " << draws.n_draws() << " draws, " << draws.dim() << " parameters\n";
  log << "divergences: " << diag.divergences << '\n';
  for (std::size_t c = 0; c < diag.mean_accept_stat.size(); ++c) {
    log << "chain " << c + 1 << " mean accept_stat: " << format_number(diag.mean_accept_stat[c]) << '\n';
  }
  for (const auto& w : diag.warnings) log << "warning: " << w << '\n';
  int high = 0;
  for (const auto& p : diag.parameters) high += (std::isfinite(p.rhat) && p.rhat > 1.05) ? 1 : 0;
  if (high > 0) {
    log << "warning: " << high << " parameters with R-hat above 1.05\n";
    return kExitConvergence;
  }
  return kExitOk;
}

void write_example_data(const std::filesystem::path& dir, std::uint64_t seed, std::ostream& log) {
  struct Study {
    std::string id;
    std::vector<double> group_means;  // log scale
    int clusters = 0;                 // per group; 0 for none
    int households = 0;               // per cluster, or per group without clusters
    int obs = 0;                      // per household
  };
  const std::vector<Study> studies{{"A", {4.6, 5.4}, 3, 5, 3}, {"B", {5.0, 6.1}, 0, 12, 2}};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> any_day(0, 364);
  std::uniform_real_distribution<double> unif;
  const double pi = std::acos(-1.0);

  CsvWriter exposure({"study_id", "group_id", "cluster_id", "household_id", "day", "model_time", "raw_value"});
  CsvWriter timeline({"study_id", "subject_id", "start_day", "end_day", "group_id", "cluster_id", "household_id"});
  CsvWriter periods({"study_id", "subject_id", "period", "day"});
  CsvWriter outcome({"study_id", "subject_id", "period", "cases", "trials", "age10"});
  struct Unit {
    std::string group, cluster, household;
    double mean = 0.0;
  };
  for (const auto& st : studies) {
    std::vector<Unit> units;
    for (std::size_t g = 0; g < st.group_means.size(); ++g) {
      const std::string gl = "g" + std::to_string(g + 1);
      const int n_clusters = std::max(st.clusters, 1);
      for (int k = 0; k < n_clusters; ++k) {
        const std::string kl = st.clusters > 0 ? gl + "-k" + std::to_string(k + 1) : std::string();
        const double ck = st.clusters > 0 ? 0.2 * normal(rng) : 0.0;
        for (int h = 0; h < st.households; ++h) {
          const std::string hl = (st.clusters > 0 ? kl : gl) + "-h" + std::to_string(h + 1);
          units.push_back({gl, kl, hl, st.group_means[g] + ck + 0.3 * normal(rng)});
        }
      }
    }
    for (const auto& u : units) {
      for (int o = 0; o < st.obs; ++o) {
        const int day = any_day(rng);
        const double w = u.mean + 0.4 * std::sin(2.0 * pi * day / 365.0) + 0.6 * normal(rng);
        exposure.row({st.id, u.group, u.cluster, u.household, format_number(day), format_number(day / 30),
                      format_number(std::exp(w))});
      }
    }
    // One subject per household; every fourth subject moves to the next
    // household half way through the year.
    for (std::size_t i = 0; i < units.size(); ++i) {
      const std::string subject = "s" + std::to_string(i + 1);
      const bool moves = i % 4 == 3;
      const Unit& first = units[i];
      const Unit& second = moves ? units[(i + 1) % units.size()] : first;
      timeline.row({st.id, subject, "0", moves ? "179" : "364", first.group, first.cluster, first.household});
      if (moves) timeline.row({st.id, subject, "180", "364", second.group, second.cluster, second.household});
      const double xi = 0.25 * normal(rng);
      const double age = std::floor(30.0 + 40.0 * unif(rng)) / 10.0;
      for (int p = 1; p <= 12; ++p) {
        const int day = 30 * p + 4;
        double x = 0.0;
        for (int d = day - 27; d <= day; ++d) x += (moves && d >= 180 ? second : first).mean;
        x /= 28.0;
        const double eta = -2.5 + xi + 0.05 * (age - 5.0) + 0.8 * (x - 5.0) + 0.3 * std::cos(2.0 * pi * p / 12.0);
        const int cases = unif(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1 : 0;
        periods.row({st.id, subject, format_number(p), format_number(day)});
        outcome.row({st.id, subject, format_number(p), format_number(cases), "1", format_number(age)});
      }
    }
  }
  write_file(dir / "exposure.csv", exposure.str(), log);
  write_file(dir / "timeline.csv", timeline.str(), log);
  write_file(dir / "periods.csv", periods.str(), log);
  write_file(dir / "outcome.csv", outcome.str(), log);
  write_file(dir / "config.json", R"({
  "seed": 11,
  "output_dir": "out",
  "data": {
    "exposure": "exposure.csv",
    "timeline": "timeline.csv",
    "periods": "periods.csv",
    "outcome": "outcome.csv"
  },
  "sampler": {"chains": 4, "warmup": 500, "draws": 500, "target_accept": 0.9, "threads": 0},
  "exposure": {"washout": 28, "priors": {"trend_df": 3}},
  "outcome": {
    "priors": {"time_df": 3, "sigma_psi": {"fixed": 2}, "sigma_gamma": {"fixed": 1}},
    "erc": {"units": "raw", "boundary": [50, 2200], "interior": [85, 125, 200, 500]},
    "grid_points": 60
  },
  "simulation": {
    "kind": "exposure",
    "replications": 4,
    "setups": [1],
    "exposure_sampler": {"chains": 1, "warmup": 150, "draws": 150}
  }
}
)",
             log);
}

}  // namespace poolerc
