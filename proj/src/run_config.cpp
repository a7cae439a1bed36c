#include "poolerc/run_config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "poolerc/error.hpp"

namespace poolerc {

namespace {

using nlohmann::json;

// A JSON object being consumed; done() rejects keys that were never read.
class Node {
 public:
  Node(const json& j, std::string path, const std::string& source) : j_(j), path_(std::move(path)), source_(source) {
    if (!j_.is_object()) fail("expected an object");
  }

  bool has(const std::string& key) const {
    if (!j_.contains(key)) return false;
    used_.insert(key);
    return !j_.at(key).is_null();
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  Node child(const std::string& key) {
    used_.insert(key);
    return Node(j_.at(key), at(key), source_);
  }

  double number(const std::string& key, double def) {
    used_.insert(key);
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number()) fail_at(key, "expected a number");
    return v.get<double>();
  }

  int integer(const std::string& key, int def) {
    used_.insert(key);
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) fail_at(key, "expected an integer");
    return v.get<int>();
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t def) {
    used_.insert(key);
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned()) fail_at(key, "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool def) {
    used_.insert(key);
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_boolean()) fail_at(key, "expected true or false");
    return v.get<bool>();
  }

  std::string text(const std::string& key, const std::string& def) {
    used_.insert(key);
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_string()) fail_at(key, "expected a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> def) {
    used_.insert(key);
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_array()) fail_at(key, "expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) fail_at(key, "expected an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  template <class E>
  E choice(const std::string& key, E def, std::initializer_list<std::pair<const char*, E>> options) {
    const std::string s = text(key, "");
    if (s.empty()) return def;
    std::string allowed;
    for (const auto& [name, value] : options) {
      if (s == name) return value;
      allowed += allowed.empty() ? std::string(name) : ", " + std::string(name);
    }
    fail_at(key, "unknown value '" + s + "' (expected one of " + allowed + ")");
  }

  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) fail("unknown key '" + it.key() + "'");
    }
  }

  std::string at(const std::string& key) const { return path_ + "/" + key; }
  [[noreturn]] void fail(const std::string& msg) const {
    throw ValidationError(source_ + ": " + (path_.empty() ? "/" : path_) + ": " + msg);
  }
  [[noreturn]] void fail_at(const std::string& key, const std::string& msg) const {
    throw ValidationError(source_ + ": " + at(key) + ": " + msg);
  }

  const std::string& source() const { return source_; }

 private:
  const json& j_;
  std::string path_;
  const std::string& source_;
  mutable std::set<std::string> used_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

ScaleComponent parse_scale(Node& parent, const std::string& key, ScaleComponent def) {
  if (!parent.has(key)) return def;
  Node n = parent.child(key);
  ScaleComponent s = def;
  s.prior.location = n.number("loc", def.prior.location);
  s.prior.scale = n.number("scale", def.prior.scale);
  if (n.has("fixed")) {
    s.fixed = true;
    s.fixed_value = n.number("fixed", 0.0);
  } else {
    s.fixed = false;
  }
  n.done();
  if (!(s.prior.scale > 0.0)) parent.fail_at(key, "scale must be positive");
  if (s.fixed && !(s.fixed_value > 0.0)) parent.fail_at(key, "fixed value must be positive");
  return s;
}

SamplerSettings parse_sampler(Node n, SamplerSettings s) {
  s.n_chains = n.integer("chains", s.n_chains);
  s.n_warmup = n.integer("warmup", s.n_warmup);
  s.n_draws = n.integer("draws", s.n_draws);
  s.target_accept = n.number("target_accept", s.target_accept);
  s.max_tree_depth = n.integer("max_tree_depth", s.max_tree_depth);
  s.init_jitter = n.number("init_jitter", s.init_jitter);
  s.n_threads = n.integer("threads", s.n_threads);
  n.done();
  try {
    s.validate();
  } catch (const Error& e) {
    throw ValidationError(n.source() + ": sampler: " + e.what());
  }
  return s;
}

ERCSpec parse_erc(Node n, ERCSpec e) {
  const bool raw = n.choice<bool>("units", false, {{"log", false}, {"raw", true}});
  auto scale = [&](double v, const std::string& key) {
    if (!raw) return v;
    if (!(v > 0.0)) n.fail_at(key, "raw concentrations must be positive");
    return std::log(v);
  };
  if (n.has("boundary")) {
    const std::vector<double> b = n.numbers("boundary", {});
    if (b.size() != 2) n.fail_at("boundary", "expected [lower, upper]");
    e.knots.lower = scale(b[0], "boundary");
    e.knots.upper = scale(b[1], "boundary");
    e.x_ref = e.knots.lower;
  }
  if (n.has("interior")) {
    e.knots.interior.clear();
    for (double v : n.numbers("interior", {})) e.knots.interior.push_back(scale(v, "interior"));
  }
  if (n.has("x_ref")) e.x_ref = scale(n.number("x_ref", 0.0), "x_ref");
  e.order = n.integer("order", e.order);
  e.mode = n.choice("mode", e.mode, {{"shared", ERCMode::Shared}, {"hierarchical", ERCMode::Hierarchical}});
  e.constraint = n.choice("constraint", e.constraint,
                          {{"free", BetaConstraint::Free}, {"nonneg", BetaConstraint::NonNegative}});
  n.done();
  try {
    e.validate();
  } catch (const Error& err) {
    throw ValidationError(n.source() + ": outcome erc: " + err.what());
  }
  return e;
}

ExposurePriors parse_exposure_priors(Node n, ExposurePriors p) {
  if (n.has("eta0")) p.eta0 = n.number("eta0", 0.0);
  p.sigma_group = parse_scale(n, "sigma_group", p.sigma_group);
  p.sigma_theta = parse_scale(n, "sigma_theta", p.sigma_theta);
  p.sigma_obs = parse_scale(n, "sigma_obs", p.sigma_obs);
  p.sigma_household = parse_scale(n, "sigma_household", p.sigma_household);
  p.sigma_cluster = parse_scale(n, "sigma_cluster", p.sigma_cluster);
  p.theta0 = n.numbers("theta0", p.theta0);
  p.trend_df = n.integer("trend_df", p.trend_df);
  n.done();
  return p;
}

OutcomePriors parse_outcome_priors(Node n, OutcomePriors p) {
  p.sigma_psi = parse_scale(n, "sigma_psi", p.sigma_psi);
  p.sigma_xi = parse_scale(n, "sigma_xi", p.sigma_xi);
  p.sigma_gamma = parse_scale(n, "sigma_gamma", p.sigma_gamma);
  p.sigma_delta = parse_scale(n, "sigma_delta", p.sigma_delta);
  p.sigma_beta = parse_scale(n, "sigma_beta", p.sigma_beta);
  p.time_df = n.integer("time_df", p.time_df);
  if (n.has("time_df_by_study")) {
    Node m = n.child("time_df_by_study");
    const json& obj = n.raw("time_df_by_study");
    for (auto it = obj.begin(); it != obj.end(); ++it) p.time_df_by_study[it.key()] = m.integer(it.key(), 0);
    m.done();
  }
  p.beta0_per_basis = n.boolean("beta0_per_basis", p.beta0_per_basis);
  p.xi0 = n.numbers("xi0", p.xi0);
  p.lkj_shape = n.number("lkj_shape", p.lkj_shape);
  n.done();
  return p;
}

ExposureSimSetup parse_setup(const json& j, const std::string& path, const std::string& source) {
  if (j.is_number_integer()) {
    try {
      return ExposureSimSetup::preset(j.get<int>());
    } catch (const Error& e) {
      throw ValidationError(source + ": " + path + ": " + e.what());
    }
  }
  Node n(j, path, source);
  const int id = n.integer("id", 0);
  ExposureSimSetup s;
  try {
    s = ExposureSimSetup::preset(id);
  } catch (const Error& e) {
    n.fail_at("id", e.what());
  }
  s.group_means = n.numbers("group_means", s.group_means);
  s.clusters_per_group = n.integer("clusters_per_group", s.clusters_per_group);
  s.households_per_cluster = n.integer("households_per_cluster", s.households_per_cluster);
  s.obs_per_household = n.integer("obs_per_household", s.obs_per_household);
  s.sigma_w = n.number("sigma_w", s.sigma_w);
  s.sigma_h = n.number("sigma_h", s.sigma_h);
  s.sigma_k = n.number("sigma_k", s.sigma_k);
  s.trend_amplitude = n.number("trend_amplitude", s.trend_amplitude);
  s.trend_period = n.number("trend_period", s.trend_period);
  s.n_days = n.integer("n_days", s.n_days);
  s.time_step_days = n.integer("time_step_days", s.time_step_days);
  n.done();
  try {
    s.validate();
  } catch (const Error& e) {
    n.fail(e.what());
  }
  return s;
}

OutcomeCell parse_cell(const json& j, const std::string& path, const std::string& source) {
  Node n(j, path, source);
  OutcomeCell c;
  const std::string set = n.text("set", "combined");
  if (set == "combined") {
    c.set = kCombinedSet;
  } else if (set == "1" || set == "2" || set == "3") {
    c.set = set[0] - '1';
  } else {
    n.fail_at("set", "expected \"1\", \"2\", \"3\" or \"combined\"");
  }
  c.source = n.choice("source", ExposureSource::Modeled,
                      {{"true", ExposureSource::True}, {"modeled", ExposureSource::Modeled},
                       {"observed", ExposureSource::Observed}});
  c.constraint = n.choice("constraint", BetaConstraint::Free,
                          {{"free", BetaConstraint::Free}, {"nonneg", BetaConstraint::NonNegative}});
  n.done();
  return c;
}

void parse_simulation(Node n, RunConfig& cfg) {
  SimulationSection& sim = cfg.simulation;
  sim.kind = n.text("kind", sim.kind);
  if (sim.kind != "exposure" && sim.kind != "outcome") n.fail_at("kind", "expected \"exposure\" or \"outcome\"");
  const int reps = n.integer("replications", sim.kind == "exposure" ? 100 : 50);
  if (reps < 1) n.fail_at("replications", "must be >= 1");
  const int threads = n.integer("threads", 0);

  std::vector<ExposureSimSetup> setups;
  if (n.has("setups")) {
    const json& arr = n.raw("setups");
    if (!arr.is_array() || arr.empty()) n.fail_at("setups", "expected a non-empty array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      setups.push_back(parse_setup(arr[i], n.at("setups") + "/" + std::to_string(i), n.source()));
    }
  } else {
    setups = {ExposureSimSetup::preset(1), ExposureSimSetup::preset(2), ExposureSimSetup::preset(3)};
  }

  SamplerSettings exposure_sampler = cfg.sampler;
  if (n.has("exposure_sampler")) exposure_sampler = parse_sampler(n.child("exposure_sampler"), exposure_sampler);
  SamplerSettings outcome_sampler = cfg.sampler;
  if (n.has("outcome_sampler")) outcome_sampler = parse_sampler(n.child("outcome_sampler"), outcome_sampler);

  ExposureStudyConfig& es = sim.exposure_study;
  es.setups = setups;
  es.replications = reps;
  es.seed = cfg.seed;
  es.priors = cfg.exposure.priors;
  es.sampler = exposure_sampler;
  es.n_threads = threads;

  OutcomeStudyConfig& os = sim.outcome_study;
  os.replications = reps;
  os.seed = cfg.seed;
  os.n_threads = threads;
  os.exposure_priors = cfg.exposure.priors;
  os.outcome_priors = cfg.outcome.priors;
  os.outcome_priors.time_df = n.integer("outcome_time_df", 4);
  os.exposure_sampler = exposure_sampler;
  os.outcome_sampler = outcome_sampler;
  if (sim.kind == "outcome") {
    if (setups.size() != 3) n.fail_at("setups", "an outcome simulation needs exactly three setups");
    for (std::size_t i = 0; i < 3; ++i) os.setups[i] = setups[i];
  }
  if (n.has("outcome")) {
    Node o = n.child("outcome");
    os.outcome.form = o.choice("form", os.outcome.form, {{"linear", ERCForm::Linear}, {"logistic", ERCForm::Logistic}});
    os.outcome.psi = o.number("psi", os.outcome.psi);
    os.outcome.sigma_xi = o.number("sigma_xi", os.outcome.sigma_xi);
    os.outcome.n_periods = o.integer("n_periods", os.outcome.n_periods);
    os.outcome.trials = o.integer("trials", os.outcome.trials);
    os.outcome.time_amplitude = o.number("time_amplitude", os.outcome.time_amplitude);
    o.done();
  }
  os.erc = OutcomeStudyConfig::default_erc();
  if (n.has("erc")) os.erc = parse_erc(n.child("erc"), os.erc);
  if (os.erc.mode != ERCMode::Shared) n.fail_at("erc", "simulation fits use a shared curve");
  if (n.has("cells")) {
    const json& cells = n.raw("cells");
    if (cells.is_string() && cells.get<std::string>() == "all") {
      os.cells = OutcomeStudyConfig::all_cells();
    } else if (cells.is_array() && !cells.empty()) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        os.cells.push_back(parse_cell(cells[i], n.at("cells") + "/" + std::to_string(i), n.source()));
      }
    } else {
      n.fail_at("cells", "expected \"all\" or a non-empty array");
    }
  } else {
    os.cells = OutcomeStudyConfig::all_cells();
  }
  const int grid_points = n.integer("grid_points", 50);
  if (grid_points < 2) n.fail_at("grid_points", "must be >= 2");
  os.grid = curve_grid(os.erc, grid_points);
  n.done();
}

}  // namespace

RunConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir,
                       const std::string& source) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(source + ": invalid JSON: " + e.what());
  }
  RunConfig cfg;
  Node root(j, "", source);
  cfg.seed = root.unsigned_integer("seed", cfg.seed);
  cfg.output_dir = resolve(base_dir, root.text("output_dir", cfg.output_dir.string()));

  if (root.has("data")) {
    Node d = root.child("data");
    auto path = [&](const char* key, std::optional<std::filesystem::path>& out) {
      if (d.has(key)) out = resolve(base_dir, d.text(key, ""));
    };
    path("exposure", cfg.data.exposure);
    path("declared_households", cfg.data.declared_households);
    path("timeline", cfg.data.timeline);
    path("periods", cfg.data.periods);
    path("outcome", cfg.data.outcome);
    path("household_means", cfg.data.household_means);
    path("assignment", cfg.data.assignment);
    path("exposure_draws", cfg.data.exposure_draws);
    d.done();
  }

  if (root.has("sampler")) cfg.sampler = parse_sampler(root.child("sampler"), cfg.sampler);

  if (root.has("exposure")) {
    Node e = root.child("exposure");
    if (e.has("priors")) cfg.exposure.priors = parse_exposure_priors(e.child("priors"), cfg.exposure.priors);
    cfg.exposure.value_scale = e.choice("value_scale", cfg.exposure.value_scale,
                                        {{"log", ValueScale::Log}, {"raw", ValueScale::Raw}});
    cfg.exposure.washout = e.integer("washout", cfg.exposure.washout);
    if (cfg.exposure.washout < 1) e.fail_at("washout", "must be >= 1");
    cfg.exposure.window_policy = e.choice("window_policy", cfg.exposure.window_policy,
                                          {{"truncate", WindowPolicy::Truncate}, {"error", WindowPolicy::Error}});
    e.done();
  }
  try {
    cfg.exposure.priors.validate();
  } catch (const Error& e) {
    throw ValidationError(source + ": exposure priors: " + e.what());
  }

  if (root.has("outcome")) {
    Node o = root.child("outcome");
    if (o.has("priors")) cfg.outcome.priors = parse_outcome_priors(o.child("priors"), cfg.outcome.priors);
    if (o.has("erc")) cfg.outcome.erc = parse_erc(o.child("erc"), cfg.outcome.erc);
    cfg.outcome.grid_points = o.integer("grid_points", cfg.outcome.grid_points);
    if (cfg.outcome.grid_points < 2) o.fail_at("grid_points", "must be >= 2");
    o.done();
  }
  try {
    cfg.outcome.priors.validate();
  } catch (const Error& e) {
    throw ValidationError(source + ": outcome priors: " + e.what());
  }

  if (root.has("simulation")) parse_simulation(root.child("simulation"), cfg);
  root.done();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open config '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path(), path.string());
}

}  // namespace poolerc
