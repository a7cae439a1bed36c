#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "poolerc/error.hpp"
#include "poolerc/sampler.hpp"

namespace poolerc {

namespace {

constexpr double kMaxDeltaH = 1000.0;

double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

class DualAveraging {
 public:
  DualAveraging(double delta) : delta_(delta) {}

  void set_mu(double mu) { mu_ = mu; }
  void restart() {
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }
  void learn(double& eps, double accept) {
    ++counter_;
    accept = std::min(1.0, accept);
    const double eta = 1.0 / (counter_ + kT0);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept);
    const double x = mu_ - s_bar_ * std::sqrt(static_cast<double>(counter_)) / kGamma;
    const double x_eta = std::pow(static_cast<double>(counter_), -kKappa);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    eps = std::exp(x);
  }
  void complete(double& eps) const { eps = std::exp(x_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double delta_;
  double mu_ = std::log(10.0);
  double counter_ = 0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
};

// Windowed variance estimation: initial fast buffer, doubling slow windows,
// terminal fast buffer.
class VarianceAdaptation {
 public:
  VarianceAdaptation(int n_warmup, Eigen::Index dim) : n_warmup_(n_warmup) {
    if (init_buffer_ + base_window_ + term_buffer_ > n_warmup_) {
      init_buffer_ = static_cast<int>(0.15 * n_warmup_);
      term_buffer_ = static_cast<int>(0.1 * n_warmup_);
      base_window_ = n_warmup_ - (init_buffer_ + term_buffer_);
    }
    window_size_ = base_window_;
    next_window_ = init_buffer_ + window_size_ - 1;
    mean_ = Eigen::VectorXd::Zero(dim);
    m2_ = Eigen::VectorXd::Zero(dim);
  }

  // Returns true when `var` was updated.
  bool learn(Eigen::VectorXd& var, const Eigen::VectorXd& q) {
    if (n_warmup_ < 20) return false;
    if (in_window()) {
      ++n_;
      const Eigen::VectorXd delta = q - mean_;
      mean_ += delta / n_;
      m2_ += delta.cwiseProduct(q - mean_);
    }
    if (counter_ == next_window_ && counter_ != n_warmup_) {
      compute_next_window();
      const double n = n_;
      var = m2_ / (n - 1.0);
      var = (n / (n + 5.0)) * var + Eigen::VectorXd::Constant(var.size(), 1e-3 * (5.0 / (n + 5.0)));
      n_ = 0;
      mean_.setZero();
      m2_.setZero();
      ++counter_;
      return true;
    }
    ++counter_;
    return false;
  }

 private:
  bool in_window() const {
    return counter_ >= init_buffer_ && counter_ < n_warmup_ - term_buffer_ && counter_ != n_warmup_;
  }
  void compute_next_window() {
    if (next_window_ == n_warmup_ - term_buffer_ - 1) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != n_warmup_ - term_buffer_ - 1) {
      const int boundary = next_window_ + 2 * window_size_;
      if (boundary >= n_warmup_ - term_buffer_) next_window_ = n_warmup_ - term_buffer_ - 1;
    }
  }

  int n_warmup_;
  int init_buffer_ = 75;
  int term_buffer_ = 50;
  int base_window_ = 25;
  int window_size_ = 0;
  int next_window_ = 0;
  int counter_ = 0;
  int n_ = 0;
  Eigen::VectorXd mean_, m2_;
};

class Nuts {
 public:
  Nuts(const LogDensity& density, const SamplerSettings& settings, std::mt19937_64& rng)
      : density_(density), settings_(settings), rng_(rng) {
    inv_metric_ = Eigen::VectorXd::Ones(density.dimension());
    eps_ = settings.step_size;
  }

  PhasePoint& state() { return z_; }
  Eigen::VectorXd& inv_metric() { return inv_metric_; }
  double& step_size() { return eps_; }

  struct Transition {
    double accept_stat = 0.0;
    int depth = 0;
    int n_leapfrog = 0;
    bool divergent = false;
    double energy = 0.0;
  };

  void init_stepsize() {
    if (eps_ == 0.0 || eps_ > 1e7) return;
    const PhasePoint z_init = z_;
    sample_momentum();
    double h0 = hamiltonian(inv_metric_, z_);
    leapfrog(density_, inv_metric_, eps_, z_);
    double h = hamiltonian(inv_metric_, z_);
    if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
    double delta_h = h0 - h;
    const int direction = delta_h > std::log(0.8) ? 1 : -1;
    while (true) {
      z_ = z_init;
      sample_momentum();
      h0 = hamiltonian(inv_metric_, z_);
      leapfrog(density_, inv_metric_, eps_, z_);
      h = hamiltonian(inv_metric_, z_);
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      delta_h = h0 - h;
      if (direction == 1 && !(delta_h > std::log(0.8))) break;
      if (direction == -1 && !(delta_h < std::log(0.8))) break;
      eps_ = direction == 1 ? 2.0 * eps_ : 0.5 * eps_;
      if (eps_ > 1e7) throw InitializationError("step size search diverged: posterior may be improper");
      if (eps_ == 0.0) throw InitializationError("step size search collapsed to zero");
    }
    z_ = z_init;
  }

  Transition transition() {
    sample_momentum();
    divergent_ = false;
    const Eigen::VectorXd p0 = z_.p;
    PhasePoint z_fwd = z_, z_bck = z_, z_sample = z_, z_propose = z_;

    Eigen::VectorXd p_fwd_fwd = p0, p_sharp_fwd_fwd = sharp(p0);
    Eigen::VectorXd p_fwd_bck = p0, p_sharp_fwd_bck = p_sharp_fwd_fwd;
    Eigen::VectorXd p_bck_fwd = p0, p_sharp_bck_fwd = p_sharp_fwd_fwd;
    Eigen::VectorXd p_bck_bck = p0, p_sharp_bck_bck = p_sharp_fwd_fwd;
    Eigen::VectorXd rho = p0;
    double log_sum_weight = 0.0;
    const double h0 = hamiltonian(inv_metric_, z_);
    int n_leapfrog = 0;
    double sum_metro_prob = 0.0;
    int depth = 0;
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    while (depth < settings_.max_tree_depth) {
      Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(rho.size());
      Eigen::VectorXd rho_bck = Eigen::VectorXd::Zero(rho.size());
      bool valid = false;
      double log_sum_weight_subtree = -std::numeric_limits<double>::infinity();
      if (unif(rng_) > 0.5) {
        z_ = z_fwd;
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        valid = build_tree(depth, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd, p_fwd_bck,
                           p_fwd_fwd, h0, 1.0, n_leapfrog, log_sum_weight_subtree, sum_metro_prob);
        z_fwd = z_;
      } else {
        z_ = z_bck;
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        valid = build_tree(depth, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck, p_bck_fwd,
                           p_bck_bck, h0, -1.0, n_leapfrog, log_sum_weight_subtree, sum_metro_prob);
        z_bck = z_;
      }
      if (!valid) break;
      ++depth;
      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (unif(rng_) < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
      rho = rho_bck + rho_fwd;
      bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      persist = persist && criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_bck + p_fwd_bck);
      persist = persist && criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_fwd + p_bck_fwd);
      if (!persist) break;
    }

    z_ = z_sample;
    Transition t;
    t.n_leapfrog = n_leapfrog;
    t.accept_stat = n_leapfrog > 0 ? sum_metro_prob / n_leapfrog : 0.0;
    t.depth = depth;
    t.divergent = divergent_;
    t.energy = hamiltonian(inv_metric_, z_);
    return t;
  }

 private:
  Eigen::VectorXd sharp(const Eigen::VectorXd& p) const { return inv_metric_.cwiseProduct(p); }

  static bool criterion(const Eigen::VectorXd& p_sharp_minus, const Eigen::VectorXd& p_sharp_plus,
                        const Eigen::VectorXd& rho) {
    return p_sharp_plus.dot(rho) > 0.0 && p_sharp_minus.dot(rho) > 0.0;
  }

  void sample_momentum() {
    std::normal_distribution<double> nd(0.0, 1.0);
    z_.p.resize(inv_metric_.size());
    for (Eigen::Index i = 0; i < z_.p.size(); ++i) z_.p(i) = nd(rng_) / std::sqrt(inv_metric_(i));
  }

  bool build_tree(int depth, PhasePoint& z_propose, Eigen::VectorXd& p_sharp_beg,
                  Eigen::VectorXd& p_sharp_end, Eigen::VectorXd& rho, Eigen::VectorXd& p_beg,
                  Eigen::VectorXd& p_end, double h0, double sign, int& n_leapfrog,
                  double& log_sum_weight, double& sum_metro_prob) {
    if (depth == 0) {
      leapfrog(density_, inv_metric_, sign * eps_, z_);
      ++n_leapfrog;
      double h = hamiltonian(inv_metric_, z_);
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      if (h - h0 > kMaxDeltaH) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      sum_metro_prob += h0 - h > 0.0 ? 1.0 : std::exp(h0 - h);
      z_propose = z_;
      p_sharp_beg = sharp(z_.p);
      p_sharp_end = p_sharp_beg;
      rho += z_.p;
      p_beg = z_.p;
      p_end = p_beg;
      return !divergent_;
    }

    const Eigen::Index n = rho.size();
    Eigen::VectorXd p_init_end(n), p_sharp_init_end(n), rho_init = Eigen::VectorXd::Zero(n);
    double log_sum_weight_init = -std::numeric_limits<double>::infinity();
    if (!build_tree(depth - 1, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg, p_init_end,
                    h0, sign, n_leapfrog, log_sum_weight_init, sum_metro_prob)) {
      return false;
    }

    PhasePoint z_propose_final = z_;
    Eigen::VectorXd p_final_beg(n), p_sharp_final_beg(n), rho_final = Eigen::VectorXd::Zero(n);
    double log_sum_weight_final = -std::numeric_limits<double>::infinity();
    if (!build_tree(depth - 1, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final, p_final_beg,
                    p_end, h0, sign, n_leapfrog, log_sum_weight_final, sum_metro_prob)) {
      return false;
    }

    const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = z_propose_final;
    } else {
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      if (unif(rng_) < std::exp(log_sum_weight_final - log_sum_weight_subtree)) z_propose = z_propose_final;
    }

    const Eigen::VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
    persist = persist && criterion(p_sharp_beg, p_sharp_final_beg, rho_init + p_final_beg);
    persist = persist && criterion(p_sharp_init_end, p_sharp_end, rho_final + p_init_end);
    return persist;
  }

  const LogDensity& density_;
  const SamplerSettings& settings_;
  std::mt19937_64& rng_;
  PhasePoint z_;
  Eigen::VectorXd inv_metric_;
  double eps_ = 1.0;
  bool divergent_ = false;
};

}  // namespace

void SamplerSettings::validate() const {
  if (n_chains < 1) throw ConfigError("sampler: n_chains must be >= 1");
  if (n_draws < 1) throw ConfigError("sampler: n_draws must be >= 1");
  if (n_warmup < 0) throw ConfigError("sampler: n_warmup must be >= 0");
  if (adapt && n_warmup < 100) throw ConfigError("sampler: n_warmup must be >= 100 when adapting");
  if (!(target_accept > 0.0 && target_accept < 1.0)) {
    throw ConfigError("sampler: target_accept must lie in (0, 1)");
  }
  if (max_tree_depth < 1) throw ConfigError("sampler: max_tree_depth must be >= 1");
  if (!(init_jitter >= 0.0)) throw ConfigError("sampler: init_jitter must be >= 0");
  if (!(step_size > 0.0)) throw ConfigError("sampler: step_size must be > 0");
  if (n_threads < 0) throw ConfigError("sampler: n_threads must be >= 0");
}

int PosteriorDraws::divergences() const {
  int n = 0;
  for (const auto& c : chains) n += static_cast<int>(std::count(c.divergent.begin(), c.divergent.end(), 1));
  return n;
}

int PosteriorDraws::index(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ConfigError("no parameter named " + name);
  return static_cast<int>(it - names.begin());
}

Eigen::VectorXd PosteriorDraws::pooled(int k) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(n_chains()) * n_draws());
  for (int c = 0; c < n_chains(); ++c) {
    out.segment(static_cast<Eigen::Index>(c) * n_draws(), n_draws()) = chains[static_cast<std::size_t>(c)].draws.col(k);
  }
  return out;
}

Eigen::MatrixXd PosteriorDraws::stacked() const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n_chains()) * n_draws(), dim());
  for (int c = 0; c < n_chains(); ++c) {
    out.middleRows(static_cast<Eigen::Index>(c) * n_draws(), n_draws()) = chains[static_cast<std::size_t>(c)].draws;
  }
  return out;
}

void leapfrog(const LogDensity& density, const Eigen::VectorXd& inv_metric, double eps, PhasePoint& z) {
  z.p += 0.5 * eps * z.grad;
  z.q += eps * inv_metric.cwiseProduct(z.p);
  z.log_density = density.log_density_gradient(z.q, z.grad);
  z.p += 0.5 * eps * z.grad;
}

double hamiltonian(const Eigen::VectorXd& inv_metric, const PhasePoint& z) {
  return -z.log_density + 0.5 * z.p.dot(inv_metric.cwiseProduct(z.p));
}

std::mt19937_64 chain_rng(std::uint64_t seed, std::uint64_t chain) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(chain), static_cast<std::uint32_t>(chain >> 32)};
  return std::mt19937_64(seq);
}

ChainOutput run_chain(const LogDensity& density, const SamplerSettings& settings, int chain) {
  std::mt19937_64 rng = chain_rng(settings.seed, static_cast<std::uint64_t>(chain));
  Nuts nuts(density, settings, rng);
  const Eigen::Index dim = density.dimension();

  // Initialization.
  const Eigen::VectorXd centre = density.initial_point();
  std::uniform_real_distribution<double> jitter(-settings.init_jitter, settings.init_jitter);
  PhasePoint& z = nuts.state();
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    z.q = centre;
    for (Eigen::Index i = 0; i < dim; ++i) z.q(i) += jitter(rng);
    z.log_density = density.log_density_gradient(z.q, z.grad);
    ok = std::isfinite(z.log_density) && z.grad.allFinite();
  }
  if (!ok) throw InitializationError("no finite starting point found after 100 attempts");
  z.p = Eigen::VectorXd::Zero(dim);

  ChainOutput out;
  out.draws.resize(settings.n_draws, dim);
  out.divergent.reserve(static_cast<std::size_t>(settings.n_draws));

  DualAveraging step_adapt(settings.target_accept);
  VarianceAdaptation var_adapt(settings.n_warmup, dim);
  if (settings.adapt) {
    nuts.init_stepsize();
    step_adapt.set_mu(std::log(10.0 * nuts.step_size()));
    step_adapt.restart();
  }

  for (int it = 0; it < settings.n_warmup; ++it) {
    const auto t = nuts.transition();
    if (t.divergent) ++out.warmup_divergences;
    if (!settings.adapt) continue;
    step_adapt.learn(nuts.step_size(), t.accept_stat);
    if (var_adapt.learn(nuts.inv_metric(), nuts.state().q)) {
      nuts.init_stepsize();
      step_adapt.set_mu(std::log(10.0 * nuts.step_size()));
      step_adapt.restart();
    }
  }
  if (settings.adapt && settings.n_warmup > 0) step_adapt.complete(nuts.step_size());

  for (int it = 0; it < settings.n_draws; ++it) {
    const auto t = nuts.transition();
    out.draws.row(it) = density.constrain(nuts.state().q).transpose();
    out.divergent.push_back(t.divergent ? 1 : 0);
    out.tree_depth.push_back(t.depth);
    out.n_leapfrog.push_back(t.n_leapfrog);
    out.energy.push_back(t.energy);
    out.accept_stat.push_back(t.accept_stat);
  }
  out.step_size = nuts.step_size();
  out.inv_metric = nuts.inv_metric();
  return out;
}

PosteriorDraws nuts_sample(const LogDensity& density, const SamplerSettings& settings) {
  settings.validate();
  PosteriorDraws result;
  result.names = density.parameter_names();
  result.chains.resize(static_cast<std::size_t>(settings.n_chains));

  unsigned hw = settings.n_threads > 0 ? static_cast<unsigned>(settings.n_threads)
                                       : std::max(1u, std::thread::hardware_concurrency());
  const int n_workers = static_cast<int>(std::min<unsigned>(hw, static_cast<unsigned>(settings.n_chains)));
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&]() {
    while (true) {
      const int c = next.fetch_add(1);
      if (c >= settings.n_chains) return;
      try {
        result.chains[static_cast<std::size_t>(c)] = run_chain(density, settings, c);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (error) std::rethrow_exception(error);
  return result;
}

}  // namespace poolerc
