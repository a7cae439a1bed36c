#pragma once

// No-U-Turn sampler with multinomial trajectory sampling, a diagonal metric,
// dual-averaging step size adaptation and windowed variance estimation.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "poolerc/log_density.hpp"

namespace poolerc {

struct SamplerSettings {
  int n_chains = 4;
  int n_warmup = 1000;
  int n_draws = 1000;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::uint64_t seed = 1;
  double init_jitter = 2.0;  // uniform(-j, j) around the density's initial point
  bool adapt = true;
  double step_size = 1.0;    // initial (or fixed, when adapt is false)
  int n_threads = 0;         // 0: one per hardware thread

  void validate() const;
};

struct ChainOutput {
  Eigen::MatrixXd draws;  // n_draws x dim, constrained
  std::vector<std::uint8_t> divergent;
  std::vector<int> tree_depth;
  std::vector<int> n_leapfrog;
  std::vector<double> energy;
  std::vector<double> accept_stat;
  double step_size = 0.0;
  Eigen::VectorXd inv_metric;
  int warmup_divergences = 0;
};

struct PosteriorDraws {
  std::vector<std::string> names;
  std::vector<ChainOutput> chains;

  int n_chains() const { return static_cast<int>(chains.size()); }
  int n_draws() const { return chains.empty() ? 0 : static_cast<int>(chains.front().draws.rows()); }
  int dim() const { return static_cast<int>(names.size()); }
  int divergences() const;
  // Index of a parameter name; throws ConfigError when absent.
  int index(const std::string& name) const;
  // Draws of parameter k from every chain, chain-major.
  Eigen::VectorXd pooled(int k) const;
  // All draws stacked chain-major (n_chains * n_draws x dim).
  Eigen::MatrixXd stacked() const;
};

struct PhasePoint {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
  Eigen::VectorXd grad;  // gradient of the log density at q
  double log_density = 0.0;
};

// One leapfrog step of size eps (negative eps integrates backwards).
void leapfrog(const LogDensity& density, const Eigen::VectorXd& inv_metric, double eps,
              PhasePoint& z);
double hamiltonian(const Eigen::VectorXd& inv_metric, const PhasePoint& z);

// Runs one chain. Exposed for tests; nuts_sample runs chains in parallel.
ChainOutput run_chain(const LogDensity& density, const SamplerSettings& settings, int chain);

// Runs settings.n_chains chains. Throws InitializationError when no finite
// starting point is found in 100 attempts.
PosteriorDraws nuts_sample(const LogDensity& density, const SamplerSettings& settings);

// Generator for chain `chain` of a run seeded with `seed`.
std::mt19937_64 chain_rng(std::uint64_t seed, std::uint64_t chain);

}  // namespace poolerc
