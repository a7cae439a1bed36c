#include "poolerc/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "poolerc/error.hpp"
#include "poolerc/spline_basis.hpp"

namespace poolerc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<Eigen::VectorXd> split_chains(const std::vector<Eigen::VectorXd>& chains) {
  std::vector<Eigen::VectorXd> out;
  for (const auto& c : chains) {
    const Eigen::Index half = c.size() / 2;
    if (half < 1) {
      out.push_back(c);
      continue;
    }
    out.push_back(c.head(half));
    out.push_back(c.tail(half));  // odd lengths drop the middle draw
  }
  return out;
}

bool all_constant(const std::vector<Eigen::VectorXd>& chains) {
  if (chains.empty() || chains.front().size() == 0) return true;
  const double first = chains.front()(0);
  for (const auto& c : chains) {
    if (!c.allFinite()) return false;
    if ((c.array() != first).any()) return false;
  }
  return true;
}

double classic_rhat(const std::vector<Eigen::VectorXd>& chains) {
  const double m = static_cast<double>(chains.size());
  const double n = static_cast<double>(chains.front().size());
  Eigen::VectorXd means(chains.size()), vars(chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c) {
    means(static_cast<Eigen::Index>(c)) = chains[c].mean();
    vars(static_cast<Eigen::Index>(c)) =
        (chains[c].array() - chains[c].mean()).square().sum() / (n - 1.0);
  }
  const double between = n * (means.array() - means.mean()).square().sum() / (m - 1.0);
  const double within = vars.mean();
  const double var_plus = (n - 1.0) / n * within + between / n;
  return std::sqrt(var_plus / within);
}

}  // namespace

std::vector<Eigen::VectorXd> rank_normalize(const std::vector<Eigen::VectorXd>& chains) {
  std::vector<std::pair<double, std::size_t>> values;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    for (Eigen::Index i = 0; i < chains[c].size(); ++i) values.emplace_back(chains[c](i), values.size());
  }
  const std::size_t total = values.size();
  std::vector<double> ranks(total);
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a].first < values[b].first; });
  for (std::size_t i = 0; i < total;) {
    std::size_t j = i;
    while (j + 1 < total && values[order[j + 1]].first == values[order[i]].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  const boost::math::normal_distribution<double> normal;
  std::vector<Eigen::VectorXd> out;
  std::size_t idx = 0;
  for (const auto& c : chains) {
    Eigen::VectorXd z(c.size());
    for (Eigen::Index i = 0; i < c.size(); ++i, ++idx) {
      z(i) = boost::math::quantile(normal, (ranks[idx] - 0.375) / (static_cast<double>(total) + 0.25));
    }
    out.push_back(std::move(z));
  }
  return out;
}

namespace {

double folded_rhat(const std::vector<Eigen::VectorXd>& chains, const std::vector<Eigen::VectorXd>& split) {
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.data(), c.data() + c.size());
  const auto mid = pooled.begin() + static_cast<std::ptrdiff_t>(pooled.size() / 2);
  std::nth_element(pooled.begin(), mid, pooled.end());
  double median = *mid;
  if (pooled.size() % 2 == 0) median = 0.5 * (median + *std::max_element(pooled.begin(), mid));
  std::vector<Eigen::VectorXd> folded;
  for (const auto& c : split) folded.push_back((c.array() - median).abs().matrix());
  return classic_rhat(rank_normalize(folded));
}

bool usable(const std::vector<Eigen::VectorXd>& chains) {
  for (const auto& c : chains) {
    if (c.size() != chains.front().size()) throw ValidationError("diagnostics: chains differ in length");
    if (!c.allFinite()) return false;
  }
  return true;
}

}  // namespace

double split_rhat(const std::vector<Eigen::VectorXd>& chains) {
  if (chains.size() < 2 || all_constant(chains) || !usable(chains)) return kNaN;
  if (chains.front().size() < 4) return kNaN;
  const auto split = split_chains(chains);
  return std::max(classic_rhat(rank_normalize(split)), folded_rhat(chains, split));
}

double ess_basic(const std::vector<Eigen::VectorXd>& chains) {
  const std::size_t m = chains.size();
  const Eigen::Index n = chains.front().size();
  const double total = static_cast<double>(m) * static_cast<double>(n);
  if (n < 4) return kNaN;

  Eigen::VectorXd chain_mean(m), chain_var(m);
  std::vector<Eigen::VectorXd> centered(m);
  for (std::size_t c = 0; c < m; ++c) {
    chain_mean(static_cast<Eigen::Index>(c)) = chains[c].mean();
    centered[c] = chains[c].array() - chains[c].mean();
    chain_var(static_cast<Eigen::Index>(c)) = centered[c].squaredNorm() / (static_cast<double>(n) - 1.0);
  }
  // Mean over chains of the biased autocovariance at `lag`.
  auto mean_acov = [&](Eigen::Index lag) {
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      s += centered[c].head(n - lag).dot(centered[c].tail(n - lag)) / static_cast<double>(n);
    }
    return s / static_cast<double>(m);
  };
  const double mean_var = chain_var.mean();
  double var_plus = mean_var * (static_cast<double>(n) - 1.0) / static_cast<double>(n);
  if (m > 1) var_plus += (chain_mean.array() - chain_mean.mean()).square().sum() / (static_cast<double>(m) - 1.0);
  if (!(var_plus > 0.0)) return kNaN;

  std::vector<double> rho(static_cast<std::size_t>(n), 0.0);
  rho[0] = 1.0;
  double rho_even = 1.0;
  double rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho[1] = rho_odd;
  Eigen::Index t = 1;
  while (t < n - 5 && rho_even + rho_odd > 0.0) {
    rho_even = 1.0 - (mean_var - mean_acov(t + 1)) / var_plus;
    rho_odd = 1.0 - (mean_var - mean_acov(t + 2)) / var_plus;
    if (rho_even + rho_odd >= 0.0) {
      rho[static_cast<std::size_t>(t + 1)] = rho_even;
      rho[static_cast<std::size_t>(t + 2)] = rho_odd;
    }
    t += 2;
  }
  const Eigen::Index max_t = t;
  if (rho_even > 0.0) rho[static_cast<std::size_t>(max_t + 1)] = rho_even;

  // Initial monotone sequence.
  for (Eigen::Index k = 1; k <= max_t - 2; k += 2) {
    const auto i = static_cast<std::size_t>(k);
    if (rho[i + 1] + rho[i + 2] > rho[i - 1] + rho[i]) {
      rho[i + 1] = 0.5 * (rho[i - 1] + rho[i]);
      rho[i + 2] = rho[i + 1];
    }
  }
  double tau = -1.0;
  for (Eigen::Index k = 0; k <= max_t; ++k) tau += 2.0 * rho[static_cast<std::size_t>(k)];
  tau += rho[static_cast<std::size_t>(max_t + 1)];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

double ess_bulk(const std::vector<Eigen::VectorXd>& chains) {
  if (all_constant(chains)) return 0.0;
  if (!usable(chains)) return kNaN;
  double total = 0.0;
  for (const auto& c : chains) total += static_cast<double>(c.size());
  const double ess = ess_basic(rank_normalize(split_chains(chains)));
  return std::isnan(ess) ? ess : std::min(ess, total);
}

ParameterDiagnostics parameter_diagnostics(const std::vector<Eigen::VectorXd>& chains) {
  ParameterDiagnostics d;
  d.degenerate = all_constant(chains);
  if (d.degenerate || !usable(chains)) {
    d.rhat = kNaN;
    d.ess_bulk = d.degenerate ? 0.0 : kNaN;
    return d;
  }
  const auto split = split_chains(chains);
  const auto z = rank_normalize(split);
  double total = 0.0;
  for (const auto& c : chains) total += static_cast<double>(c.size());
  const double ess = ess_basic(z);
  d.ess_bulk = std::isnan(ess) ? ess : std::min(ess, total);
  d.rhat = chains.size() < 2 || chains.front().size() < 4
               ? kNaN
               : std::max(classic_rhat(z), folded_rhat(chains, split));
  return d;
}

Diagnostics compute_diagnostics(const PosteriorDraws& draws) {
  return compute_diagnostics(draws, std::vector<bool>(static_cast<std::size_t>(draws.dim()), true));
}

Diagnostics compute_diagnostics(const PosteriorDraws& draws, const std::vector<bool>& include) {
  if (include.size() != static_cast<std::size_t>(draws.dim())) {
    throw ValidationError("diagnostics: include mask has the wrong length");
  }
  Diagnostics out;
  const int n_chains = draws.n_chains();
  std::vector<Eigen::VectorXd> chains(static_cast<std::size_t>(n_chains));
  for (int k = 0; k < draws.dim(); ++k) {
    if (!include[static_cast<std::size_t>(k)]) {
      out.parameters.push_back({kNaN, kNaN, false});
      continue;
    }
    for (int c = 0; c < n_chains; ++c) chains[static_cast<std::size_t>(c)] = draws.chains[static_cast<std::size_t>(c)].draws.col(k);
    out.parameters.push_back(parameter_diagnostics(chains));
  }
  out.divergences = draws.divergences();
  for (const auto& c : draws.chains) {
    const double sum = std::accumulate(c.accept_stat.begin(), c.accept_stat.end(), 0.0);
    out.mean_accept_stat.push_back(c.accept_stat.empty() ? kNaN : sum / static_cast<double>(c.accept_stat.size()));
  }
  const double total = static_cast<double>(n_chains) * draws.n_draws();
  if (total > 0 && out.divergences > 0.1 * total) {
    out.warnings.push_back(std::to_string(out.divergences) + " of " + std::to_string(static_cast<long>(total)) +
                           " post-warmup transitions diverged");
  }
  if (n_chains < 2) out.warnings.push_back("R-hat unavailable with a single chain");
  return out;
}

ParameterSummary summarize_values(const std::string& name, const Eigen::VectorXd& values) {
  ParameterSummary out;
  out.name = name;
  out.rhat = kNaN;
  out.ess = kNaN;
  const auto n = values.size();
  if (n == 0) {
    out.mean = out.sd = out.q025 = out.q500 = out.q975 = kNaN;
    return out;
  }
  out.mean = values.mean();
  out.sd = n > 1 ? std::sqrt((values.array() - out.mean).square().sum() / static_cast<double>(n - 1)) : 0.0;
  std::vector<double> sorted(values.data(), values.data() + n);
  std::sort(sorted.begin(), sorted.end());
  out.q025 = empirical_quantile(sorted, 0.025);
  out.q500 = empirical_quantile(sorted, 0.5);
  out.q975 = empirical_quantile(sorted, 0.975);
  return out;
}

std::vector<ParameterSummary> summarize(const PosteriorDraws& draws, const Diagnostics& diagnostics) {
  std::vector<ParameterSummary> out;
  out.reserve(static_cast<std::size_t>(draws.dim()));
  for (int k = 0; k < draws.dim(); ++k) {
    ParameterSummary s = summarize_values(draws.names[static_cast<std::size_t>(k)], draws.pooled(k));
    s.rhat = diagnostics.parameters[static_cast<std::size_t>(k)].rhat;
    s.ess = diagnostics.parameters[static_cast<std::size_t>(k)].ess_bulk;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace poolerc
