// poolerc: exposure model fits, exposure assignment, outcome model fits,
// simulation studies and sampler diagnostics.

#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "poolerc/commands.hpp"

namespace {

struct Args {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> draw;
  std::optional<int> threads;
  std::optional<std::string> out;
  bool restrict_nonneg = false;
  bool hierarchical = false;
  std::string draws_file;
};

void add_common(CLI::App* cmd, Args& a) {
  cmd->add_option("--config", a.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", a.seed, "Master seed (overrides the config)");
  cmd->add_option("--threads", a.threads, "Worker threads (0: hardware concurrency)");
  cmd->add_option("--out", a.out, "Output directory (overrides the config)");
}

poolerc::RunConfig load(const Args& a) {
  poolerc::CommandOptions o;
  o.seed = a.seed;
  o.draw = a.draw;
  o.threads = a.threads;
  if (a.out) o.out = *a.out;
  o.restrict_nonneg = a.restrict_nonneg;
  o.hierarchical = a.hierarchical;
  return poolerc::apply_options(poolerc::load_config(a.config), o);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pooled exposure-response analysis with hierarchical exposure models"};
  app.require_subcommand(1);
  Args a;

  auto* fit_exposure = app.add_subcommand("fit-exposure", "Fit the exposure model to each study");
  add_common(fit_exposure, a);

  auto* assign = app.add_subcommand("assign-exposure", "Assign washout-averaged exposures to subject periods");
  add_common(assign, a);
  assign->add_option("--draw", a.draw, "Use pooled posterior draw N (0-based) instead of posterior means")
      ->check(CLI::NonNegativeNumber);

  auto* fit_outcome = app.add_subcommand("fit-outcome", "Fit the pooled outcome model and extract curves");
  add_common(fit_outcome, a);
  fit_outcome->add_flag("--restrict-nonneg", a.restrict_nonneg, "Non-decreasing curve (beta >= 0)");
  fit_outcome->add_flag("--hierarchical", a.hierarchical, "Per-study curves with a shared prior");

  auto* simulate = app.add_subcommand("simulate", "Run an exposure or outcome simulation study");
  add_common(simulate, a);

  auto* diagnostics = app.add_subcommand("diagnostics", "R-hat, ESS and summaries of a draws file");
  diagnostics->add_option("draws", a.draws_file, "Draws CSV")->required()->check(CLI::ExistingFile);
  diagnostics->add_option("--out", a.out, "Write diagnostics.csv here instead of standard output");

  auto* example = app.add_subcommand("example-data", "Write a small synthetic dataset and config.json");
  example->add_option("--out", a.out, "Directory for the files")->required();
  example->add_option("--seed", a.seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : poolerc::kExitValidation;
  }

  try {
    if (*fit_exposure) return poolerc::fit_exposure_command(load(a), std::cerr);
    if (*assign) return poolerc::assign_exposure_command(load(a), a.draw, std::cerr);
    if (*fit_outcome) return poolerc::fit_outcome_command(load(a), std::cerr);
    if (*simulate) return poolerc::simulate_command(load(a), std::cerr);
    if (*example) {
      poolerc::write_example_data(*a.out, a.seed.value_or(1), std::cerr);
      return poolerc::kExitOk;
    }
    std::optional<std::filesystem::path> out;
    if (a.out) out = *a.out;
    return poolerc::diagnostics_command(a.draws_file, out, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return poolerc::exit_code_for(e);
  }
}
