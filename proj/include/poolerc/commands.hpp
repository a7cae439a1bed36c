#pragma once

// Pipeline commands behind the command-line tool, plus the CSV readers and
// writers they use.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "poolerc/run_config.hpp"

namespace poolerc {

enum ExitCode { kExitOk = 0, kExitValidation = 2, kExitConvergence = 3, kExitInternal = 4 };

// 2 for ValidationError, ConfigError and DomainError; 4 otherwise.
int exit_code_for(const std::exception& e);

struct CommandOptions {
  std::optional<std::uint64_t> seed;
  std::optional<int> draw;
  bool restrict_nonneg = false;
  bool hierarchical = false;
  std::optional<int> threads;
  std::optional<std::filesystem::path> out;
};

RunConfig apply_options(RunConfig config, const CommandOptions& options);

// Each command writes its files under config.output_dir and returns 0, or 3
// when a convergence check failed (files are still written). Failures throw.
int fit_exposure_command(const RunConfig& config, std::ostream& log);
int assign_exposure_command(const RunConfig& config, std::optional<int> draw, std::ostream& log);
int fit_outcome_command(const RunConfig& config, std::ostream& log);
int simulate_command(const RunConfig& config, std::ostream& log);
// Writes diagnostics.csv to `out_dir`, or the table to `report` when unset.
int diagnostics_command(const std::filesystem::path& draws_file, const std::optional<std::filesystem::path>& out_dir,
                        std::ostream& report, std::ostream& log);

// Small synthetic two-study dataset (exposure, timelines, periods, outcomes)
// and a config.json that runs the whole pipeline on it.
void write_example_data(const std::filesystem::path& dir, std::uint64_t seed, std::ostream& log);

// ---------------------------------------------------------------------------
// Readers and writers.

// One dataset per study, in order of first appearance. The value comes from
// a `log_value` column, a `raw_value` column (logged), or a `value` column on
// the configured scale.
std::vector<ExposureDataset> read_exposure_csv(const std::filesystem::path& path, ValueScale value_scale,
                                               const std::optional<std::filesystem::path>& declared = {});

std::string summary_csv(const std::vector<ParameterSummary>& summaries);
std::string household_means_csv(const std::vector<HouseholdMeans>& means);
std::vector<HouseholdMeans> read_household_means(const std::filesystem::path& path);

struct Timelines {
  std::map<std::string, std::vector<SubjectTimeline>> by_study;
};
// `default_study` is used when the file has no study_id column.
Timelines read_timelines(const std::filesystem::path& path, const std::optional<std::string>& default_study);
std::map<std::string, std::vector<PeriodRequest>> read_periods(const std::filesystem::path& path,
                                                               const std::optional<std::string>& default_study);

std::string assignment_csv(const std::vector<ExposureAssignment>& assignments);

// Outcome records joined with assigned exposures on (study, subject, period).
OutcomeDataset read_outcome(const std::filesystem::path& outcome, const std::filesystem::path& assignment);

std::string curve_csv(const std::vector<ERCCurve>& curves);

}  // namespace poolerc
