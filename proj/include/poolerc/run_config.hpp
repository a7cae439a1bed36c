#pragma once

// Run configuration for the command-line tool, read from a JSON document.
// Unknown keys are rejected with their JSON path.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "poolerc/exposure_fit.hpp"
#include "poolerc/outcome_fit.hpp"
#include "poolerc/simulation.hpp"

namespace poolerc {

struct DataPaths {
  std::optional<std::filesystem::path> exposure;
  std::optional<std::filesystem::path> declared_households;
  std::optional<std::filesystem::path> timeline;
  std::optional<std::filesystem::path> periods;
  std::optional<std::filesystem::path> outcome;
  // Defaults to <output_dir>/household_means.csv and <output_dir>/assignment.csv.
  std::optional<std::filesystem::path> household_means;
  std::optional<std::filesystem::path> assignment;
  // Directory holding exposure_draws_<study>.csv; defaults to <output_dir>.
  std::optional<std::filesystem::path> exposure_draws;
};

enum class ValueScale { Log, Raw };

struct ExposureSection {
  ExposurePriors priors;
  ValueScale value_scale = ValueScale::Log;  // for a plain `value` column
  int washout = 28;
  WindowPolicy window_policy = WindowPolicy::Truncate;
};

struct OutcomeSection {
  OutcomePriors priors;
  ERCSpec erc = ERCSpec::application_default();
  int grid_points = 200;
};

struct SimulationSection {
  std::string kind = "exposure";  // "exposure" or "outcome"
  ExposureStudyConfig exposure_study;
  OutcomeStudyConfig outcome_study;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";
  DataPaths data;
  ExposureSection exposure;
  OutcomeSection outcome;
  SamplerSettings sampler;
  SimulationSection simulation;
};

// Relative paths are resolved against `base_dir`. Throws ValidationError.
RunConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {},
                       const std::string& source = "config");
RunConfig load_config(const std::filesystem::path& path);

}  // namespace poolerc
