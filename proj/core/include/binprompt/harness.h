#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "binprompt/bandit.h"
#include "binprompt/generators.h"
#include "binprompt/neural.h"
#include "binprompt/promptopt.h"

namespace binprompt {

// Invalid configuration. The message starts with the offending field path,
// for example "sweep.T[2]: expected a positive integer".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, const std::string& what);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

enum class ExperimentKind { kSearch, kLandscape, kProportion, kTrain, kSwitching, kBandit, kMamiCheck };

std::string to_string(ExperimentKind kind);
ExperimentKind parse_kind(const std::string& name);

struct SweepAxes {
  std::vector<int> seq_lens;      // "T"
  std::vector<int> dataset_sizes; // "N"
  std::vector<int> max_lengths;   // "Lmax"
  std::vector<PredictorKind> predictors;
};

// Switching-family settings: the search and decoding tasks plus the
// typical-prompt lengths compared against the optimum.
struct SwitchingSettings {
  std::vector<int> lambdas = {3, 4, 5};
  std::vector<SwitchProc> tasks;
  std::vector<int> typical_lengths;
  int typical_samples = 10000;
  int decode_samples = 0;  // random SwitchProc prompts for the heuristic decoder
  double decode_max_eps = 0.1;
  int decode_length = 30;
};

struct BanditSettings {
  BanditSearchOptions search;
  int grid_points = 1000;
  double skill_exponent = 4.0;
  long long comparison_episodes = 0;  // 0 skips the prompt-type comparison
};

struct MamiSettings {
  int instances = 50;
  std::vector<int> latents = {2, 3};
  int max_prompts = 8;
  int max_sequences = 8;
  int random_strategies = 1000;
};

struct ExperimentConfig {
  std::string name;
  ExperimentKind kind = ExperimentKind::kSearch;
  std::optional<std::uint64_t> seed;
  std::string output_dir = "out";
  // Ceiling on the estimated work of any one cell, in predictor steps.
  double max_cell_cost = 5e10;
  int workers = 1;
  bool long_run = false;

  GeneratorSpec pretrain = BetaBern{};
  GeneratorSpec task = Bern{};
  bool include_empty = false;
  bool fixed_length = false;
  int repetitions = 100;
  int eval_sequences = 1000;
  SweepAxes sweep;
  ModelConfig model;
  TrainConfig training;
  SwitchingSettings switching;
  BanditSettings bandit;
  MamiSettings mami;

  // The parsed document, as used for the config hash.
  nlohmann::json source;
};

// Throws ConfigError on unknown keys, wrong types and out-of-range values.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ull);
// Hash of the canonical serialization of the parsed document, with CLI
// overrides that change results (seed) folded in.
std::string config_hash(const ExperimentConfig& config);

// One sweep cell: its coordinates and the cost estimate used for budgeting.
struct Cell {
  std::vector<std::pair<std::string, std::string>> coords;
  double cost = 0.0;
  std::uint64_t seed = 0;
  int seq_len = 0;
  int dataset_size = 0;
  int max_length = 0;
  PredictorKind predictor;
  // Switching task index (-1 for the decoder check) or MAMI instance.
  int item = 0;
};

std::vector<Cell> expand_cells(const ExperimentConfig& config);

struct ValidationReport {
  std::vector<std::string> errors;    // configuration problems
  std::vector<std::string> budget;    // cells over the ceiling
  std::vector<std::string> warnings;
  std::vector<std::string> notes;

  bool ok() const { return errors.empty() && budget.empty(); }
};

// Static checks only: enumeration budgets, count-reduction eligibility,
// seed presence.
ValidationReport validate(const ExperimentConfig& config);

// Flat result record. Coordinate columns are fixed per experiment kind.
struct ResultRow {
  std::vector<std::pair<std::string, std::string>> coords;
  std::string metric;
  double value = 0.0;
  double std_error = 0.0;
  std::uint64_t seed = 0;
};

// Columns: coordinates in order, then metric,value,stderr,seed. Numbers use
// 17 significant digits.
void write_rows_csv(std::ostream& os, const std::vector<std::string>& coord_names, const std::vector<ResultRow>& rows);
std::string format_number(double v);

struct RunSummary {
  std::filesystem::path manifest;
  std::vector<std::filesystem::path> files;
  std::size_t cells = 0;
  std::size_t rows = 0;
};

// Runs every cell and writes `<name>.csv` plus `<name>.manifest.json` into
// the output directory. Throws ConfigError or BudgetError before any
// computation when validation fails.
RunSummary run_experiment(const ExperimentConfig& config);

// Coordinate column names of a kind's CSV.
std::vector<std::string> coord_columns(ExperimentKind kind);

}  // namespace binprompt
