// Command-line runner for the experiment recipes.
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "binprompt/harness.h"

namespace fs = std::filesystem;
using namespace binprompt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitBudget = 3;

fs::path recipe_dir() {
  if (const char* env = std::getenv("BINPROMPT_RECIPES")) return env;
  return BINPROMPT_RECIPE_DIR;
}

// A config argument is a path, or the name of a shipped recipe.
fs::path resolve_config(const std::string& arg) {
  if (fs::exists(arg)) return arg;
  const fs::path recipe = recipe_dir() / (arg + ".json");
  if (fs::exists(recipe)) return recipe;
  return arg;
}

struct Overrides {
  int workers = 1;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  bool long_run = false;
};

ExperimentConfig prepare(const std::string& arg, const Overrides& o) {
  ExperimentConfig c = load_config(resolve_config(arg));
  if (const char* env = std::getenv("BINPROMPT_OUT")) c.output_dir = env;
  if (o.out) c.output_dir = *o.out;
  if (o.seed) c.seed = *o.seed;
  c.workers = o.workers;
  c.long_run = o.long_run;
  return c;
}

void print_report(const ValidationReport& r) {
  for (const auto& e : r.errors) std::cout << "error: " << e << '\n';
  for (const auto& b : r.budget) std::cout << "budget: " << b << '\n';
  for (const auto& w : r.warnings) std::cout << "warning: " << w << '\n';
  for (const auto& n : r.notes) std::cout << "note: " << n << '\n';
  if (r.ok()) std::cout << "ok\n";
}

int list_recipes() {
  const fs::path dir = recipe_dir();
  if (!fs::is_directory(dir)) {
    std::cerr << "no recipe directory at " << dir << '\n';
    return kExitFailure;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    try {
      const ExperimentConfig c = load_config(f);
      std::cout << f.stem().string() << "  (" << to_string(c.kind) << ")\n";
    } catch (const std::exception& e) {
      std::cout << f.stem().string() << "  (invalid: " << e.what() << ")\n";
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt optimization experiments on binary sequence predictors"};
  app.require_subcommand(1);
  Overrides o;
  std::string config_arg;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config_arg, "Config file, or the name of a recipe")->required();
    sub->add_option("--workers", o.workers, "Worker threads")->check(CLI::Range(1, 1024));
    sub->add_option("--seed", o.seed, "Root seed, overriding the config");
    sub->add_flag("--long-run", o.long_run, "Unlock full-scale budgets");
  };
  CLI::App* run = app.add_subcommand("run", "Run every cell of an experiment");
  add_common(run);
  run->add_option("--out", o.out, "Output directory (overrides BINPROMPT_OUT and the config)");
  CLI::App* check = app.add_subcommand("validate", "Static checks without computation");
  add_common(check);
  app.add_subcommand("list-recipes", "List the shipped recipes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (app.got_subcommand("list-recipes")) return list_recipes();
    const ExperimentConfig config = prepare(config_arg, o);
    if (app.got_subcommand("validate")) {
      const ValidationReport r = validate(config);
      print_report(r);
      if (!r.errors.empty()) return kExitConfig;
      return r.budget.empty() ? kExitOk : kExitBudget;
    }
    const RunSummary s = run_experiment(config);
    std::cout << config.name << ": " << s.cells << " cells, " << s.rows << " rows\n";
    for (const auto& f : s.files) std::cout << "  " << f.string() << '\n';
    std::cout << "  " << s.manifest.string() << '\n';
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const BudgetError& e) {
    std::cerr << "refused: " << e.what() << '\n';
    return kExitBudget;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
