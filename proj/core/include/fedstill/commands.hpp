#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedstill/federation.hpp"
#include "fedstill/scenario.hpp"

namespace fedstill::cli {

namespace fs = std::filesystem;

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<scenario::Strategy> strategy;
  std::optional<std::size_t> rounds;
  std::size_t jobs = 1;
  bool deterministic = false;
  bool cost_only = false;  // write the planned ledger, train nothing
};

struct StageArtifacts {
  std::size_t stage = 0;
  std::string global_model;             // relative to the run directory
  std::string metrics;                  // relative CSV path
  std::vector<std::string> store;       // relative model paths, one per stored client
  std::vector<std::string> class_union;
  double seconds = 0.0;
};

struct RunManifest {
  std::string code_version;
  std::string scenario_path;
  std::string scenario_hash;
  std::uint64_t seed = 0;
  scenario::Strategy strategy = scenario::Strategy::kMmds;
  std::size_t rounds = 0;
  bool cost_only = false;
  bool heterogeneous = false;
  std::vector<StageArtifacts> stages;
  double total_seconds = 0.0;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);  // ParseError
};

// Hex FNV-1a of the scenario text.
std::string content_hash(std::string_view text);

// Loads the manifest and checks the stored scenario against its hash, and
// against the original scenario file when that still exists. StaleRun on mismatch.
RunManifest load_run(const fs::path& run_dir);

// Scenario of a run with the manifest's seed/strategy/rounds applied.
scenario::ScenarioConfig run_config(const fs::path& run_dir, const RunManifest& manifest);

// Materializes every client's final training data, per-client test splits, the
// distillation set and the optional OOD set.
void generate_data(const fs::path& scenario_path, const fs::path& out_dir);

// Runs every stage and writes the run directory. Returns the final state.
federation::FederationState run_scenario(const fs::path& scenario_path, const fs::path& out_dir,
                                         const RunOptions& options);

struct EvalSpec {
  std::vector<std::string> datasets{"test"};  // "test", "ood" or a directory written by generate_data
  std::vector<std::string> exclude_classes;
};

// Writes <run>/eval/<dataset>/... and returns the directories written.
std::vector<fs::path> evaluate_run(const fs::path& run_dir, const EvalSpec& spec);

// Comparison tables across runs; the first run is the reference for ratio and
// delta columns. IncompatibleRuns when class registries differ.
std::vector<fs::path> report_runs(const std::vector<fs::path>& run_dirs, const fs::path& out_dir);

// Runs fn and maps errors to exit codes, printing a JSON error object to err.
int guarded(const std::function<void()>& fn, std::ostream& err);

}  // namespace fedstill::cli
