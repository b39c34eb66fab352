#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedstill/model.hpp"
#include "fedstill/optim.hpp"
#include "fedstill/scene.hpp"

namespace fedstill::scenario {

enum class Strategy { kMmds, kMapcrFedAvg, kCentralized };

std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);  // ValidationError

struct ClientEvent {
  enum class Type { kAdd, kUpdate };
  Type type = Type::kAdd;
  std::string client;
  std::vector<std::string> classes;  // AddClient: full subset; UpdateClient: added classes
  std::size_t samples = 0;           // AddClient: count; UpdateClient: added samples
  models::SegModelSpec model;        // AddClient only
  scene::DomainShift shift;          // AddClient only
};

struct StageConfig {
  std::vector<ClientEvent> events;
  std::vector<std::string> unavailable;  // clients whose data is inaccessible from here on
  std::vector<std::string> available;    // clients whose data comes back
};

struct TrainingConfig {
  std::size_t local_epochs = 30;
  std::size_t distill_epochs = 30;
  std::size_t centralized_epochs = 30;
  tensor::AdamWConfig optimizer;
  bool binarize_pseudo_labels = false;
  bool warm_start_global = false;
};

struct DistillationConfig {
  std::size_t samples = 48;
  std::vector<std::string> include_classes;  // empty = every structure
  scene::DomainShift shift;
};

struct OodConfig {
  std::string id = "external";
  std::vector<std::string> classes;
  std::size_t samples = 16;
  scene::DomainShift shift;
};

struct EvaluationConfig {
  std::size_t test_samples_per_client = 8;
  std::optional<OodConfig> ood;
};

struct ScenarioConfig {
  std::string name;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::kMmds;
  std::size_t rounds = 1000;  // E, MAPCR communication rounds
  TrainingConfig training;
  scene::SceneSpec scene;
  models::SegModelSpec global_model;
  DistillationConfig distillation;
  EvaluationConfig evaluation;
  std::vector<StageConfig> stages;

  std::size_t stage_count() const noexcept { return stages.size(); }
};

// ParseError (with line or field path) for malformed input, ValidationError for
// inconsistent content such as updating a client that was never added.
ScenarioConfig parse_scenario(std::string_view json_text);
ScenarioConfig load_scenario(const std::filesystem::path& path);

// Cross-reference checks; parse_scenario calls this.
void validate(const ScenarioConfig& config);

// Directory holding the bundled scenarios (set at build time), overridable by
// the FEDSTILL_SCENARIOS environment variable.
std::filesystem::path bundled_scenario_dir();
std::filesystem::path bundled_scenario(std::string_view name);

}  // namespace fedstill::scenario
