#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedstill/ledger.hpp"
#include "fedstill/losses.hpp"
#include "fedstill/metrics.hpp"
#include "fedstill/model.hpp"
#include "fedstill/registry.hpp"
#include "fedstill/scenario.hpp"
#include "fedstill/scene.hpp"

namespace fedstill::federation {

struct ClientState {
  std::string id;
  scene::ClientDataset dataset;  // training split
  ClassSet annotated;
  models::SegModelSpec spec;     // init_seed is reassigned for every fresh training
  scene::DomainShift shift;
  std::optional<models::ModelParams> local;
  std::optional<models::ModelParams> global;  // last received global model
  bool data_available = true;
  std::uint64_t data_version = 0;
  std::optional<std::uint64_t> trained_version;  // data_version the local model saw
};

struct StoredModel {
  models::ModelParams model;
  ClassSet classes;
  std::size_t stage = 0;  // stage of the last upload
  io::Bytes bytes;        // serialized form as uploaded
};

struct GlobalModelRecord {
  std::size_t stage = 0;
  models::ModelParams model;
  ClassSet class_union;
  scenario::Strategy strategy = scenario::Strategy::kMmds;
};

class ServerStore {
 public:
  const std::map<std::string, StoredModel>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const StoredModel* find(const std::string& client) const;

  // Adds or replaces the client's entry.
  void put(const std::string& client, models::ModelParams model, ClassSet classes, std::size_t stage);

  // One pseudo-labelling pass per stage; a second call for the same stage
  // throws OneTimeInferenceViolation.
  void begin_inference(std::size_t stage);

  std::optional<GlobalModelRecord> global;

 private:
  std::map<std::string, StoredModel> entries_;
  std::optional<std::size_t> inference_stage_;
};

// Stage-level training knobs.
struct EngineOptions {
  std::size_t jobs = 1;        // concurrent local trainings
  bool deterministic = false;  // forces jobs = 1
  std::optional<std::size_t> rounds;  // overrides the scenario's E
};

struct FederationState {
  scenario::ScenarioConfig config;
  ClassRegistry registry;
  scene::SceneSpec scene;
  StageSchedule schedule;
  std::map<std::string, ClientState> clients;
  ServerStore store;
  scene::DistillationSet distillation;
  Ledger ledger;
  std::vector<GlobalModelRecord> records;
  std::size_t completed_stages = 0;
};

FederationState init_federation(const scenario::ScenarioConfig& config);

// The registry covers every structure of the scene, seeded by the scenario seed.
ClassRegistry make_registry(const scenario::ScenarioConfig& config);

// Applies stage `stage`'s client events and availability changes (1-based).
void apply_stage_events(FederationState& state, std::size_t stage);

// Training data of a client as the scenario defines it at `classes`/`samples`.
scene::ClientDataset client_dataset(const scenario::ScenarioConfig& config, const std::string& client,
                                    const ClassSet& classes, std::size_t samples,
                                    const scene::DomainShift& shift);

// Fully annotated held-out scenes for one client, under the client's shift.
scene::ClientDataset client_test_set(const scenario::ScenarioConfig& config, const std::string& client,
                                     const scene::DomainShift& shift);

// Every client that joins at any stage, with its domain shift.
std::map<std::string, scene::DomainShift> all_clients(const scenario::ScenarioConfig& config);

scene::DistillationSet make_distillation(const scenario::ScenarioConfig& config);

// Optional held-out external client; nullopt when the scenario has none.
std::optional<scene::ClientDataset> make_ood_set(const scenario::ScenarioConfig& config);

// Fresh model from the client's spec trained on its annotated classes.
models::ModelParams train_local(const ClientState& client, const ClassRegistry& registry, std::size_t epochs,
                                std::uint64_t seed, const tensor::AdamWConfig& optimizer);

void upload_model(const ClientState& client, ServerStore& store, Ledger& ledger, std::size_t stage);

using ModelPredictions = std::map<std::string, std::vector<models::PredictionVolume>>;

// Runs every stored model once over the distillation set on its own classes.
ModelPredictions generate_pseudolabels(ServerStore& store, const scene::DistillationSet& dist,
                                       const ClassRegistry& registry, Ledger& ledger, std::size_t stage,
                                       std::size_t distill_epochs);

// Per volume and class, the prediction of lowest entropy impurity; ties go to
// the lowest client id.
std::vector<losses::PseudoLabelVolume> aggregate_predictions(const ModelPredictions& predictions,
                                                             const ClassSet& class_union,
                                                             bool binarize = false);

GlobalModelRecord distill_global(const scene::DistillationSet& dist,
                                 std::span<const losses::PseudoLabelVolume> pseudo,
                                 const ClassRegistry& registry, models::ModelParams init, std::size_t epochs,
                                 const tensor::AdamWConfig& optimizer, std::uint64_t seed, std::size_t stage,
                                 Ledger& ledger);

GlobalModelRecord run_stage_mmds(FederationState& state, std::size_t stage, const EngineOptions& options = {});

// Weighted parameter mean. Computed as p_0 + sum_k w_k/W (p_k - p_0), so equal
// inputs come back unchanged.
models::ModelParams fedavg_average(std::span<const models::ModelParams> models, std::span<const double> weights);

GlobalModelRecord run_mapcr_fedavg(FederationState& state, std::size_t stage, std::size_t rounds);

// Throws DataUnavailable or HeterogeneousArchitectures if MAPCR cannot run the
// given stage (or any stage when stage is nullopt). No training.
void check_mapcr_feasible(const FederationState& state, std::optional<std::size_t> stage = std::nullopt);

models::ModelParams run_centralized(std::span<const scene::ClientDataset* const> datasets,
                                    const ClassRegistry& registry, const models::SegModelSpec& spec,
                                    std::size_t epochs, const tensor::AdamWConfig& optimizer, std::uint64_t seed);

GlobalModelRecord run_stage_centralized(FederationState& state, std::size_t stage);

// Applies events, then runs the stage under the configured strategy.
GlobalModelRecord run_stage(FederationState& state, std::size_t stage, const EngineOptions& options = {});

enum class Route { kLocal, kGlobal };
std::string_view route_name(Route route);

struct PersonalizedPrediction {
  models::PredictionVolume prediction;
  std::map<ClassId, Route> source;
};

// Local channel for the client's annotated classes, global channel otherwise.
PersonalizedPrediction personalized_infer(const ClientState& client, const Volume& volume,
                                          const ClassRegistry& registry, const ClassSet& class_union);

// Scores `classes` on each sample's annotated classes.
using Predictor = std::function<models::PredictionVolume(const Volume&, const ClassSet&)>;
metrics::MetricReport evaluate(const Predictor& predict, std::span<const scene::Sample> samples,
                               const ClassSet& classes, const ClassRegistry& registry);
metrics::MetricReport evaluate_model(const models::ModelParams& model, std::span<const scene::Sample> samples,
                                     const ClassSet& classes, const ClassRegistry& registry);

// Named seeds, all derived from the scenario seed.
std::uint64_t stage_seed(const scenario::ScenarioConfig& config, std::string_view purpose, std::size_t index);
std::uint64_t client_seed(const scenario::ScenarioConfig& config, std::string_view purpose,
                          const std::string& client, std::uint64_t index = 0);

}  // namespace fedstill::federation
