#include "fedstill/federation.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>

#include "fedstill/error.hpp"
#include "fedstill/random.hpp"
#include "fedstill/training.hpp"

namespace fedstill::federation {

using models::ModelParams;
using scenario::ClientEvent;
using scenario::Strategy;

namespace {

ClassSet ids_of(const ClassRegistry& registry, const std::vector<std::string>& names) {
  const auto ids = registry.ids_of(names);
  return ClassSet(ids.begin(), ids.end());
}

bool same_architecture(const models::SegModelSpec& a, const models::SegModelSpec& b) {
  return a.arch == b.arch && a.hidden == b.hidden && a.layers == b.layers && a.feature_dim == b.feature_dim;
}

std::string describe(const models::SegModelSpec& s) {
  return std::string(models::architecture_name(s.arch)) + "(hidden=" + std::to_string(s.hidden) +
         ", layers=" + std::to_string(s.layers) + ")";
}

const GlobalModelRecord& push_record(FederationState& state, GlobalModelRecord record) {
  state.store.global = record;
  state.records.push_back(std::move(record));
  return state.records.back();
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Errors are rethrown in
// index order so the reported failure does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  const auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(jobs, n); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) guarded(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

const StoredModel* ServerStore::find(const std::string& client) const {
  const auto it = entries_.find(client);
  return it == entries_.end() ? nullptr : &it->second;
}

void ServerStore::put(const std::string& client, ModelParams model, ClassSet classes, std::size_t stage) {
  StoredModel entry;
  entry.bytes = models::serialize(model);
  entry.model = std::move(model);
  entry.classes = std::move(classes);
  entry.stage = stage;
  entries_.insert_or_assign(client, std::move(entry));
}

void ServerStore::begin_inference(std::size_t stage) {
  if (inference_stage_ && *inference_stage_ == stage) {
    fail(ErrorCode::kOneTimeInferenceViolation,
         "pseudo labels were already generated in stage " + std::to_string(stage));
  }
  inference_stage_ = stage;
}

std::uint64_t stage_seed(const scenario::ScenarioConfig& config, std::string_view purpose, std::size_t index) {
  return derive_seed(config.seed, purpose, index);
}

std::uint64_t client_seed(const scenario::ScenarioConfig& config, std::string_view purpose,
                          const std::string& client, std::uint64_t index) {
  return derive_seed(derive_seed(config.seed, purpose, fnv1a(client)), "version", index);
}

ClassRegistry make_registry(const scenario::ScenarioConfig& config) {
  return ClassRegistry(config.seed, config.scene.class_names());
}

scene::ClientDataset client_dataset(const scenario::ScenarioConfig& config, const std::string& client,
                                    const ClassSet& classes, std::size_t samples,
                                    const scene::DomainShift& shift) {
  return scene::make_client_dataset(config.scene.with_shift(shift), classes, samples,
                                    client_seed(config, "client-data", client), client);
}

scene::ClientDataset client_test_set(const scenario::ScenarioConfig& config, const std::string& client,
                                     const scene::DomainShift& shift) {
  return scene::make_client_dataset(config.scene.with_shift(shift), config.scene.all_classes(),
                                    config.evaluation.test_samples_per_client,
                                    client_seed(config, "client-test", client), client);
}

std::map<std::string, scene::DomainShift> all_clients(const scenario::ScenarioConfig& config) {
  std::map<std::string, scene::DomainShift> out;
  for (const auto& stage : config.stages)
    for (const auto& ev : stage.events)
      if (ev.type == ClientEvent::Type::kAdd) out.emplace(ev.client, ev.shift);
  return out;
}

scene::DistillationSet make_distillation(const scenario::ScenarioConfig& config) {
  const auto& d = config.distillation;
  ClassSet include = config.scene.all_classes();
  if (!d.include_classes.empty()) {
    include.clear();
    for (const auto& name : d.include_classes) include.insert(config.scene.id_of(name));
  }
  return scene::make_distillation_set(config.scene.with_shift(d.shift), d.samples, include,
                                      stage_seed(config, "distillation", 0));
}

std::optional<scene::ClientDataset> make_ood_set(const scenario::ScenarioConfig& config) {
  if (!config.evaluation.ood) return std::nullopt;
  const auto& o = *config.evaluation.ood;
  ClassSet classes;
  for (const auto& name : o.classes) classes.insert(config.scene.id_of(name));
  return scene::make_client_dataset(config.scene.with_shift(o.shift), classes, o.samples,
                                    stage_seed(config, "ood", 0), o.id);
}

FederationState init_federation(const scenario::ScenarioConfig& config) {
  scenario::validate(config);
  FederationState state{config, make_registry(config), config.scene, {}, {}, {}, {}, {}, {}, 0};
  state.schedule = make_schedule(config, state.registry);
  state.distillation = make_distillation(config);
  return state;
}

void apply_stage_events(FederationState& state, std::size_t stage) {
  const auto& sc = state.config.stages.at(stage - 1);
  for (const auto& ev : sc.events) {
    if (ev.type == ClientEvent::Type::kAdd) {
      if (state.clients.count(ev.client)) {
        fail(ErrorCode::kValidationError, "client '" + ev.client + "' added twice");
      }
      ClientState c;
      c.id = ev.client;
      c.annotated = ids_of(state.registry, ev.classes);
      c.spec = ev.model;
      c.shift = ev.shift;
      c.dataset = client_dataset(state.config, c.id, c.annotated, ev.samples, c.shift);
      c.data_version = 1;
      state.clients.emplace(c.id, std::move(c));
    } else {
      const auto it = state.clients.find(ev.client);
      if (it == state.clients.end()) {
        fail(ErrorCode::kValidationError, "update of unknown client '" + ev.client + "'");
      }
      auto& c = it->second;
      const auto added = ids_of(state.registry, ev.classes);
      c.annotated.insert(added.begin(), added.end());
      const auto n = c.dataset.samples.size() + ev.samples;
      const bool available = c.dataset.data_available;
      c.dataset = client_dataset(state.config, c.id, c.annotated, n, c.shift);
      c.dataset.data_available = available;
      ++c.data_version;
    }
  }
  const auto set_available = [&](const std::string& id, bool on) {
    const auto it = state.clients.find(id);
    if (it == state.clients.end()) {
      fail(ErrorCode::kValidationError, "availability change for unknown client '" + id + "'");
    }
    it->second.data_available = on;
    it->second.dataset.data_available = on;
  };
  for (const auto& id : sc.unavailable) set_available(id, false);
  for (const auto& id : sc.available) set_available(id, true);
}

ModelParams train_local(const ClientState& client, const ClassRegistry& registry, std::size_t epochs,
                        std::uint64_t seed, const tensor::AdamWConfig& optimizer) {
  if (!client.data_available) fail(ErrorCode::kDataUnavailable, "data of client '" + client.id + "'");
  const scene::ClientDataset* one[] = {&client.dataset};
  return run_centralized(one, registry, client.spec, epochs, optimizer, seed);
}

void upload_model(const ClientState& client, ServerStore& store, Ledger& ledger, std::size_t stage) {
  if (!client.local || client.trained_version != client.data_version) {
    fail(ErrorCode::kUntrainedClient, "client '" + client.id + "' has no model for its current data");
  }
  store.put(client.id, *client.local, client.annotated, stage);
  ledger.log(CommEvent{stage, CommKind::kUpload, client.id, store.find(client.id)->bytes.size(), 1});
}

ModelPredictions generate_pseudolabels(ServerStore& store, const scene::DistillationSet& dist,
                                       const ClassRegistry& registry, Ledger& ledger, std::size_t stage,
                                       std::size_t distill_epochs) {
  if (store.size() == 0) fail(ErrorCode::kEmptyStore, "no client models stored");
  if (dist.empty()) fail(ErrorCode::kEmptyDistillationSet, "distillation set has no volumes");
  store.begin_inference(stage);
  ModelPredictions out;
  std::uint64_t passes = 0;
  for (const auto& [id, entry] : store.entries()) {
    auto& preds = out[id];
    preds.reserve(dist.volumes.size());
    for (const auto& v : dist.volumes) {
      preds.push_back(models::forward(entry.model, v, entry.classes, registry));
      ++passes;
    }
  }
  ledger.log(ComputeEvent{stage, ComputeKind::kServerInference, "server",
                          inference_fraction(passes, distill_epochs, dist.volumes.size()), passes});
  return out;
}

std::vector<losses::PseudoLabelVolume> aggregate_predictions(const ModelPredictions& predictions,
                                                             const ClassSet& class_union, bool binarize) {
  std::size_t volumes = 0;
  bool first = true;
  for (const auto& [id, preds] : predictions) {
    if (first) volumes = preds.size();
    if (preds.size() != volumes) fail(ErrorCode::kShapeMismatch, "model '" + id + "' predicted a different count");
    first = false;
  }
  std::vector<losses::PseudoLabelVolume> out;
  out.reserve(volumes);
  for (std::size_t v = 0; v < volumes; ++v) {
    losses::PseudoLabelVolume pl;
    pl.classes.assign(class_union.begin(), class_union.end());
    bool dims_set = false;
    std::size_t row = 0;
    for (auto c : class_union) {
      const models::PredictionVolume* best = nullptr;
      const std::string* best_id = nullptr;
      double best_impurity = 0.0;
      for (const auto& [id, preds] : predictions) {
        const auto& p = preds[v];
        if (!p.covers(c)) continue;
        const double imp = losses::entropy_impurity(p.channel(c));
        if (!best || imp < best_impurity) {
          best = &p;
          best_id = &id;
          best_impurity = imp;
        }
      }
      if (!best) fail(ErrorCode::kUncoveredClass, "class " + std::to_string(c));
      if (!dims_set) {
        pl.dims = best->dims;
        pl.targets = tensor::Tensor::zeros({class_union.size(), pl.dims.voxels()});
        dims_set = true;
      }
      const auto ch = best->channel(c);
      if (ch.size() != pl.dims.voxels()) fail(ErrorCode::kShapeMismatch, "prediction grids differ");
      auto dst = pl.targets.values().subspan(row * ch.size(), ch.size());
      for (std::size_t i = 0; i < ch.size(); ++i) dst[i] = binarize ? (ch[i] > metrics::kThreshold ? 1.0 : 0.0) : ch[i];
      pl.source[c] = *best_id;
      ++row;
    }
    out.push_back(std::move(pl));
  }
  return out;
}

GlobalModelRecord distill_global(const scene::DistillationSet& dist,
                                 std::span<const losses::PseudoLabelVolume> pseudo, const ClassRegistry& registry,
                                 ModelParams init, std::size_t epochs, const tensor::AdamWConfig& optimizer,
                                 std::uint64_t seed, std::size_t stage, Ledger& ledger) {
  if (dist.empty()) fail(ErrorCode::kEmptyDistillationSet, "distillation set has no volumes");
  if (pseudo.size() != dist.volumes.size()) {
    fail(ErrorCode::kShapeMismatch, "one pseudo-label volume per distillation volume expected");
  }
  std::vector<training::DistillItem> items;
  for (std::size_t i = 0; i < pseudo.size(); ++i) items.push_back({&dist.volumes[i], &pseudo[i]});
  training::TrainStats stats;
  GlobalModelRecord record;
  record.stage = stage;
  record.model = training::train_distill(std::move(init), items, registry, epochs, optimizer, seed, &stats);
  record.class_union = ClassSet(pseudo.front().classes.begin(), pseudo.front().classes.end());
  record.strategy = Strategy::kMmds;
  ledger.log(ComputeEvent{stage, ComputeKind::kGlobalTrain, "server", 1.0, stats.steps});
  return record;
}

GlobalModelRecord run_stage_mmds(FederationState& state, std::size_t stage, const EngineOptions& options) {
  const auto& plan = state.schedule.at(stage);
  const auto& cfg = state.config;
  if (plan.participants.empty()) {
    if (!state.store.global) fail(ErrorCode::kEmptyStore, "stage " + std::to_string(stage) + " has no model");
    auto record = *state.store.global;
    record.stage = stage;
    return push_record(state, std::move(record));
  }

  // Step 1: only this stage's participants train, in parallel if allowed.
  std::vector<ClientState*> todo;
  for (const auto& id : plan.participants) todo.push_back(&state.clients.at(id));
  std::vector<ModelParams> trained(todo.size());
  const std::size_t jobs = options.deterministic ? 1 : options.jobs;
  parallel_for(todo.size(), jobs, [&](std::size_t i) {
    const auto& c = *todo[i];
    trained[i] = train_local(c, state.registry, cfg.training.local_epochs,
                             client_seed(cfg, "local", c.id, c.data_version), cfg.training.optimizer);
  });
  for (std::size_t i = 0; i < todo.size(); ++i) {
    todo[i]->local = std::move(trained[i]);
    todo[i]->trained_version = todo[i]->data_version;
    state.ledger.log(ComputeEvent{stage, ComputeKind::kLocalTrain, todo[i]->id, 1.0, 0});
  }

  // Step 2: upload, replacing older entries.
  for (auto* c : todo) upload_model(*c, state.store, state.ledger, stage);

  // Step 3: pseudo-label once, aggregate, distill a fresh global model.
  ClassSet stored_union;
  for (const auto& [id, e] : state.store.entries()) stored_union.insert(e.classes.begin(), e.classes.end());
  const auto preds = generate_pseudolabels(state.store, state.distillation, state.registry, state.ledger, stage,
                                           cfg.training.distill_epochs);
  std::vector<losses::PseudoLabelVolume> pseudo;
  try {
    pseudo = aggregate_predictions(preds, plan.class_union, cfg.training.binarize_pseudo_labels);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kUncoveredClass) throw;
    std::string missing;
    for (auto c : plan.class_union)
      if (!stored_union.count(c)) missing += (missing.empty() ? "" : ", ") + state.registry.name_of(c);
    fail(ErrorCode::kUncoveredClass, "no stored model predicts " + missing);
  }

  ModelParams init;
  if (cfg.training.warm_start_global && state.store.global) {
    init = state.store.global->model;
  } else {
    auto spec = cfg.global_model;
    spec.init_seed = stage_seed(cfg, "global-init", stage);
    init = models::build_model(spec);
  }
  auto record = distill_global(state.distillation, pseudo, state.registry, std::move(init),
                               cfg.training.distill_epochs, cfg.training.optimizer,
                               stage_seed(cfg, "distill", stage), stage, state.ledger);

  // Broadcast. Participants' downloads count toward the stage totals; the
  // copies sent to everyone else are logged as refreshes.
  const auto bytes = models::serialize(record.model).size();
  for (const auto& id : plan.clients) {
    const bool participant = std::binary_search(plan.participants.begin(), plan.participants.end(), id);
    state.ledger.log(CommEvent{stage, participant ? CommKind::kDownload : CommKind::kRefresh, id, bytes, 1});
    state.clients.at(id).global = record.model;
  }
  return push_record(state, std::move(record));
}

ModelParams fedavg_average(std::span<const ModelParams> models, std::span<const double> weights) {
  if (models.empty() || models.size() != weights.size()) {
    fail(ErrorCode::kShapeMismatch, "need one weight per model");
  }
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) fail(ErrorCode::kValidationError, "averaging weights must sum to a positive value");
  ModelParams out = models.front();
  for (auto& [name, t] : out.params) {
    auto dst = t.values();
    for (std::size_t k = 1; k < models.size(); ++k) {
      const auto it = models[k].params.find(name);
      if (it == models[k].params.end() || it->second.shape() != t.shape()) {
        fail(ErrorCode::kHeterogeneousArchitectures, "parameter '" + name + "' differs between models");
      }
      const auto base = models.front().params.at(name).values();
      const auto src = it->second.values();
      const double w = weights[k] / total;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * (src[i] - base[i]);
    }
  }
  return out;
}

void check_mapcr_feasible(const FederationState& state, std::optional<std::size_t> stage) {
  if (stage) {
    const auto& plan = state.schedule.at(*stage);
    const models::SegModelSpec* first = nullptr;
    std::string first_id;
    for (const auto& id : plan.clients) {
      const auto& c = state.clients.at(id);
      if (!c.data_available) {
        fail(ErrorCode::kDataUnavailable,
             "stage " + std::to_string(*stage) + ": data of client '" + id + "' is not accessible");
      }
    }
    for (const auto& id : plan.clients) {
      const auto& c = state.clients.at(id);
      if (!first) {
        first = &c.spec;
        first_id = id;
      } else if (!same_architecture(*first, c.spec)) {
        fail(ErrorCode::kHeterogeneousArchitectures, "client '" + first_id + "' uses " + describe(*first) +
                                                         ", client '" + id + "' uses " + describe(c.spec));
      }
    }
    return;
  }
  // Whole-schedule check from the scenario alone.
  std::map<std::string, models::SegModelSpec> specs;
  for (const auto& sc : state.config.stages)
    for (const auto& ev : sc.events)
      if (ev.type == ClientEvent::Type::kAdd) specs.emplace(ev.client, ev.model);
  for (const auto& plan : state.schedule.stages) {
    for (const auto& id : plan.clients) {
      if (plan.unavailable.count(id)) {
        fail(ErrorCode::kDataUnavailable,
             "stage " + std::to_string(plan.stage) + ": data of client '" + id + "' is not accessible");
      }
    }
    for (const auto& id : plan.clients) {
      const auto& a = specs.at(plan.clients.front());
      if (!same_architecture(a, specs.at(id))) {
        fail(ErrorCode::kHeterogeneousArchitectures, "client '" + plan.clients.front() + "' uses " + describe(a) +
                                                         ", client '" + id + "' uses " + describe(specs.at(id)));
      }
    }
  }
}

GlobalModelRecord run_mapcr_fedavg(FederationState& state, std::size_t stage, std::size_t rounds) {
  check_mapcr_feasible(state, stage);
  const auto& plan = state.schedule.at(stage);
  const auto& cfg = state.config;
  auto spec = state.clients.at(plan.clients.front()).spec;
  spec.init_seed = stage_seed(cfg, "mapcr-init", stage);
  ModelParams global = models::build_model(spec);

  struct Worker {
    ClientState* client;
    std::vector<training::SupervisedItem> items;
    tensor::OptimizerState opt;
    Rng rng;
  };
  std::vector<Worker> workers;
  std::vector<double> weights;
  for (const auto& id : plan.clients) {
    auto& c = state.clients.at(id);
    workers.push_back({&c, training::items_of(c.dataset.samples), tensor::OptimizerState(cfg.training.optimizer),
                       Rng(client_seed(cfg, "mapcr-order", id, stage))});
    weights.push_back(static_cast<double>(c.dataset.samples.size()));
  }
  std::vector<ModelParams> locals(workers.size());
  for (std::size_t r = 0; r < rounds; ++r) {
    for (std::size_t k = 0; k < workers.size(); ++k) {
      auto& w = workers[k];
      locals[k] = global;
      training::run_supervised_epochs(locals[k], w.opt, w.items, state.registry, 1, rounds * w.items.size(), w.rng);
    }
    global = fedavg_average(locals, weights);
  }

  const auto bytes = models::serialize(global).size();
  for (auto& w : workers) {
    state.ledger.log(CommEvent{stage, CommKind::kDownload, w.client->id, bytes, rounds});
    state.ledger.log(CommEvent{stage, CommKind::kUpload, w.client->id, bytes, rounds});
    state.ledger.log(ComputeEvent{stage, ComputeKind::kLocalTrain, w.client->id, 1.0, rounds * w.items.size()});
    w.client->global = global;
  }
  return push_record(state, GlobalModelRecord{stage, std::move(global), plan.class_union, Strategy::kMapcrFedAvg});
}

ModelParams run_centralized(std::span<const scene::ClientDataset* const> datasets, const ClassRegistry& registry,
                            const models::SegModelSpec& spec, std::size_t epochs,
                            const tensor::AdamWConfig& optimizer, std::uint64_t seed) {
  std::vector<training::SupervisedItem> items;
  for (const auto* d : datasets) {
    if (!d->data_available) fail(ErrorCode::kDataUnavailable, "data of client '" + d->client_id + "'");
    for (const auto& s : d->samples) items.push_back({&s.volume, &s.labels});
  }
  auto init_spec = spec;
  init_spec.init_seed = derive_seed(seed, "init");
  return training::train_supervised(models::build_model(init_spec), items, registry, epochs, optimizer, seed);
}

GlobalModelRecord run_stage_centralized(FederationState& state, std::size_t stage) {
  const auto& plan = state.schedule.at(stage);
  const auto& cfg = state.config;
  std::vector<const scene::ClientDataset*> pool;
  for (const auto& id : plan.clients) pool.push_back(&state.clients.at(id).dataset);
  auto model = run_centralized(pool, state.registry, cfg.global_model, cfg.training.centralized_epochs,
                               cfg.training.optimizer, stage_seed(cfg, "centralized", stage));
  state.ledger.log(ComputeEvent{stage, ComputeKind::kGlobalTrain, "central", 1.0, 0});
  for (const auto& id : plan.clients) state.clients.at(id).global = model;
  return push_record(state, GlobalModelRecord{stage, std::move(model), plan.class_union, Strategy::kCentralized});
}

GlobalModelRecord run_stage(FederationState& state, std::size_t stage, const EngineOptions& options) {
  if (stage != state.completed_stages + 1) {
    fail(ErrorCode::kValidationError, "stage " + std::to_string(stage) + " requested after " +
                                          std::to_string(state.completed_stages) + " completed stages");
  }
  apply_stage_events(state, stage);
  GlobalModelRecord record;
  switch (state.config.strategy) {
    case Strategy::kMmds:
      record = run_stage_mmds(state, stage, options);
      break;
    case Strategy::kMapcrFedAvg:
      record = run_mapcr_fedavg(state, stage, options.rounds.value_or(state.config.rounds));
      break;
    case Strategy::kCentralized:
      record = run_stage_centralized(state, stage);
      break;
  }
  state.completed_stages = stage;
  return record;
}

std::string_view route_name(Route route) { return route == Route::kLocal ? "local" : "global"; }

PersonalizedPrediction personalized_infer(const ClientState& client, const Volume& volume,
                                          const ClassRegistry& registry, const ClassSet& class_union) {
  if (!client.global) fail(ErrorCode::kMissingGlobalModel, "client '" + client.id + "'");
  if (!client.local) fail(ErrorCode::kMissingLocalModel, "client '" + client.id + "'");
  ClassSet local_classes, global_classes;
  for (auto c : class_union) (client.annotated.count(c) ? local_classes : global_classes).insert(c);
  std::optional<models::PredictionVolume> from_local, from_global;
  if (!local_classes.empty()) from_local = models::forward(*client.local, volume, local_classes, registry);
  if (!global_classes.empty()) from_global = models::forward(*client.global, volume, global_classes, registry);

  PersonalizedPrediction out;
  auto& pred = out.prediction;
  pred.dims = volume.dims;
  pred.classes.assign(class_union.begin(), class_union.end());
  const std::size_t n = volume.dims.voxels();
  pred.probs = tensor::Tensor::zeros({pred.classes.size(), n});
  for (std::size_t r = 0; r < pred.classes.size(); ++r) {
    const auto c = pred.classes[r];
    const bool local = local_classes.count(c) != 0;
    const auto ch = local ? from_local->channel(c) : from_global->channel(c);
    std::copy(ch.begin(), ch.end(), pred.probs.values().begin() + static_cast<std::ptrdiff_t>(r * n));
    out.source[c] = local ? Route::kLocal : Route::kGlobal;
  }
  return out;
}

metrics::MetricReport evaluate(const Predictor& predict, std::span<const scene::Sample> samples,
                               const ClassSet& classes, const ClassRegistry& registry) {
  metrics::MetricReport report;
  for (const auto& s : samples) {
    ClassSet scored;
    for (auto c : classes)
      if (s.labels.annotated.count(c)) scored.insert(c);
    if (scored.empty()) continue;
    const auto pred = predict(s.volume, scored);
    for (auto c : scored) {
      report.add(c, registry.name_of(c), metrics::binarize(pred.channel(c), s.volume.dims), s.labels.masks.at(c));
    }
  }
  return report;
}

metrics::MetricReport evaluate_model(const ModelParams& model, std::span<const scene::Sample> samples,
                                     const ClassSet& classes, const ClassRegistry& registry) {
  return evaluate([&](const Volume& v, const ClassSet& cs) { return models::forward(model, v, cs, registry); },
                  samples, classes, registry);
}

}  // namespace fedstill::federation
