#include "fedstill/commands.hpp"

#include <chrono>
#include <cstdio>
#include <ostream>

#include <nlohmann/json.hpp>

#include "fedstill/binary_io.hpp"
#include "fedstill/error.hpp"
#include "fedstill/random.hpp"
#include "fedstill/table.hpp"

#ifndef FEDSTILL_VERSION
#define FEDSTILL_VERSION "dev"
#endif

namespace fedstill::cli {

using federation::FederationState;
using nlohmann::ordered_json;
using scenario::Strategy;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string stage_dir(std::size_t stage) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "stage_%02zu", stage);
  return buf;
}

std::vector<std::string> names(const ClassRegistry& registry, const ClassSet& ids) {
  return registry.names_of(ids);
}


std::string registry_json(const ClassRegistry& registry) {
  ordered_json j;
  j["seed"] = registry.seed();
  auto& arr = j["classes"] = ordered_json::array();
  for (ClassId id = 0; id < registry.size(); ++id) {
    const auto e = registry.embedding(id);
    arr.push_back({{"id", id}, {"name", registry.name_of(id)}, {"embedding", std::vector<double>(e.begin(), e.end())}});
  }
  return j.dump(2) + "\n";
}

bool is_heterogeneous(const scenario::ScenarioConfig& cfg) {
  std::optional<models::Architecture> arch;
  for (const auto& s : cfg.stages)
    for (const auto& ev : s.events)
      if (ev.type == scenario::ClientEvent::Type::kAdd) {
        if (arch && *arch != ev.model.arch) return true;
        arch = ev.model.arch;
      }
  return false;
}

scenario::ScenarioConfig apply_overrides(scenario::ScenarioConfig cfg, const RunOptions& o) {
  if (o.seed) cfg.seed = *o.seed;
  if (o.strategy) cfg.strategy = *o.strategy;
  if (o.rounds) cfg.rounds = *o.rounds;
  return cfg;
}

std::vector<scene::Sample> test_samples(const scenario::ScenarioConfig& cfg) {
  std::vector<scene::Sample> out;
  for (const auto& [id, shift] : federation::all_clients(cfg)) {
    auto ds = federation::client_test_set(cfg, id, shift);
    for (auto& s : ds.samples) out.push_back(std::move(s));
  }
  return out;
}

std::vector<scene::Sample> client_test_samples(const scenario::ScenarioConfig& cfg, const std::string& client) {
  const auto all = federation::all_clients(cfg);
  return federation::client_test_set(cfg, client, all.at(client)).samples;
}

// Metric rows with an optional per-class routing column.
Table metric_table(const metrics::MetricReport& report, const std::map<ClassId, federation::Route>* routes) {
  Table t;
  t.columns = {"class"};
  if (routes) t.columns.push_back("source");
  for (const char* c : {"dice", "assd", "n"}) t.columns.emplace_back(c);
  for (const auto& [id, m] : report.classes()) {
    std::vector<Cell> row{m.name};
    if (routes) row.emplace_back(std::string(federation::route_name(routes->at(id))));
    row.emplace_back(m.dice());
    row.emplace_back(m.assd());
    row.emplace_back(static_cast<std::int64_t>(m.n));
    t.add(std::move(row));
  }
  std::vector<Cell> macro{std::string("macro")};
  if (routes) macro.emplace_back(std::monostate{});
  macro.emplace_back(report.macro_dice());
  macro.emplace_back(report.macro_assd());
  macro.emplace_back(std::monostate{});
  t.add(std::move(macro));
  return t;
}

void write_report(const metrics::MetricReport& report, const fs::path& stem) {
  io::write_text(fs::path(stem).concat(".csv"), report.csv());
  io::write_text(fs::path(stem).concat(".json"), report.json());
}

metrics::MetricReport personalized_report(const federation::ClientState& client, std::span<const scene::Sample> samples,
                                          const ClassSet& class_union, const ClassRegistry& registry,
                                          std::map<ClassId, federation::Route>& routes) {
  const auto predict = [&](const Volume& v, const ClassSet&) {
    auto p = federation::personalized_infer(client, v, registry, class_union);
    for (const auto& [c, r] : p.source) routes[c] = r;
    return p.prediction;
  };
  return federation::evaluate(predict, samples, class_union, registry);
}

void write_client_outputs(const FederationState& state, const fs::path& dir) {
  const auto& final_union = state.records.back().class_union;
  for (const auto& [id, c] : state.clients) {
    if (!c.local) continue;
    const auto cdir = dir / "clients" / id;
    io::write_file(cdir / "local.fstl", models::serialize(*c.local));
    ordered_json info;
    info["id"] = id;
    info["annotated"] = names(state.registry, c.annotated);
    info["architecture"] = models::architecture_name(c.spec.arch);
    info["data_version"] = c.data_version;
    info["samples"] = c.dataset.samples.size();
    io::write_text(cdir / "client.json", info.dump(2) + "\n");

    const auto samples = client_test_samples(state.config, id);
    write_report(federation::evaluate_model(*c.local, samples, c.annotated, state.registry), cdir / "before");
    if (c.global) {
      std::map<ClassId, federation::Route> routes;
      const auto after = personalized_report(c, samples, final_union, state.registry, routes);
      metric_table(after, &routes).write(cdir / "after");
      write_report(federation::evaluate_model(*c.global, samples, final_union, state.registry), cdir / "global");
    }
  }
}

Table ood_table(const metrics::MetricReport& ood, const metrics::MetricReport& in_fed) {
  Table t;
  t.columns = {"class", "ood_dice", "ood_assd", "test_dice", "test_assd", "dice_gap", "n"};
  ClassSet shared;
  for (const auto& [id, m] : ood.classes()) {
    const double test = in_fed.dice(id);
    t.add({m.name, m.dice(), m.assd(), test, in_fed.assd(id), test - m.dice(), static_cast<std::int64_t>(m.n)});
    shared.insert(id);
  }
  const double om = ood.macro_dice(), tm = in_fed.macro_dice(shared);
  t.add({std::string("macro"), om, ood.macro_assd(), tm, std::monostate{}, tm - om, std::monostate{}});
  return t;
}

void write_ood(const FederationState& state, const std::vector<scene::Sample>& tests, const fs::path& dir) {
  const auto ood = federation::make_ood_set(state.config);
  if (!ood || state.records.empty()) return;
  const auto& record = state.records.back();
  ClassSet scored, excluded;
  for (auto c : ood->annotated) (record.class_union.count(c) ? scored : excluded).insert(c);
  const auto ood_report = federation::evaluate_model(record.model, ood->samples, scored, state.registry);
  const auto test_report = federation::evaluate_model(record.model, tests, scored, state.registry);
  ood_table(ood_report, test_report).write(dir / "ood");
  ordered_json info;
  info["dataset"] = ood->client_id;
  info["scored"] = names(state.registry, scored);
  info["excluded"] = names(state.registry, excluded);
  io::write_text(dir / "ood_classes.json", info.dump(2) + "\n");
}

}  // namespace

std::string content_hash(std::string_view text) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  return buf;
}

std::string RunManifest::to_json() const {
  ordered_json j;
  j["code_version"] = code_version;
  j["scenario_path"] = scenario_path;
  j["scenario_hash"] = scenario_hash;
  j["seed"] = seed;
  j["strategy"] = scenario::strategy_name(strategy);
  j["rounds"] = rounds;
  j["cost_only"] = cost_only;
  j["heterogeneous"] = heterogeneous;
  auto& st = j["stages"] = ordered_json::array();
  for (const auto& s : stages) {
    st.push_back({{"stage", s.stage},
                  {"global_model", s.global_model},
                  {"metrics", s.metrics},
                  {"store", s.store},
                  {"class_union", s.class_union},
                  {"seconds", s.seconds}});
  }
  j["total_seconds"] = total_seconds;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  RunManifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.code_version = j.at("code_version").get<std::string>();
    m.scenario_path = j.at("scenario_path").get<std::string>();
    m.scenario_hash = j.at("scenario_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.strategy = scenario::parse_strategy(j.at("strategy").get<std::string>());
    m.rounds = j.at("rounds").get<std::size_t>();
    m.cost_only = j.at("cost_only").get<bool>();
    m.heterogeneous = j.at("heterogeneous").get<bool>();
    for (const auto& s : j.at("stages")) {
      StageArtifacts a;
      a.stage = s.at("stage").get<std::size_t>();
      a.global_model = s.at("global_model").get<std::string>();
      a.metrics = s.at("metrics").get<std::string>();
      a.store = s.at("store").get<std::vector<std::string>>();
      a.class_union = s.at("class_union").get<std::vector<std::string>>();
      a.seconds = s.at("seconds").get<double>();
      m.stages.push_back(std::move(a));
    }
    m.total_seconds = j.at("total_seconds").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParseError, std::string("manifest: ") + e.what());
  }
  return m;
}

RunManifest load_run(const fs::path& run_dir) {
  if (!fs::exists(run_dir / "manifest.json")) {
    fail(ErrorCode::kStaleRun, run_dir.string() + " has no manifest.json");
  }
  auto m = RunManifest::from_json(io::read_text(run_dir / "manifest.json"));
  const auto copy = io::read_text(run_dir / "scenario.json");
  if (content_hash(copy) != m.scenario_hash) {
    fail(ErrorCode::kStaleRun, run_dir.string() + ": stored scenario does not match the manifest hash");
  }
  if (!m.scenario_path.empty() && fs::exists(m.scenario_path) &&
      content_hash(io::read_text(m.scenario_path)) != m.scenario_hash) {
    fail(ErrorCode::kStaleRun, run_dir.string() + ": " + m.scenario_path + " changed since the run");
  }
  return m;
}

scenario::ScenarioConfig run_config(const fs::path& run_dir, const RunManifest& manifest) {
  auto cfg = scenario::parse_scenario(io::read_text(run_dir / "scenario.json"));
  cfg.seed = manifest.seed;
  cfg.strategy = manifest.strategy;
  cfg.rounds = manifest.rounds;
  return cfg;
}

void generate_data(const fs::path& scenario_path, const fs::path& out_dir) {
  const auto cfg = scenario::load_scenario(scenario_path);
  const auto registry = federation::make_registry(cfg);
  // Replay the events to get each client's final class set and size.
  std::map<std::string, std::pair<ClassSet, std::size_t>> finals;
  std::map<std::string, scene::DomainShift> shifts;
  for (const auto& s : cfg.stages) {
    for (const auto& ev : s.events) {
      auto& [classes, n] = finals[ev.client];
      const auto added = registry.ids_of(ev.classes);
      classes.insert(added.begin(), added.end());
      n += ev.samples;
      if (ev.type == scenario::ClientEvent::Type::kAdd) shifts[ev.client] = ev.shift;
    }
  }
  for (const auto& [id, cn] : finals) {
    const auto& shift = shifts.at(id);
    scene::save_dataset(federation::client_dataset(cfg, id, cn.first, cn.second, shift),
                        cfg.scene.with_shift(shift), out_dir / "clients" / id);
    scene::save_dataset(federation::client_test_set(cfg, id, shift), cfg.scene.with_shift(shift),
                        out_dir / "test" / id);
  }
  scene::save_distillation_set(federation::make_distillation(cfg), cfg.scene.with_shift(cfg.distillation.shift),
                               out_dir / "distillation");
  if (const auto ood = federation::make_ood_set(cfg)) {
    scene::save_dataset(*ood, cfg.scene.with_shift(cfg.evaluation.ood->shift), out_dir / "ood");
  }
  io::write_text(out_dir / "registry.json", registry_json(registry));
}

FederationState run_scenario(const fs::path& scenario_path, const fs::path& out_dir, const RunOptions& options) {
  const auto t_start = Clock::now();
  const auto text = io::read_text(scenario_path);
  auto cfg = apply_overrides(scenario::parse_scenario(text), options);
  scenario::validate(cfg);

  RunManifest manifest;
  manifest.code_version = FEDSTILL_VERSION;
  manifest.scenario_path = fs::absolute(scenario_path).lexically_normal().string();
  manifest.scenario_hash = content_hash(text);
  manifest.seed = cfg.seed;
  manifest.strategy = cfg.strategy;
  manifest.rounds = cfg.rounds;
  manifest.cost_only = options.cost_only;
  manifest.heterogeneous = is_heterogeneous(cfg);

  auto state = federation::init_federation(cfg);
  fs::create_directories(out_dir);
  io::write_text(out_dir / "scenario.json", text);
  io::write_text(out_dir / "registry.json", registry_json(state.registry));

  if (options.cost_only) {
    const auto ledger = federation::plan_ledger(cfg, cfg.strategy, cfg.rounds);
    io::write_text(out_dir / "ledger.json", ledger.to_json(cfg.stage_count()));
    for (const auto& plan : state.schedule.stages) {
      StageArtifacts a;
      a.stage = plan.stage;
      a.class_union = names(state.registry, plan.class_union);
      manifest.stages.push_back(std::move(a));
    }
    state.ledger = ledger;
    manifest.total_seconds = seconds_since(t_start);
    io::write_text(out_dir / "manifest.json", manifest.to_json());
    return state;
  }

  if (cfg.strategy == Strategy::kMapcrFedAvg) federation::check_mapcr_feasible(state);

  const auto tests = test_samples(cfg);
  federation::EngineOptions engine{options.jobs, options.deterministic, options.rounds};
  for (std::size_t t = 1; t <= cfg.stage_count(); ++t) {
    const auto t0 = Clock::now();
    const auto& record = federation::run_stage(state, t, engine);
    StageArtifacts a;
    a.stage = t;
    const std::string sd = stage_dir(t);
    a.global_model = sd + "/global.fstl";
    io::write_file(out_dir / a.global_model, models::serialize(record.model));
    for (const auto& [id, entry] : state.store.entries()) {
      a.store.push_back(sd + "/store/" + id + ".fstl");
      io::write_file(out_dir / a.store.back(), entry.bytes);
    }
    a.metrics = sd + "/metrics.csv";
    write_report(federation::evaluate_model(record.model, tests, record.class_union, state.registry),
                 out_dir / sd / "metrics");
    a.class_union = names(state.registry, record.class_union);
    a.seconds = seconds_since(t0);
    manifest.stages.push_back(std::move(a));
  }
  io::write_text(out_dir / "ledger.json", state.ledger.to_json(cfg.stage_count()));
  write_client_outputs(state, out_dir);
  write_ood(state, tests, out_dir);
  manifest.total_seconds = seconds_since(t_start);
  io::write_text(out_dir / "manifest.json", manifest.to_json());
  return state;
}

int guarded(const std::function<void()>& fn, std::ostream& err) {
  const auto emit = [&](std::string_view name, const std::string& message, int code) {
    ordered_json j;
    j["error"] = name;
    j["message"] = message;
    j["exit_code"] = code;
    err << j.dump() << "\n";
    return code;
  };
  try {
    fn();
    return 0;
  } catch (const Error& e) {
    return emit(error_name(e.code()), e.what(), exit_code_for(e.code()));
  } catch (const std::exception& e) {
    return emit("InternalError", e.what(), 3);
  }
}

}  // namespace fedstill::cli
