#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "fedstill/binary_io.hpp"
#include "fedstill/commands.hpp"
#include "fedstill/error.hpp"
#include "fedstill/table.hpp"

namespace fedstill::cli {

using nlohmann::json;
using scenario::Strategy;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

json read_json(const fs::path& p) {
  try {
    return json::parse(io::read_text(p));
  } catch (const json::exception& e) {
    fail(ErrorCode::kParseError, p.string() + ": " + e.what());
  }
}

double num(const json& j) { return j.is_number() ? j.get<double>() : kNaN; }

std::string stage_name(std::size_t stage) {
  std::string s = std::to_string(stage);
  return std::string(s.size() < 2 ? 2 - s.size() : 0, '0') + s;
}

std::vector<scene::Sample> all_test_samples(const scenario::ScenarioConfig& cfg) {
  std::vector<scene::Sample> out;
  for (const auto& [id, shift] : federation::all_clients(cfg)) {
    auto ds = federation::client_test_set(cfg, id, shift);
    for (auto& s : ds.samples) out.push_back(std::move(s));
  }
  return out;
}

std::vector<scene::Sample> load_eval_dataset(const scenario::ScenarioConfig& cfg, const std::string& name,
                                             std::string& label) {
  if (name == "test") {
    label = "test";
    return all_test_samples(cfg);
  }
  if (name == "ood") {
    auto ood = federation::make_ood_set(cfg);
    if (!ood) fail(ErrorCode::kUnknownDataset, "scenario defines no ood dataset");
    label = "ood";
    return std::move(ood->samples);
  }
  const fs::path dir(name);
  if (!fs::exists(dir / "dataset.json")) fail(ErrorCode::kUnknownDataset, "'" + name + "'");
  label = dir.filename().string();
  if (label.empty()) label = dir.parent_path().filename().string();
  return scene::load_dataset(cfg.scene, dir).samples;
}

models::ModelParams load_model(const fs::path& p) { return models::deserialize(io::read_file(p)); }

// Per-class DICE/ASSD from a MetricReport JSON file.
struct ClassRow {
  std::string name;
  double dice = kNaN, assd = kNaN;
  std::int64_t n = 0;
};

std::vector<ClassRow> read_metrics(const fs::path& p) {
  std::vector<ClassRow> out;
  const auto j = read_json(p);
  for (const auto& c : j.at("classes")) {
    out.push_back({c.at("class").get<std::string>(), num(c.at("dice")), num(c.at("assd")),
                   c.at("n").get<std::int64_t>()});
  }
  return out;
}

double macro(const std::vector<ClassRow>& rows, const std::function<bool(const std::string&)>& keep) {
  double s = 0.0;
  std::size_t k = 0;
  for (const auto& r : rows) {
    if (!keep(r.name) || std::isnan(r.dice)) continue;
    s += r.dice;
    ++k;
  }
  return k ? s / static_cast<double>(k) : kNaN;
}

// Equal zero costs compare as 1, so a run set against itself is all ones.
double ratio(double a, double b) {
  if (b != 0.0) return a / b;
  return a == 0.0 ? 1.0 : kNaN;
}

}  // namespace

std::vector<fs::path> evaluate_run(const fs::path& run_dir, const EvalSpec& spec) {
  const auto manifest = load_run(run_dir);
  if (manifest.cost_only || manifest.stages.empty() || manifest.stages.back().global_model.empty()) {
    fail(ErrorCode::kValidationError, run_dir.string() + " holds no trained models");
  }
  const auto cfg = run_config(run_dir, manifest);
  const auto registry = federation::make_registry(cfg);
  const ClassSet final_union = registry.ids_of(manifest.stages.back().class_union);
  const ClassSet excluded = registry.ids_of(spec.exclude_classes);
  const auto final_global = load_model(run_dir / manifest.stages.back().global_model);

  // Clients with a stored local model can be evaluated with routing.
  std::vector<federation::ClientState> clients;
  if (fs::exists(run_dir / "clients")) {
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(run_dir / "clients")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) {
      if (!fs::exists(d / "local.fstl")) continue;
      const auto info = read_json(d / "client.json");
      federation::ClientState c;
      c.id = info.at("id").get<std::string>();
      c.annotated = registry.ids_of(info.at("annotated").get<std::vector<std::string>>());
      c.local = load_model(d / "local.fstl");
      c.global = final_global;
      clients.push_back(std::move(c));
    }
  }

  std::vector<fs::path> written;
  for (const auto& name : spec.datasets) {
    std::string label;
    const auto samples = load_eval_dataset(cfg, name, label);
    ClassSet present;
    for (const auto& s : samples) present.insert(s.labels.annotated.begin(), s.labels.annotated.end());
    // Classes nobody federated, or that the caller excluded, are dropped.
    ClassSet reportable, omitted;
    for (auto c : present) (final_union.count(c) && !excluded.count(c) ? reportable : omitted).insert(c);
    const auto out = run_dir / "eval" / label;

    for (const auto& st : manifest.stages) {
      const auto model = load_model(run_dir / st.global_model);
      const ClassSet stage_union = registry.ids_of(st.class_union);
      ClassSet scored;
      for (auto c : reportable)
        if (stage_union.count(c)) scored.insert(c);
      const auto rep = federation::evaluate_model(model, samples, scored, registry);
      Table t;
      t.columns = {"class", "status", "dice", "assd", "n"};
      for (auto c : reportable) {
        if (!stage_union.count(c)) {
          t.add({registry.name_of(c), std::string("not-in-union"), std::monostate{}, std::monostate{},
                 std::monostate{}});
          continue;
        }
        const auto& m = rep.classes().at(c);
        t.add({m.name, std::string("scored"), m.dice(), m.assd(), static_cast<std::int64_t>(m.n)});
      }
      t.add({std::string("macro"), std::monostate{}, rep.macro_dice(), rep.macro_assd(), std::monostate{}});
      t.write(out / ("global_stage_" + stage_name(st.stage)));
    }

    for (const auto& c : clients) {
      std::map<ClassId, federation::Route> routes;
      const auto predict = [&](const Volume& v, const ClassSet&) {
        auto p = federation::personalized_infer(c, v, registry, final_union);
        for (const auto& [k, r] : p.source) routes[k] = r;
        return p.prediction;
      };
      const auto rep = federation::evaluate(predict, samples, reportable, registry);
      Table t;
      t.columns = {"class", "source", "dice", "assd", "n"};
      for (const auto& [id, m] : rep.classes()) {
        t.add({m.name, std::string(federation::route_name(routes.at(id))), m.dice(), m.assd(),
               static_cast<std::int64_t>(m.n)});
      }
      t.add({std::string("macro"), std::monostate{}, rep.macro_dice(), rep.macro_assd(), std::monostate{}});
      t.write(out / ("personalized_" + c.id));
    }

    nlohmann::ordered_json info;
    info["dataset"] = name;
    info["samples"] = samples.size();
    info["reported"] = registry.names_of(reportable);
    info["omitted"] = registry.names_of(omitted);
    io::write_text(out / "summary.json", info.dump(2) + "\n");
    written.push_back(out);
  }
  return written;
}

std::vector<fs::path> report_runs(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) fail(ErrorCode::kValidationError, "report needs at least one run directory");
  struct Run {
    fs::path dir;
    std::string label;
    RunManifest manifest;
    scenario::ScenarioConfig cfg;
    federation::StageSchedule schedule;
    std::vector<federation::StageTotals> totals;
  };
  std::vector<Run> runs;
  std::string reference_registry;
  for (const auto& d : run_dirs) {
    Run r;
    r.dir = d;
    r.manifest = load_run(d);
    const auto reg_text = io::read_text(d / "registry.json");
    if (runs.empty()) {
      reference_registry = reg_text;
    } else if (reg_text != reference_registry) {
      fail(ErrorCode::kIncompatibleRuns, d.string() + " uses a different class registry than " +
                                             run_dirs.front().string());
    }
    r.cfg = run_config(d, r.manifest);
    const auto registry = federation::make_registry(r.cfg);
    r.schedule = federation::make_schedule(r.cfg, registry);
    const auto ledger = federation::Ledger::from_json(io::read_text(d / "ledger.json"));
    r.totals = federation::ledger_totals(ledger, r.cfg.stage_count());
    r.label = d.filename().empty() ? d.parent_path().filename().string() : d.filename().string();
    runs.push_back(std::move(r));
  }
  const auto& ref = runs.front();
  std::vector<fs::path> written;
  const auto emit = [&](const Table& t, const std::string& stem) {
    t.write(out_dir / stem);
    written.push_back(out_dir / (stem + ".csv"));
  };

  // Communication and compute per stage.
  {
    Table t;
    t.columns = {"run",        "strategy",  "stage",         "participants", "clients",     "communications",
                 "refreshes",  "bytes",     "compute_units", "epsilon",      "comm_ratio",  "compute_ratio"};
    for (const auto& r : runs) {
      for (const auto& s : r.totals) {
        const auto& plan = r.schedule.at(s.stage);
        const auto* rs = s.stage <= ref.totals.size() ? &ref.totals[s.stage - 1] : nullptr;
        t.add({r.label, std::string(scenario::strategy_name(r.manifest.strategy)),
               static_cast<std::int64_t>(s.stage), static_cast<std::int64_t>(plan.participants.size()),
               static_cast<std::int64_t>(plan.clients.size()), static_cast<std::int64_t>(s.communications),
               static_cast<std::int64_t>(s.refreshes), static_cast<std::int64_t>(s.bytes), s.compute_units,
               s.epsilon,
               rs ? ratio(static_cast<double>(s.communications), static_cast<double>(rs->communications)) : kNaN,
               rs ? ratio(s.compute_units, rs->compute_units) : kNaN});
      }
    }
    emit(t, "cost");
  }

  const auto trained = [](const Run& r) {
    return !r.manifest.cost_only && !r.manifest.stages.empty() && !r.manifest.stages.back().metrics.empty();
  };
  const auto final_metrics = [](const Run& r) {
    auto p = r.dir / r.manifest.stages.back().metrics;
    return read_metrics(p.replace_extension(".json"));
  };
  std::map<std::string, ClassRow> ref_classes;
  if (trained(ref))
    for (const auto& row : final_metrics(ref)) ref_classes[row.name] = row;

  // Class-wise DICE/ASSD of each run's final global model.
  {
    Table t;
    t.columns = {"run", "strategy", "class", "dice", "assd", "n", "dice_delta"};
    for (const auto& r : runs) {
      if (!trained(r)) continue;
      for (const auto& row : final_metrics(r)) {
        const auto it = ref_classes.find(row.name);
        t.add({r.label, std::string(scenario::strategy_name(r.manifest.strategy)), row.name, row.dice, row.assd,
               row.n, it == ref_classes.end() ? kNaN : row.dice - it->second.dice});
      }
    }
    emit(t, "classwise");
  }

  // Per-client DICE before federation (local model) and after (routed).
  {
    Table t;
    t.columns = {"run", "client", "class", "source", "before_dice", "after_dice", "global_dice"};
    for (const auto& r : runs) {
      if (!trained(r) || !fs::exists(r.dir / "clients")) continue;
      std::vector<fs::path> dirs;
      for (const auto& e : fs::directory_iterator(r.dir / "clients")) dirs.push_back(e.path());
      std::sort(dirs.begin(), dirs.end());
      for (const auto& d : dirs) {
        if (!fs::exists(d / "after.json")) continue;
        std::map<std::string, double> before, global;
        for (const auto& row : read_metrics(d / "before.json")) before[row.name] = row.dice;
        for (const auto& row : read_metrics(d / "global.json")) global[row.name] = row.dice;
        for (const auto& row : read_json(d / "after.json")) {
          const auto cls = row.at("class").get<std::string>();
          if (cls == "macro") continue;
          const auto b = before.find(cls);
          const auto g = global.find(cls);
          t.add({r.label, d.filename().string(), cls, row.at("source").get<std::string>(),
                 b == before.end() ? kNaN : b->second, num(row.at("dice")), g == global.end() ? kNaN : g->second});
        }
      }
    }
    emit(t, "clients");
  }

  // Homogeneous vs heterogeneous client architectures.
  {
    Table t;
    t.columns = {"run", "strategy", "architectures", "macro_dice", "organ_macro_dice", "dice_delta"};
    double ref_macro = kNaN;
    for (const auto& r : runs) {
      if (!trained(r)) continue;
      const auto rows = final_metrics(r);
      const double all = macro(rows, [](const std::string&) { return true; });
      const auto& sc = r.cfg.scene;
      const double organs = macro(rows, [&](const std::string& n) {
        return sc.structures.at(sc.id_of(n)).kind != scene::ClassKind::kLesion;
      });
      if (&r == &ref) ref_macro = all;
      t.add({r.label, std::string(scenario::strategy_name(r.manifest.strategy)),
             std::string(r.manifest.heterogeneous ? "heterogeneous" : "homogeneous"), all, organs, all - ref_macro});
    }
    emit(t, "hetero");
  }

  // Held-out client results.
  {
    Table t;
    t.columns = {"run", "class", "ood_dice", "test_dice", "dice_gap"};
    for (const auto& r : runs) {
      if (!fs::exists(r.dir / "ood.json")) continue;
      for (const auto& row : read_json(r.dir / "ood.json")) {
        t.add({r.label, row.at("class").get<std::string>(), num(row.at("ood_dice")), num(row.at("test_dice")),
               num(row.at("dice_gap"))});
      }
    }
    emit(t, "ood");
  }
  return written;
}

}  // namespace fedstill::cli
