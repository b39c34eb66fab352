// Criteria 4-10 on the bundled five-stage scenario. Runs are trained once per
// seed and strategy and shared between criteria.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <optional>
#include <set>

#include <nlohmann/json.hpp>

#include "acceptance.hpp"
#include "fedstill/binary_io.hpp"
#include "fedstill/commands.hpp"
#include "fedstill/federation.hpp"
#include "fedstill/metrics.hpp"
#include "fedstill/model.hpp"

namespace fedstill::acceptance {

namespace fs = std::filesystem;
using federation::FederationState;
using scenario::Strategy;

namespace {

constexpr std::uint64_t kSeeds[] = {0, 1, 2};
constexpr double kMinOrganDice = 0.80;
constexpr double kCentralizedGap = 0.10;
constexpr double kLesionGap = 0.10;
constexpr double kMaxForgetting = 0.05;
constexpr double kHeteroGap = 0.05;
constexpr double kOodGap = 0.15;

struct Run {
  fs::path dir;
  FederationState state;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

class RunContext {
 public:
  explicit RunContext(fs::path work) : work_(std::move(work)) {}

  scenario::ScenarioConfig config(std::uint64_t seed, bool hetero = false) const {
    auto cfg = scenario::load_scenario(scenario_path(hetero));
    cfg.seed = seed;
    return cfg;
  }

  static fs::path scenario_path(bool hetero) {
    return scenario::bundled_scenario(hetero ? "paper5stage_hetero" : "paper5stage");
  }

  const Run& mmds(std::uint64_t seed) { return get(seed, "mmds", false, Strategy::kMmds); }
  const Run& centralized(std::uint64_t seed) { return get(seed, "centralized", false, Strategy::kCentralized); }
  const Run& hetero(std::uint64_t seed) { return get(seed, "hetero", true, Strategy::kMmds); }

  // Pooled held-out scenes of every client, as the run's stage metrics use.
  const std::vector<scene::Sample>& tests(std::uint64_t seed) {
    auto& t = tests_[seed];
    if (t.empty()) {
      const auto cfg = config(seed);
      for (const auto& [id, shift] : federation::all_clients(cfg)) {
        auto ds = federation::client_test_set(cfg, id, shift);
        for (auto& s : ds.samples) t.push_back(std::move(s));
      }
    }
    return t;
  }

  // Final global model of a run scored on the pooled test scenes.
  metrics::MetricReport final_report(const FederationState& s, std::uint64_t seed) {
    const auto& rec = s.records.back();
    return federation::evaluate_model(rec.model, tests(seed), rec.class_union, s.registry);
  }

  const fs::path& work() const { return work_; }

 private:
  const Run& get(std::uint64_t seed, const std::string& kind, bool hetero, Strategy strategy) {
    const std::string key = kind + "_seed" + std::to_string(seed);
    auto& slot = runs_[key];
    if (!slot) {
      cli::RunOptions o;
      o.seed = seed;
      o.strategy = strategy;
      o.deterministic = true;
      const auto dir = work_ / key;
      auto state = cli::run_scenario(scenario_path(hetero), dir, o);
      slot = std::make_unique<Run>(Run{dir, std::move(state)});
    }
    return *slot;
  }

  fs::path work_;
  std::map<std::string, std::unique_ptr<Run>> runs_;
  std::map<std::uint64_t, std::vector<scene::Sample>> tests_;
};

RunContext& run_context(const fs::path& work_dir) {
  static RunContext ctx(work_dir);
  return ctx;
}

namespace {

ClassSet lesions_of(const FederationState& s) { return s.scene.classes_of_kind(scene::ClassKind::kLesion); }

ClassSet minus(const ClassSet& a, const ClassSet& b) {
  ClassSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::inserter(out, out.end()));
  return out;
}

ClassSet intersect(const ClassSet& a, const ClassSet& b) {
  ClassSet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(out, out.end()));
  return out;
}

double points(double x) { return 100.0 * x; }

}  // namespace

// --- 4 ----------------------------------------------------------------------

void accuracy(RunContext& ctx, Outcome& out) {
  for (auto seed : kSeeds) {
    const auto& m = ctx.mmds(seed).state;
    const auto& c = ctx.centralized(seed).state;
    const auto& u = m.records.back().class_union;
    const auto organs = minus(u, lesions_of(m));
    const auto lesions = intersect(u, lesions_of(m));
    out.check(!organs.empty() && !lesions.empty(), str("seed ", seed, ": union lacks organs or lesions"));
    out.check(intersect(m.distillation.coverage, lesions_of(m)).empty(),
              str("seed ", seed, ": distillation set renders lesions"));

    const auto rm = ctx.final_report(m, seed);
    const auto rc = ctx.final_report(c, seed);
    const double organ = rm.macro_dice(organs), organ_c = rc.macro_dice(organs), lesion = rm.macro_dice(lesions);
    out.check(organ >= kMinOrganDice, str("seed ", seed, ": organ dice ", organ));
    out.check(std::abs(organ - organ_c) <= kCentralizedGap,
              str("seed ", seed, ": organ dice ", organ, " vs centralized ", organ_c));
    out.check(lesion <= organ - kLesionGap, str("seed ", seed, ": lesion dice ", lesion, " vs organ ", organ));
    out.note(str("seed ", seed, ": MMDS organ ", points(organ), ", centralized organ ", points(organ_c),
                 ", MMDS lesion ", points(lesion), " (DICE points)"));
  }
}

// --- 5 ----------------------------------------------------------------------

void no_forgetting(RunContext& ctx, Outcome& out) {
  for (auto seed : kSeeds) {
    const auto& s = ctx.mmds(seed).state;
    std::vector<metrics::MetricReport> reports;
    for (const auto& rec : s.records)
      reports.push_back(federation::evaluate_model(rec.model, ctx.tests(seed), rec.class_union, s.registry));
    double worst = -1.0;
    std::string where;
    for (std::size_t t = 2; t <= s.records.size(); ++t) {
      for (auto cls : s.records[t - 2].class_union) {
        const double drop = reports[t - 2].dice(cls) - reports[t - 1].dice(cls);
        out.check(drop <= kMaxForgetting,
                  str("seed ", seed, " stage ", t, " ", s.registry.name_of(cls), " lost ", points(drop), " points"));
        if (drop > worst) {
          worst = drop;
          where = str("stage ", t, " ", s.registry.name_of(cls));
        }
      }
    }
    out.note(str("seed ", seed, ": largest stage-to-stage drop ", points(worst), " points (", where, ")"));
  }
}

// --- 6 ----------------------------------------------------------------------

void personalization(RunContext& ctx, Outcome& out) {
  std::size_t volumes = 0, channels = 0;
  for (auto seed : kSeeds) {
    const auto& s = ctx.mmds(seed).state;
    const auto& u = s.records.back().class_union;
    const auto cfg = ctx.config(seed);
    for (const auto& [id, c] : s.clients) {
      if (!out.check(c.local && c.global, str("seed ", seed, " ", id, " lacks a model"))) continue;
      const auto test = federation::client_test_set(cfg, id, c.shift);
      for (const auto& sample : test.samples) {
        const auto p = federation::personalized_infer(c, sample.volume, s.registry, u);
        const auto local = models::forward(*c.local, sample.volume, c.annotated, s.registry);
        const auto global = models::forward(*c.global, sample.volume, u, s.registry);
        ++volumes;
        for (auto cls : u) {
          const bool mine = c.annotated.count(cls) > 0;
          const auto got = p.prediction.channel(cls);
          const auto want = mine ? local.channel(cls) : global.channel(cls);
          ++channels;
          out.check(std::equal(got.begin(), got.end(), want.begin(), want.end()),
                    str("seed ", seed, " ", id, " ", s.registry.name_of(cls), " not bit-identical"));
        }
      }

      // Local-class DICE is the local model's; the report still spans the union.
      const federation::Predictor pers = [&](const Volume& v, const ClassSet&) {
        return federation::personalized_infer(c, v, s.registry, u).prediction;
      };
      const auto before = federation::evaluate_model(*c.local, test.samples, c.annotated, s.registry);
      const auto after_local = federation::evaluate(pers, test.samples, c.annotated, s.registry);
      const auto after_all = federation::evaluate(pers, test.samples, u, s.registry);
      for (auto cls : c.annotated)
        out.check(before.dice(cls) == after_local.dice(cls) && after_all.dice(cls) == before.dice(cls),
                  str("seed ", seed, " ", id, " ", s.registry.name_of(cls), " dice changed"));
      out.check(after_all.classes().size() == u.size(), str("seed ", seed, " ", id, " coverage short of union"));
    }
  }
  out.note(str(volumes, " client test volumes, ", channels, " routed channels compared"));
}

// --- 7 ----------------------------------------------------------------------

void heterogeneity(RunContext& ctx, Outcome& out) {
  for (auto seed : kSeeds) {
    const auto& h = ctx.hetero(seed).state;
    std::set<models::Architecture> archs;
    for (const auto& [id, c] : h.clients) archs.insert(c.spec.arch);
    out.check(archs.size() > 1, str("seed ", seed, ": hetero scenario has one architecture"));
    out.check(h.completed_stages == h.config.stage_count(), str("seed ", seed, ": hetero run incomplete"));

    const double dh = ctx.final_report(h, seed).macro_dice();
    const double dm = ctx.final_report(ctx.mmds(seed).state, seed).macro_dice();
    out.check(std::abs(dh - dm) <= kHeteroGap, str("seed ", seed, ": hetero ", dh, " vs homogeneous ", dm));
    out.note(str("seed ", seed, ": macro DICE heterogeneous ", points(dh), ", homogeneous ", points(dm)));

    cli::RunOptions o;
    o.seed = seed;
    o.strategy = Strategy::kMapcrFedAvg;
    o.deterministic = true;
    const auto dir = ctx.work() / ("hetero_mapcr_seed" + std::to_string(seed));
    const auto err = error_of([&] { cli::run_scenario(RunContext::scenario_path(true), dir, o); });
    out.check(err == ErrorCode::kHeterogeneousArchitectures,
              str("seed ", seed, ": MAPCR gave ", err ? std::string(error_name(*err)) : "no error"));
  }
}

// --- 8 ----------------------------------------------------------------------

void staleness(RunContext& ctx, Outcome& out) {
  const std::uint64_t seed = kSeeds[0];
  const auto cfg = ctx.config(seed);
  federation::EngineOptions opts;
  opts.deterministic = true;
  auto state = federation::init_federation(cfg);
  std::size_t reruns = 0;
  for (std::size_t t = 1; t <= cfg.stage_count(); ++t) {
    std::set<std::string> movers, idle;
    for (const auto& ev : cfg.stages[t - 1].events) movers.insert(ev.client);
    for (const auto& [id, c] : state.clients)
      if (!movers.count(id)) idle.insert(id);

    if (t >= 2 && !idle.empty()) {
      auto stale = state;
      auto& sc = stale.config.stages[t - 1];
      sc.unavailable.assign(idle.begin(), idle.end());
      auto mapcr = stale;
      mapcr.config.strategy = Strategy::kMapcrFedAvg;

      const auto rec = federation::run_stage(stale, t, opts);
      for (const auto& id : idle) {
        const auto* before = state.store.find(id);
        const auto* after = stale.store.find(id);
        out.check(before && after && before->bytes == after->bytes && after->stage == before->stage,
                  str("stage ", t, ": stored model of ", id, " changed"));
      }
      const auto err = error_of([&] { federation::run_stage(mapcr, t, opts); });
      out.check(err == ErrorCode::kDataUnavailable,
                str("stage ", t, ": MAPCR gave ", err ? std::string(error_name(*err)) : "no error"));

      federation::run_stage(state, t, opts);
      out.check(rec.model == state.records.back().model,
                str("stage ", t, ": global model differs from the run with all data reachable"));
      ++reruns;
    } else {
      federation::run_stage(state, t, opts);
    }
  }
  out.check(reruns > 0, "no stage had idle clients");
  out.note(str(reruns, " stages rerun with idle clients unavailable (seed ", seed, ")"));
}

// --- 9 ----------------------------------------------------------------------

void determinism(RunContext& ctx, Outcome& out) {
  const std::uint64_t seed = kSeeds[0];
  const auto& a = ctx.mmds(seed).dir;
  const auto b = ctx.work() / "mmds_seed0_again";
  cli::RunOptions o;
  o.seed = seed;
  o.deterministic = true;
  cli::run_scenario(RunContext::scenario_path(false), b, o);

  auto collect = [](const fs::path& root) {
    std::set<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
      const auto ext = e.path().extension();
      if (e.is_regular_file() && (ext == ".csv" || ext == ".fstl"))
        files.insert(fs::relative(e.path(), root).generic_string());
    }
    return files;
  };
  const auto fa = collect(a), fb = collect(b);
  out.check(fa == fb, "runs wrote different file sets");
  std::size_t csv = 0, models = 0;
  for (const auto& f : fa) {
    if (!fb.count(f)) continue;
    out.check(slurp(a / f) == slurp(b / f), f + " differs");
    (f.ends_with(".csv") ? csv : models) += 1;
  }
  out.check(csv > 0 && models > 0, "nothing compared");
  out.note(str(csv, " metrics CSVs and ", models, " model files byte-identical"));
}

// --- 10 ---------------------------------------------------------------------

void ood(RunContext& ctx, Outcome& out) {
  for (auto seed : kSeeds) {
    const auto& run = ctx.mmds(seed);
    const auto& s = run.state;
    const auto& rec = s.records.back();
    const auto set = federation::make_ood_set(s.config);
    if (!out.check(set.has_value(), "scenario has no OOD client")) return;
    const auto unseen = minus(set->annotated, rec.class_union);
    const auto scored = intersect(set->annotated, rec.class_union);
    out.check(!unseen.empty() && !scored.empty(), str("seed ", seed, ": OOD set needs seen and unseen classes"));

    cli::evaluate_run(run.dir, {{"ood"}, {}});
    const auto summary = nlohmann::json::parse(slurp(run.dir / "eval" / "ood" / "summary.json"));
    out.check(summary.at("omitted").get<std::vector<std::string>>() == s.registry.names_of(unseen),
              str("seed ", seed, ": omitted ", summary.at("omitted").dump()));
    for (const auto& e : fs::directory_iterator(run.dir / "eval" / "ood")) {
      if (e.path().extension() != ".csv") continue;
      const auto text = slurp(e.path());
      for (auto cls : unseen)
        out.check(text.find(s.registry.name_of(cls)) == std::string::npos,
                  str(e.path().filename().string(), " mentions ", s.registry.name_of(cls)));
      for (auto cls : scored)
        out.check(text.find(s.registry.name_of(cls) + ",") != std::string::npos,
                  str(e.path().filename().string(), " lacks ", s.registry.name_of(cls)));
    }

    const double o = federation::evaluate_model(rec.model, set->samples, scored, s.registry).macro_dice();
    const double t = federation::evaluate_model(rec.model, ctx.tests(seed), scored, s.registry).macro_dice();
    out.check(std::abs(o - t) <= kOodGap, str("seed ", seed, ": OOD ", o, " vs test ", t));
    out.note(str("seed ", seed, ": OOD macro ", points(o), ", test macro ", points(t), " on ",
                 s.registry.names_of(scored).size(), " shared classes; omitted ", summary.at("omitted").dump()));
  }
}

}  // namespace fedstill::acceptance
