#include "fedstill/scenario.hpp"

#include <algorithm>
#include <cstdlib>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "fedstill/binary_io.hpp"
#include "fedstill/error.hpp"

#ifndef FEDSTILL_SCENARIO_DIR
#define FEDSTILL_SCENARIO_DIR "scenarios"
#endif

namespace fedstill::scenario {

using nlohmann::json;

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kMmds: return "mmds";
    case Strategy::kMapcrFedAvg: return "mapcr_fedavg";
    case Strategy::kCentralized: return "centralized";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "mmds") return Strategy::kMmds;
  if (name == "mapcr_fedavg") return Strategy::kMapcrFedAvg;
  if (name == "centralized") return Strategy::kCentralized;
  fail(ErrorCode::kValidationError, "unknown strategy '" + std::string(name) + "'");
}

namespace {

[[noreturn]] void parse_fail(const std::string& path, const std::string& what) {
  fail(ErrorCode::kParseError, "field '" + path + "': " + what);
}

// Rejects keys outside `allowed` so typos do not silently fall back to defaults.
void check_keys(const json& j, const std::string& path, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) parse_fail(path, "expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      parse_fail(path.empty() ? key : path + "." + key, "unknown field");
    }
  }
}

std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

template <typename T>
T read(const json& j, const std::string& path) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) parse_fail(path, "expected a boolean");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!j.is_number_unsigned()) parse_fail(path, "expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!j.is_number()) parse_fail(path, "expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!j.is_string()) parse_fail(path, "expected a string");
    }
    return j.get<T>();
  } catch (const json::exception& e) {
    parse_fail(path, e.what());
  }
}

template <typename T>
void read_opt(const json& obj, const std::string& path, std::string_view key, T& out) {
  const auto it = obj.find(key);
  if (it != obj.end()) out = read<T>(*it, join(path, key));
}

std::vector<std::string> read_names(const json& j, const std::string& path) {
  if (!j.is_array()) parse_fail(path, "expected an array of class names");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(read<std::string>(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

template <std::size_t N, typename T>
std::array<T, N> read_array(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != N) parse_fail(path, "expected an array of " + std::to_string(N) + " numbers");
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = read<T>(j[i], path + "[" + std::to_string(i) + "]");
  return out;
}

scene::DomainShift read_shift(const json& j, const std::string& path) {
  check_keys(j, path, {"gain", "bias", "noise_sigma"});
  scene::DomainShift s;
  read_opt(j, path, "gain", s.gain);
  read_opt(j, path, "bias", s.bias);
  if (j.contains("noise_sigma")) s.noise_sigma = read<double>(j.at("noise_sigma"), join(path, "noise_sigma"));
  return s;
}

models::SegModelSpec read_model(const json& j, const std::string& path, models::SegModelSpec spec) {
  check_keys(j, path, {"architecture", "hidden", "layers"});
  if (j.contains("architecture")) {
    try {
      spec.arch = models::parse_architecture(read<std::string>(j.at("architecture"), join(path, "architecture")));
    } catch (const Error& e) {
      parse_fail(join(path, "architecture"), e.what());
    }
  }
  read_opt(j, path, "hidden", spec.hidden);
  read_opt(j, path, "layers", spec.layers);
  return spec;
}

scene::StructureSpec read_structure(const json& j, const std::string& path) {
  check_keys(j, path, {"name", "kind", "shape", "size_min", "size_max", "center_lo", "center_hi", "intensity",
                       "parent", "blobs", "occurrence"});
  scene::StructureSpec s;
  s.name = read<std::string>(j.at("name"), join(path, "name"));
  const auto kind = j.contains("kind") ? read<std::string>(j.at("kind"), join(path, "kind")) : "organ";
  if (kind == "organ") s.kind = scene::ClassKind::kOrgan;
  else if (kind == "lesion") s.kind = scene::ClassKind::kLesion;
  else if (kind == "distractor") s.kind = scene::ClassKind::kDistractor;
  else parse_fail(join(path, "kind"), "expected organ, lesion or distractor");
  const auto shape = j.contains("shape") ? read<std::string>(j.at("shape"), join(path, "shape")) : "ellipsoid";
  if (shape == "ellipsoid") s.shape = scene::ShapeFamily::kEllipsoid;
  else if (shape == "box") s.shape = scene::ShapeFamily::kBox;
  else if (shape == "tube") s.shape = scene::ShapeFamily::kTube;
  else parse_fail(join(path, "shape"), "expected ellipsoid, box or tube");
  if (j.contains("size_min")) s.size_min = read_array<2, double>(j.at("size_min"), join(path, "size_min"));
  if (j.contains("size_max")) s.size_max = read_array<2, double>(j.at("size_max"), join(path, "size_max"));
  if (j.contains("center_lo")) s.center_lo = read_array<2, double>(j.at("center_lo"), join(path, "center_lo"));
  if (j.contains("center_hi")) s.center_hi = read_array<2, double>(j.at("center_hi"), join(path, "center_hi"));
  read_opt(j, path, "intensity", s.intensity);
  read_opt(j, path, "parent", s.parent);
  read_opt(j, path, "occurrence", s.occurrence);
  if (j.contains("blobs")) {
    const auto b = read_array<2, std::uint32_t>(j.at("blobs"), join(path, "blobs"));
    s.blob_min = b[0];
    s.blob_max = b[1];
  }
  return s;
}

scene::SceneSpec read_scene(const json& j, const std::string& path) {
  check_keys(j, path, {"dims", "background", "noise_sigma", "structures"});
  scene::SceneSpec spec = scene::default_scene_spec();
  if (j.contains("dims")) {
    const auto d = read_array<3, std::size_t>(j.at("dims"), join(path, "dims"));
    spec.dims = {d[0], d[1], d[2]};
  }
  read_opt(j, path, "background", spec.background);
  read_opt(j, path, "noise_sigma", spec.noise_sigma);
  if (j.contains("structures")) {
    const auto& arr = j.at("structures");
    if (!arr.is_array()) parse_fail(join(path, "structures"), "expected an array");
    spec.structures.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      spec.structures.push_back(read_structure(arr[i], join(path, "structures") + "[" + std::to_string(i) + "]"));
    }
  }
  return spec;
}

ClientEvent read_event(const json& j, const std::string& path, const models::SegModelSpec& default_model) {
  if (!j.is_object() || !j.contains("type")) parse_fail(path, "event needs a type");
  const auto type = read<std::string>(j.at("type"), join(path, "type"));
  ClientEvent ev;
  if (type == "add_client") {
    check_keys(j, path, {"type", "id", "classes", "samples", "model", "domain_shift"});
    ev.type = ClientEvent::Type::kAdd;
    ev.client = read<std::string>(j.at("id"), join(path, "id"));
    ev.classes = read_names(j.at("classes"), join(path, "classes"));
    ev.samples = read<std::size_t>(j.at("samples"), join(path, "samples"));
    ev.model = j.contains("model") ? read_model(j.at("model"), join(path, "model"), default_model) : default_model;
    if (j.contains("domain_shift")) ev.shift = read_shift(j.at("domain_shift"), join(path, "domain_shift"));
  } else if (type == "update_client") {
    check_keys(j, path, {"type", "id", "add_classes", "add_samples"});
    ev.type = ClientEvent::Type::kUpdate;
    ev.client = read<std::string>(j.at("id"), join(path, "id"));
    if (j.contains("add_classes")) ev.classes = read_names(j.at("add_classes"), join(path, "add_classes"));
    read_opt(j, path, "add_samples", ev.samples);
  } else {
    parse_fail(join(path, "type"), "expected add_client or update_client");
  }
  if (ev.client.empty()) parse_fail(join(path, "id"), "client id must not be empty");
  return ev;
}

ScenarioConfig from_json(const json& root) {
  check_keys(root, "", {"name", "seed", "strategy", "rounds", "training", "scene", "client_model", "global_model",
                        "distillation", "evaluation", "stages"});
  ScenarioConfig cfg;
  read_opt(root, "", "name", cfg.name);
  read_opt(root, "", "seed", cfg.seed);
  if (root.contains("strategy")) {
    try {
      cfg.strategy = parse_strategy(read<std::string>(root.at("strategy"), "strategy"));
    } catch (const Error& e) {
      parse_fail("strategy", e.what());
    }
  }
  read_opt(root, "", "rounds", cfg.rounds);

  if (root.contains("training")) {
    const auto& t = root.at("training");
    check_keys(t, "training", {"local_epochs", "distill_epochs", "centralized_epochs", "learning_rate",
                               "weight_decay", "beta1", "beta2", "warmup_fraction", "binarize_pseudo_labels",
                               "warm_start_global"});
    auto& tr = cfg.training;
    read_opt(t, "training", "local_epochs", tr.local_epochs);
    tr.distill_epochs = tr.local_epochs;
    tr.centralized_epochs = tr.local_epochs;
    read_opt(t, "training", "distill_epochs", tr.distill_epochs);
    read_opt(t, "training", "centralized_epochs", tr.centralized_epochs);
    read_opt(t, "training", "learning_rate", tr.optimizer.base_lr);
    read_opt(t, "training", "weight_decay", tr.optimizer.weight_decay);
    read_opt(t, "training", "beta1", tr.optimizer.beta1);
    read_opt(t, "training", "beta2", tr.optimizer.beta2);
    read_opt(t, "training", "warmup_fraction", tr.optimizer.warmup_fraction);
    read_opt(t, "training", "binarize_pseudo_labels", tr.binarize_pseudo_labels);
    read_opt(t, "training", "warm_start_global", tr.warm_start_global);
  }

  cfg.scene = root.contains("scene") ? read_scene(root.at("scene"), "scene") : scene::default_scene_spec();
  models::SegModelSpec client_default;
  if (root.contains("client_model")) client_default = read_model(root.at("client_model"), "client_model", client_default);
  if (root.contains("global_model")) cfg.global_model = read_model(root.at("global_model"), "global_model", cfg.global_model);

  if (root.contains("distillation")) {
    const auto& d = root.at("distillation");
    check_keys(d, "distillation", {"samples", "include_classes", "domain_shift"});
    read_opt(d, "distillation", "samples", cfg.distillation.samples);
    if (d.contains("include_classes")) {
      cfg.distillation.include_classes = read_names(d.at("include_classes"), "distillation.include_classes");
    }
    if (d.contains("domain_shift")) cfg.distillation.shift = read_shift(d.at("domain_shift"), "distillation.domain_shift");
  }
  if (root.contains("evaluation")) {
    const auto& e = root.at("evaluation");
    check_keys(e, "evaluation", {"test_samples_per_client", "ood"});
    read_opt(e, "evaluation", "test_samples_per_client", cfg.evaluation.test_samples_per_client);
    if (e.contains("ood")) {
      const auto& o = e.at("ood");
      check_keys(o, "evaluation.ood", {"id", "classes", "samples", "domain_shift"});
      OodConfig ood;
      read_opt(o, "evaluation.ood", "id", ood.id);
      ood.classes = read_names(o.at("classes"), "evaluation.ood.classes");
      read_opt(o, "evaluation.ood", "samples", ood.samples);
      if (o.contains("domain_shift")) ood.shift = read_shift(o.at("domain_shift"), "evaluation.ood.domain_shift");
      cfg.evaluation.ood = ood;
    }
  }

  if (!root.contains("stages") || !root.at("stages").is_array()) parse_fail("stages", "expected an array of stages");
  const auto& stages = root.at("stages");
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const std::string path = "stages[" + std::to_string(s) + "]";
    const auto& js = stages[s];
    check_keys(js, path, {"stage", "events", "unavailable", "available"});
    if (js.contains("stage")) {
      const auto idx = read<std::size_t>(js.at("stage"), join(path, "stage"));
      if (idx != s + 1) {
        fail(ErrorCode::kValidationError, "stage indices must be contiguous from 1; " + path + " is numbered " +
                                              std::to_string(idx));
      }
    }
    StageConfig stage;
    if (js.contains("events")) {
      const auto& ev = js.at("events");
      if (!ev.is_array()) parse_fail(join(path, "events"), "expected an array");
      for (std::size_t e = 0; e < ev.size(); ++e) {
        stage.events.push_back(read_event(ev[e], join(path, "events") + "[" + std::to_string(e) + "]", client_default));
      }
    }
    if (js.contains("unavailable")) stage.unavailable = read_names(js.at("unavailable"), join(path, "unavailable"));
    if (js.contains("available")) stage.available = read_names(js.at("available"), join(path, "available"));
    cfg.stages.push_back(std::move(stage));
  }
  return cfg;
}

}  // namespace

void validate(const ScenarioConfig& cfg) {
  const auto bad = [](const std::string& msg) { fail(ErrorCode::kValidationError, msg); };
  scene::validate(cfg.scene);
  if (cfg.stages.empty()) bad("scenario has no stages");
  if (cfg.strategy == Strategy::kMapcrFedAvg && cfg.rounds == 0) bad("mapcr_fedavg needs rounds >= 1");
  const auto check_class = [&](const std::string& name, const std::string& where) {
    const auto names = cfg.scene.class_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      bad(where + " references unknown class '" + name + "'");
    }
  };
  for (const auto& c : cfg.distillation.include_classes) check_class(c, "distillation.include_classes");
  if (cfg.evaluation.ood) {
    for (const auto& c : cfg.evaluation.ood->classes) check_class(c, "evaluation.ood.classes");
  }

  std::set<std::string> known;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const std::string where = "stage " + std::to_string(s + 1);
    std::set<std::string> touched;
    for (const auto& ev : cfg.stages[s].events) {
      if (!touched.insert(ev.client).second) bad(where + " lists client '" + ev.client + "' twice");
      for (const auto& c : ev.classes) check_class(c, where + " client '" + ev.client + "'");
      if (ev.type == ClientEvent::Type::kAdd) {
        if (known.contains(ev.client)) bad(where + " adds client '" + ev.client + "' which already exists");
        if (ev.classes.empty()) bad(where + " adds client '" + ev.client + "' with no classes");
        if (ev.samples == 0) bad(where + " adds client '" + ev.client + "' with no samples");
      } else if (!known.contains(ev.client)) {
        bad(where + " updates client '" + ev.client + "' before it was added");
      }
    }
    for (const auto& ev : cfg.stages[s].events) known.insert(ev.client);
    for (const auto& id : cfg.stages[s].unavailable) {
      if (!known.contains(id)) bad(where + " marks unknown client '" + id + "' unavailable");
    }
    for (const auto& id : cfg.stages[s].available) {
      if (!known.contains(id)) bad(where + " marks unknown client '" + id + "' available");
    }
  }
}

ScenarioConfig parse_scenario(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    fail(ErrorCode::kParseError, "line " + std::to_string(line) + ", column " + std::to_string(col) + ": " + e.what());
  }
  auto cfg = from_json(root);
  validate(cfg);
  return cfg;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::kValidationError, "scenario file not found: " + path.string());
  return parse_scenario(io::read_text(path));
}

std::filesystem::path bundled_scenario_dir() {
  if (const char* env = std::getenv("FEDSTILL_SCENARIOS"); env && *env) return env;
  return FEDSTILL_SCENARIO_DIR;
}

std::filesystem::path bundled_scenario(std::string_view name) {
  return bundled_scenario_dir() / (std::string(name) + ".json");
}

}  // namespace fedstill::scenario
