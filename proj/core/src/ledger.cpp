#include "fedstill/ledger.hpp"

#include <algorithm>
#include <map>

#include <nlohmann/json.hpp>

#include "fedstill/error.hpp"
#include "fedstill/model.hpp"

namespace fedstill::federation {

using scenario::ClientEvent;
using scenario::Strategy;

const StagePlan& StageSchedule::at(std::size_t stage) const {
  if (stage == 0 || stage > stages.size()) {
    fail(ErrorCode::kValidationError, "stage " + std::to_string(stage) + " outside 1.." +
                                          std::to_string(stages.size()));
  }
  return stages[stage - 1];
}

StageSchedule make_schedule(const scenario::ScenarioConfig& config, const ClassRegistry& registry) {
  StageSchedule out;
  std::set<std::string> joined;
  std::set<std::string> unavailable;
  ClassSet seen;
  for (std::size_t t = 0; t < config.stages.size(); ++t) {
    const auto& sc = config.stages[t];
    StagePlan plan;
    plan.stage = t + 1;
    std::set<std::string> participants;
    for (const auto& ev : sc.events) {
      participants.insert(ev.client);
      joined.insert(ev.client);
      for (auto id : registry.ids_of(ev.classes)) {
        if (seen.insert(id).second) plan.new_classes.insert(id);
      }
    }
    for (const auto& c : sc.unavailable) unavailable.insert(c);
    for (const auto& c : sc.available) unavailable.erase(c);
    plan.participants.assign(participants.begin(), participants.end());
    plan.clients.assign(joined.begin(), joined.end());
    plan.class_union = seen;
    plan.unavailable = unavailable;
    out.stages.push_back(std::move(plan));
  }
  return out;
}

std::string_view comm_kind_name(CommKind kind) {
  switch (kind) {
    case CommKind::kUpload: return "upload";
    case CommKind::kDownload: return "download";
    case CommKind::kRefresh: return "refresh";
  }
  return "?";
}

std::string_view compute_kind_name(ComputeKind kind) {
  switch (kind) {
    case ComputeKind::kLocalTrain: return "local_train";
    case ComputeKind::kGlobalTrain: return "global_train";
    case ComputeKind::kServerInference: return "server_inference";
  }
  return "?";
}

void Ledger::append(const Ledger& other) {
  comm_.insert(comm_.end(), other.comm_.begin(), other.comm_.end());
  compute_.insert(compute_.end(), other.compute_.begin(), other.compute_.end());
}

std::vector<StageTotals> ledger_totals(const Ledger& ledger, std::size_t stage_count) {
  std::vector<StageTotals> out(stage_count);
  for (std::size_t i = 0; i < stage_count; ++i) out[i].stage = i + 1;
  auto slot = [&](std::size_t stage) -> StageTotals& {
    if (stage == 0 || stage > stage_count) {
      fail(ErrorCode::kValidationError, "ledger event for stage " + std::to_string(stage));
    }
    return out[stage - 1];
  };
  for (const auto& e : ledger.comm_events()) {
    auto& s = slot(e.stage);
    switch (e.kind) {
      case CommKind::kUpload:
        s.uploads += e.count;
        s.bytes += e.count * e.bytes;
        break;
      case CommKind::kDownload:
        s.downloads += e.count;
        s.bytes += e.count * e.bytes;
        break;
      case CommKind::kRefresh:
        s.refreshes += e.count;
        break;
    }
  }
  for (auto& s : out) s.communications = s.uploads + s.downloads;
  for (const auto& e : ledger.compute_events()) {
    auto& s = slot(e.stage);
    s.compute_units += e.units;
    if (e.kind == ComputeKind::kServerInference) s.epsilon += e.units;
  }
  return out;
}

ClosedForm closed_form(Strategy strategy, const StagePlan& plan, std::size_t rounds, double epsilon) {
  switch (strategy) {
    case Strategy::kMmds: {
      const auto m = plan.participants.size();
      if (m == 0) return {};
      return {2 * m, static_cast<double>(m) + 1.0 + epsilon};
    }
    case Strategy::kMapcrFedAvg: {
      const auto s = plan.clients.size();
      return {2 * s * rounds, static_cast<double>(s)};
    }
    case Strategy::kCentralized:
      return {0, 1.0};
  }
  return {};
}

double inference_fraction(std::uint64_t forward_passes, std::size_t distill_epochs, std::size_t distill_volumes) {
  const double training = 3.0 * static_cast<double>(std::max<std::size_t>(distill_epochs * distill_volumes, 1));
  return static_cast<double>(forward_passes) / training;
}

Ledger plan_ledger(const scenario::ScenarioConfig& config, Strategy strategy, std::size_t rounds) {
  const auto model_bytes = [](models::SegModelSpec spec) {
    return static_cast<std::uint64_t>(models::serialize(models::build_model(spec)).size());
  };
  std::map<std::string, std::uint64_t> client_bytes;
  const auto global_bytes = model_bytes(config.global_model);
  Ledger ledger;
  std::set<std::string> joined;
  for (std::size_t t = 0; t < config.stages.size(); ++t) {
    const std::size_t stage = t + 1;
    std::set<std::string> participants;
    for (const auto& ev : config.stages[t].events) {
      if (ev.type == ClientEvent::Type::kAdd) client_bytes[ev.client] = model_bytes(ev.model);
      participants.insert(ev.client);
      joined.insert(ev.client);
    }
    switch (strategy) {
      case Strategy::kMmds: {
        if (participants.empty()) break;
        for (const auto& c : participants) {
          ledger.log(ComputeEvent{stage, ComputeKind::kLocalTrain, c, 1.0, 0});
          ledger.log(CommEvent{stage, CommKind::kUpload, c, client_bytes.at(c), 1});
        }
        const std::uint64_t passes = joined.size() * config.distillation.samples;
        ledger.log(ComputeEvent{stage, ComputeKind::kServerInference, "server",
                                inference_fraction(passes, config.training.distill_epochs,
                                                   config.distillation.samples),
                                passes});
        ledger.log(ComputeEvent{stage, ComputeKind::kGlobalTrain, "server", 1.0, 0});
        for (const auto& c : joined) {
          const auto kind = participants.count(c) ? CommKind::kDownload : CommKind::kRefresh;
          ledger.log(CommEvent{stage, kind, c, global_bytes, 1});
        }
        break;
      }
      case Strategy::kMapcrFedAvg:
        for (const auto& c : joined) {
          ledger.log(CommEvent{stage, CommKind::kDownload, c, client_bytes.at(c), rounds});
          ledger.log(CommEvent{stage, CommKind::kUpload, c, client_bytes.at(c), rounds});
          ledger.log(ComputeEvent{stage, ComputeKind::kLocalTrain, c, 1.0, 0});
        }
        break;
      case Strategy::kCentralized:
        ledger.log(ComputeEvent{stage, ComputeKind::kGlobalTrain, "central", 1.0, 0});
        break;
    }
  }
  return ledger;
}

std::string Ledger::to_json(std::size_t stage_count) const {
  nlohmann::ordered_json j;
  auto& comm = j["communication"] = nlohmann::ordered_json::array();
  for (const auto& e : comm_) {
    comm.push_back({{"stage", e.stage},
                    {"kind", comm_kind_name(e.kind)},
                    {"client", e.client},
                    {"bytes", e.bytes},
                    {"count", e.count}});
  }
  auto& comp = j["compute"] = nlohmann::ordered_json::array();
  for (const auto& e : compute_) {
    comp.push_back({{"stage", e.stage},
                    {"kind", compute_kind_name(e.kind)},
                    {"actor", e.actor},
                    {"units", e.units},
                    {"steps", e.steps}});
  }
  auto& totals = j["totals"] = nlohmann::ordered_json::array();
  for (const auto& s : ledger_totals(*this, stage_count)) {
    totals.push_back({{"stage", s.stage},
                      {"communications", s.communications},
                      {"uploads", s.uploads},
                      {"downloads", s.downloads},
                      {"refreshes", s.refreshes},
                      {"bytes", s.bytes},
                      {"compute_units", s.compute_units},
                      {"epsilon", s.epsilon}});
  }
  j["stages"] = stage_count;
  return j.dump(2) + "\n";
}

Ledger Ledger::from_json(std::string_view text) {
  Ledger out;
  try {
    const auto j = nlohmann::json::parse(text);
    const auto comm_kind = [](const std::string& s) {
      for (auto k : {CommKind::kUpload, CommKind::kDownload, CommKind::kRefresh})
        if (comm_kind_name(k) == s) return k;
      fail(ErrorCode::kParseError, "ledger: unknown communication kind '" + s + "'");
    };
    const auto compute_kind = [](const std::string& s) {
      for (auto k : {ComputeKind::kLocalTrain, ComputeKind::kGlobalTrain, ComputeKind::kServerInference})
        if (compute_kind_name(k) == s) return k;
      fail(ErrorCode::kParseError, "ledger: unknown compute kind '" + s + "'");
    };
    for (const auto& e : j.at("communication")) {
      out.log(CommEvent{e.at("stage").get<std::size_t>(), comm_kind(e.at("kind").get<std::string>()),
                        e.at("client").get<std::string>(), e.at("bytes").get<std::uint64_t>(),
                        e.at("count").get<std::uint64_t>()});
    }
    for (const auto& e : j.at("compute")) {
      out.log(ComputeEvent{e.at("stage").get<std::size_t>(), compute_kind(e.at("kind").get<std::string>()),
                           e.at("actor").get<std::string>(), e.at("units").get<double>(),
                           e.at("steps").get<std::uint64_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParseError, std::string("ledger: ") + e.what());
  }
  return out;
}

}  // namespace fedstill::federation
