#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fedstill/registry.hpp"
#include "fedstill/scenario.hpp"

namespace fedstill::federation {

// Who takes part in each stage, derived from the scenario's event lists.
struct StagePlan {
  std::size_t stage = 0;                  // 1-based
  std::vector<std::string> participants;  // clients added or updated this stage, sorted
  std::vector<std::string> clients;       // every client joined so far, sorted
  ClassSet new_classes;                   // classes first seen this stage
  ClassSet class_union;                   // all classes seen up to this stage
  std::set<std::string> unavailable;      // clients whose data is inaccessible during this stage
};

struct StageSchedule {
  std::vector<StagePlan> stages;

  std::size_t stage_count() const noexcept { return stages.size(); }
  const StagePlan& at(std::size_t stage) const;  // 1-based
};

StageSchedule make_schedule(const scenario::ScenarioConfig& config, const ClassRegistry& registry);

enum class CommKind { kUpload, kDownload, kRefresh };
enum class ComputeKind { kLocalTrain, kGlobalTrain, kServerInference };

std::string_view comm_kind_name(CommKind kind);
std::string_view compute_kind_name(ComputeKind kind);

// `count` identical transfers of `bytes` each. MAPCR logs one event per client
// and direction per stage with count = E.
struct CommEvent {
  std::size_t stage = 0;
  CommKind kind = CommKind::kUpload;
  std::string client;
  std::uint64_t bytes = 0;
  std::uint64_t count = 1;

  friend bool operator==(const CommEvent&, const CommEvent&) = default;
};

// `units` in O, one full training run. Server inference carries its measured
// forward-pass count in `steps`.
struct ComputeEvent {
  std::size_t stage = 0;
  ComputeKind kind = ComputeKind::kLocalTrain;
  std::string actor;
  double units = 0.0;
  std::uint64_t steps = 0;

  friend bool operator==(const ComputeEvent&, const ComputeEvent&) = default;
};

class Ledger {
 public:
  void log(CommEvent e) { comm_.push_back(std::move(e)); }
  void log(ComputeEvent e) { compute_.push_back(std::move(e)); }
  void append(const Ledger& other);

  const std::vector<CommEvent>& comm_events() const noexcept { return comm_; }
  const std::vector<ComputeEvent>& compute_events() const noexcept { return compute_; }

  std::string to_json(std::size_t stage_count) const;
  static Ledger from_json(std::string_view text);  // ParseError

  friend bool operator==(const Ledger&, const Ledger&) = default;

 private:
  std::vector<CommEvent> comm_;
  std::vector<ComputeEvent> compute_;
};

struct StageTotals {
  std::size_t stage = 0;
  std::uint64_t communications = 0;  // uploads + downloads; refreshes excluded
  std::uint64_t uploads = 0;
  std::uint64_t downloads = 0;
  std::uint64_t refreshes = 0;
  std::uint64_t bytes = 0;           // upload + download payload
  double compute_units = 0.0;
  double epsilon = 0.0;              // server-inference share of compute_units
};

std::vector<StageTotals> ledger_totals(const Ledger& ledger, std::size_t stage_count);

// Expected per-stage totals for the strategy:
//   mmds          2*|M_t| communications, (|M_t| + 1 + eps) O; nothing when M_t is empty
//   mapcr_fedavg  2*|S_t|*E communications, |S_t| O
//   centralized   no communication, 1 O
struct ClosedForm {
  std::uint64_t communications = 0;
  double compute_units = 0.0;
};
ClosedForm closed_form(scenario::Strategy strategy, const StagePlan& plan, std::size_t rounds, double epsilon);

// Server inference cost in O: each stored model runs one forward pass per
// distillation volume, and a training step (forward + backward) is counted as
// three forward passes.
double inference_fraction(std::uint64_t forward_passes, std::size_t distill_epochs, std::size_t distill_volumes);

// The ledger a run would produce, from the schedule alone. No training.
Ledger plan_ledger(const scenario::ScenarioConfig& config, scenario::Strategy strategy, std::size_t rounds);

}  // namespace fedstill::federation
