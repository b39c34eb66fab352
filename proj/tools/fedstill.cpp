// fedstill: generate data, run federated scenarios, evaluate and report.

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "fedstill/commands.hpp"
#include "fedstill/error.hpp"

namespace fs = std::filesystem;
using namespace fedstill;

namespace {

// Accepts a file path or the name of a bundled scenario.
fs::path resolve_scenario(const std::string& arg) {
  if (fs::exists(arg)) return arg;
  const auto bundled = scenario::bundled_scenario(arg);
  if (fs::exists(bundled)) return bundled;
  fail(ErrorCode::kParseError, "no scenario file or bundled scenario named '" + arg + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated continual segmentation with server-side multi-model distillation"};
  app.require_subcommand(1);

  std::string scenario_arg, out;
  std::optional<std::uint64_t> seed;
  std::string strategy;
  std::optional<std::size_t> rounds;
  std::size_t jobs = 1;
  bool deterministic = false, cost_only = false;

  auto* gen = app.add_subcommand("gen", "Write client datasets, test splits and the distillation set");
  gen->add_option("--scenario", scenario_arg, "Scenario file or bundled name")->required();
  gen->add_option("--out", out, "Output directory")->required();

  auto* run = app.add_subcommand("run", "Run every stage and write a run directory");
  run->add_option("--scenario", scenario_arg, "Scenario file or bundled name")->required();
  run->add_option("--out", out, "Run directory")->required();
  run->add_option("--seed", seed, "Federation seed")->envname("FEDSTILL_SEED");
  run->add_option("--strategy", strategy, "mmds, mapcr_fedavg or centralized");
  run->add_option("--rounds", rounds, "MAPCR communication rounds E");
  run->add_option("--jobs", jobs, "Parallel local trainings")->check(CLI::PositiveNumber);
  run->add_flag("--deterministic", deterministic, "Single-job ordering");
  run->add_flag("--cost-only", cost_only, "Write the planned ledger without training");

  std::string run_dir;
  std::vector<std::string> datasets{"test"}, exclude;
  auto* eval = app.add_subcommand("eval", "Evaluate a run's models on test, ood or generated datasets");
  eval->add_option("--run", run_dir, "Run directory")->required();
  eval->add_option("--dataset", datasets, "test, ood, or a dataset directory from 'gen'");
  eval->add_option("--exclude", exclude, "Class to leave out of the report");

  std::vector<std::string> runs;
  auto* report = app.add_subcommand("report", "Comparison tables across run directories");
  report->add_option("--run", runs, "Run directories; the first is the reference")->required();
  report->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  return cli::guarded(
      [&] {
        if (*gen) {
          cli::generate_data(resolve_scenario(scenario_arg), out);
        } else if (*run) {
          cli::RunOptions o;
          o.seed = seed;
          if (!strategy.empty()) o.strategy = scenario::parse_strategy(strategy);
          o.rounds = rounds;
          o.jobs = jobs;
          o.deterministic = deterministic;
          o.cost_only = cost_only;
          cli::run_scenario(resolve_scenario(scenario_arg), out, o);
          std::cout << "run written to " << out << "\n";
        } else if (*eval) {
          for (const auto& p : cli::evaluate_run(run_dir, {datasets, exclude})) std::cout << p.string() << "\n";
        } else if (*report) {
          std::vector<fs::path> dirs(runs.begin(), runs.end());
          for (const auto& p : cli::report_runs(dirs, out)) std::cout << p.string() << "\n";
        }
      },
      std::cerr);
}
