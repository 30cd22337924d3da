#include <cstdint>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "levelk/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"level-k opponent simulation, sequence models, probes, and reports"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;

  using Stage = void (*)(const levelk::RunConfig&, const std::string&);
  const std::map<std::string, std::pair<const char*, Stage>> stages{
      {"simulate", {"generate the synthetic dataset (dataset.csv, manifest.json)",
                    levelk::stage_simulate}},
      {"train", {"fit one sequence model per target mode", levelk::stage_train}},
      {"evaluate", {"test-set accuracies per target mode", levelk::stage_evaluate}},
      {"probe", {"per-timestep level decoders on the bot model", levelk::stage_probe}},
      {"splice", {"adaptation lags on mid-series level switches", levelk::stage_splice}},
      {"bayes", {"exact posterior trajectories and probe comparison", levelk::stage_bayes}},
      {"report", {"merge stage outputs into metrics.json", levelk::stage_report}},
      {"run-all", {"all of the above, in order", nullptr}},
  };
  for (const auto& [name, entry] : stages) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--config", config_path, "JSON run configuration (defaults apply when omitted)")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the master seed")
        ->each([&](const std::string&) { seed_set = true; });
    sub->add_option("--out", out_dir, "artifact directory")->capture_default_str();
  }

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    levelk::RunConfig cfg;
    if (!config_path.empty()) cfg = levelk::load_run_config(config_path);
    if (seed_set) cfg.seed = seed;
    if (command == "run-all") {
      levelk::run_pipeline(cfg, out_dir, &std::cout);
    } else {
      stages.at(command).second(cfg, out_dir);
      std::cout << command << ": ok (" << out_dir << ")\n";
    }
  } catch (const levelk::StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
