#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "levelk/experiments.hpp"

using namespace levelk;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

namespace fs = std::filesystem;

// Fresh directory per test, removed on scope exit.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.seed = 4242;
  cfg.subjects = 6;
  cfg.nn.hidden_size = 12;
  cfg.nn.train.max_epochs = 6;
  cfg.nn.train.patience = 3;
  cfg.probe.options.epochs = 40;
  cfg.target_modes = {TargetMode::bot_action, TargetMode::outcome};
  return cfg;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Always predicts `winner`: zero recurrent weights, biased readout.
SequenceModel constant_predictor(int classes, int winner) {
  SequenceModel m = zeros_model(kNumOutcomes, 4, classes);
  m.readout.b[winner] = 1.0;
  return m;
}

WindowSample window_with_target(int target, bool deviated) {
  WindowSample w;
  w.input = Eigen::MatrixXd::Zero(8, kNumOutcomes);
  w.target = target;
  w.deviated_target = deviated;
  return w;
}

}  // namespace

TEST_CASE("run config round-trips through JSON", "[experiments]") {
  RunConfig cfg = tiny_config();
  cfg.sim.bot.inverse_noise = 12.5;
  cfg.sim.human.deviation_rate = 0.0;
  cfg.bayes.likelihood_floor = 1e-3;
  cfg.probe.source = ProbeSource::concat;
  cfg.splice_cut = 9;

  TempDir dir("levelk_cfg_roundtrip");
  const std::string path = (dir.path / "config.json").string();
  save_run_config(path, cfg);
  const RunConfig back = load_run_config(path);
  CHECK(json(back) == json(cfg));
}

TEST_CASE("run config rejects bad input", "[experiments]") {
  TempDir dir("levelk_cfg_bad");
  const std::string path = (dir.path / "config.json").string();

  SECTION("unsupported schema version") {
    std::ofstream(path) << R"({"schema_version": 99})";
    CHECK_THROWS_WITH(load_run_config(path), ContainsSubstring("schema version 99"));
  }
  SECTION("unknown target mode") {
    std::ofstream(path) << R"({"target_modes": ["bot", "banana"]})";
    CHECK_THROWS_WITH(load_run_config(path), ContainsSubstring("banana"));
  }
  SECTION("empty target modes") {
    std::ofstream(path) << R"({"target_modes": []})";
    CHECK_THROWS_WITH(load_run_config(path), ContainsSubstring("target_modes"));
  }
  SECTION("degenerate split") {
    std::ofstream(path) << R"({"subjects": 1})";
    CHECK_THROWS_WITH(load_run_config(path), ContainsSubstring("subjects"));
  }
  SECTION("train fraction out of range") {
    std::ofstream(path) << R"({"train_fraction": 1.0})";
    CHECK_THROWS_WITH(load_run_config(path), ContainsSubstring("train_fraction"));
  }
  SECTION("splice cut out of range") {
    std::ofstream(path) << R"({"splice_cut": 35})";
    CHECK_THROWS_WITH(load_run_config(path), ContainsSubstring("splice_cut"));
  }
  SECTION("missing file") {
    CHECK_THROWS_WITH(load_run_config((dir.path / "nope.json").string()),
                      ContainsSubstring("cannot open"));
  }
}

TEST_CASE("evaluate_accuracy scores argmax hits with optional deviation filter", "[experiments]") {
  const SequenceModel model = constant_predictor(kNumActions, 1);
  std::vector<WindowSample> windows;
  // 6 clean windows, 4 with target 1; 4 deviated windows, 1 with target 1
  for (int target : {1, 1, 1, 1, 0, 2}) windows.push_back(window_with_target(target, false));
  for (int target : {1, 0, 0, 2}) windows.push_back(window_with_target(target, true));

  const AccuracyResult incl = evaluate_accuracy(model, windows, false);
  CHECK(incl.used == 10);
  CHECK(incl.total == 10);
  CHECK_THAT(incl.accuracy, WithinAbs(0.5, 1e-15));

  const AccuracyResult excl = evaluate_accuracy(model, windows, true);
  CHECK(excl.used == 6);
  CHECK(excl.total == 10);
  CHECK_THAT(excl.accuracy, WithinAbs(4.0 / 6.0, 1e-15));
}

TEST_CASE("evaluate_accuracy rejects empty input", "[experiments]") {
  const SequenceModel model = constant_predictor(kNumActions, 0);
  CHECK_THROWS_AS(evaluate_accuracy(model, {}, false), std::invalid_argument);

  std::vector<WindowSample> all_deviated(3, window_with_target(0, true));
  CHECK_THROWS_WITH(evaluate_accuracy(model, all_deviated, true), ContainsSubstring("excluded"));
}

TEST_CASE("pipeline produces every artifact with consistent shapes", "[experiments]") {
  const RunConfig cfg = tiny_config();
  TempDir dir("levelk_pipeline_e2e");
  run_pipeline(cfg, dir.str());

  for (const char* name :
       {"dataset.csv", "manifest.json", "config.json", "model_bot.json", "model_outcome.json",
        "loss_history_bot.csv", "loss_history_outcome.csv", "probes_bot.json", "curves_confidence.csv",
        "curves_confidence_series.csv", "curves_splice.csv", "splice_lags.csv",
        "posteriors_test.csv", "posteriors_splices.csv", "bayes_probe_compare.csv",
        "metrics.json"}) {
    INFO(name);
    CHECK(fs::exists(dir.path / name));
  }

  std::ifstream in(dir.path / "metrics.json");
  const json metrics = json::parse(in);

  // chance baselines are the exact class reciprocals, never re-simulated
  CHECK(metrics.at("chance").at("action").get<double>() == 1.0 / 3.0);
  CHECK(metrics.at("chance").at("outcome").get<double>() == 1.0 / 9.0);
  CHECK(metrics.at("reference_accuracies").at("bot").get<double>() == 0.92);
  CHECK(metrics.at("evaluate").at("bot").at("chance").get<double>() == 1.0 / 3.0);
  CHECK(metrics.at("evaluate").at("outcome").at("chance").get<double>() == 1.0 / 9.0);
  CHECK(metrics.at("config") == json(cfg));

  const int test_series = metrics.at("bayes").at("test_series").get<int>();
  const int n_splices = metrics.at("splice").at("n_splices").get<int>();
  REQUIRE(test_series > 0);
  REQUIRE(n_splices > 0);

  // every figure CSV covers all series at all timesteps, plus a header
  CHECK(count_lines(dir.path / "curves_confidence.csv") == 36 * 3 + 1);
  CHECK(count_lines(dir.path / "curves_confidence_series.csv") ==
        static_cast<std::size_t>(test_series) * 36 + 1);
  CHECK(count_lines(dir.path / "posteriors_test.csv") ==
        static_cast<std::size_t>(test_series) * 36 + 1);
  CHECK(count_lines(dir.path / "bayes_probe_compare.csv") ==
        static_cast<std::size_t>(test_series) * 36 + 1);
  CHECK(count_lines(dir.path / "splice_lags.csv") == static_cast<std::size_t>(n_splices) + 1);
  CHECK(count_lines(dir.path / "posteriors_splices.csv") ==
        static_cast<std::size_t>(n_splices) * 35 + 1);
  const int n_transitions = static_cast<int>(metrics.at("splice").at("by_transition").size());
  CHECK(count_lines(dir.path / "curves_splice.csv") ==
        static_cast<std::size_t>(n_transitions) * 35 * kNumLevels + 1);

  // per-mode training metadata made it into the report
  for (const char* mode : {"bot", "outcome"}) {
    INFO(mode);
    CHECK(metrics.at("train").at(mode).contains("best_val_loss"));
    CHECK(metrics.at("evaluate").at(mode).at("accuracy").get<double>() >= 0.0);
  }
  CHECK(metrics.at("probe").at("argmax_accuracy_per_t").size() == 36);
  CHECK(metrics.at("bayes").at("mean_abs_diff_per_t").size() == 36);

  // splice lags never exceed the post-cut horizon
  const int horizon = 35 - cfg.splice_cut;
  for (const auto& [key, entry] : metrics.at("splice").at("by_transition").items()) {
    INFO(key);
    CHECK(entry.at("probe_mean_lag").get<double>() <= horizon);
    CHECK(entry.at("bayes_mean_lag").get<double>() <= horizon);
    CHECK(entry.at("probe_mean_curve_lag").get<int>() <= horizon);
  }
}

TEST_CASE("pipeline is byte-reproducible for a fixed config", "[experiments]") {
  const RunConfig cfg = tiny_config();
  TempDir a("levelk_repro_a");
  TempDir b("levelk_repro_b");
  run_pipeline(cfg, a.str());
  run_pipeline(cfg, b.str());
  for (const auto& entry : fs::directory_iterator(a.path)) {
    const auto name = entry.path().filename();
    INFO(name.string());
    CHECK(read_bytes(entry.path()) == read_bytes(b.path / name));
  }

  RunConfig reseeded = cfg;
  reseeded.seed += 1;
  TempDir c("levelk_repro_c");
  run_pipeline(reseeded, c.str());
  CHECK(read_bytes(a.path / "dataset.csv") != read_bytes(c.path / "dataset.csv"));
  CHECK(read_bytes(a.path / "metrics.json") != read_bytes(c.path / "metrics.json"));
}

TEST_CASE("stages fail loudly when their inputs are missing", "[experiments]") {
  const RunConfig cfg = tiny_config();

  SECTION("train before simulate") {
    TempDir dir("levelk_stage_missing1");
    CHECK_THROWS_MATCHES(stage_train(cfg, dir.str()), StageError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("simulate")));
  }
  SECTION("evaluate before train") {
    TempDir dir("levelk_stage_missing2");
    stage_simulate(cfg, dir.str());
    try {
      stage_evaluate(cfg, dir.str());
      FAIL("expected StageError");
    } catch (const StageError& e) {
      CHECK(e.stage == "evaluate");
      CHECK_THAT(e.what(), ContainsSubstring("model_bot.json"));
      CHECK_THAT(e.what(), ContainsSubstring("train"));
    }
  }
  SECTION("splice before probe") {
    TempDir dir("levelk_stage_missing3");
    stage_simulate(cfg, dir.str());
    stage_train(cfg, dir.str());
    CHECK_THROWS_MATCHES(stage_splice(cfg, dir.str()), StageError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("probes_bot.json")));
  }
  SECTION("report on an empty directory") {
    TempDir dir("levelk_stage_missing4");
    try {
      stage_report(cfg, dir.str());
      FAIL("expected StageError");
    } catch (const StageError& e) {
      CHECK(e.stage == "report");
      CHECK_THAT(e.what(), ContainsSubstring("simulate"));
    }
  }
  SECTION("probing requires the bot model to be in scope") {
    RunConfig no_bot = cfg;
    no_bot.target_modes = {TargetMode::outcome};
    TempDir dir("levelk_stage_missing5");
    stage_simulate(no_bot, dir.str());
    stage_train(no_bot, dir.str());
    CHECK_THROWS_MATCHES(stage_probe(no_bot, dir.str()), StageError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("bot")));
  }
}

TEST_CASE("compare_bayes_probe pairs trajectories step for step", "[experiments]") {
  RunConfig cfg = tiny_config();
  cfg.target_modes = {TargetMode::bot_action};
  TempDir dir("levelk_compare_unit");
  stage_simulate(cfg, dir.str());
  stage_train(cfg, dir.str());
  stage_evaluate(cfg, dir.str());
  stage_probe(cfg, dir.str());

  const std::vector<Block> blocks = import_dataset_csv((dir.path / "dataset.csv").string()).blocks;
  const SplitResult split = pipeline_split(cfg, blocks);
  const std::vector<Series> test_series = segment_all(split.test);
  const SequenceModel model = load_model((dir.path / "model_bot.json").string());
  const ProbeBank bank = load_probe_bank((dir.path / "probes_bot.json").string());

  const BayesProbeComparison cmp =
      compare_bayes_probe(test_series, model, bank, cfg.probe.source, cfg.sim.bot, cfg.bayes);
  REQUIRE(cmp.bayes.size() == test_series.size());
  REQUIRE(cmp.probe.size() == test_series.size());
  REQUIRE(cmp.mean_abs_diff.size() == 36);
  CHECK(cmp.final_argmax_agreement >= 0.0);
  CHECK(cmp.final_argmax_agreement <= 1.0);
  for (std::size_t s = 0; s < cmp.bayes.size(); ++s) {
    CHECK(cmp.bayes[s].rows() == 36);
    CHECK(cmp.probe[s].rows() == 36);
    for (Eigen::Index t = 0; t < 36; ++t) {
      CHECK_THAT(cmp.bayes[s].row(t).sum(), WithinAbs(1.0, 1e-12));
      CHECK_THAT(cmp.probe[s].row(t).sum(), WithinAbs(1.0, 1e-12));
    }
  }
  // the diff statistic is bounded by construction: mean of |p - q| entries
  for (double d : cmp.mean_abs_diff) {
    CHECK(d >= 0.0);
    CHECK(d <= 0.5);
  }
}
