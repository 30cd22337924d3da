#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "levelk/data.hpp"
#include "levelk/probes.hpp"
#include "levelk/train.hpp"

namespace levelk {

inline constexpr int kRunConfigSchemaVersion = 1;

struct NnConfig {
  int hidden_size = 50;
  int window_length = 8;
  double validation_fraction = 0.1;  // share of training blocks held out
  double forget_bias = 1.0;
  TrainOptions train;  // batch 16, lr 0.01, patience 10, max 200 epochs
};

struct ProbeConfig {
  ProbeSource source = ProbeSource::hidden;
  ProbeOptions options;  // hidden 16, 300 epochs, l2 1e-4, lr 0.01
};

// Everything a run depends on. Two runs with an equal RunConfig produce
// byte-identical artifacts; per-stage randomness comes from streams derived
// off `seed`, never from global state.
struct RunConfig {
  std::uint64_t seed = 12345;
  int subjects = 100;
  SimConfig sim;
  BayesOptions bayes;  // the observer compared against the probes
  double train_fraction = 0.8;
  NnConfig nn;
  ProbeConfig probe;
  std::vector<TargetMode> target_modes = {TargetMode::bot_action, TargetMode::human_action,
                                          TargetMode::outcome};
  int splice_cut = kDefaultSpliceCut;
};

inline void to_json(json& j, const AdamOptions& o) {
  j = json{{"learning_rate", o.learning_rate},
           {"beta1", o.beta1},
           {"beta2", o.beta2},
           {"epsilon", o.epsilon}};
}

inline void from_json(const json& j, AdamOptions& o) {
  o = AdamOptions{};
  if (j.contains("learning_rate")) j.at("learning_rate").get_to(o.learning_rate);
  if (j.contains("beta1")) j.at("beta1").get_to(o.beta1);
  if (j.contains("beta2")) j.at("beta2").get_to(o.beta2);
  if (j.contains("epsilon")) j.at("epsilon").get_to(o.epsilon);
}

inline void to_json(json& j, const NnConfig& c) {
  j = json{{"hidden_size", c.hidden_size},
           {"window_length", c.window_length},
           {"validation_fraction", c.validation_fraction},
           {"forget_bias", c.forget_bias},
           {"batch_size", c.train.batch_size},
           {"max_epochs", c.train.max_epochs},
           {"patience", c.train.patience},
           {"divergence_factor", c.train.divergence_factor},
           {"adam", c.train.adam}};
}

inline void from_json(const json& j, NnConfig& c) {
  c = NnConfig{};
  if (j.contains("hidden_size")) j.at("hidden_size").get_to(c.hidden_size);
  if (j.contains("window_length")) j.at("window_length").get_to(c.window_length);
  if (j.contains("validation_fraction")) j.at("validation_fraction").get_to(c.validation_fraction);
  if (j.contains("forget_bias")) j.at("forget_bias").get_to(c.forget_bias);
  if (j.contains("batch_size")) j.at("batch_size").get_to(c.train.batch_size);
  if (j.contains("max_epochs")) j.at("max_epochs").get_to(c.train.max_epochs);
  if (j.contains("patience")) j.at("patience").get_to(c.train.patience);
  if (j.contains("divergence_factor")) j.at("divergence_factor").get_to(c.train.divergence_factor);
  if (j.contains("adam")) j.at("adam").get_to(c.train.adam);
  if (c.hidden_size < 1) throw std::invalid_argument("nn.hidden_size must be positive");
  if (c.window_length < 1) throw std::invalid_argument("nn.window_length must be positive");
  if (c.validation_fraction <= 0.0 || c.validation_fraction >= 1.0)
    throw std::invalid_argument("nn.validation_fraction must lie strictly between 0 and 1");
}

inline void to_json(json& j, const ProbeConfig& c) {
  j = json{{"source", probe_source_name(c.source)},
           {"hidden_size", c.options.hidden_size},
           {"epochs", c.options.epochs},
           {"l2", c.options.l2},
           {"adam", c.options.adam}};
}

inline void from_json(const json& j, ProbeConfig& c) {
  c = ProbeConfig{};
  if (j.contains("source")) c.source = probe_source_from_name(j.at("source").get<std::string>());
  if (j.contains("hidden_size")) j.at("hidden_size").get_to(c.options.hidden_size);
  if (j.contains("epochs")) j.at("epochs").get_to(c.options.epochs);
  if (j.contains("l2")) j.at("l2").get_to(c.options.l2);
  if (j.contains("adam")) j.at("adam").get_to(c.options.adam);
  if (c.options.hidden_size < 1) throw std::invalid_argument("probe.hidden_size must be positive");
  if (c.options.epochs < 1) throw std::invalid_argument("probe.epochs must be positive");
  if (c.options.l2 < 0.0) throw std::invalid_argument("probe.l2 must be non-negative");
}

inline void to_json(json& j, const RunConfig& c) {
  json modes = json::array();
  for (TargetMode m : c.target_modes) modes.push_back(target_mode_name(m));
  j = json{{"schema_version", kRunConfigSchemaVersion},
           {"seed", c.seed},
           {"subjects", c.subjects},
           {"sim", c.sim},
           {"bayes", c.bayes},
           {"train_fraction", c.train_fraction},
           {"nn", c.nn},
           {"probe", c.probe},
           {"target_modes", modes},
           {"splice_cut", c.splice_cut}};
}

inline void from_json(const json& j, RunConfig& c) {
  c = RunConfig{};
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("subjects")) j.at("subjects").get_to(c.subjects);
  if (j.contains("sim")) j.at("sim").get_to(c.sim);
  if (j.contains("bayes")) j.at("bayes").get_to(c.bayes);
  if (j.contains("train_fraction")) j.at("train_fraction").get_to(c.train_fraction);
  if (j.contains("nn")) j.at("nn").get_to(c.nn);
  if (j.contains("probe")) j.at("probe").get_to(c.probe);
  if (j.contains("target_modes")) {
    c.target_modes.clear();
    for (const json& m : j.at("target_modes"))
      c.target_modes.push_back(target_mode_from_name(m.get<std::string>()));
    if (c.target_modes.empty()) throw std::invalid_argument("target_modes must not be empty");
  }
  if (j.contains("splice_cut")) j.at("splice_cut").get_to(c.splice_cut);
  if (c.subjects < 2) throw std::invalid_argument("subjects must be at least 2 to split");
  if (c.train_fraction <= 0.0 || c.train_fraction >= 1.0)
    throw std::invalid_argument("train_fraction must lie strictly between 0 and 1");
  if (c.splice_cut < 1 || c.splice_cut >= kSeriesLength - 1)
    throw std::invalid_argument("splice_cut must lie in [1," + std::to_string(kSeriesLength - 2) + "]");
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  const json j = json::parse(in);
  const int version = j.value("schema_version", kRunConfigSchemaVersion);
  if (version != kRunConfigSchemaVersion)
    throw std::runtime_error(path + ": config schema version " + std::to_string(version) +
                             " unsupported (expected " + std::to_string(kRunConfigSchemaVersion) + ")");
  return j.get<RunConfig>();
}

inline void save_run_config(const std::string& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << json(c).dump(2) << "\n";
}

}  // namespace levelk
