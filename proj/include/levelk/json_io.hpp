#pragma once

#include <nlohmann/json.hpp>

#include "levelk/agents.hpp"
#include "levelk/bayes.hpp"

// JSON bindings for the domain configuration types (ADL hooks for nlohmann).

namespace levelk {

using nlohmann::json;

inline void to_json(json& j, const PolicyDistribution& p) { j = p.probs; }

inline void from_json(const json& j, PolicyDistribution& p) {
  j.get_to(p.probs);
  if (!is_valid_policy(p, 1e-9))
    throw std::invalid_argument("policy distribution must be non-negative and sum to 1: " + j.dump());
}

inline void to_json(json& j, const AgentConfig& c) {
  j = json{{"level", c.level},
           {"base_policy", c.base_policy},
           {"memory", c.memory},
           {"inverse_noise", c.inverse_noise},
           {"deviation_rate", c.deviation_rate},
           {"adaptive_deviation", c.adaptive_deviation}};
}

inline void from_json(const json& j, AgentConfig& c) {
  c = AgentConfig{};
  if (j.contains("level")) j.at("level").get_to(c.level);
  if (j.contains("base_policy")) j.at("base_policy").get_to(c.base_policy);
  if (j.contains("memory")) j.at("memory").get_to(c.memory);
  if (j.contains("inverse_noise")) j.at("inverse_noise").get_to(c.inverse_noise);
  if (j.contains("deviation_rate")) j.at("deviation_rate").get_to(c.deviation_rate);
  if (j.contains("adaptive_deviation")) j.at("adaptive_deviation").get_to(c.adaptive_deviation);
  if (c.memory < 1) throw std::invalid_argument("agent memory must be >= 1");
  if (c.deviation_rate < 0.0 || c.deviation_rate > 1.0)
    throw std::invalid_argument("deviation_rate must lie in [0,1]");
  if (c.inverse_noise < 0.0) throw std::invalid_argument("inverse_noise must be >= 0");
}

inline void to_json(json& j, const BayesOptions& o) {
  j = json{{"likelihood_floor", o.likelihood_floor}};
  j["observer_inverse_noise"] =
      o.observer_inverse_noise ? json(*o.observer_inverse_noise) : json(nullptr);
}

inline void from_json(const json& j, BayesOptions& o) {
  o = BayesOptions{};
  if (j.contains("likelihood_floor")) j.at("likelihood_floor").get_to(o.likelihood_floor);
  if (j.contains("observer_inverse_noise") && !j.at("observer_inverse_noise").is_null())
    o.observer_inverse_noise = j.at("observer_inverse_noise").get<double>();
}

}  // namespace levelk
