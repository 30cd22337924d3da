#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "levelk/game.hpp"
#include "levelk/rng.hpp"

namespace levelk {

struct PolicyDistribution {
  std::array<double, kNumActions> probs{1.0 / 3, 1.0 / 3, 1.0 / 3};

  double prob(Action a) const { return probs[action_index(a)]; }
};

inline PolicyDistribution uniform_policy() { return {}; }

inline bool is_valid_policy(const PolicyDistribution& p, double tol = 1e-12) {
  double sum = 0.0;
  for (double v : p.probs) {
    if (!(v >= 0.0)) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) <= tol;
}

// One per-round history from a single player's point of view.
struct GameHistory {
  std::vector<Action> own_actions;
  std::vector<Action> opp_actions;
};

inline GameHistory swapped(const GameHistory& h) { return {h.opp_actions, h.own_actions}; }

// Behavioral parameters of one level-k player. `base_policy` is what a level-0
// player actually plays; `memory` bounds the history window used by level >= 1;
// `inverse_noise` is the softmax sharpness m; `deviation_rate` is the chance a
// bot move is replaced by uniform noise.
struct AgentConfig {
  int level = 0;
  PolicyDistribution base_policy{{0.5, 0.25, 0.25}};
  int memory = 5;
  double inverse_noise = 1e3;
  double deviation_rate = 0.1;
  bool adaptive_deviation = false;
};

// Frequency of each action over the last `memory` entries; uniform when empty.
inline PolicyDistribution empirical_frequency(const std::vector<Action>& actions, int memory) {
  if (memory < 1) throw std::invalid_argument("memory must be >= 1, got " + std::to_string(memory));
  if (actions.empty()) return uniform_policy();
  const std::size_t n = std::min<std::size_t>(actions.size(), static_cast<std::size_t>(memory));
  PolicyDistribution out;
  out.probs.fill(0.0);
  for (std::size_t i = actions.size() - n; i < actions.size(); ++i)
    out.probs[action_index(actions[i])] += 1.0;
  for (double& v : out.probs) v /= static_cast<double>(n);
  return out;
}

// Expected payoff of each of my actions against an opponent mixture.
inline std::array<double, kNumActions> expected_payoffs(const PolicyDistribution& opponent) {
  std::array<double, kNumActions> out{};
  for (int i = 0; i < kNumActions; ++i) {
    double sum = 0.0;
    for (int j = 0; j < kNumActions; ++j)
      sum += opponent.probs[j] * payoff(action_from_index(i), action_from_index(j));
    out[i] = sum;
  }
  return out;
}

// Softmax response p(a) proportional to exp(m * payoff(a)); max-shifted so that
// m up to 1e6 cannot overflow. m = 0 yields the uniform policy.
inline PolicyDistribution softmax_policy(const std::array<double, kNumActions>& payoffs, double inverse_noise) {
  if (!(inverse_noise >= 0.0)) throw std::invalid_argument("inverse_noise must be >= 0");
  double zmax = payoffs[0];
  for (double v : payoffs) zmax = std::max(zmax, v);
  PolicyDistribution out;
  double sum = 0.0;
  for (int i = 0; i < kNumActions; ++i) {
    out.probs[i] = std::exp(inverse_noise * (payoffs[i] - zmax));
    sum += out.probs[i];
  }
  for (double& v : out.probs) v /= sum;
  return out;
}

// Levels beyond this only re-encode the 3-cycle; reject to bound the recursion.
inline constexpr int kMaxLevel = 8;

namespace detail {

// Policy a level-j opponent is assumed to play, seen from that opponent's side.
// The base of the recursion is the *empirical* estimate of the modeled player's
// own past actions, so odd k conditions on opponent actions and even k on own
// actions once unwound.
inline PolicyDistribution assumed_policy(int j, const GameHistory& hist, const AgentConfig& cfg) {
  if (j == 0) return empirical_frequency(hist.own_actions, cfg.memory);
  const PolicyDistribution below = assumed_policy(j - 1, swapped(hist), cfg);
  return softmax_policy(expected_payoffs(below), cfg.inverse_noise);
}

}  // namespace detail

// Mixed strategy of a level-k player holding `history`. Level 0 plays its base
// policy outright; level k >= 1 soft-best-responds to the assumed level-(k-1)
// opponent.
inline PolicyDistribution level_policy(int k, const GameHistory& history, const AgentConfig& cfg) {
  if (k < 0) throw std::invalid_argument("level must be >= 0");
  if (k > kMaxLevel) throw std::invalid_argument("level " + std::to_string(k) + " exceeds max supported level " + std::to_string(kMaxLevel));
  if (k == 0) return cfg.base_policy;
  const PolicyDistribution opponent = detail::assumed_policy(k - 1, swapped(history), cfg);
  return softmax_policy(expected_payoffs(opponent), cfg.inverse_noise);
}

inline Action sample_action(const PolicyDistribution& p, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (int i = 0; i < kNumActions; ++i) {
    acc += p.probs[i];
    if (u < acc) return action_from_index(i);
  }
  return Action::scissors;  // u landed in the rounding slack at the top
}

struct BotChoice {
  Action action = Action::rock;
  bool deviated = false;
};

// One bot move: with probability deviation_rate the level policy is replaced by
// a uniform draw and flagged. Always consumes exactly two RNG draws.
inline BotChoice bot_step(const AgentConfig& cfg, const GameHistory& history, Rng& rng) {
  if (cfg.deviation_rate < 0.0 || cfg.deviation_rate > 1.0)
    throw std::invalid_argument("deviation_rate must lie in [0,1]");
  const double gate = uniform01(rng);
  if (gate < cfg.deviation_rate) return {sample_action(uniform_policy(), rng), true};
  return {sample_action(level_policy(cfg.level, history, cfg), rng), false};
}

// One move of the simulated opponent: it mixes the bot's level policies by its
// current belief, then soft-best-responds with its own sharpness. `history` is
// the player's own view; `opponent_model` carries the bot-side parameters used
// inside the level recursion (f0, memory, m).
inline Action simulated_human_step(const std::array<double, 4>& level_belief,
                                   const GameHistory& history,
                                   const AgentConfig& own_cfg,
                                   const AgentConfig& opponent_model,
                                   Rng& rng) {
  PolicyDistribution mixture;
  mixture.probs.fill(0.0);
  for (int k = 0; k < 4; ++k) {
    const PolicyDistribution pk = level_policy(k, swapped(history), opponent_model);
    for (int i = 0; i < kNumActions; ++i) mixture.probs[i] += level_belief[k] * pk.probs[i];
  }
  const PolicyDistribution response = softmax_policy(expected_payoffs(mixture), own_cfg.inverse_noise);
  return sample_action(response, rng);
}

}  // namespace levelk
