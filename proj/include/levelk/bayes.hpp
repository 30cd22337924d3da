#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "levelk/agents.hpp"
#include "levelk/game.hpp"

namespace levelk {

inline constexpr int kNumLevels = 4;  // hypothesis space: levels 0..3

struct BeliefState {
  std::array<double, kNumLevels> probs{0.25, 0.25, 0.25, 0.25};
};

inline BeliefState uniform_belief() { return {}; }

inline bool is_valid_belief(const BeliefState& b, double tol = 1e-12) {
  double sum = 0.0;
  for (double v : b.probs) {
    if (!(v >= 0.0)) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) <= tol;
}

// Per-level predicted mixed strategies of the observed player for the next move.
struct LevelLikelihoods {
  std::array<PolicyDistribution, kNumLevels> per_level;
};

// Row k is the policy a level-k player would hold given the observed player's
// history (that player's own view).
inline LevelLikelihoods level_likelihoods(const GameHistory& observed_history, const AgentConfig& cfg) {
  LevelLikelihoods out;
  for (int k = 0; k < kNumLevels; ++k) out.per_level[k] = level_policy(k, observed_history, cfg);
  return out;
}

// Mix every row with the uniform policy; keeps all likelihoods >= floor/3 so a
// converged posterior can still escape.
inline LevelLikelihoods apply_likelihood_floor(LevelLikelihoods lik, double floor) {
  if (floor < 0.0 || floor > 1.0) throw std::invalid_argument("likelihood floor must lie in [0,1]");
  if (floor == 0.0) return lik;
  for (auto& row : lik.per_level)
    for (double& v : row.probs) v = (1.0 - floor) * v + floor / kNumActions;
  return lik;
}

struct BayesUpdate {
  BeliefState posterior;
  bool degenerate = false;  // all levels assigned zero mass to the observation
};

// Exact posterior over levels after observing one action. A zero marginal
// leaves the prior untouched and flags the update instead of dividing by zero.
inline BayesUpdate bayes_update(const BeliefState& prior, Action observed, const LevelLikelihoods& lik) {
  double marginal = 0.0;
  for (int k = 0; k < kNumLevels; ++k) marginal += prior.probs[k] * lik.per_level[k].prob(observed);
  if (marginal <= 0.0) return {prior, true};
  BayesUpdate out;
  for (int k = 0; k < kNumLevels; ++k)
    out.posterior.probs[k] = prior.probs[k] * lik.per_level[k].prob(observed) / marginal;
  return out;
}

// Sequential belief accumulator in log space. With sharp policies (m ~ 1e3)
// per-round likelihood ratios reach e^{+-200}; linear weights would underflow
// and freeze a level at exactly zero, which the exact posterior never does.
class BeliefTracker {
 public:
  BeliefTracker() { log_w_.fill(std::log(0.25)); }

  BeliefState current() const {
    double zmax = log_w_[0];
    for (double v : log_w_) zmax = std::max(zmax, v);
    BeliefState out;
    double sum = 0.0;
    for (int k = 0; k < kNumLevels; ++k) {
      out.probs[k] = std::exp(log_w_[k] - zmax);
      sum += out.probs[k];
    }
    for (double& v : out.probs) v /= sum;
    return out;
  }

  // Returns false (and keeps the state) when every level gives the observation
  // zero probability.
  bool observe(const LevelLikelihoods& lik, Action observed) {
    std::array<double, kNumLevels> next = log_w_;
    bool any_finite = false;
    for (int k = 0; k < kNumLevels; ++k) {
      const double p = lik.per_level[k].prob(observed);
      next[k] += p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
      if (std::isfinite(next[k])) any_finite = true;
    }
    if (!any_finite) return false;
    double zmax = -std::numeric_limits<double>::infinity();
    for (double v : next) zmax = std::max(zmax, v);
    for (double& v : next) v -= zmax;  // renormalize so long products stay bounded
    log_w_ = next;
    return true;
  }

 private:
  std::array<double, kNumLevels> log_w_;
};

enum class Observe { bot, human };

struct BayesOptions {
  double likelihood_floor = 0.0;
  std::optional<double> observer_inverse_noise;  // defaults to the observed player's m
};

struct PosteriorTrajectory {
  std::vector<BeliefState> entering;  // entering[t] = belief *before* round t's observation
  BeliefState final;                  // belief after the last observation
  int degenerate_updates = 0;

  // Belief once round t has been observed (the state comparable with any
  // decoder that has consumed rounds 0..t).
  const BeliefState& after(std::size_t t) const {
    return t + 1 < entering.size() ? entering[t + 1] : final;
  }
};

// Replays `rounds` and infers the designated player's level. entering[0] is the
// uniform prior; each later entry folds in all earlier observations of that
// player's actions, with likelihoods computed from the history available at the
// time.
inline PosteriorTrajectory posterior_trajectory(const std::vector<RoundRecord>& rounds,
                                                const AgentConfig& cfg,
                                                Observe who,
                                                const BayesOptions& options = {}) {
  if (rounds.empty()) throw std::invalid_argument("posterior_trajectory requires a non-empty round sequence");
  AgentConfig eff = cfg;
  if (options.observer_inverse_noise) eff.inverse_noise = *options.observer_inverse_noise;
  PosteriorTrajectory out;
  out.entering.reserve(rounds.size());
  BeliefTracker tracker;
  GameHistory hist;  // observed player's view
  for (const RoundRecord& r : rounds) {
    out.entering.push_back(tracker.current());
    const LevelLikelihoods lik =
        apply_likelihood_floor(level_likelihoods(hist, eff), options.likelihood_floor);
    const Action own = who == Observe::bot ? r.bot_action : r.human_action;
    const Action opp = who == Observe::bot ? r.human_action : r.bot_action;
    if (!tracker.observe(lik, own)) ++out.degenerate_updates;
    hist.own_actions.push_back(own);
    hist.opp_actions.push_back(opp);
  }
  out.final = tracker.current();
  return out;
}

}  // namespace levelk
