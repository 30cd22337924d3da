#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <utility>

namespace levelk {

// Actions are numbered 1..3 (rock, paper, scissors): 2 beats 1, 3 beats 2, 1 beats 3.
enum class Action : int { rock = 1, paper = 2, scissors = 3 };

inline constexpr int kNumActions = 3;
inline constexpr int kNumOutcomes = kNumActions * kNumActions;

inline constexpr int action_value(Action a) { return static_cast<int>(a); }
inline constexpr int action_index(Action a) { return static_cast<int>(a) - 1; }

inline Action action_from_value(int value) {
  if (value < 1 || value > kNumActions)
    throw std::invalid_argument("action value out of range [1,3]: " + std::to_string(value));
  return static_cast<Action>(value);
}

inline Action action_from_index(int index) { return action_from_value(index + 1); }

// The action that beats `a` (its cyclic successor).
inline constexpr Action counter_action(Action a) {
  return static_cast<Action>(action_value(a) % kNumActions + 1);
}

// Zero-sum round payoff for `mine` against `theirs`: +1 win, -1 loss, 0 tie.
inline constexpr int payoff(Action mine, Action theirs) {
  if (mine == theirs) return 0;
  return mine == counter_action(theirs) ? 1 : -1;
}

// Joint outcome index, row-major with the human's action as the major axis.
inline int encode_outcome(Action human, Action bot) {
  return kNumActions * action_index(human) + action_index(bot);
}

inline std::pair<Action, Action> decode_outcome(int index) {
  if (index < 0 || index >= kNumOutcomes)
    throw std::out_of_range("outcome index out of range [0,9): " + std::to_string(index));
  return {action_from_index(index / kNumActions), action_from_index(index % kNumActions)};
}

inline std::array<double, kNumOutcomes> outcome_one_hot(Action human, Action bot) {
  std::array<double, kNumOutcomes> v{};
  v[encode_outcome(human, bot)] = 1.0;
  return v;
}

// One observed round of play, as stored in datasets. `reward_human` must equal
// payoff(human_action, bot_action); `deviated` marks bot actions replaced by
// uniform noise; `bot_level` is the generating level of the bot for the block.
struct RoundRecord {
  int t = 0;
  Action human_action = Action::rock;
  Action bot_action = Action::rock;
  int reward_human = 0;
  bool deviated = false;
  int bot_level = 0;
};

}  // namespace levelk
