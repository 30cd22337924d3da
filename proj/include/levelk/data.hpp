#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <deque>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "levelk/bayes.hpp"
#include "levelk/game.hpp"
#include "levelk/json_io.hpp"
#include "levelk/rng.hpp"

namespace levelk {

inline constexpr int kBlocksPerSession = 6;
inline constexpr int kSeriesLength = 36;
inline constexpr int kDefaultSpliceCut = 18;
inline constexpr int kManifestSchemaVersion = 1;

struct Block {
  int subject_id = 0;
  int block_id = 0;
  int bot_level = 0;
  std::vector<RoundRecord> rounds;
};

// Fixed-length prefix of a block used for learning; retains provenance.
struct Series {
  int subject_id = 0;
  int block_id = 0;
  int bot_level = 0;
  std::vector<RoundRecord> rounds;
};

// Two same-subject series joined at `cut`: rounds [0,cut) keep the first
// block's level, rounds [cut,35) the second's. Per-round records are copied
// bitwise; only the round index is re-based.
struct SpliceSeries {
  int subject_id = 0;
  int block_first = 0;
  int block_second = 0;
  int level_first = 0;
  int level_second = 0;
  int cut = kDefaultSpliceCut;
  std::vector<RoundRecord> rounds;
};

enum class TargetMode { bot_action, human_action, outcome };

inline int target_class_count(TargetMode mode) { return mode == TargetMode::outcome ? kNumOutcomes : kNumActions; }

inline std::string target_mode_name(TargetMode mode) {
  switch (mode) {
    case TargetMode::bot_action: return "bot";
    case TargetMode::human_action: return "human";
    case TargetMode::outcome: return "outcome";
  }
  throw std::logic_error("unreachable target mode");
}

inline TargetMode target_mode_from_name(const std::string& name) {
  if (name == "bot") return TargetMode::bot_action;
  if (name == "human") return TargetMode::human_action;
  if (name == "outcome") return TargetMode::outcome;
  throw std::invalid_argument("unknown target mode: " + name + " (expected bot, human, or outcome)");
}

// One supervised example: `input` holds one outcome one-hot per row for the
// window rounds; the target is the class of the round right after the window.
struct WindowSample {
  int subject_id = 0;
  int block_id = 0;
  int offset = 0;
  Eigen::MatrixXd input;  // window_length x 9
  int target = 0;
  bool deviated_target = false;
};

// ---------------------------------------------------------------------------
// Simulation

struct SimConfig {
  AgentConfig bot;    // per-block level is assigned during generation
  AgentConfig human;  // the simulated opponent's own play parameters
  double human_belief_floor = 0.0;
  std::optional<double> human_observer_inverse_noise;  // m assumed about the bot
  int rounds_per_block = 40;

  SimConfig() { human.inverse_noise = 3.0; }
};

inline void to_json(json& j, const SimConfig& c) {
  j = json{{"bot", c.bot},
           {"human", c.human},
           {"human_belief_floor", c.human_belief_floor},
           {"rounds_per_block", c.rounds_per_block}};
  j["human_observer_inverse_noise"] =
      c.human_observer_inverse_noise ? json(*c.human_observer_inverse_noise) : json(nullptr);
}

inline void from_json(const json& j, SimConfig& c) {
  c = SimConfig{};
  if (j.contains("bot")) j.at("bot").get_to(c.bot);
  if (j.contains("human")) j.at("human").get_to(c.human);
  if (j.contains("human_belief_floor")) j.at("human_belief_floor").get_to(c.human_belief_floor);
  if (j.contains("rounds_per_block")) j.at("rounds_per_block").get_to(c.rounds_per_block);
  if (j.contains("human_observer_inverse_noise") && !j.at("human_observer_inverse_noise").is_null())
    c.human_observer_inverse_noise = j.at("human_observer_inverse_noise").get<double>();
  if (c.rounds_per_block < kSeriesLength)
    throw std::invalid_argument("rounds_per_block must be >= " + std::to_string(kSeriesLength));
}

namespace detail {

// Trailing win rate of the human over the last 10 completed rounds; neutral
// (0.5) before any round has been played.
inline double trailing_win_rate(const std::deque<int>& recent_rewards) {
  if (recent_rewards.empty()) return 0.5;
  int wins = 0;
  for (int r : recent_rewards) wins += r > 0;
  return static_cast<double>(wins) / static_cast<double>(recent_rewards.size());
}

}  // namespace detail

// Simulates one subject's session: six blocks, two per level in {0,1,2}, level
// order shuffled per subject. Within a round the human samples first and the
// bot second (fixed RNG order); the human's belief over the bot's level
// advances on the bot's observed action with likelihoods computed from the
// pre-round history.
inline std::vector<Block> generate_session(const SimConfig& cfg, int subject_id, std::uint64_t master_seed) {
  if (cfg.rounds_per_block < kSeriesLength)
    throw std::invalid_argument("rounds_per_block must be >= " + std::to_string(kSeriesLength));
  Rng rng(derive_seed(master_seed, static_cast<std::uint64_t>(subject_id)));

  std::vector<int> levels = {0, 0, 1, 1, 2, 2};
  std::shuffle(levels.begin(), levels.end(), rng);

  AgentConfig observer_cfg = cfg.bot;
  if (cfg.human_observer_inverse_noise) observer_cfg.inverse_noise = *cfg.human_observer_inverse_noise;

  std::vector<Block> session;
  session.reserve(kBlocksPerSession);
  for (int b = 0; b < kBlocksPerSession; ++b) {
    Block block;
    block.subject_id = subject_id;
    block.block_id = b;
    block.bot_level = levels[b];

    AgentConfig bot_cfg = cfg.bot;
    bot_cfg.level = levels[b];

    GameHistory human_view;
    GameHistory bot_view;
    BeliefTracker belief;
    std::deque<int> recent_rewards;

    for (int t = 0; t < cfg.rounds_per_block; ++t) {
      const LevelLikelihoods lik =
          apply_likelihood_floor(level_likelihoods(bot_view, observer_cfg), cfg.human_belief_floor);

      const Action human_action =
          simulated_human_step(belief.current().probs, human_view, cfg.human, observer_cfg, rng);

      AgentConfig step_cfg = bot_cfg;
      if (bot_cfg.adaptive_deviation) {
        const double rate = 2.0 * bot_cfg.deviation_rate * detail::trailing_win_rate(recent_rewards);
        step_cfg.deviation_rate = std::clamp(rate, 0.0, 1.0);
      }
      const BotChoice bot = bot_step(step_cfg, bot_view, rng);

      RoundRecord r;
      r.t = t;
      r.human_action = human_action;
      r.bot_action = bot.action;
      r.reward_human = payoff(human_action, bot.action);
      r.deviated = bot.deviated;
      r.bot_level = levels[b];
      block.rounds.push_back(r);

      belief.observe(lik, bot.action);
      human_view.own_actions.push_back(human_action);
      human_view.opp_actions.push_back(bot.action);
      bot_view.own_actions.push_back(bot.action);
      bot_view.opp_actions.push_back(human_action);
      recent_rewards.push_back(r.reward_human);
      if (recent_rewards.size() > 10) recent_rewards.pop_front();
    }
    session.push_back(std::move(block));
  }
  return session;
}

inline std::vector<Block> generate_dataset(const SimConfig& cfg, int subjects, std::uint64_t master_seed) {
  if (subjects < 1) throw std::invalid_argument("subject count must be >= 1");
  std::vector<Block> out;
  out.reserve(static_cast<std::size_t>(subjects) * kBlocksPerSession);
  for (int s = 0; s < subjects; ++s) {
    auto session = generate_session(cfg, s, master_seed);
    std::move(session.begin(), session.end(), std::back_inserter(out));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation and windowing

// First 36 complete rounds of a block (complete = round indices contiguous
// from 0). Blocks without such a prefix are excluded by the caller.
inline std::optional<Series> segment(const Block& block) {
  std::vector<RoundRecord> sorted = block.rounds;
  std::sort(sorted.begin(), sorted.end(), [](const RoundRecord& a, const RoundRecord& b) { return a.t < b.t; });
  std::vector<RoundRecord> prefix;
  for (const RoundRecord& r : sorted) {
    if (r.t != static_cast<int>(prefix.size())) break;
    prefix.push_back(r);
    if (static_cast<int>(prefix.size()) == kSeriesLength) break;
  }
  if (static_cast<int>(prefix.size()) < kSeriesLength) return std::nullopt;
  return Series{block.subject_id, block.block_id, block.bot_level, std::move(prefix)};
}

// Segments every block, recording one message per exclusion.
inline std::vector<Series> segment_all(const std::vector<Block>& blocks, std::vector<std::string>* exclusions = nullptr) {
  std::vector<Series> out;
  for (const Block& b : blocks) {
    if (auto s = segment(b)) {
      out.push_back(std::move(*s));
    } else if (exclusions) {
      exclusions->push_back("excluded subject " + std::to_string(b.subject_id) + " block " +
                            std::to_string(b.block_id) + ": no complete " +
                            std::to_string(kSeriesLength) + "-round prefix");
    }
  }
  return out;
}

inline Eigen::MatrixXd one_hot_rows(const std::vector<RoundRecord>& rounds, int begin, int length) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(length, kNumOutcomes);
  for (int i = 0; i < length; ++i) {
    const RoundRecord& r = rounds[begin + i];
    m(i, encode_outcome(r.human_action, r.bot_action)) = 1.0;
  }
  return m;
}

inline int window_target(const RoundRecord& r, TargetMode mode) {
  switch (mode) {
    case TargetMode::bot_action: return action_index(r.bot_action);
    case TargetMode::human_action: return action_index(r.human_action);
    case TargetMode::outcome: return encode_outcome(r.human_action, r.bot_action);
  }
  throw std::logic_error("unreachable target mode");
}

// Sliding stride-1 windows over one series: input rounds [s, s+L), target
// round s+L. A series of length n yields n-L samples.
inline std::vector<WindowSample> windows(const Series& series, int window_length, TargetMode mode) {
  const int n = static_cast<int>(series.rounds.size());
  if (window_length < 1 || window_length >= n)
    throw std::invalid_argument("window length must lie in [1," + std::to_string(n - 1) + "], got " +
                                std::to_string(window_length));
  std::vector<WindowSample> out;
  out.reserve(n - window_length);
  for (int s = 0; s + window_length < n; ++s) {
    WindowSample w;
    w.subject_id = series.subject_id;
    w.block_id = series.block_id;
    w.offset = s;
    w.input = one_hot_rows(series.rounds, s, window_length);
    const RoundRecord& target_round = series.rounds[s + window_length];
    w.target = window_target(target_round, mode);
    w.deviated_target = target_round.deviated;
    out.push_back(std::move(w));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

enum class SplitUnit { by_subject, by_block };

struct SplitResult {
  std::vector<Block> train;
  std::vector<Block> test;
};

// Deterministic shuffle split. No series ever crosses the boundary: the
// assignment unit is a whole subject (default) or a whole block.
inline SplitResult split_blocks(const std::vector<Block>& blocks, double train_fraction,
                                std::uint64_t seed, SplitUnit unit = SplitUnit::by_subject) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0)
    throw std::invalid_argument("train_fraction must lie strictly between 0 and 1");
  SplitResult out;
  if (unit == SplitUnit::by_subject) {
    std::set<int> subject_set;
    for (const Block& b : blocks) subject_set.insert(b.subject_id);
    std::vector<int> subjects(subject_set.begin(), subject_set.end());
    if (subjects.size() < 2) throw std::invalid_argument("need at least 2 subjects to split by subject");
    Rng rng(derive_seed(seed, 0xa11beefull));
    std::shuffle(subjects.begin(), subjects.end(), rng);
    const auto n_train = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(subjects.size()))), 1,
        subjects.size() - 1);
    const std::set<int> train_subjects(subjects.begin(), subjects.begin() + static_cast<long>(n_train));
    for (const Block& b : blocks)
      (train_subjects.count(b.subject_id) ? out.train : out.test).push_back(b);
  } else {
    std::vector<std::size_t> order(blocks.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (order.size() < 2) throw std::invalid_argument("need at least 2 blocks to split by block");
    Rng rng(derive_seed(seed, 0xb10cull));
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(order.size()))), 1,
        order.size() - 1);
    std::set<std::size_t> train_idx(order.begin(), order.begin() + static_cast<long>(n_train));
    for (std::size_t i = 0; i < blocks.size(); ++i)
      (train_idx.count(i) ? out.train : out.test).push_back(blocks[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splices

inline SpliceSeries splice(const Block& first, const Block& second, int cut = kDefaultSpliceCut) {
  if (first.subject_id != second.subject_id)
    throw std::invalid_argument("splice requires blocks from the same subject");
  if (first.bot_level == second.bot_level)
    throw std::invalid_argument("splice requires blocks with different bot levels");
  const auto s1 = segment(first);
  const auto s2 = segment(second);
  if (!s1 || !s2) throw std::invalid_argument("splice requires blocks with a complete series prefix");
  const int length = kSeriesLength - 1;
  if (cut < 1 || cut >= length) throw std::invalid_argument("splice cut must lie in [1,34]");

  SpliceSeries out;
  out.subject_id = first.subject_id;
  out.block_first = first.block_id;
  out.block_second = second.block_id;
  out.level_first = first.bot_level;
  out.level_second = second.bot_level;
  out.cut = cut;
  out.rounds.reserve(length);
  for (int t = 0; t < length; ++t) {
    RoundRecord r = t < cut ? s1->rounds[t] : s2->rounds[t];
    r.t = t;
    out.rounds.push_back(r);
  }
  return out;
}

// All ordered cross-level block pairings within each subject.
inline std::vector<SpliceSeries> make_splices(const std::vector<Block>& blocks, int cut = kDefaultSpliceCut) {
  std::map<int, std::vector<const Block*>> by_subject;
  for (const Block& b : blocks) by_subject[b.subject_id].push_back(&b);
  std::vector<SpliceSeries> out;
  for (const auto& [subject, group] : by_subject) {
    for (const Block* a : group)
      for (const Block* b : group)
        if (a != b && a->bot_level != b->bot_level) out.push_back(splice(*a, *b, cut));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV + manifest

inline const char* kDatasetCsvHeader = "subject_id,block_id,round_t,human_action,bot_action,reward_human,deviated,bot_level";

inline void export_dataset_csv(const std::string& path, const std::vector<Block>& blocks) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << kDatasetCsvHeader << "\n";
  for (const Block& b : blocks)
    for (const RoundRecord& r : b.rounds)
      out << b.subject_id << ',' << b.block_id << ',' << r.t << ',' << action_value(r.human_action)
          << ',' << action_value(r.bot_action) << ',' << r.reward_human << ',' << (r.deviated ? 1 : 0)
          << ',' << r.bot_level << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

struct ImportedDataset {
  std::vector<Block> blocks;
  std::vector<std::string> warnings;
};

namespace detail {

inline int parse_int_field(const std::string& field, const std::string& name, int line_no) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(field, &pos);
    if (pos != field.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("line " + std::to_string(line_no) + ": malformed " + name + " value '" + field + "'");
  }
}

inline bool parse_bool_field(const std::string& field, const std::string& name, int line_no) {
  if (field == "0" || field == "false") return false;
  if (field == "1" || field == "true") return true;
  throw std::runtime_error("line " + std::to_string(line_no) + ": malformed " + name + " value '" + field + "'");
}

}  // namespace detail

// Reads a dataset CSV. Tolerates a missing `deviated` column (defaults to
// false, with a warning); any malformed row is an error naming its line.
inline ImportedDataset import_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
  }
  const std::vector<std::string> full = {"subject_id", "block_id", "round_t", "human_action",
                                         "bot_action", "reward_human", "deviated", "bot_level"};
  std::vector<std::string> no_deviated = full;
  no_deviated.erase(no_deviated.begin() + 6);

  ImportedDataset result;
  bool has_deviated = true;
  if (cols == full) {
    has_deviated = true;
  } else if (cols == no_deviated) {
    has_deviated = false;
    result.warnings.push_back("deviated column missing; defaulting all rounds to deviated=0");
  } else {
    throw std::runtime_error(path + ": unrecognized CSV header '" + line + "'");
  }

  std::map<std::pair<int, int>, Block> by_key;
  std::vector<std::pair<int, int>> key_order;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    const std::size_t expected = has_deviated ? 8 : 7;
    if (fields.size() != expected)
      throw std::runtime_error("line " + std::to_string(line_no) + ": expected " + std::to_string(expected) +
                               " fields, got " + std::to_string(fields.size()));
    RoundRecord r;
    const int subject = detail::parse_int_field(fields[0], "subject_id", line_no);
    const int block = detail::parse_int_field(fields[1], "block_id", line_no);
    r.t = detail::parse_int_field(fields[2], "round_t", line_no);
    const int human = detail::parse_int_field(fields[3], "human_action", line_no);
    const int bot = detail::parse_int_field(fields[4], "bot_action", line_no);
    if (human < 1 || human > 3)
      throw std::runtime_error("line " + std::to_string(line_no) + ": human_action out of range [1,3]: " +
                               fields[3]);
    if (bot < 1 || bot > 3)
      throw std::runtime_error("line " + std::to_string(line_no) + ": bot_action out of range [1,3]: " + fields[4]);
    r.human_action = action_from_value(human);
    r.bot_action = action_from_value(bot);
    r.reward_human = detail::parse_int_field(fields[5], "reward_human", line_no);
    if (r.reward_human != payoff(r.human_action, r.bot_action))
      throw std::runtime_error("line " + std::to_string(line_no) + ": reward_human " + fields[5] +
                               " inconsistent with actions " + fields[3] + "," + fields[4]);
    std::size_t idx = 6;
    r.deviated = has_deviated ? detail::parse_bool_field(fields[idx++], "deviated", line_no) : false;
    r.bot_level = detail::parse_int_field(fields[idx], "bot_level", line_no);
    if (r.bot_level < 0 || r.bot_level > 3)
      throw std::runtime_error("line " + std::to_string(line_no) + ": bot_level out of range [0,3]: " + fields[idx]);

    const std::pair<int, int> key{subject, block};
    auto it = by_key.find(key);
    if (it == by_key.end()) {
      Block b;
      b.subject_id = subject;
      b.block_id = block;
      b.bot_level = r.bot_level;
      it = by_key.emplace(key, std::move(b)).first;
      key_order.push_back(key);
    }
    it->second.rounds.push_back(r);
  }
  for (const auto& key : key_order) {
    Block& b = by_key[key];
    std::sort(b.rounds.begin(), b.rounds.end(),
              [](const RoundRecord& a, const RoundRecord& c) { return a.t < c.t; });
    result.blocks.push_back(std::move(b));
  }
  return result;
}

struct DatasetManifest {
  std::uint64_t master_seed = 0;
  int subjects = 0;
  SimConfig sim;
  int blocks = 0;
  int rounds = 0;
};

inline void write_manifest(const std::string& path, const DatasetManifest& m) {
  json j{{"schema_version", kManifestSchemaVersion},
         {"master_seed", m.master_seed},
         {"subjects", m.subjects},
         {"sim", m.sim},
         {"counts", {{"blocks", m.blocks}, {"rounds", m.rounds}}}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
}

inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  json j = json::parse(in);
  const int version = j.at("schema_version").get<int>();
  if (version != kManifestSchemaVersion)
    throw std::runtime_error(path + ": manifest schema version " + std::to_string(version) +
                             " unsupported (expected " + std::to_string(kManifestSchemaVersion) + ")");
  DatasetManifest m;
  j.at("master_seed").get_to(m.master_seed);
  j.at("subjects").get_to(m.subjects);
  j.at("sim").get_to(m.sim);
  j.at("counts").at("blocks").get_to(m.blocks);
  j.at("counts").at("rounds").get_to(m.rounds);
  return m;
}

}  // namespace levelk
