#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "levelk/bayes.hpp"
#include "levelk/serialize.hpp"
#include "levelk/train.hpp"

namespace levelk {

// Which part of the recurrent state a decoder reads.
enum class ProbeSource { hidden, cell, gates, concat };

inline const char* probe_source_name(ProbeSource s) {
  switch (s) {
    case ProbeSource::hidden: return "hidden";
    case ProbeSource::cell: return "cell";
    case ProbeSource::gates: return "gates";
    case ProbeSource::concat: return "concat";
  }
  return "unknown";
}

inline ProbeSource probe_source_from_name(const std::string& name) {
  if (name == "hidden") return ProbeSource::hidden;
  if (name == "cell") return ProbeSource::cell;
  if (name == "gates") return ProbeSource::gates;
  if (name == "concat") return ProbeSource::concat;
  throw std::invalid_argument("unknown probe source: " + name);
}

inline int probe_source_dim(const SequenceModel& m, ProbeSource s) {
  switch (s) {
    case ProbeSource::hidden:
    case ProbeSource::cell: return m.hidden_size;
    case ProbeSource::gates: return 4 * m.hidden_size;
    case ProbeSource::concat: return 6 * m.hidden_size;
  }
  throw std::invalid_argument("unknown probe source");
}

// One feature row per timestep of a stateful rollout over the whole series.
inline MatrixXd extract_activations(const SequenceModel& m, const MatrixXd& inputs,
                                    ProbeSource src) {
  const ActivationTrace trace = run_series(m, inputs);
  const int h = m.hidden_size;
  MatrixXd out(static_cast<Eigen::Index>(trace.steps.size()), probe_source_dim(m, src));
  for (std::size_t t = 0; t < trace.steps.size(); ++t) {
    const StepActivations& a = trace.steps[t];
    switch (src) {
      case ProbeSource::hidden: out.row(t) = a.h.transpose(); break;
      case ProbeSource::cell: out.row(t) = a.c.transpose(); break;
      case ProbeSource::gates:
        out.row(t).segment(0, h) = a.i.transpose();
        out.row(t).segment(h, h) = a.f.transpose();
        out.row(t).segment(2 * h, h) = a.g.transpose();
        out.row(t).segment(3 * h, h) = a.o.transpose();
        break;
      case ProbeSource::concat:
        out.row(t).segment(0, h) = a.h.transpose();
        out.row(t).segment(h, h) = a.c.transpose();
        out.row(t).segment(2 * h, h) = a.i.transpose();
        out.row(t).segment(3 * h, h) = a.f.transpose();
        out.row(t).segment(4 * h, h) = a.g.transpose();
        out.row(t).segment(5 * h, h) = a.o.transpose();
        break;
    }
  }
  return out;
}

// Single-hidden-layer softmax classifier trained on frozen activations.
struct ProbeParams {
  MatrixXd w1;  // hidden x input
  VectorXd b1;
  MatrixXd w2;  // classes x hidden
  VectorXd b2;
};

template <typename Fn, typename... Probes>
void zip_probe_tensors(Fn&& fn, Probes&... ps) {
  fn(ps.w1...);
  fn(ps.b1...);
  fn(ps.w2...);
  fn(ps.b2...);
}

inline ProbeParams zeros_probe(int input_dim, int hidden_dim, int num_classes) {
  if (input_dim < 1 || hidden_dim < 1 || num_classes < 2)
    throw std::invalid_argument("zeros_probe: sizes must be positive (>=2 classes)");
  ProbeParams p;
  p.w1 = MatrixXd::Zero(hidden_dim, input_dim);
  p.b1 = VectorXd::Zero(hidden_dim);
  p.w2 = MatrixXd::Zero(num_classes, hidden_dim);
  p.b2 = VectorXd::Zero(num_classes);
  return p;
}

inline ProbeParams zeros_like(const ProbeParams& p) {
  return zeros_probe(static_cast<int>(p.w1.cols()), static_cast<int>(p.w1.rows()),
                     static_cast<int>(p.w2.rows()));
}

// Per-layer Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
inline ProbeParams init_probe(int input_dim, int hidden_dim, int num_classes, Rng& rng) {
  ProbeParams p = zeros_probe(input_dim, hidden_dim, num_classes);
  const auto fill = [&rng](auto& t, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = dist(rng);
  };
  const double b1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  fill(p.w1, b1);
  fill(p.b1, b1);
  fill(p.w2, b2);
  fill(p.b2, b2);
  return p;
}

namespace detail {

inline void validate_probe_batch(const ProbeParams& p, const MatrixXd& features,
                                 const std::vector<int>& labels) {
  if (features.rows() == 0) throw std::invalid_argument("probe: no samples");
  if (features.cols() != p.w1.cols()) throw std::invalid_argument("probe: feature width mismatch");
  if (static_cast<Eigen::Index>(labels.size()) != features.rows())
    throw std::invalid_argument("probe: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= p.w2.rows()) throw std::invalid_argument("probe: label out of range");
}

}  // namespace detail

// Mean cross-entropy plus l2 * (sum of squared weights); biases are exempt
// from the penalty. Gradients of that total go to `grads` when non-null.
inline double probe_loss_and_gradients(const ProbeParams& p, const MatrixXd& features,
                                       const std::vector<int>& labels, double l2,
                                       ProbeParams* grads) {
  detail::validate_probe_batch(p, features, labels);
  const Eigen::Index n = features.rows();
  const MatrixXd z1 = (p.w1 * features.transpose()).colwise() + p.b1;
  const MatrixXd a1 = z1.array().tanh().matrix();
  const MatrixXd logits = (p.w2 * a1).colwise() + p.b2;

  MatrixXd dlogits(p.w2.rows(), n);
  double loss = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const VectorXd probs = softmax(logits.col(k));
    loss -= std::log(std::max(probs(labels[k]), std::numeric_limits<double>::min()));
    dlogits.col(k) = probs;
    dlogits(labels[k], k) -= 1.0;
  }
  loss /= static_cast<double>(n);
  loss += l2 * (p.w1.squaredNorm() + p.w2.squaredNorm());
  if (!grads) return loss;

  dlogits /= static_cast<double>(n);
  grads->w2 = dlogits * a1.transpose() + 2.0 * l2 * p.w2;
  grads->b2 = dlogits.rowwise().sum();
  const MatrixXd dz1 =
      ((p.w2.transpose() * dlogits).array() * (1.0 - a1.array().square())).matrix();
  grads->w1 = dz1 * features + 2.0 * l2 * p.w1;
  grads->b1 = dz1.rowwise().sum();
  return loss;
}

inline double probe_gradient_check_max_rel_error(ProbeParams p, const MatrixXd& features,
                                                 const std::vector<int>& labels, double l2,
                                                 double h = 1e-5) {
  ProbeParams grads = zeros_like(p);
  probe_loss_and_gradients(p, features, labels, l2, &grads);
  double worst = 0.0;
  zip_probe_tensors(
      [&](auto& theta, const auto& g) {
        for (Eigen::Index k = 0; k < theta.size(); ++k) {
          const double saved = theta(k);
          theta(k) = saved + h;
          const double up = probe_loss_and_gradients(p, features, labels, l2, nullptr);
          theta(k) = saved - h;
          const double down = probe_loss_and_gradients(p, features, labels, l2, nullptr);
          theta(k) = saved;
          const double numeric = (up - down) / (2.0 * h);
          const double rel = std::abs(g(k) - numeric) /
                             std::max(1e-6, std::abs(g(k)) + std::abs(numeric));
          worst = std::max(worst, rel);
        }
      },
      p, grads);
  return worst;
}

struct ProbeOptions {
  int hidden_size = 16;
  int num_classes = kNumLevels;
  int epochs = 300;
  double l2 = 1e-4;
  AdamOptions adam;  // lr 0.01
  std::uint64_t seed = 0;
};

struct ProbeTrainResult {
  ProbeParams params;
  std::vector<double> loss;  // one entry per epoch
};

// Full-batch Adam for a fixed number of epochs. Labels must cover at least two
// classes; a single-class fit would only learn the bias.
inline ProbeTrainResult train_probe(const MatrixXd& features, const std::vector<int>& labels,
                                    const ProbeOptions& opt = {}) {
  if (opt.epochs < 1) throw std::invalid_argument("train_probe: epochs must be positive");
  Rng rng(opt.seed);
  ProbeParams p = init_probe(static_cast<int>(features.cols()), opt.hidden_size, opt.num_classes, rng);
  detail::validate_probe_batch(p, features, labels);
  {
    std::vector<int> distinct = labels;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2) throw std::invalid_argument("train_probe: labels cover one class");
  }

  ProbeParams m1 = zeros_like(p), m2 = zeros_like(p), grads = zeros_like(p);
  ProbeTrainResult result;
  result.loss.reserve(opt.epochs);
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    const double loss = probe_loss_and_gradients(p, features, labels, opt.l2, &grads);
    if (!std::isfinite(loss)) throw std::runtime_error("train_probe: loss diverged");
    const long step = epoch + 1;
    const double bc1 = 1.0 - std::pow(opt.adam.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(opt.adam.beta2, static_cast<double>(step));
    zip_probe_tensors(
        [&](auto& theta, const auto& g, auto& mo1, auto& mo2) {
          mo1 = opt.adam.beta1 * mo1 + (1.0 - opt.adam.beta1) * g;
          mo2 = (opt.adam.beta2 * mo2.array() + (1.0 - opt.adam.beta2) * g.array().square())
                    .matrix();
          theta.array() -= opt.adam.learning_rate * (mo1.array() / bc1) /
                           ((mo2.array() / bc2).sqrt() + opt.adam.epsilon);
        },
        p, grads, m1, m2);
    result.loss.push_back(loss);
  }
  result.params = std::move(p);
  return result;
}

// One independent decoder per timestep: probe t is trained only on the
// activations a rollout produced at step t, so no probe ever conditions on
// time itself.
using ProbeBank = std::vector<ProbeParams>;

// `activations`: one T x D matrix per series (equal shapes); `labels`: the
// series' ground-truth class. Probe t's init/training stream is derived from
// opt.seed and t, so banks are reproducible and order-independent.
inline ProbeBank train_probe_bank(const std::vector<MatrixXd>& activations,
                                  const std::vector<int>& labels, const ProbeOptions& opt = {}) {
  if (activations.empty()) throw std::invalid_argument("train_probe_bank: no series");
  if (labels.size() != activations.size())
    throw std::invalid_argument("train_probe_bank: label count mismatch");
  const Eigen::Index steps = activations.front().rows();
  const Eigen::Index dim = activations.front().cols();
  for (const MatrixXd& a : activations)
    if (a.rows() != steps || a.cols() != dim)
      throw std::invalid_argument("train_probe_bank: ragged activation shapes");
  ProbeBank bank;
  bank.reserve(steps);
  for (Eigen::Index t = 0; t < steps; ++t) {
    MatrixXd features(static_cast<Eigen::Index>(activations.size()), dim);
    for (std::size_t s = 0; s < activations.size(); ++s) features.row(s) = activations[s].row(t);
    ProbeOptions per_t = opt;
    per_t.seed = derive_seed(opt.seed, static_cast<std::uint64_t>(t));
    bank.push_back(train_probe(features, labels, per_t).params);
  }
  return bank;
}

// Class probabilities, one row per feature row.
inline MatrixXd probe_predict(const ProbeParams& p, const MatrixXd& features) {
  if (features.cols() != p.w1.cols()) throw std::invalid_argument("probe: feature width mismatch");
  const MatrixXd a1 = ((p.w1 * features.transpose()).colwise() + p.b1).array().tanh().matrix();
  const MatrixXd logits = (p.w2 * a1).colwise() + p.b2;
  MatrixXd probs(features.rows(), p.w2.rows());
  for (Eigen::Index k = 0; k < features.rows(); ++k)
    probs.row(k) = softmax(logits.col(k)).transpose();
  return probs;
}

inline double probe_accuracy(const ProbeParams& p, const MatrixXd& features,
                             const std::vector<int>& labels) {
  detail::validate_probe_batch(p, features, labels);
  const MatrixXd probs = probe_predict(p, features);
  int hits = 0;
  for (Eigen::Index k = 0; k < probs.rows(); ++k) {
    Eigen::Index argmax;
    probs.row(k).maxCoeff(&argmax);
    hits += (argmax == labels[k]);
  }
  return static_cast<double>(hits) / static_cast<double>(probs.rows());
}

// Decoded level distribution at every timestep of a series.
inline MatrixXd probe_curve(const SequenceModel& m, const ProbeParams& p, const MatrixXd& inputs,
                            ProbeSource src) {
  return probe_predict(p, extract_activations(m, inputs, src));
}

// Row t decoded by the step-t probe. Series shorter than the bank (splices!)
// just use the leading probes.
inline MatrixXd probe_bank_predict(const ProbeBank& bank, const MatrixXd& activations) {
  if (bank.empty()) throw std::invalid_argument("probe_bank_predict: empty bank");
  if (activations.rows() > static_cast<Eigen::Index>(bank.size()))
    throw std::invalid_argument("probe_bank_predict: series longer than bank");
  MatrixXd probs(activations.rows(), bank.front().w2.rows());
  for (Eigen::Index t = 0; t < activations.rows(); ++t)
    probs.row(t) = probe_predict(bank[t], activations.row(t)).row(0);
  return probs;
}

inline MatrixXd probe_bank_curve(const SequenceModel& m, const ProbeBank& bank,
                                 const MatrixXd& inputs, ProbeSource src) {
  return probe_bank_predict(bank, extract_activations(m, inputs, src));
}

// First step at or after `cut` whose decoded class equals `target` and stays
// there for `sustain` consecutive steps, reported relative to the cut. A run
// that never settles (including one only starting inside the final
// sustain-window) reports the cap rows-cut.
inline int adaptation_lag(const MatrixXd& class_probs, int target, int cut, int sustain = 3) {
  const int rows = static_cast<int>(class_probs.rows());
  if (cut < 0 || cut >= rows) throw std::invalid_argument("adaptation_lag: cut out of range");
  if (target < 0 || target >= class_probs.cols())
    throw std::invalid_argument("adaptation_lag: target out of range");
  if (sustain < 1) throw std::invalid_argument("adaptation_lag: sustain must be positive");
  for (int t = cut; t + sustain <= rows; ++t) {
    bool settled = true;
    for (int s = t; s < t + sustain; ++s) {
      Eigen::Index argmax;
      class_probs.row(s).maxCoeff(&argmax);
      if (static_cast<int>(argmax) != target) {
        settled = false;
        break;
      }
    }
    if (settled) return t - cut;
  }
  return rows - cut;
}

inline json probe_to_json(const ProbeParams& p) {
  json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["input_size"] = p.w1.cols();
  j["hidden_size"] = p.w1.rows();
  j["num_classes"] = p.w2.rows();
  j["tensors"]["w1"] = matrix_to_json(p.w1);
  j["tensors"]["b1"] = vector_to_json(p.b1);
  j["tensors"]["w2"] = matrix_to_json(p.w2);
  j["tensors"]["b2"] = vector_to_json(p.b2);
  return j;
}

inline ProbeParams probe_from_json(const json& j) {
  if (!j.contains("format_version") || j.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw std::runtime_error("probe checkpoint: unsupported format version");
  const int input = j.at("input_size").get<int>();
  const int hidden = j.at("hidden_size").get<int>();
  const int classes = j.at("num_classes").get<int>();
  ProbeParams p = zeros_probe(input, hidden, classes);
  const json& tensors = j.at("tensors");
  p.w1 = matrix_from_json(tensors.at("w1"), hidden, input, "w1");
  p.b1 = vector_from_json(tensors.at("b1"), hidden, "b1");
  p.w2 = matrix_from_json(tensors.at("w2"), classes, hidden, "w2");
  p.b2 = vector_from_json(tensors.at("b2"), classes, "b2");
  return p;
}

inline void save_probe(const std::string& path, const ProbeParams& p) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_probe: cannot open " + path);
  out << probe_to_json(p).dump(2) << "\n";
}

inline ProbeParams load_probe(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_probe: cannot open " + path);
  return probe_from_json(json::parse(in));
}

inline void save_probe_bank(const std::string& path, const ProbeBank& bank) {
  json j;
  j["format_version"] = kCheckpointFormatVersion;
  json probes = json::array();
  for (const ProbeParams& p : bank) probes.push_back(probe_to_json(p));
  j["probes"] = std::move(probes);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_probe_bank: cannot open " + path);
  out << j.dump(2) << "\n";
}

inline ProbeBank load_probe_bank(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_probe_bank: cannot open " + path);
  const json j = json::parse(in);
  if (!j.contains("format_version") || j.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw std::runtime_error("probe bank checkpoint: unsupported format version");
  ProbeBank bank;
  for (const json& pj : j.at("probes")) bank.push_back(probe_from_json(pj));
  return bank;
}

}  // namespace levelk
