#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "levelk/lstm.hpp"
#include "levelk/rng.hpp"

namespace levelk {

// Supervised windows: one fixed-length input sequence per sample, one class
// label for the round that follows the window.
struct TrainingSet {
  std::vector<MatrixXd> inputs;  // each T x input_size
  std::vector<int> targets;

  std::size_t size() const { return inputs.size(); }
  void add(MatrixXd x, int y) {
    inputs.push_back(std::move(x));
    targets.push_back(y);
  }
};

namespace detail {

// Per-timestep column batches plus everything BPTT needs to replay the pass.
struct BpttCache {
  std::vector<MatrixXd> x, i, f, g, o, c, tanh_c, h;
};

inline void validate_batch(const SequenceModel& m, const std::vector<MatrixXd>& seqs,
                           const std::vector<int>& targets) {
  if (seqs.empty()) throw std::invalid_argument("batch: no samples");
  if (targets.size() != seqs.size()) throw std::invalid_argument("batch: target count mismatch");
  const Eigen::Index steps = seqs.front().rows();
  if (steps < 1) throw std::invalid_argument("batch: empty sequence");
  for (const MatrixXd& s : seqs) {
    if (s.rows() != steps) throw std::invalid_argument("batch: unequal sequence lengths");
    if (s.cols() != m.input_size) throw std::invalid_argument("batch: input size mismatch");
  }
  for (int y : targets)
    if (y < 0 || y >= m.num_classes) throw std::invalid_argument("batch: target out of range");
}

inline std::vector<MatrixXd> pack_steps(const std::vector<MatrixXd>& seqs) {
  const Eigen::Index steps = seqs.front().rows();
  const Eigen::Index batch = static_cast<Eigen::Index>(seqs.size());
  const Eigen::Index width = seqs.front().cols();
  std::vector<MatrixXd> x(steps, MatrixXd(width, batch));
  for (Eigen::Index t = 0; t < steps; ++t)
    for (Eigen::Index b = 0; b < batch; ++b) x[t].col(b) = seqs[b].row(t).transpose();
  return x;
}

// Forward over packed per-timestep inputs; returns the final hidden matrix
// (hidden x batch). When `cache` is given every intermediate is kept for BPTT;
// otherwise only the running state is held.
inline MatrixXd batched_forward(const SequenceModel& m, const std::vector<MatrixXd>& x,
                                BpttCache* cache) {
  const LstmParams& p = m.lstm;
  const Eigen::Index batch = x.front().cols();
  const VectorXd bi = p.b_ix + p.b_ih;
  const VectorXd bf = p.b_fx + p.b_fh;
  const VectorXd bg = p.b_cx + p.b_ch;
  const VectorXd bo = p.b_ox + p.b_oh;
  MatrixXd h = MatrixXd::Zero(m.hidden_size, batch);
  MatrixXd c = MatrixXd::Zero(m.hidden_size, batch);
  for (const MatrixXd& xt : x) {
    const MatrixXd ai = (p.w_ix * xt + p.w_ih * h).colwise() + bi;
    const MatrixXd af = (p.w_fx * xt + p.w_fh * h).colwise() + bf;
    const MatrixXd ag = (p.w_cx * xt + p.w_ch * h).colwise() + bg;
    const MatrixXd ao = (p.w_ox * xt + p.w_oh * h).colwise() + bo;
    const MatrixXd i = (1.0 / (1.0 + (-ai.array()).exp())).matrix();
    const MatrixXd f = (1.0 / (1.0 + (-af.array()).exp())).matrix();
    const MatrixXd g = ag.array().tanh().matrix();
    const MatrixXd o = (1.0 / (1.0 + (-ao.array()).exp())).matrix();
    c = (f.array() * c.array() + i.array() * g.array()).matrix();
    const MatrixXd tc = c.array().tanh().matrix();
    h = (o.array() * tc.array()).matrix();
    if (cache) {
      cache->i.push_back(i);
      cache->f.push_back(f);
      cache->g.push_back(g);
      cache->o.push_back(o);
      cache->c.push_back(c);
      cache->tanh_c.push_back(tc);
      cache->h.push_back(h);
    }
  }
  return h;
}

}  // namespace detail

// Mean cross-entropy over the batch; with `grads` non-null the full
// backpropagation-through-time gradient of that mean is accumulated into it
// (grads is overwritten, not added to).
inline double loss_and_gradients(const SequenceModel& m, const std::vector<MatrixXd>& seqs,
                                 const std::vector<int>& targets, SequenceModel* grads) {
  detail::validate_batch(m, seqs, targets);
  const Eigen::Index batch = static_cast<Eigen::Index>(seqs.size());
  const Eigen::Index steps = seqs.front().rows();

  detail::BpttCache cache;
  cache.x = detail::pack_steps(seqs);
  const MatrixXd h_last = detail::batched_forward(m, cache.x, grads ? &cache : nullptr);

  const MatrixXd logits = (m.readout.w * h_last).colwise() + m.readout.b;
  MatrixXd dlogits(m.num_classes, batch);
  double loss = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const VectorXd probs = softmax(logits.col(b));
    loss -= std::log(std::max(probs(targets[b]), std::numeric_limits<double>::min()));
    dlogits.col(b) = probs;
    dlogits(targets[b], b) -= 1.0;
  }
  loss /= static_cast<double>(batch);
  if (!grads) return loss;

  *grads = zeros_like(m);
  dlogits /= static_cast<double>(batch);
  grads->readout.w = dlogits * h_last.transpose();
  grads->readout.b = dlogits.rowwise().sum();

  const LstmParams& p = m.lstm;
  LstmParams& gp = grads->lstm;
  const MatrixXd zero = MatrixXd::Zero(m.hidden_size, batch);
  MatrixXd dh = m.readout.w.transpose() * dlogits;
  MatrixXd dc = MatrixXd::Zero(m.hidden_size, batch);
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    const MatrixXd& h_prev = (t == 0) ? zero : cache.h[t - 1];
    const MatrixXd& c_prev = (t == 0) ? zero : cache.c[t - 1];
    const auto i = cache.i[t].array();
    const auto f = cache.f[t].array();
    const auto g = cache.g[t].array();
    const auto o = cache.o[t].array();
    const auto tc = cache.tanh_c[t].array();

    const MatrixXd da_o = (dh.array() * tc * o * (1.0 - o)).matrix();
    dc.array() += dh.array() * o * (1.0 - tc.square());
    const MatrixXd da_f = (dc.array() * c_prev.array() * f * (1.0 - f)).matrix();
    const MatrixXd da_i = (dc.array() * g * i * (1.0 - i)).matrix();
    const MatrixXd da_g = (dc.array() * i * (1.0 - g.square())).matrix();

    gp.w_ix += da_i * cache.x[t].transpose();
    gp.w_fx += da_f * cache.x[t].transpose();
    gp.w_cx += da_g * cache.x[t].transpose();
    gp.w_ox += da_o * cache.x[t].transpose();
    gp.w_ih += da_i * h_prev.transpose();
    gp.w_fh += da_f * h_prev.transpose();
    gp.w_ch += da_g * h_prev.transpose();
    gp.w_oh += da_o * h_prev.transpose();
    // Both bias vectors of a gate sit inside the same pre-activation, so they
    // share its gradient.
    gp.b_ix += da_i.rowwise().sum();
    gp.b_ih += da_i.rowwise().sum();
    gp.b_fx += da_f.rowwise().sum();
    gp.b_fh += da_f.rowwise().sum();
    gp.b_cx += da_g.rowwise().sum();
    gp.b_ch += da_g.rowwise().sum();
    gp.b_ox += da_o.rowwise().sum();
    gp.b_oh += da_o.rowwise().sum();

    dh = p.w_ih.transpose() * da_i + p.w_fh.transpose() * da_f + p.w_ch.transpose() * da_g +
         p.w_oh.transpose() * da_o;
    dc = (dc.array() * f).matrix();
  }
  return loss;
}

// Sample-weighted mean loss over an arbitrary-size set, evaluated in chunks so
// memory stays flat.
inline double mean_loss(const SequenceModel& m, const TrainingSet& data, int chunk = 512) {
  if (data.size() == 0) throw std::invalid_argument("mean_loss: empty set");
  if (chunk < 1) throw std::invalid_argument("mean_loss: chunk must be positive");
  double sum = 0.0;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t stop = std::min(data.size(), start + chunk);
    const std::vector<MatrixXd> seqs(data.inputs.begin() + start, data.inputs.begin() + stop);
    const std::vector<int> ys(data.targets.begin() + start, data.targets.begin() + stop);
    sum += loss_and_gradients(m, seqs, ys, nullptr) * static_cast<double>(stop - start);
  }
  return sum / static_cast<double>(data.size());
}

// Class probabilities for every sample, one column each.
inline MatrixXd predict_batch(const SequenceModel& m, const std::vector<MatrixXd>& seqs) {
  if (seqs.empty()) throw std::invalid_argument("predict_batch: no samples");
  const std::vector<int> dummy(seqs.size(), 0);
  detail::validate_batch(m, seqs, dummy);
  const std::vector<MatrixXd> x = detail::pack_steps(seqs);
  const MatrixXd h_last = detail::batched_forward(m, x, nullptr);
  const MatrixXd logits = (m.readout.w * h_last).colwise() + m.readout.b;
  MatrixXd probs(m.num_classes, logits.cols());
  for (Eigen::Index b = 0; b < logits.cols(); ++b) probs.col(b) = softmax(logits.col(b));
  return probs;
}

struct AdamOptions {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  SequenceModel m1, m2;  // first/second moment estimates, tensor-shaped
  long step = 0;
};

inline AdamState make_adam_state(const SequenceModel& m) {
  return {zeros_like(m), zeros_like(m), 0};
}

inline void adam_step(SequenceModel& model, const SequenceModel& grads, AdamState& state,
                      const AdamOptions& opt = {}) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  zip_tensors(
      [&](auto& theta, const auto& g, auto& m1, auto& m2) {
        m1 = opt.beta1 * m1 + (1.0 - opt.beta1) * g;
        m2 = (opt.beta2 * m2.array() + (1.0 - opt.beta2) * g.array().square()).matrix();
        theta.array() -=
            opt.learning_rate * (m1.array() / bc1) / ((m2.array() / bc2).sqrt() + opt.epsilon);
      },
      model, grads, state.m1, state.m2);
}

// Central-difference audit of loss_and_gradients over every parameter.
// Relative error uses a floored denominator so near-zero pairs do not blow up:
//   |analytic - numeric| / max(1e-6, |analytic| + |numeric|).
inline double gradient_check_max_rel_error(SequenceModel model, const std::vector<MatrixXd>& seqs,
                                           const std::vector<int>& targets, double h = 1e-5) {
  SequenceModel grads = zeros_like(model);
  loss_and_gradients(model, seqs, targets, &grads);
  double worst = 0.0;
  zip_tensors(
      [&](auto& theta, const auto& g) {
        for (Eigen::Index k = 0; k < theta.size(); ++k) {
          const double saved = theta(k);
          theta(k) = saved + h;
          const double up = loss_and_gradients(model, seqs, targets, nullptr);
          theta(k) = saved - h;
          const double down = loss_and_gradients(model, seqs, targets, nullptr);
          theta(k) = saved;
          const double numeric = (up - down) / (2.0 * h);
          const double analytic = g(k);
          const double rel = std::abs(analytic - numeric) /
                             std::max(1e-6, std::abs(analytic) + std::abs(numeric));
          worst = std::max(worst, rel);
        }
      },
      model, grads);
  return worst;
}

struct TrainOptions {
  int batch_size = 16;
  int max_epochs = 200;
  int patience = 10;             // epochs without validation improvement
  double divergence_factor = 10.0;  // abort when val loss exceeds this x initial
  AdamOptions adam;
  std::uint64_t seed = 0;  // shuffle stream
};

enum class StopReason { max_epochs, early_stop, diverged };

inline const char* stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::max_epochs: return "max_epochs";
    case StopReason::early_stop: return "early_stop";
    case StopReason::diverged: return "diverged";
  }
  return "unknown";
}

struct TrainResult {
  SequenceModel best_model;
  std::vector<double> train_loss, val_loss;  // one entry per completed epoch
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;  // -1: the initial weights were never beaten
  int epochs_run = 0;
  StopReason stop_reason = StopReason::max_epochs;
};

// Minibatch Adam with early stopping on validation loss. The best-so-far
// checkpoint (lowest validation loss, initial weights included) is what comes
// back. Single-threaded and deterministic for a fixed seed and platform.
inline TrainResult train(SequenceModel model, const TrainingSet& fit, const TrainingSet& val,
                         const TrainOptions& opt = {}) {
  if (fit.size() == 0) throw std::invalid_argument("train: empty training set");
  if (val.size() == 0) throw std::invalid_argument("train: empty validation set");
  if (opt.batch_size < 1) throw std::invalid_argument("train: batch_size must be positive");
  if (opt.max_epochs < 1) throw std::invalid_argument("train: max_epochs must be positive");
  if (opt.patience < 1) throw std::invalid_argument("train: patience must be positive");

  Rng rng(opt.seed);
  AdamState adam = make_adam_state(model);
  const double initial_val = mean_loss(model, val);

  TrainResult result;
  result.best_model = model;
  result.best_val_loss = initial_val;

  int stale_epochs = 0;
  std::vector<std::size_t> order(fit.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < opt.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    SequenceModel grads = zeros_like(model);
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t stop = std::min(order.size(), start + opt.batch_size);
      std::vector<MatrixXd> seqs;
      std::vector<int> ys;
      seqs.reserve(stop - start);
      ys.reserve(stop - start);
      for (std::size_t k = start; k < stop; ++k) {
        seqs.push_back(fit.inputs[order[k]]);
        ys.push_back(fit.targets[order[k]]);
      }
      const double loss = loss_and_gradients(model, seqs, ys, &grads);
      if (!std::isfinite(loss)) {
        result.stop_reason = StopReason::diverged;
        result.epochs_run = epoch;
        return result;
      }
      adam_step(model, grads, adam, opt.adam);
      epoch_sum += loss * static_cast<double>(stop - start);
    }

    const double vloss = mean_loss(model, val);
    result.train_loss.push_back(epoch_sum / static_cast<double>(fit.size()));
    result.val_loss.push_back(vloss);
    result.epochs_run = epoch + 1;

    if (!std::isfinite(vloss) || vloss > opt.divergence_factor * initial_val) {
      result.stop_reason = StopReason::diverged;
      return result;
    }
    if (vloss < result.best_val_loss) {
      result.best_val_loss = vloss;
      result.best_model = model;
      result.best_epoch = epoch;
      stale_epochs = 0;
    } else if (++stale_epochs >= opt.patience) {
      result.stop_reason = StopReason::early_stop;
      return result;
    }
  }
  result.stop_reason = StopReason::max_epochs;
  return result;
}

}  // namespace levelk
