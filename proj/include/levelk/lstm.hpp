#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "levelk/rng.hpp"

namespace levelk {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Max-shifted softmax over an arbitrary score vector.
inline VectorXd softmax(const VectorXd& scores) {
  const double shift = scores.maxCoeff();
  VectorXd e = (scores.array() - shift).exp();
  return e / e.sum();
}

// Recurrent cell parameters. Input- and hidden-side affine maps keep separate
// bias vectors, so every gate pre-activation is
//   a = W_x x + b_x + W_h h_prev + b_h.
struct LstmParams {
  MatrixXd w_ix, w_fx, w_cx, w_ox;  // hidden x input
  MatrixXd w_ih, w_fh, w_ch, w_oh;  // hidden x hidden
  VectorXd b_ix, b_fx, b_cx, b_ox;
  VectorXd b_ih, b_fh, b_ch, b_oh;
};

// Dense softmax readout applied to the hidden state.
struct ReadoutParams {
  MatrixXd w;  // classes x hidden
  VectorXd b;  // classes
};

struct SequenceModel {
  int input_size = 9;
  int hidden_size = 50;
  int num_classes = 3;
  LstmParams lstm;
  ReadoutParams readout;
};

// Fixed tensor enumeration shared by initialization, the optimizer, the
// finite-difference checker and serialization. The order is part of the
// reproducibility contract: changing it changes seeded runs.
template <typename Model, typename Fn>
void for_each_tensor(Model& m, Fn&& fn) {
  fn("w_ix", m.lstm.w_ix);
  fn("w_fx", m.lstm.w_fx);
  fn("w_cx", m.lstm.w_cx);
  fn("w_ox", m.lstm.w_ox);
  fn("w_ih", m.lstm.w_ih);
  fn("w_fh", m.lstm.w_fh);
  fn("w_ch", m.lstm.w_ch);
  fn("w_oh", m.lstm.w_oh);
  fn("b_ix", m.lstm.b_ix);
  fn("b_fx", m.lstm.b_fx);
  fn("b_cx", m.lstm.b_cx);
  fn("b_ox", m.lstm.b_ox);
  fn("b_ih", m.lstm.b_ih);
  fn("b_fh", m.lstm.b_fh);
  fn("b_ch", m.lstm.b_ch);
  fn("b_oh", m.lstm.b_oh);
  fn("readout_w", m.readout.w);
  fn("readout_b", m.readout.b);
}

// Visits the same tensor of several models at once (model + gradient,
// model + optimizer moments, ...). Same order as for_each_tensor.
template <typename Fn, typename... Models>
void zip_tensors(Fn&& fn, Models&... ms) {
  fn(ms.lstm.w_ix...);
  fn(ms.lstm.w_fx...);
  fn(ms.lstm.w_cx...);
  fn(ms.lstm.w_ox...);
  fn(ms.lstm.w_ih...);
  fn(ms.lstm.w_fh...);
  fn(ms.lstm.w_ch...);
  fn(ms.lstm.w_oh...);
  fn(ms.lstm.b_ix...);
  fn(ms.lstm.b_fx...);
  fn(ms.lstm.b_cx...);
  fn(ms.lstm.b_ox...);
  fn(ms.lstm.b_ih...);
  fn(ms.lstm.b_fh...);
  fn(ms.lstm.b_ch...);
  fn(ms.lstm.b_oh...);
  fn(ms.readout.w...);
  fn(ms.readout.b...);
}

inline SequenceModel zeros_model(int input_size, int hidden_size, int num_classes) {
  if (input_size < 1 || hidden_size < 1 || num_classes < 2)
    throw std::invalid_argument("zeros_model: sizes must be positive (>=2 classes)");
  SequenceModel m;
  m.input_size = input_size;
  m.hidden_size = hidden_size;
  m.num_classes = num_classes;
  auto& p = m.lstm;
  for (MatrixXd* w : {&p.w_ix, &p.w_fx, &p.w_cx, &p.w_ox}) *w = MatrixXd::Zero(hidden_size, input_size);
  for (MatrixXd* w : {&p.w_ih, &p.w_fh, &p.w_ch, &p.w_oh}) *w = MatrixXd::Zero(hidden_size, hidden_size);
  for (VectorXd* b : {&p.b_ix, &p.b_fx, &p.b_cx, &p.b_ox, &p.b_ih, &p.b_fh, &p.b_ch, &p.b_oh})
    *b = VectorXd::Zero(hidden_size);
  m.readout.w = MatrixXd::Zero(num_classes, hidden_size);
  m.readout.b = VectorXd::Zero(num_classes);
  return m;
}

inline SequenceModel zeros_like(const SequenceModel& m) {
  return zeros_model(m.input_size, m.hidden_size, m.num_classes);
}

// Uniform(-1/sqrt(H), +1/sqrt(H)) on every tensor, then `forget_bias` is added
// to the input-side forget gate bias (pass 0 to disable the nudge).
inline SequenceModel init_model(int input_size, int hidden_size, int num_classes, Rng& rng,
                                double forget_bias = 1.0) {
  SequenceModel m = zeros_model(input_size, hidden_size, num_classes);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_size));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for_each_tensor(m, [&](const char*, auto& t) {
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = dist(rng);
  });
  m.lstm.b_fx.array() += forget_bias;
  return m;
}

struct LstmState {
  VectorXd h, c;
};

inline LstmState initial_state(const SequenceModel& m) {
  return {VectorXd::Zero(m.hidden_size), VectorXd::Zero(m.hidden_size)};
}

// Post-activation values of one step, exposed for read-out probes.
struct StepActivations {
  VectorXd i, f, g, o, c, h;
};

// Advances the state by one input column:
//   i = sigmoid(W_ix x + b_ix + W_ih h + b_ih)
//   f = sigmoid(W_fx x + b_fx + W_fh h + b_fh)
//   g = tanh   (W_cx x + b_cx + W_ch h + b_ch)
//   o = sigmoid(W_ox x + b_ox + W_oh h + b_oh)
//   c' = f . c + i . g
//   h' = o . tanh(c')
inline void lstm_step(const SequenceModel& m, const VectorXd& x, LstmState& s,
                      StepActivations* acts = nullptr) {
  if (x.size() != m.input_size) throw std::invalid_argument("lstm_step: input size mismatch");
  const LstmParams& p = m.lstm;
  const VectorXd ai = p.w_ix * x + p.b_ix + p.w_ih * s.h + p.b_ih;
  const VectorXd af = p.w_fx * x + p.b_fx + p.w_fh * s.h + p.b_fh;
  const VectorXd ag = p.w_cx * x + p.b_cx + p.w_ch * s.h + p.b_ch;
  const VectorXd ao = p.w_ox * x + p.b_ox + p.w_oh * s.h + p.b_oh;
  const VectorXd i = (1.0 / (1.0 + (-ai.array()).exp())).matrix();
  const VectorXd f = (1.0 / (1.0 + (-af.array()).exp())).matrix();
  const VectorXd g = ag.array().tanh().matrix();
  const VectorXd o = (1.0 / (1.0 + (-ao.array()).exp())).matrix();
  const VectorXd c = (f.array() * s.c.array() + i.array() * g.array()).matrix();
  const VectorXd h = (o.array() * c.array().tanh()).matrix();
  if (acts) {
    acts->i = i;
    acts->f = f;
    acts->g = g;
    acts->o = o;
    acts->c = c;
    acts->h = h;
  }
  s.c = c;
  s.h = h;
}

inline VectorXd readout_probs(const SequenceModel& m, const VectorXd& h) {
  return softmax(m.readout.w * h + m.readout.b);
}

// Rolls a fresh state over the window rows (one row per round) and reads out
// class probabilities after the last step.
inline VectorXd predict(const SequenceModel& m, const MatrixXd& window) {
  if (window.rows() < 1) throw std::invalid_argument("predict: empty window");
  if (window.cols() != m.input_size) throw std::invalid_argument("predict: input size mismatch");
  LstmState s = initial_state(m);
  for (Eigen::Index t = 0; t < window.rows(); ++t) lstm_step(m, window.row(t).transpose(), s);
  return readout_probs(m, s.h);
}

// Stateful rollout over a whole series; keeps every step's activations and the
// readout distribution entering the *next* round.
struct ActivationTrace {
  std::vector<StepActivations> steps;
  std::vector<VectorXd> probs;
};

inline ActivationTrace run_series(const SequenceModel& m, const MatrixXd& inputs) {
  if (inputs.rows() < 1) throw std::invalid_argument("run_series: empty input");
  if (inputs.cols() != m.input_size) throw std::invalid_argument("run_series: input size mismatch");
  ActivationTrace trace;
  trace.steps.reserve(inputs.rows());
  trace.probs.reserve(inputs.rows());
  LstmState s = initial_state(m);
  for (Eigen::Index t = 0; t < inputs.rows(); ++t) {
    StepActivations acts;
    lstm_step(m, inputs.row(t).transpose(), s, &acts);
    trace.steps.push_back(std::move(acts));
    trace.probs.push_back(readout_probs(m, s.h));
  }
  return trace;
}

}  // namespace levelk
