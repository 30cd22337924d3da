#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "levelk/probes.hpp"

using namespace levelk;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

MatrixXd random_matrix(Rng& rng, int rows, int cols, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

// Four well-separated clusters in R^dim, labeled 0..3.
std::pair<MatrixXd, std::vector<int>> clustered_features(Rng& rng, int n, int dim) {
  MatrixXd x = random_matrix(rng, n, dim, -0.5, 0.5);
  std::vector<int> y(n);
  for (int k = 0; k < n; ++k) {
    y[k] = k % 4;
    x(k, y[k]) += 2.0;
  }
  return {std::move(x), std::move(y)};
}

// One-hot argmax curve: row t puts all mass on classes[t].
MatrixXd argmax_curve(const std::vector<int>& classes, int num_classes = 4) {
  MatrixXd m = MatrixXd::Zero(static_cast<int>(classes.size()), num_classes);
  for (std::size_t t = 0; t < classes.size(); ++t) m(t, classes[t]) = 1.0;
  return m;
}

}  // namespace

TEST_CASE("activation extraction exposes each state slice at its offset", "[probes]") {
  Rng rng(9);
  const SequenceModel m = init_model(9, 7, 3, rng);
  const MatrixXd inputs = random_matrix(rng, 12, 9);
  const ActivationTrace trace = run_series(m, inputs);

  const MatrixXd hidden = extract_activations(m, inputs, ProbeSource::hidden);
  const MatrixXd cell = extract_activations(m, inputs, ProbeSource::cell);
  const MatrixXd gates = extract_activations(m, inputs, ProbeSource::gates);
  const MatrixXd concat = extract_activations(m, inputs, ProbeSource::concat);
  CHECK(hidden.cols() == 7);
  CHECK(cell.cols() == 7);
  CHECK(gates.cols() == 28);
  CHECK(concat.cols() == 42);
  REQUIRE(hidden.rows() == 12);

  for (int t = 0; t < 12; ++t) {
    const StepActivations& a = trace.steps[t];
    CHECK((hidden.row(t).transpose() - a.h).cwiseAbs().maxCoeff() == 0.0);
    CHECK((cell.row(t).transpose() - a.c).cwiseAbs().maxCoeff() == 0.0);
    CHECK((gates.row(t).segment(0, 7).transpose() - a.i).cwiseAbs().maxCoeff() == 0.0);
    CHECK((gates.row(t).segment(7, 7).transpose() - a.f).cwiseAbs().maxCoeff() == 0.0);
    CHECK((gates.row(t).segment(14, 7).transpose() - a.g).cwiseAbs().maxCoeff() == 0.0);
    CHECK((gates.row(t).segment(21, 7).transpose() - a.o).cwiseAbs().maxCoeff() == 0.0);
    CHECK((concat.row(t).segment(0, 7).transpose() - a.h).cwiseAbs().maxCoeff() == 0.0);
    CHECK((concat.row(t).segment(35, 7).transpose() - a.o).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(probe_source_from_name("concat") == ProbeSource::concat);
  CHECK(std::string(probe_source_name(ProbeSource::gates)) == "gates");
  CHECK_THROWS_AS(probe_source_from_name("everything"), std::invalid_argument);
}

TEST_CASE("probe gradients match central differences", "[probes]") {
  for (std::uint64_t seed : {10u, 11u, 12u}) {
    Rng rng(seed);
    ProbeParams p = init_probe(6, 5, 4, rng);
    const MatrixXd x = random_matrix(rng, 8, 6, -1.0, 1.0);
    std::vector<int> y;
    std::uniform_int_distribution<int> label(0, 3);
    for (int k = 0; k < 8; ++k) y.push_back(label(rng));
    const double worst = probe_gradient_check_max_rel_error(p, x, y, 1e-4);
    INFO("seed " << seed << " max rel error " << worst);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("an all-zero probe pays only the uniform cross-entropy", "[probes]") {
  const ProbeParams p = zeros_probe(5, 4, 4);
  Rng rng(3);
  const MatrixXd x = random_matrix(rng, 6, 5);
  const std::vector<int> y{0, 1, 2, 3, 0, 1};
  CHECK_THAT(probe_loss_and_gradients(p, x, y, 1e-4, nullptr), WithinAbs(std::log(4.0), 1e-12));
}

TEST_CASE("probes separate labeled clusters", "[probes]") {
  Rng rng(515);
  const auto [x, y] = clustered_features(rng, 200, 10);
  ProbeOptions opt;
  opt.seed = 77;
  const ProbeTrainResult result = train_probe(x, y, opt);
  REQUIRE(result.loss.size() == 300);
  CHECK(result.loss.back() < result.loss.front());
  CHECK(probe_accuracy(result.params, x, y) > 0.95);

  const MatrixXd probs = probe_predict(result.params, x);
  for (int k = 0; k < probs.rows(); ++k) CHECK_THAT(probs.row(k).sum(), WithinAbs(1.0, 1e-12));
}

TEST_CASE("the weight penalty shrinks weights without touching biases", "[probes]") {
  Rng rng(21);
  const auto [x, y] = clustered_features(rng, 120, 8);
  ProbeOptions loose;
  loose.l2 = 0.0;
  loose.seed = 5;
  ProbeOptions tight = loose;
  tight.l2 = 0.1;
  const double loose_norm = train_probe(x, y, loose).params.w1.norm();
  const double tight_norm = train_probe(x, y, tight).params.w1.norm();
  CHECK(tight_norm < 0.5 * loose_norm);

  // the penalty itself is part of the reported loss
  ProbeParams p = zeros_probe(8, 4, 4);
  p.w1.setConstant(0.5);
  const double without = probe_loss_and_gradients(p, x, y, 0.0, nullptr);
  const double with = probe_loss_and_gradients(p, x, y, 1e-2, nullptr);
  CHECK_THAT(with - without, WithinAbs(1e-2 * p.w1.squaredNorm(), 1e-12));
}

TEST_CASE("probe training validates its inputs", "[probes]") {
  Rng rng(8);
  const MatrixXd x = random_matrix(rng, 10, 6);
  CHECK_THROWS_AS(train_probe(x, std::vector<int>(10, 1)), std::invalid_argument);        // one class
  CHECK_THROWS_AS(train_probe(x, std::vector<int>{0, 1}), std::invalid_argument);         // count mismatch
  CHECK_THROWS_AS(train_probe(x, std::vector<int>(10, 5)), std::invalid_argument);        // out of range
  CHECK_THROWS_AS(train_probe(MatrixXd(0, 6), std::vector<int>{}), std::invalid_argument);
  const ProbeParams p = zeros_probe(6, 4, 4);
  CHECK_THROWS_AS(probe_predict(p, random_matrix(rng, 3, 5)), std::invalid_argument);
}

TEST_CASE("probe training is reproducible per seed", "[probes]") {
  Rng rng(31);
  const auto [x, y] = clustered_features(rng, 60, 6);
  ProbeOptions opt;
  opt.seed = 123;
  opt.epochs = 40;
  const ProbeTrainResult a = train_probe(x, y, opt);
  const ProbeTrainResult b = train_probe(x, y, opt);
  CHECK((a.params.w1.array() == b.params.w1.array()).all());
  CHECK(a.loss == b.loss);
  opt.seed = 124;
  const ProbeTrainResult c = train_probe(x, y, opt);
  CHECK_FALSE((a.params.w1.array() == c.params.w1.array()).all());
}

TEST_CASE("probes decode a signal carried by recurrent state", "[probes]") {
  // two input regimes drive the cell into distinguishable states
  Rng rng(606);
  const SequenceModel m = init_model(9, 10, 3, rng);
  MatrixXd features(40 * 2, probe_source_dim(m, ProbeSource::concat));
  std::vector<int> labels;
  for (int series = 0; series < 8; ++series) {
    const int regime = series % 2;
    MatrixXd inputs = random_matrix(rng, 10, 9, 0.0, 0.3);
    if (regime == 1) inputs.array() += 0.6;
    const MatrixXd acts = extract_activations(m, inputs, ProbeSource::concat);
    for (int t = 5; t < 10; ++t) {  // later steps carry settled state
      features.row(static_cast<int>(labels.size())) = acts.row(t);
      labels.push_back(regime);
    }
  }
  features.conservativeResize(static_cast<int>(labels.size()), Eigen::NoChange);
  ProbeOptions opt;
  opt.seed = 9;
  const ProbeTrainResult result = train_probe(features, labels, opt);
  CHECK(probe_accuracy(result.params, features, labels) > 0.9);
}

TEST_CASE("adaptation lag finds the first sustained switch after the cut", "[probes]") {
  std::vector<int> immediate(35, 1);
  for (int t = 18; t < 35; ++t) immediate[t] = 2;
  CHECK(adaptation_lag(argmax_curve(immediate), 2, 18) == 0);

  std::vector<int> delayed(35, 1);
  for (int t = 23; t < 35; ++t) delayed[t] = 2;
  CHECK(adaptation_lag(argmax_curve(delayed), 2, 18) == 5);

  // a two-step blip does not count as settled
  std::vector<int> blip(35, 1);
  blip[20] = 2;
  blip[21] = 2;
  for (int t = 25; t < 35; ++t) blip[t] = 2;
  CHECK(adaptation_lag(argmax_curve(blip), 2, 18) == 7);

  std::vector<int> never(35, 1);
  CHECK(adaptation_lag(argmax_curve(never), 2, 18) == 17);

  // a run that only starts inside the final sustain window cannot settle
  std::vector<int> tail(35, 1);
  tail[33] = 2;
  tail[34] = 2;
  CHECK(adaptation_lag(argmax_curve(tail), 2, 18) == 17);

  // pre-cut occurrences are ignored
  std::vector<int> early(35, 2);
  for (int t = 18; t < 35; ++t) early[t] = 1;
  CHECK(adaptation_lag(argmax_curve(early), 2, 18) == 17);

  CHECK(adaptation_lag(argmax_curve(immediate), 2, 18, 1) == 0);
  CHECK_THROWS_AS(adaptation_lag(argmax_curve(immediate), 2, 40), std::invalid_argument);
  CHECK_THROWS_AS(adaptation_lag(argmax_curve(immediate), 9, 18), std::invalid_argument);
  CHECK_THROWS_AS(adaptation_lag(argmax_curve(immediate), 2, 18, 0), std::invalid_argument);
}

TEST_CASE("per-timestep probes learn only what their step exposes", "[probes]") {
  // the class signal only enters the features from step 3 onward
  Rng rng(717);
  const auto make_series = [&rng](int label) {
    MatrixXd a = random_matrix(rng, 6, 8, -0.5, 0.5);
    for (int t = 3; t < 6; ++t) a(t, label) += 2.0;
    return a;
  };
  std::vector<MatrixXd> activations, held_out;
  std::vector<int> labels, held_out_labels;
  for (int s = 0; s < 24; ++s) {
    activations.push_back(make_series(s % 2));
    labels.push_back(s % 2);
    held_out.push_back(make_series(s % 2));
    held_out_labels.push_back(s % 2);
  }
  ProbeOptions opt;
  opt.num_classes = 2;
  opt.seed = 50;
  const ProbeBank bank = train_probe_bank(activations, labels, opt);
  REQUIRE(bank.size() == 6);

  // generalization: late steps carry the signal, step 0 is pure noise
  int early_hits = 0, late_hits = 0;
  for (std::size_t s = 0; s < held_out.size(); ++s) {
    const MatrixXd probs = probe_bank_predict(bank, held_out[s]);
    REQUIRE(probs.rows() == 6);
    Eigen::Index head, tail;
    probs.row(0).maxCoeff(&head);
    probs.row(5).maxCoeff(&tail);
    early_hits += (static_cast<int>(head) == held_out_labels[s]);
    late_hits += (static_cast<int>(tail) == held_out_labels[s]);
  }
  CHECK(late_hits == 24);
  CHECK(early_hits < 20);  // step-0 probe has nothing to latch onto

  // splice-style shorter series use the leading probes; longer ones cannot
  CHECK(probe_bank_predict(bank, activations[0].topRows(4)).rows() == 4);
  MatrixXd too_long = random_matrix(rng, 7, 8);
  CHECK_THROWS_AS(probe_bank_predict(bank, too_long), std::invalid_argument);
  CHECK_THROWS_AS(probe_bank_predict(ProbeBank{}, activations[0]), std::invalid_argument);

  std::vector<MatrixXd> ragged = activations;
  ragged[1] = random_matrix(rng, 5, 8);
  CHECK_THROWS_AS(train_probe_bank(ragged, labels, opt), std::invalid_argument);
}

TEST_CASE("probe banks are reproducible and round-trip through disk", "[probes]") {
  Rng rng(818);
  std::vector<MatrixXd> activations;
  std::vector<int> labels;
  for (int s = 0; s < 12; ++s) {
    MatrixXd a = random_matrix(rng, 4, 6, -0.5, 0.5);
    a.col(s % 3).array() += 1.5;
    activations.push_back(std::move(a));
    labels.push_back(s % 3);
  }
  ProbeOptions opt;
  opt.epochs = 60;
  opt.seed = 4;
  const ProbeBank a = train_probe_bank(activations, labels, opt);
  const ProbeBank b = train_probe_bank(activations, labels, opt);
  REQUIRE(a.size() == b.size());
  for (std::size_t t = 0; t < a.size(); ++t) CHECK((a[t].w1.array() == b[t].w1.array()).all());
  // distinct steps train from distinct derived streams
  CHECK_FALSE((a[0].w1.array() == a[1].w1.array()).all());

  const auto path = std::filesystem::temp_directory_path() / "levelk_bank.json";
  save_probe_bank(path.string(), a);
  const ProbeBank back = load_probe_bank(path.string());
  REQUIRE(back.size() == a.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK((a[t].w1.array() == back[t].w1.array()).all());
    CHECK((a[t].b2.array() == back[t].b2.array()).all());
  }
  std::filesystem::remove(path);
}

TEST_CASE("probe checkpoints round-trip bit for bit", "[probes]") {
  Rng rng(2021);
  const ProbeParams p = init_probe(50, 16, 4, rng);
  const auto path = std::filesystem::temp_directory_path() / "levelk_probe.json";
  save_probe(path.string(), p);
  const ProbeParams back = load_probe(path.string());
  CHECK((p.w1.array() == back.w1.array()).all());
  CHECK((p.b1.array() == back.b1.array()).all());
  CHECK((p.w2.array() == back.w2.array()).all());
  CHECK((p.b2.array() == back.b2.array()).all());

  std::ifstream in(path);
  json j = json::parse(in);
  in.close();
  j["format_version"] = 9;
  std::ofstream out(path);
  out << j.dump();
  out.close();
  CHECK_THROWS_WITH(load_probe(path.string()), ContainsSubstring("format version"));
  std::filesystem::remove(path);
}
