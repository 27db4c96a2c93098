#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "mmt/error.hpp"
#include "mmt/losses.hpp"
#include "test_util.hpp"

using namespace mmt;
using mmt::testing::random_probs;
using mmt::testing::random_tensor;

namespace {

const double kLn2 = std::log(2.0);
const double kLn3 = std::log(3.0);

// Rectangle of width dp and height dn; labels {0,0,1,1}. Every anchor's
// hardest positive lies at dp and its hardest negative at dn.
Tensor rectangle(double dp, double dn) {
  return Tensor::from_rows({{0, 0}, {dp, 0}, {0, dn}, {dp, dn}});
}
const std::vector<int> kRectLabels = {0, 0, 1, 1};

double eval(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x) {
  Tape tape;
  return f(tape, tape.constant(x)).value().item();
}

double hard_tri(const Tensor& f, double margin) {
  const MiningResult m = mine_hardest(f, kRectLabels);
  return eval([&](Tape&, const Var& x) { return hard_triplet_loss(x, m, margin); }, f);
}

double hard_stri(const Tensor& f) {
  const MiningResult m = mine_hardest(f, kRectLabels);
  return eval([&](Tape&, const Var& x) { return hard_softmax_triplet_loss(x, m); }, f);
}

double soft_stri(const Tensor& f, const std::vector<double>& t) {
  const MiningResult m = mine_hardest(f, kRectLabels);
  return eval([&](Tape&, const Var& x) { return soft_softmax_triplet_loss(x, t, m); }, f);
}

double entropy(const Tensor& t, std::size_t row) {
  double h = 0.0;
  for (std::size_t c = 0; c < t.cols(); ++c) h -= t.at(row, c) * std::log(t.at(row, c));
  return h;
}

RunConfig tiny_config() {
  RunConfig c;
  c.data.input_dim = 5;
  c.model.hidden_dim = 7;
  c.model.feature_dim = 4;
  return c;
}

MmtBatch random_batch(std::uint64_t seed) {
  MmtBatch b;
  b.view1 = random_tensor({8, 5}, seed, -2, 2);
  b.view2 = random_tensor({8, 5}, seed + 1, -2, 2);
  b.labels = {0, 0, 1, 1, 2, 2, 3, 3};
  return b;
}

}  // namespace

TEST_CASE("hardest mining examples") {
  SUBCASE("identical pairs") {
    const Tensor f = Tensor::from_rows({{1, 1}, {1, 1}, {4, 5}, {4, 5}});
    const MiningResult m = mine_hardest(f, kRectLabels);
    CHECK(m.positive == std::vector<std::size_t>{1, 0, 3, 2});
    CHECK(m.negative == std::vector<std::size_t>{2, 2, 0, 0});
    const Tensor d = pairwise_distances(f);
    CHECK(d.at(0, m.positive[0]) == 0.0);
    CHECK(d.at(0, m.negative[0]) == 5.0);
  }
  SUBCASE("1-D points 0, 1, 10, 11") {
    const MiningResult m = mine_hardest(Tensor::matrix(4, 1, {0, 1, 10, 11}), kRectLabels);
    CHECK(m.positive[0] == 1);
    CHECK(m.negative[0] == 2);
    CHECK(m.positive[3] == 2);
    CHECK(m.negative[3] == 1);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(mine_hardest(Tensor({3, 2}), std::vector<int>{4, 4, 4}), MiningError);
    CHECK_THROWS_AS(mine_hardest(Tensor({3, 2}), std::vector<int>{0, 0, 1}), MiningError);
    CHECK_THROWS_AS(mine_hardest(Tensor({3, 2}), std::vector<int>{0, 0}), DimensionError);
  }
}

TEST_CASE("hard classification examples") {
  Tape tape;
  CHECK(std::abs(hard_ce_loss(tape.constant(Tensor({3, 5}, 0.2)), std::vector<int>{0, 3, 4}).value().item() -
                 std::log(5.0)) < 1e-12);
  CHECK(hard_ce_loss(tape.constant(Tensor::from_rows({{0, 1}, {1, 0}})), std::vector<int>{1, 0})
            .value()
            .item() < 1e-11);
  CHECK(std::abs(hard_ce_loss(tape.constant(Tensor::from_rows({{2.0 / 3, 1.0 / 3}})), std::vector<int>{0})
                     .value()
                     .item() -
                 0.405465108108164) < 1e-12);
  CHECK_THROWS_AS(hard_ce_loss(tape.constant(Tensor({1, 2}, 0.5)), std::vector<int>{2}), DimensionError);
}

TEST_CASE("soft classification examples") {
  Tape tape;
  const Tensor student = random_probs(3, 4, 1);
  const Tensor one_hot = Tensor::from_rows({{0, 1, 0, 0}, {0, 0, 0, 1}, {1, 0, 0, 0}});
  const double soft = soft_ce_loss(tape.constant(student), one_hot).value().item();
  const double hard = hard_ce_loss(tape.constant(student), std::vector<int>{1, 3, 0}).value().item();
  CHECK(std::abs(soft - hard) < 1e-12);

  const Tensor uniform({2, 6}, 1.0 / 6.0);
  CHECK(std::abs(soft_ce_loss(tape.constant(uniform), uniform).value().item() - std::log(6.0)) < 1e-12);

  const double v = soft_ce_loss(tape.constant(Tensor::from_rows({{0.5, 0.5}})),
                                Tensor::from_rows({{0.75, 0.25}}))
                       .value()
                       .item();
  CHECK(std::abs(v - kLn2) < 1e-12);
  CHECK_THROWS_AS(soft_ce_loss(tape.constant(uniform), Tensor({2, 5})), DimensionError);
}

TEST_CASE("soft classification obeys the Gibbs inequality") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Tensor p = random_probs(1, 5, seed);
    const Tensor t = random_probs(1, 5, seed + 1000);
    Tape tape;
    CHECK(soft_ce_loss(tape.constant(p), t).value().item() >= entropy(t, 0) - 1e-12);
    CHECK(std::abs(soft_ce_loss(tape.constant(t), t).value().item() - entropy(t, 0)) < 1e-12);
  }
}

TEST_CASE("margin triplet examples") {
  CHECK(hard_tri(rectangle(0.2, 1.0), 0.5) == 0.0);
  CHECK(std::abs(hard_tri(rectangle(0.7, 0.7), 0.5) - 0.5) < 1e-12);
  CHECK(std::abs(hard_tri(rectangle(0.9, 0.4), 0.5) - 1.0) < 1e-9);
}

TEST_CASE("margin triplet vanishes when every margin is satisfied") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Tensor jitter = random_tensor({4, 2}, seed, -0.05, 0.05);
    Tensor f = rectangle(0.3, 2.0);
    for (std::size_t i = 0; i < f.numel(); ++i) f[i] += jitter[i];
    CHECK(hard_tri(f, 0.5) == 0.0);
  }
}

TEST_CASE("softmax triplet examples") {
  auto T = [](const Tensor& f) {
    return softmax_triplet_values(f, mine_hardest(f, kRectLabels));
  };
  for (double t : T(rectangle(0.8, 0.8))) CHECK(std::abs(t - 0.5) < 1e-12);
  // The distance carries a 1e-12 term under the root, so d_p = 0 reads as 1e-6.
  for (double t : T(rectangle(0.0, kLn3))) CHECK(std::abs(t - 0.75) < 1e-6);
  for (double t : T(rectangle(1.0, 1.0 + kLn3))) CHECK(std::abs(t - 0.75) < 1e-12);
  for (double t : T(rectangle(0.5, 1000.0))) CHECK(t == 1.0);
}

TEST_CASE("hard softmax triplet examples") {
  CHECK(std::abs(hard_stri(rectangle(0.8, 0.8)) - kLn2) < 1e-12);
  CHECK(hard_stri(rectangle(0.5, 1000.0)) < 1e-11);
  CHECK(std::abs(hard_stri(rectangle(1.0, 1.0 + kLn3)) + std::log(0.75)) < 1e-12);
}

TEST_CASE("soft softmax triplet examples") {
  const Tensor f = rectangle(0.4, 1.3);
  CHECK(std::abs(soft_stri(f, {1, 1, 1, 1}) - hard_stri(f)) < 1e-12);
  const Tensor half = rectangle(0.8, 0.8);
  CHECK(std::abs(soft_stri(half, {0.5, 0.5, 0.5, 0.5}) - kLn2) < 1e-12);
  CHECK(std::abs(soft_stri(half, {0.75, 0.75, 0.75, 0.75}) - kLn2) < 1e-12);
  CHECK_THROWS_AS(soft_stri(f, {1, 1, 1.5, 1}), NumericError);
  CHECK_THROWS_AS(soft_stri(f, {1, 1, std::nan(""), 1}), NumericError);
  CHECK_THROWS_AS(soft_stri(f, {1, 1, 1}), DimensionError);
}

TEST_CASE("soft softmax triplet with an all-one teacher equals the hard loss") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Tensor f = random_tensor({8, 3}, seed, -2, 2);
    const std::vector<int> labels = {0, 0, 1, 1, 2, 2, 3, 3};
    const MiningResult m = mine_hardest(f, labels);
    const std::vector<double> ones(8, 1.0);
    Tape tape;
    auto x = tape.constant(f);
    CHECK(std::abs(soft_softmax_triplet_loss(x, ones, m).value().item() -
                   hard_softmax_triplet_loss(x, m).value().item()) < 1e-12);
  }
}

TEST_CASE("every loss passes finite-difference checks on random 8-sample batches") {
  const std::vector<int> labels = {0, 0, 1, 1, 2, 2, 3, 3};
  LossWeights w;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor f = random_tensor({8, 3}, seed, -2, 2);
    const Tensor logits = random_tensor({8, 4}, seed + 100, -2, 2);
    const Tensor teacher = random_probs(8, 4, seed + 200);
    const MiningResult m = mine_hardest(f, labels);
    const std::vector<double> teacher_t = softmax_triplet_values(random_tensor({8, 3}, seed + 300), m);
    CHECK(grad_check([&](Tape&, const Var& z) { return hard_ce_loss(row_softmax(z), labels); }, logits, 1e-5) < 1e-4);
    CHECK(grad_check([&](Tape&, const Var& z) { return soft_ce_loss(row_softmax(z), teacher); }, logits, 1e-5) < 1e-4);
    CHECK(grad_check([&](Tape&, const Var& x) { return hard_triplet_loss(x, m, 0.5); }, f, 1e-5) < 1e-4);
    CHECK(grad_check([&](Tape&, const Var& x) { return hard_softmax_triplet_loss(x, m); }, f, 1e-5) < 1e-4);
    CHECK(grad_check([&](Tape&, const Var& x) { return soft_softmax_triplet_loss(x, teacher_t, m); }, f, 1e-5) < 1e-4);
    CHECK(grad_check(
              [&](Tape& t, const Var& x) {
                const Tensor probs = random_probs(8, 4, seed + 400);
                return source_loss(x, t.constant(probs), labels, w);
              },
              f, 1e-5) < 1e-4);
  }
}

TEST_CASE("total loss gradient matches finite differences for every network parameter") {
  const RunConfig c = tiny_config();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    NetworkPair pair = init_pair(c, 4, 10 + seed, 20 + seed);
    const MmtBatch batch = random_batch(seed);
    for (Network* net : {&pair.net1, &pair.net2}) {
      for (Tensor* p : net->parameters()) {
        const double err = grad_check(
            [&](Tape& tape) { return total_mmt_loss(tape, batch, pair, c.weights).total; }, *p, 1e-5);
        CHECK(err < 1e-4);
      }
    }
  }
}

TEST_CASE("total loss diagnostics reproduce the weighted objective") {
  const RunConfig c = tiny_config();
  NetworkPair pair = init_pair(c, 4, 1, 2);
  pair.avg1 = snapshot(init_pair(c, 4, 3, 4).net1);
  const MmtBatch batch = random_batch(7);
  for (auto [lid, ltri] : {std::pair{0.5, 0.8}, {0.0, 0.0}, {1.0, 1.0}, {0.3, 0.6}}) {
    LossWeights w;
    w.lambda_id = lid;
    w.lambda_tri = ltri;
    Tape tape;
    const MmtLoss l = total_mmt_loss(tape, batch, pair, w);
    CHECK(std::abs(l.total.value().item() - weighted_total(l.terms, w)) < 1e-12);
    const auto& t = l.terms;
    if (lid == 0.0 && ltri == 0.0)
      CHECK(std::abs(l.total.value().item() - (t.id1 + t.id2 + t.tri1 + t.tri2)) < 1e-12);
    if (lid == 1.0 && ltri == 1.0)
      CHECK(std::abs(l.total.value().item() - (t.sid1 + t.sid2 + t.stri1 + t.stri2)) < 1e-12);
  }
}

TEST_CASE("cross wiring: each network learns from its peer's average model") {
  const RunConfig c = tiny_config();
  NetworkPair pair = init_pair(c, 4, 1, 2);
  const MmtBatch batch = random_batch(9);
  Tape base_tape;
  const LossTerms base = total_mmt_loss(base_tape, batch, pair, c.weights).terms;
  pair.avg1 = snapshot(init_pair(c, 4, 5, 6).net1);
  Tape tape;
  const LossTerms moved = total_mmt_loss(tape, batch, pair, c.weights).terms;
  CHECK(moved.sid1 == base.sid1);
  CHECK(moved.stri1 == base.stri1);
  CHECK(moved.sid2 != base.sid2);
  CHECK(moved.id1 == base.id1);
  CHECK(moved.id2 == base.id2);
}

TEST_CASE("single-network mode teaches net1 with its own average model") {
  const RunConfig c = tiny_config();
  NetworkPair pair = init_pair(c, 4, 1, 2);
  const MmtBatch batch = random_batch(11);
  Tape tape;
  const MmtLoss l = total_mmt_loss(tape, batch, pair, c.weights, {true, false});
  CHECK(l.terms.id2 == 0.0);
  CHECK(l.terms.sid2 == 0.0);
  CHECK(l.terms.stri2 == 0.0);
  pair.avg2 = snapshot(init_pair(c, 4, 7, 8).net2);
  Tape again;
  CHECK(total_mmt_loss(again, batch, pair, c.weights, {true, false}).total.value().item() ==
        l.total.value().item());
}

TEST_CASE("no gradient reaches the average models") {
  const RunConfig c = tiny_config();
  NetworkPair pair = init_pair(c, 4, 1, 2);
  pair.avg1 = snapshot(init_pair(c, 4, 3, 4).net1);
  pair.avg2 = snapshot(init_pair(c, 4, 5, 6).net2);
  pair.net1.set_requires_grad(true);
  pair.net2.set_requires_grad(true);
  const Network avg1 = snapshot(pair.avg1);
  const MmtBatch batch = random_batch(13);

  Tape tape;
  const MmtLoss l = total_mmt_loss(tape, batch, pair, c.weights);
  tape.backward(l.total);
  for (const Network* avg : {&pair.avg1, &pair.avg2})
    for (const Tensor* p : avg->parameters()) CHECK_FALSE(p->requires_grad());
  for (std::size_t k = 0; k < 6; ++k) {
    for (std::size_t i = 0; i < avg1.parameters()[k]->numel(); ++i)
      CHECK((*pair.avg1.parameters()[k])[i] == (*avg1.parameters()[k])[i]);
  }

  // Perturbing an average weight moves the loss value, yet it stays gradient-free.
  pair.avg1.encoder.w1[0] += 0.5;
  Tape moved;
  CHECK(total_mmt_loss(moved, batch, pair, c.weights).total.value().item() != l.total.value().item());
  CHECK_FALSE(pair.avg1.encoder.w1.requires_grad());
}

TEST_CASE("teacher-own mining changes only the soft triplet terms") {
  const RunConfig c = tiny_config();
  NetworkPair pair = init_pair(c, 4, 1, 2);
  pair.avg1 = snapshot(init_pair(c, 4, 3, 4).net1);
  pair.avg2 = snapshot(init_pair(c, 4, 5, 6).net2);
  const MmtBatch batch = random_batch(15);
  Tape a, b;
  const LossTerms shared = total_mmt_loss(a, batch, pair, c.weights).terms;
  const LossTerms own = total_mmt_loss(b, batch, pair, c.weights, {false, true}).terms;
  CHECK(own.id1 == shared.id1);
  CHECK(own.sid1 == shared.sid1);
  CHECK(own.tri2 == shared.tri2);
}

TEST_CASE("total loss rejects mismatched views") {
  const RunConfig c = tiny_config();
  NetworkPair pair = init_pair(c, 4, 1, 2);
  MmtBatch batch = random_batch(1);
  batch.labels.pop_back();
  Tape tape;
  CHECK_THROWS_AS(total_mmt_loss(tape, batch, pair, c.weights), DimensionError);
}
