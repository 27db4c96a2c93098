#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "mmt/error.hpp"
#include "mmt/losses.hpp"
#include "mmt/model.hpp"
#include "test_util.hpp"

using namespace mmt;
using mmt::testing::random_tensor;

namespace {

Tensor identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

bool same_values(const Network& a, const Network& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  for (std::size_t k = 0; k < pa.size(); ++k) {
    if (pa[k]->shape() != pb[k]->shape()) return false;
    for (std::size_t i = 0; i < pa[k]->numel(); ++i) {
      if ((*pa[k])[i] != (*pb[k])[i]) return false;
    }
  }
  return true;
}

RunConfig small_config() {
  RunConfig c;
  c.data.input_dim = 5;
  c.model.hidden_dim = 6;
  c.model.feature_dim = 3;
  return c;
}

}  // namespace

TEST_CASE("encode with zero parameters gives zero features") {
  EncoderParams enc{Tensor({4, 6}), Tensor({6}), Tensor({6, 3}), Tensor({3})};
  const Tensor f = encode(random_tensor({5, 4}, 1), enc);
  CHECK(f.shape() == Shape{5, 3});
  for (double v : f.data()) CHECK(v == 0.0);
}

TEST_CASE("identity layers reduce the encoder to tanh") {
  EncoderParams enc{identity(4), Tensor({4}), identity(4), Tensor({4})};
  const Tensor x = random_tensor({3, 4}, 2, -3.0, 3.0);
  const Tensor f = encode(x, enc);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(f[i] == std::tanh(x[i]));
}

TEST_CASE("encoder output for seed 42 matches the pinned golden vector") {
  const EncoderParams enc = make_encoder(4, 8, 3, 42);
  const Tensor x = Tensor::matrix(1, 4, {0.5, -1.0, 0.25, 2.0});
  const Tensor f = encode(x, enc);
  const double golden[] = {-0.2066294019848226, -0.42075710902690694, -0.22675347075426031};
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(f[j] - golden[j]) < 1e-12);
}

TEST_CASE("encode rejects a wrong input width") {
  const EncoderParams enc = make_encoder(4, 8, 3, 1);
  CHECK_THROWS_AS(encode(Tensor({2, 5}), enc), DimensionError);
}

TEST_CASE("classify examples") {
  SUBCASE("zero weights give uniform rows") {
    ClassifierParams cls{Tensor({3, 5}), Tensor({5})};
    const Tensor p = classify(random_tensor({4, 3}, 3), cls);
    for (double v : p.data()) CHECK(std::abs(v - 0.2) < 1e-15);
  }
  SUBCASE("bias (ln2, 0) gives (2/3, 1/3)") {
    ClassifierParams cls{Tensor({3, 2}), Tensor::vector({std::log(2.0), 0.0})};
    const Tensor p = classify(random_tensor({2, 3}, 4), cls);
    CHECK(std::abs(p.at(0, 0) - 2.0 / 3.0) < 1e-15);
    CHECK(std::abs(p.at(1, 1) - 1.0 / 3.0) < 1e-15);
  }
  SUBCASE("large aligned weights saturate") {
    ClassifierParams cls{identity(3), Tensor({3})};
    for (auto& v : cls.w.data()) v *= 100.0;
    const Tensor p = classify(Tensor::from_rows({{1, 0, 0}, {0, 0, 1}}), cls);
    CHECK(p.at(0, 0) > 1.0 - 1e-15);
    CHECK(p.at(1, 2) > 1.0 - 1e-15);
  }
  SUBCASE("feature width mismatch") {
    ClassifierParams cls{Tensor({3, 2}), Tensor({2})};
    CHECK_THROWS_AS(classify(Tensor({1, 4}), cls), DimensionError);
  }
}

TEST_CASE("ema_update examples") {
  const Tensor prev = random_tensor({3, 2}, 5);
  const Tensor cur = random_tensor({3, 2}, 6);
  const Tensor zero_alpha = ema_update(prev, cur, 0.0);
  for (std::size_t i = 0; i < cur.numel(); ++i) CHECK(zero_alpha[i] == cur[i]);

  CHECK(ema_update(Tensor::scalar(1.0), Tensor::scalar(0.0), 0.999)[0] == 0.999);

  const Tensor fixed = ema_update(prev, prev, 0.7);
  for (std::size_t i = 0; i < prev.numel(); ++i) CHECK(fixed[i] == doctest::Approx(prev[i]).epsilon(1e-15));

  CHECK_THROWS_AS(ema_update(prev, cur, 1.0), ConfigError);
  CHECK_THROWS_AS(ema_update(prev, cur, -0.1), ConfigError);
  CHECK_THROWS_AS(ema_update(prev, Tensor({2, 3}), 0.5), DimensionError);
}

TEST_CASE("ema converges geometrically to a constant target") {
  for (double alpha : {0.0, 0.5, 0.9, 0.999}) {
    Tensor avg = Tensor::vector({2.0, -1.0, 0.5});
    const Tensor c = Tensor::vector({-0.5, 0.25, 0.5});
    const Tensor avg0 = avg.detached();
    for (int k = 1; k <= 100; ++k) {
      avg = ema_update(avg, c, alpha);
      for (std::size_t i = 0; i < 3; ++i) {
        const double expected = std::pow(alpha, k) * std::abs(avg0[i] - c[i]);
        CHECK(std::abs(std::abs(avg[i] - c[i]) - expected) < 1e-12);
      }
    }
  }
}

TEST_CASE("ema components stay between their inputs") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Tensor a = random_tensor({4}, seed, -5, 5);
    const Tensor b = random_tensor({4}, seed + 500, -5, 5);
    const double alpha = random_tensor({1}, seed + 900, 0.0, 0.9999)[0];
    const Tensor e = ema_update(a, b, alpha);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(e[i] >= std::min(a[i], b[i]));
      CHECK(e[i] <= std::max(a[i], b[i]));
    }
  }
}

TEST_CASE("ema on networks leaves its inputs unchanged") {
  const RunConfig c = small_config();
  NetworkPair pair = init_pair(c, 4, 1, 2);
  const Network before = snapshot(pair.net2);
  const Network out = ema_update(pair.avg1, pair.net2, 0.5);
  CHECK(same_values(pair.avg1, pair.net1));
  CHECK(same_values(pair.net2, before));
  CHECK_FALSE(same_values(out, pair.avg1));
}

TEST_CASE("init_pair") {
  const RunConfig c = small_config();
  const NetworkPair a = init_pair(c, 4, 11, 12);
  CHECK(same_values(a.avg1, a.net1));
  CHECK(same_values(a.avg2, a.net2));
  CHECK_FALSE(same_values(a.net1, a.net2));
  CHECK(a.net1.architecture() == Architecture{5, 6, 3, 4});
  CHECK(a.iteration == 0);
  CHECK_THROWS_AS(init_pair(c, 4, 3, 3), ConfigError);
  const NetworkPair b = init_pair(c, 4, 11, 12);
  CHECK(same_values(a.net1, b.net1));
  CHECK(same_values(a.net2, b.net2));
}

TEST_CASE("checkpoint round trip is exact") {
  const RunConfig c = small_config();
  NetworkPair pair = init_pair(c, 4, 21, 22);
  ema_update_inplace(pair.avg1, init_pair(c, 4, 23, 24).net1, 0.3);
  pair.iteration = 17;
  const auto path = std::filesystem::temp_directory_path() / "mmt_model_ckpt.json";
  save_checkpoint(path.string(), pair, c);
  const NetworkPair back = load_checkpoint(path.string());
  std::filesystem::remove(path);
  CHECK(same_values(back.net1, pair.net1));
  CHECK(same_values(back.net2, pair.net2));
  CHECK(same_values(back.avg1, pair.avg1));
  CHECK(same_values(back.avg2, pair.avg2));
  CHECK(back.iteration == 17);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.json"), ArtifactError);
  nlohmann::json j = checkpoint_to_json(pair, c);
  j["net1"].erase("encoder.w2");
  CHECK_THROWS_AS(checkpoint_from_json(j), ArtifactError);
}

TEST_CASE("backward through a teacher-weighted loss leaves average models untouched") {
  const RunConfig c = small_config();
  NetworkPair pair = init_pair(c, 4, 31, 32);
  const Network avg_before = snapshot(pair.avg2);
  pair.net1.set_requires_grad(true);
  const Tensor x = random_tensor({6, 5}, 33);
  const Tensor teacher = classify(encode(x, pair.avg2.encoder), pair.avg2.classifier);
  Tape tape;
  auto probs = classify(tape, encode(tape, tape.constant(x), pair.net1.encoder), pair.net1.classifier);
  tape.backward(soft_ce_loss(probs, teacher));
  CHECK(same_values(pair.avg2, avg_before));
  for (const Tensor* p : pair.avg2.parameters()) CHECK_FALSE(p->requires_grad());
  bool any_nonzero = false;
  for (const Tensor* p : pair.net1.parameters()) {
    for (double g : p->grad()) any_nonzero |= g != 0.0;
  }
  CHECK(any_nonzero);
}
