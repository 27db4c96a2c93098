#include "mmt/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "mmt/error.hpp"

namespace mmt {

std::vector<Tensor*> Network::parameters() {
  return {&encoder.w1, &encoder.b1, &encoder.w2, &encoder.b2, &classifier.w, &classifier.b};
}

std::vector<const Tensor*> Network::parameters() const {
  return {&encoder.w1, &encoder.b1, &encoder.w2, &encoder.b2, &classifier.w, &classifier.b};
}

void Network::set_requires_grad(bool on) {
  for (Tensor* p : parameters()) p->set_requires_grad(on);
}

void Network::zero_grad() {
  for (Tensor* p : parameters()) p->zero_grad();
}

Architecture Network::architecture() const {
  return {encoder.input_dim(), encoder.hidden_dim(), encoder.feature_dim(),
          classifier.num_classes()};
}

namespace {

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases alike.
void fill_uniform(Tensor& t, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
}

}  // namespace

EncoderParams make_encoder(std::size_t input_dim, std::size_t hidden_dim,
                           std::size_t feature_dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  EncoderParams e{Tensor(Shape{input_dim, hidden_dim}), Tensor(Shape{hidden_dim}),
                  Tensor(Shape{hidden_dim, feature_dim}), Tensor(Shape{feature_dim})};
  fill_uniform(e.w1, input_dim, rng);
  fill_uniform(e.b1, input_dim, rng);
  fill_uniform(e.w2, hidden_dim, rng);
  fill_uniform(e.b2, hidden_dim, rng);
  return e;
}

ClassifierParams make_classifier(std::size_t feature_dim, std::size_t num_classes,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ClassifierParams c{Tensor(Shape{feature_dim, num_classes}), Tensor(Shape{num_classes})};
  fill_uniform(c.w, feature_dim, rng);
  fill_uniform(c.b, feature_dim, rng);
  return c;
}

Var encode(Tape& tape, const Var& x, EncoderParams& enc) {
  if (x.value().rank() != 2 || x.value().cols() != enc.input_dim()) {
    throw DimensionError("encode: input " + shape_string(x.shape()) +
                         " does not match encoder input_dim " +
                         std::to_string(enc.input_dim()));
  }
  Var h = tanh(add_bias(matmul(x, tape.param(enc.w1)), tape.param(enc.b1)));
  return add_bias(matmul(h, tape.param(enc.w2)), tape.param(enc.b2));
}

Var classify(Tape& tape, const Var& features, ClassifierParams& cls) {
  if (features.value().rank() != 2 || features.value().cols() != cls.feature_dim()) {
    throw DimensionError("classify: features " + shape_string(features.shape()) +
                         " do not match classifier input " +
                         std::to_string(cls.feature_dim()));
  }
  return row_softmax(add_bias(matmul(features, tape.param(cls.w)), tape.param(cls.b)));
}

Tensor encode(const Tensor& x, const EncoderParams& enc) {
  Tape tape;
  EncoderParams copy{enc.w1.detached(), enc.b1.detached(), enc.w2.detached(),
                     enc.b2.detached()};
  return encode(tape, tape.constant(x), copy).value().detached();
}

Tensor classify(const Tensor& features, const ClassifierParams& cls) {
  Tape tape;
  ClassifierParams copy{cls.w.detached(), cls.b.detached()};
  return classify(tape, tape.constant(features), copy).value().detached();
}

Tensor l2_normalize_rows(Tensor x) {
  const std::size_t m = x.rows(), n = x.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += x[i * n + j] * x[i * n + j];
    if (s == 0.0) continue;
    const double inv = 1.0 / std::sqrt(s);
    for (std::size_t j = 0; j < n; ++j) x[i * n + j] *= inv;
  }
  return x;
}

namespace {

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) {
    throw ConfigError("EMA momentum alpha must lie in [0,1), got " + std::to_string(alpha));
  }
}

void ema_into(std::span<double> avg, std::span<const double> cur, double alpha) {
  for (std::size_t i = 0; i < avg.size(); ++i) avg[i] = alpha * avg[i] + (1.0 - alpha) * cur[i];
}

}  // namespace

Tensor ema_update(const Tensor& avg_prev, const Tensor& current, double alpha) {
  check_alpha(alpha);
  if (avg_prev.shape() != current.shape()) {
    throw DimensionError("ema_update: shape mismatch " + shape_string(avg_prev.shape()) +
                         " vs " + shape_string(current.shape()));
  }
  Tensor out = avg_prev.detached();
  ema_into(out.data(), current.data(), alpha);
  return out;
}

Network ema_update(const Network& avg_prev, const Network& current, double alpha) {
  Network out = snapshot(avg_prev);
  ema_update_inplace(out, current, alpha);
  return out;
}

void ema_update_inplace(Network& avg, const Network& current, double alpha) {
  check_alpha(alpha);
  auto dst = avg.parameters();
  const auto src = current.parameters();
  for (std::size_t k = 0; k < dst.size(); ++k) {
    if (dst[k]->shape() != src[k]->shape()) {
      throw DimensionError("ema_update: parameter shape mismatch " +
                           shape_string(dst[k]->shape()) + " vs " +
                           shape_string(src[k]->shape()));
    }
    ema_into(dst[k]->data(), src[k]->data(), alpha);
  }
}

Network snapshot(const Network& net) {
  return Network{{net.encoder.w1.detached(), net.encoder.b1.detached(),
                  net.encoder.w2.detached(), net.encoder.b2.detached()},
                 {net.classifier.w.detached(), net.classifier.b.detached()}};
}

NetworkPair init_pair(const RunConfig& config, std::size_t num_classes, std::uint64_t seed1,
                      std::uint64_t seed2) {
  if (seed1 == seed2) throw ConfigError("init_pair: the two networks need different seeds");
  auto make = [&](std::uint64_t seed) {
    // Classifier stream is offset so it never aliases the encoder stream.
    return Network{make_encoder(config.data.input_dim, config.model.hidden_dim,
                                config.model.feature_dim, seed),
                   make_classifier(config.model.feature_dim, num_classes,
                                   seed ^ 0x9e3779b97f4a7c15ULL)};
  };
  NetworkPair pair;
  pair.net1 = make(seed1);
  pair.net2 = make(seed2);
  pair.avg1 = snapshot(pair.net1);
  pair.avg2 = snapshot(pair.net2);
  return pair;
}

// ---- checkpoint ------------------------------------------------------------

namespace {

constexpr const char* kParamNames[] = {"encoder.w1", "encoder.b1", "encoder.w2",
                                       "encoder.b2", "classifier.w", "classifier.b"};

std::vector<Shape> parameter_shapes(const Architecture& a) {
  return {{a.input_dim, a.hidden_dim},   {a.hidden_dim}, {a.hidden_dim, a.feature_dim},
          {a.feature_dim},               {a.feature_dim, a.num_classes},
          {a.num_classes}};
}

nlohmann::json arch_to_json(const Architecture& a) {
  return {{"input_dim", a.input_dim},
          {"hidden_dim", a.hidden_dim},
          {"feature_dim", a.feature_dim},
          {"num_classes", a.num_classes}};
}

}  // namespace

nlohmann::json network_to_json(const Network& net) {
  nlohmann::json j = nlohmann::json::object();
  const auto params = net.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto d = params[k]->data();
    j[kParamNames[k]] = std::vector<double>(d.begin(), d.end());
  }
  return j;
}

Network network_from_json(const nlohmann::json& j, const Architecture& arch) {
  Network net;
  auto params = net.parameters();
  const auto shapes = parameter_shapes(arch);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!j.contains(kParamNames[k])) {
      throw ArtifactError(std::string("checkpoint is missing ") + kParamNames[k]);
    }
    auto values = j.at(kParamNames[k]).get<std::vector<double>>();
    if (values.size() != shape_numel(shapes[k])) {
      throw ArtifactError(std::string("checkpoint parameter ") + kParamNames[k] +
                          " has the wrong length");
    }
    *params[k] = Tensor(shapes[k], std::move(values));
  }
  return net;
}

nlohmann::json checkpoint_to_json(const NetworkPair& pair, const RunConfig& config) {
  return {{"architecture", arch_to_json(pair.net1.architecture())},
          {"net1", network_to_json(pair.net1)},
          {"net2", network_to_json(pair.net2)},
          {"avg1", network_to_json(pair.avg1)},
          {"avg2", network_to_json(pair.avg2)},
          {"iteration", pair.iteration},
          {"config", to_json(config)}};
}

NetworkPair checkpoint_from_json(const nlohmann::json& j) {
  try {
    const auto& a = j.at("architecture");
    const Architecture arch{a.at("input_dim").get<std::size_t>(),
                            a.at("hidden_dim").get<std::size_t>(),
                            a.at("feature_dim").get<std::size_t>(),
                            a.at("num_classes").get<std::size_t>()};
    NetworkPair pair;
    pair.net1 = network_from_json(j.at("net1"), arch);
    pair.net2 = network_from_json(j.at("net2"), arch);
    pair.avg1 = network_from_json(j.at("avg1"), arch);
    pair.avg2 = network_from_json(j.at("avg2"), arch);
    pair.iteration = j.at("iteration").get<std::uint64_t>();
    return pair;
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const NetworkPair& pair, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write checkpoint " + path);
  out << checkpoint_to_json(pair, config).dump() << '\n';
}

NetworkPair load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("missing checkpoint " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ArtifactError("checkpoint " + path + " is not valid JSON");
  return checkpoint_from_json(j);
}

}  // namespace mmt
