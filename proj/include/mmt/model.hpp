#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmt/config.hpp"
#include "mmt/diffcore.hpp"

namespace mmt {

struct Architecture {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;

  bool operator==(const Architecture&) const = default;
};

// input -> hidden (tanh) -> feature. Weights are stored [fan_in x fan_out].
struct EncoderParams {
  Tensor w1;
  Tensor b1;
  Tensor w2;
  Tensor b2;

  std::size_t input_dim() const { return w1.rows(); }
  std::size_t hidden_dim() const { return w1.cols(); }
  std::size_t feature_dim() const { return w2.cols(); }
};

struct ClassifierParams {
  Tensor w;  // feature_dim x num_classes
  Tensor b;  // num_classes

  std::size_t feature_dim() const { return w.rows(); }
  std::size_t num_classes() const { return w.cols(); }
};

struct Network {
  EncoderParams encoder;
  ClassifierParams classifier;

  // Fixed order: w1, b1, w2, b2, classifier w, classifier b.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  void set_requires_grad(bool on);
  void zero_grad();
  Architecture architecture() const;
};

// Two collaborative networks and their temporal average models.
struct NetworkPair {
  Network net1;
  Network net2;
  Network avg1;
  Network avg2;
  std::uint64_t iteration = 0;  // EMA step counter T
};

EncoderParams make_encoder(std::size_t input_dim, std::size_t hidden_dim,
                           std::size_t feature_dim, std::uint64_t seed);
ClassifierParams make_classifier(std::size_t feature_dim, std::size_t num_classes,
                                 std::uint64_t seed);

// Differentiable forward passes; parameters are bound to the tape, so
// gradients flow into them exactly when they have requires_grad set.
Var encode(Tape& tape, const Var& x, EncoderParams& enc);
Var classify(Tape& tape, const Var& features, ClassifierParams& cls);

// Gradient-free forward passes.
Tensor encode(const Tensor& x, const EncoderParams& enc);
Tensor classify(const Tensor& features, const ClassifierParams& cls);

// Rows scaled to unit Euclidean norm (zero rows are left untouched).
Tensor l2_normalize_rows(Tensor x);

// avg_prev * alpha + current * (1 - alpha), elementwise. Inputs are unchanged.
Tensor ema_update(const Tensor& avg_prev, const Tensor& current, double alpha);
Network ema_update(const Network& avg_prev, const Network& current, double alpha);
void ema_update_inplace(Network& avg, const Network& current, double alpha);

// Same values, no gradient buffers.
Network snapshot(const Network& net);

// Networks from seed1/seed2; average models start equal to their networks.
NetworkPair init_pair(const RunConfig& config, std::size_t num_classes, std::uint64_t seed1,
                      std::uint64_t seed2);

// ---- checkpoint ------------------------------------------------------------

nlohmann::json network_to_json(const Network& net);
Network network_from_json(const nlohmann::json& j, const Architecture& arch);
nlohmann::json checkpoint_to_json(const NetworkPair& pair, const RunConfig& config);
NetworkPair checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::string& path, const NetworkPair& pair, const RunConfig& config);
NetworkPair load_checkpoint(const std::string& path);

}  // namespace mmt
