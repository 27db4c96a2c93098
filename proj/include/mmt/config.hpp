#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mmt {

struct LossWeights {
  double lambda_id = 0.5;   // soft vs hard classification on the target
  double lambda_tri = 0.8;  // soft vs hard softmax-triplet on the target
  double lambda_s = 1.0;    // source triplet weight during pre-training
  double margin = 0.5;      // hinge margin of the source triplet loss

  void validate() const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

struct Seeds {
  std::uint64_t data = 1;
  std::uint64_t net1 = 11;
  std::uint64_t net2 = 12;
  std::uint64_t sampler = 21;
  std::uint64_t cluster = 31;
};

// Ablation switches. Each one rewrites the effective loss weights or
// the network wiring; see RunConfig::effective().
struct AblationFlags {
  bool no_soft_id = false;   // lambda_id -> 0
  bool no_soft_tri = false;  // lambda_tri -> 0
  bool no_hard_id = false;   // lambda_id -> 1
  bool no_hard_tri = false;  // lambda_tri -> 1
  bool single_network = false;
  bool no_ema = false;       // alpha -> 0
};

struct DataConfig {
  std::size_t input_dim = 16;
  std::size_t source_identities = 100;
  std::size_t source_val_identities = 10;
  std::size_t target_identities = 100;
  std::size_t target_test_identities = 50;
  std::size_t samples_per_identity = 20;
  double sigma_between = 1.0;
  double sigma_within = 0.4;
  double target_scale = 1.3;
  double target_anisotropy = 3.0;  // axis stretch range of the target map
  double target_offset = 0.0;      // norm of the target translation b
};

struct AugmentConfig {
  double sigma = 0.3;
  double p_drop = 0.1;
};

struct ModelConfig {
  std::size_t hidden_dim = 32;
  std::size_t feature_dim = 16;
};

struct ClusterConfig {
  std::size_t max_iter = 100;
  bool normalize = true;
  bool use_raw_network = false;  // cluster on net1 instead of avg1
};

struct RunConfig {
  double alpha = 0.999;
  LossWeights weights;
  std::size_t num_pseudo_classes = 80;  // M_t
  std::size_t P = 16;
  std::size_t K = 4;
  // 10x the usual 3.5e-4 Adam rate; the toy MLP tolerates and needs more.
  double lr_pretrain = 3.5e-3;  // decays 10x at 50% and 87.5% of pre-training
  double lr_adapt = 3.5e-3;     // constant
  std::size_t epochs_pretrain = 16;
  std::size_t iters_pretrain = 50;
  std::size_t epochs_adapt = 20;
  std::size_t iters_adapt = 400;
  AdamConfig adam;
  Seeds seeds;
  AblationFlags ablation;
  DataConfig data;
  AugmentConfig augment;
  ModelConfig model;
  ClusterConfig cluster;
  bool reset_classifier = true;            // re-initialize C^t every epoch
  bool classifier_from_centroids = false;  // fresh C^t from pseudo-class centers, else random
  bool teacher_own_mining = false;         // teacher T_i mined on its own distances
  bool oracle_validation = false;          // select the inference model on target ground truth

  void validate() const;
  // Copy with ablation flags folded into alpha / weights.
  RunConfig effective() const;
};

// Flat dotted-key JSON, e.g. {"weights.lambda_tri": 0.8, "seeds.data": 1}.
nlohmann::json to_json(const RunConfig& config);
// Starts from defaults; unknown keys or wrong value types raise ConfigError.
RunConfig config_from_json(const nlohmann::json& flat);
// Applies one "key=value" override in place.
void apply_override(RunConfig& config, std::string_view assignment);
RunConfig load_config(const std::string& path);

}  // namespace mmt
