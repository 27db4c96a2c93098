#include "mmt/config.hpp"

#include <fstream>
#include <type_traits>

#include "mmt/error.hpp"

namespace mmt {
namespace {

// Single source of truth for the flat key namespace.
template <class Config, class Visitor>
void visit_fields(Config& c, Visitor&& v) {
  v("alpha", c.alpha);
  v("weights.lambda_id", c.weights.lambda_id);
  v("weights.lambda_tri", c.weights.lambda_tri);
  v("weights.lambda_s", c.weights.lambda_s);
  v("weights.margin", c.weights.margin);
  v("num_pseudo_classes", c.num_pseudo_classes);
  v("batch.P", c.P);
  v("batch.K", c.K);
  v("lr_pretrain", c.lr_pretrain);
  v("lr_adapt", c.lr_adapt);
  v("epochs_pretrain", c.epochs_pretrain);
  v("iters_pretrain", c.iters_pretrain);
  v("epochs_adapt", c.epochs_adapt);
  v("iters_adapt", c.iters_adapt);
  v("adam.beta1", c.adam.beta1);
  v("adam.beta2", c.adam.beta2);
  v("adam.eps", c.adam.eps);
  v("adam.weight_decay", c.adam.weight_decay);
  v("seeds.data", c.seeds.data);
  v("seeds.net1", c.seeds.net1);
  v("seeds.net2", c.seeds.net2);
  v("seeds.sampler", c.seeds.sampler);
  v("seeds.cluster", c.seeds.cluster);
  v("ablation.no_soft_id", c.ablation.no_soft_id);
  v("ablation.no_soft_tri", c.ablation.no_soft_tri);
  v("ablation.no_hard_id", c.ablation.no_hard_id);
  v("ablation.no_hard_tri", c.ablation.no_hard_tri);
  v("ablation.single_network", c.ablation.single_network);
  v("ablation.no_ema", c.ablation.no_ema);
  v("data.input_dim", c.data.input_dim);
  v("data.source_identities", c.data.source_identities);
  v("data.source_val_identities", c.data.source_val_identities);
  v("data.target_identities", c.data.target_identities);
  v("data.target_test_identities", c.data.target_test_identities);
  v("data.samples_per_identity", c.data.samples_per_identity);
  v("data.sigma_between", c.data.sigma_between);
  v("data.sigma_within", c.data.sigma_within);
  v("data.target_scale", c.data.target_scale);
  v("data.target_anisotropy", c.data.target_anisotropy);
  v("data.target_offset", c.data.target_offset);
  v("augment.sigma", c.augment.sigma);
  v("augment.p_drop", c.augment.p_drop);
  v("model.hidden_dim", c.model.hidden_dim);
  v("model.feature_dim", c.model.feature_dim);
  v("cluster.max_iter", c.cluster.max_iter);
  v("cluster.normalize", c.cluster.normalize);
  v("cluster.use_raw_network", c.cluster.use_raw_network);
  v("reset_classifier", c.reset_classifier);
  v("classifier_from_centroids", c.classifier_from_centroids);
  v("teacher_own_mining", c.teacher_own_mining);
  v("oracle_validation", c.oracle_validation);
}

template <class T>
void assign_checked(const std::string& key, const nlohmann::json& value, T& field) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!value.is_boolean()) throw ConfigError(key + ": expected a boolean");
    field = value.get<bool>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!value.is_number()) throw ConfigError(key + ": expected a number");
    field = value.get<double>();
  } else {
    if (!value.is_number_integer() || value.get<long long>() < 0) {
      throw ConfigError(key + ": expected a non-negative integer");
    }
    field = value.get<T>();
  }
}

void set_key(RunConfig& config, const std::string& key, const nlohmann::json& value) {
  bool found = false;
  visit_fields(config, [&](const char* name, auto& field) {
    if (key == name) {
      assign_checked(key, value, field);
      found = true;
    }
  });
  if (!found) throw ConfigError("unknown config key '" + key + "'");
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

void LossWeights::validate() const {
  require(lambda_id >= 0.0 && lambda_id <= 1.0, "weights.lambda_id must lie in [0,1]");
  require(lambda_tri >= 0.0 && lambda_tri <= 1.0, "weights.lambda_tri must lie in [0,1]");
  require(lambda_s >= 0.0, "weights.lambda_s must be non-negative");
  require(margin >= 0.0, "weights.margin must be non-negative");
}

void RunConfig::validate() const {
  require(alpha >= 0.0 && alpha < 1.0, "alpha must lie in [0,1)");
  weights.validate();
  require(P >= 2 && K >= 2, "batch.P and batch.K must both be at least 2");
  require(num_pseudo_classes >= 2, "num_pseudo_classes must be at least 2");
  require(seeds.net1 != seeds.net2, "seeds.net1 and seeds.net2 must differ");
  require(!(ablation.no_soft_id && ablation.no_hard_id),
          "ablation.no_soft_id and ablation.no_hard_id are mutually exclusive");
  require(!(ablation.no_soft_tri && ablation.no_hard_tri),
          "ablation.no_soft_tri and ablation.no_hard_tri are mutually exclusive");
  require(lr_pretrain > 0.0 && lr_adapt > 0.0, "learning rates must be positive");
  require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0,
          "adam betas must lie in [0,1)");
  require(adam.eps > 0.0 && adam.weight_decay >= 0.0, "adam.eps > 0, weight_decay >= 0");
  require(data.input_dim > 0 && model.hidden_dim > 0 && model.feature_dim > 0,
          "dimensions must be positive");
  require(data.source_identities >= 2 && data.target_identities >= 1 &&
              data.target_test_identities >= 2 && data.source_val_identities >= 2,
          "identity counts too small");
  require(data.samples_per_identity >= 2, "data.samples_per_identity must be at least 2");
  require(data.sigma_between > 0.0 && data.sigma_within >= 0.0, "invalid data spreads");
  require(data.target_scale > 0.0, "data.target_scale must be positive");
  require(data.target_anisotropy >= 1.0, "data.target_anisotropy must be at least 1");
  require(augment.sigma >= 0.0 && augment.p_drop >= 0.0 && augment.p_drop <= 1.0,
          "invalid augmentation parameters");
  require(cluster.max_iter >= 1, "cluster.max_iter must be at least 1");
}

RunConfig RunConfig::effective() const {
  RunConfig c = *this;
  if (ablation.no_ema) c.alpha = 0.0;
  if (ablation.no_soft_id) c.weights.lambda_id = 0.0;
  if (ablation.no_hard_id) c.weights.lambda_id = 1.0;
  if (ablation.no_soft_tri) c.weights.lambda_tri = 0.0;
  if (ablation.no_hard_tri) c.weights.lambda_tri = 1.0;
  return c;
}

nlohmann::json to_json(const RunConfig& config) {
  nlohmann::json j = nlohmann::json::object();
  visit_fields(config, [&](const char* name, const auto& field) { j[name] = field; });
  return j;
}

RunConfig config_from_json(const nlohmann::json& flat) {
  if (!flat.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig config;
  for (const auto& [key, value] : flat.items()) set_key(config, key, value);
  return config;
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override must look like key=value, got '" + std::string(assignment) +
                      "'");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) throw ConfigError("cannot parse value for '" + key + "': " + text);
  set_key(config, key, value);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false, /*ignore_comments=*/true);
  if (j.is_discarded()) throw ConfigError("config file " + path + " is not valid JSON");
  return config_from_json(j);
}

}  // namespace mmt
