#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmt/cluster.hpp"
#include "mmt/config.hpp"
#include "mmt/datagen.hpp"
#include "mmt/losses.hpp"
#include "mmt/model.hpp"
#include "mmt/retrieval_eval.hpp"

namespace mmt {

// Adam moments with decoupled weight decay.
class Adam {
 public:
  explicit Adam(const AdamConfig& config) : config_(config) {}

  // Reads each parameter's grad(); the parameter list must keep its order
  // and shapes between calls until reset().
  void step(std::span<Tensor* const> params, double lr);
  void reset();
  std::size_t steps() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

// 10x decays at 50% and 87.5% of the pre-training epochs.
double pretrain_learning_rate(const RunConfig& config, std::size_t epoch);

// Both networks are trained independently on identical batches with the
// source objective; average models are synced to the final weights.
NetworkPair pretrain_source(std::span<const LabeledSample> source, const RunConfig& config);

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  LossTerms terms;
  double total = 0.0;
  double lr = 0.0;
  double peer_kl = 0.0;  // avg1 vs avg2 predictions on the batch after the EMA update
};

// Filled by an external evaluator that holds the ground truth.
struct EpochEval {
  double purity = 0.0;
  double map_net1 = 0.0;
  double map_net2 = 0.0;
  double map_avg1 = 0.0;
  double map_avg2 = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_kl = 0.0;  // mean of StepLog::peer_kl over the epoch
  std::optional<EpochEval> eval;
};

struct TrainLog {
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
};

using EpochEvaluator = std::function<EpochEval(const NetworkPair&, const PseudoLabeling&)>;

struct AdaptResult {
  NetworkPair pair;
  TrainLog log;
  std::optional<PseudoLabeling> last_labeling;
};

// Peer mean-teacher adaptation on the unlabeled target vectors (n x input_dim). Each
// epoch re-clusters with the average model, re-initializes the target
// classifiers, then runs iters_adapt joint steps followed by EMA updates.
AdaptResult adapt_mmt(NetworkPair pair, const Tensor& target_vectors, const RunConfig& config,
                      const EpochEvaluator& evaluator = {});

enum class InferenceModel { avg1, avg2 };

std::string to_string(InferenceModel m);
const Network& inference_network(const NetworkPair& pair, InferenceModel m);

// Picks the average model with the higher validation mAP; ties go to avg1.
InferenceModel select_inference_model(const NetworkPair& pair,
                                      std::span<const LabeledSample> validation,
                                      std::uint64_t split_seed);

// ---- experiments -----------------------------------------------------------

// Copy of config with every seed derived from one seed-set index.
RunConfig with_seed_set(const RunConfig& config, std::uint64_t seed_set);

struct ExperimentResult {
  RetrievalMetrics target;   // selected average model on target test data
  InferenceModel chosen = InferenceModel::avg1;
  double final_mean_kl = 0.0;
  TrainLog log;
};

// Target metrics of the model chosen for inference (single_network runs
// always use avg1, the only trained average model).
ExperimentResult evaluate_pair(const NetworkPair& pair, const ExperimentData& data,
                               const RunConfig& config);

// Adapts the pretrained pair with per-epoch ground-truth diagnostics.
ExperimentResult run_adaptation(const NetworkPair& pretrained, const ExperimentData& data,
                                const RunConfig& config, NetworkPair* adapted = nullptr);

struct AblationVariant {
  std::string name;
  std::function<void(RunConfig&)> apply;  // empty for the pretrained reference
};

// Pretrained reference plus the nine rows of the ablation table.
std::vector<AblationVariant> ablation_variants();

struct AblationRow {
  std::string name;
  std::optional<RetrievalMetrics> metrics;  // empty when the run failed
  std::string error;
  double final_mean_kl = 0.0;
};

// Every row shares the data seed and the pretrained pair. A failing row is
// recorded and the suite continues.
std::vector<AblationRow> run_ablation_suite(const RunConfig& base_config,
                                            const std::vector<std::string>& only = {});

// ---- CSV -------------------------------------------------------------------

std::string format_double(double v);
void write_steps_csv(const std::string& path, const TrainLog& log);
void write_epochs_csv(const std::string& path, const TrainLog& log);
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace mmt
