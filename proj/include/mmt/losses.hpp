#pragma once

#include <span>
#include <vector>

#include "mmt/config.hpp"
#include "mmt/diffcore.hpp"
#include "mmt/model.hpp"

namespace mmt {

// Probabilities are clamped to [kProbFloor, 1 - kProbFloor] before any log.
inline constexpr double kProbFloor = 1e-12;

// Hardest positive / negative per anchor within one batch.
struct MiningResult {
  std::vector<std::size_t> positive;
  std::vector<std::size_t> negative;

  std::size_t size() const { return positive.size(); }
};

// Every label must occur at least twice and at least two labels must be
// present; otherwise MiningError. Ties go to the lowest index.
MiningResult mine_hardest(const Tensor& features, std::span<const int> labels);

// Plain pairwise Euclidean distances, n x n.
Tensor pairwise_distances(const Tensor& features);

// Mean of -log probs[i, label_i].
Var hard_ce_loss(const Var& probs, std::span<const int> labels);
// Mean over rows of -sum_c teacher[i,c] log student[i,c]; the teacher is a constant.
Var soft_ce_loss(const Var& student_probs, const Tensor& teacher_probs);

// Mean hinge max(0, d_p + margin - d_n) on raw feature distances.
Var hard_triplet_loss(const Var& features, const MiningResult& mining, double margin);

// T_i = exp(d_n) / (exp(d_p) + exp(d_n)), evaluated as sigmoid(d_n - d_p). Shape [B].
Var softmax_triplet(const Var& features, const MiningResult& mining);
std::vector<double> softmax_triplet_values(const Tensor& features, const MiningResult& mining);

// Mean of -log T_i (binary cross-entropy against 1).
Var hard_softmax_triplet_loss(const Var& features, const MiningResult& mining);
// Mean of -[t log T_i + (1 - t) log(1 - T_i)] with t = teacher_T[i] held fixed.
// Teacher values must be finite and inside [0, 1], else NumericError.
Var soft_softmax_triplet_loss(const Var& student_features, std::span<const double> teacher_T,
                              const MiningResult& mining);

// Source objective: L_id + lambda_s * L_tri (margin triplet).
Var source_loss(const Var& features, const Var& probs, std::span<const int> labels,
                const LossWeights& weights);

// The eight target terms, unweighted.
struct LossTerms {
  double id1 = 0.0, id2 = 0.0;
  double sid1 = 0.0, sid2 = 0.0;
  double tri1 = 0.0, tri2 = 0.0;
  double stri1 = 0.0, stri2 = 0.0;
};

double weighted_total(const LossTerms& terms, const LossWeights& weights);

// One target mini-batch: the same samples under two augmentations.
struct MmtBatch {
  Tensor view1;             // fed to net1 (and avg1 as teacher of net2)
  Tensor view2;             // fed to net2 (and avg2 as teacher of net1)
  std::vector<int> labels;  // hard pseudo labels
};

struct MmtLossOptions {
  // Train net1 alone; its soft targets come from its own average model on view2.
  bool single_network = false;
  // Mine the teacher's triplets on the teacher's own distances.
  bool teacher_own_mining = false;
};

struct MmtLoss {
  Var total;
  LossTerms terms;
};

// Combined hard + peer-soft objective. Teacher predictions are computed without a
// tape, so no gradient can reach avg1/avg2.
MmtLoss total_mmt_loss(Tape& tape, const MmtBatch& batch, NetworkPair& pair,
                       const LossWeights& weights, const MmtLossOptions& options = {});

}  // namespace mmt
