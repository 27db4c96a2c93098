#include "mmt/losses.hpp"

#include <cmath>
#include <map>

#include "mmt/error.hpp"

namespace mmt {

Tensor pairwise_distances(const Tensor& features) {
  const std::size_t n = features.rows(), d = features.cols();
  Tensor out(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = features.at(i, t) - features.at(j, t);
        s += diff * diff;
      }
      out.at(i, j) = out.at(j, i) = std::sqrt(s);
    }
  return out;
}

MiningResult mine_hardest(const Tensor& features, std::span<const int> labels) {
  const std::size_t n = features.rows();
  if (labels.size() != n) throw DimensionError("mine_hardest: one label per feature row required");
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) throw MiningError("hardest mining needs at least two distinct labels");
  for (const auto& [label, count] : counts) {
    if (count < 2) {
      throw MiningError("label " + std::to_string(label) +
                        " occurs once; no positive exists for it");
    }
  }

  const Tensor dist = pairwise_distances(features);
  MiningResult out;
  out.positive.resize(n);
  out.negative.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t p = n, q = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dij = dist.at(i, j);
      if (labels[j] == labels[i]) {
        if (p == n || dij > dist.at(i, p)) p = j;
      } else if (q == n || dij < dist.at(i, q)) {
        q = j;
      }
    }
    out.positive[i] = p;
    out.negative[i] = q;
  }
  return out;
}

Var hard_ce_loss(const Var& probs, std::span<const int> labels) {
  const std::size_t m = probs.value().rows(), classes = probs.value().cols();
  if (labels.size() != m) throw DimensionError("hard_ce_loss: one label per row required");
  std::vector<std::size_t> cols(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DimensionError("hard_ce_loss: label " + std::to_string(labels[i]) +
                           " outside [0, " + std::to_string(classes) + ")");
    }
    cols[i] = static_cast<std::size_t>(labels[i]);
  }
  return -mean(log_clamped(pick(probs, cols), kProbFloor, 1.0 - kProbFloor));
}

Var soft_ce_loss(const Var& student_probs, const Tensor& teacher_probs) {
  if (student_probs.shape() != teacher_probs.shape()) {
    throw DimensionError("soft_ce_loss: student " + shape_string(student_probs.shape()) +
                         " vs teacher " + shape_string(teacher_probs.shape()));
  }
  Tape& tape = student_probs.tape();
  const double rows = static_cast<double>(student_probs.value().rows());
  Var logs = log_clamped(student_probs, kProbFloor, 1.0 - kProbFloor);
  return scale(sum(tape.constant(teacher_probs) * logs), -1.0 / rows);
}

namespace {

struct AnchorDistances {
  Var positive;
  Var negative;
};

AnchorDistances anchor_distances(const Var& features, const MiningResult& mining) {
  if (mining.size() != features.value().rows()) {
    throw DimensionError("mining result does not match the feature batch");
  }
  return {row_l2_distance(features, gather_rows(features, mining.positive)),
          row_l2_distance(features, gather_rows(features, mining.negative))};
}

}  // namespace

Var hard_triplet_loss(const Var& features, const MiningResult& mining, double margin) {
  const auto d = anchor_distances(features, mining);
  return mean(relu(add_scalar(d.positive - d.negative, margin)));
}

Var softmax_triplet(const Var& features, const MiningResult& mining) {
  const auto d = anchor_distances(features, mining);
  return sigmoid(d.negative - d.positive);
}

std::vector<double> softmax_triplet_values(const Tensor& features, const MiningResult& mining) {
  Tape tape;
  const Tensor t = softmax_triplet(tape.constant(features), mining).value();
  return {t.data().begin(), t.data().end()};
}

Var hard_softmax_triplet_loss(const Var& features, const MiningResult& mining) {
  return -mean(log_clamped(softmax_triplet(features, mining), kProbFloor, 1.0 - kProbFloor));
}

Var soft_softmax_triplet_loss(const Var& student_features, std::span<const double> teacher_T,
                              const MiningResult& mining) {
  if (teacher_T.size() != mining.size()) {
    throw DimensionError("soft_softmax_triplet_loss: one teacher value per anchor required");
  }
  for (double t : teacher_T) {
    if (!(t >= 0.0 && t <= 1.0)) {
      throw NumericError("soft triplet target outside [0,1]: " + std::to_string(t));
    }
  }
  Tape& tape = student_features.tape();
  Var T = softmax_triplet(student_features, mining);
  Var log_t = log_clamped(T, kProbFloor, 1.0 - kProbFloor);
  Var log_not_t = log_clamped(add_scalar(-T, 1.0), kProbFloor, 1.0 - kProbFloor);
  Tensor target = Tensor::vector({teacher_T.begin(), teacher_T.end()});
  Tensor complement = target.detached();
  for (double& v : complement.data()) v = 1.0 - v;
  return -mean(tape.constant(std::move(target)) * log_t +
               tape.constant(std::move(complement)) * log_not_t);
}

Var source_loss(const Var& features, const Var& probs, std::span<const int> labels,
                const LossWeights& weights) {
  const MiningResult mining = mine_hardest(features.value(), labels);
  return hard_ce_loss(probs, labels) +
         scale(hard_triplet_loss(features, mining, weights.margin), weights.lambda_s);
}

double weighted_total(const LossTerms& t, const LossWeights& w) {
  return (1.0 - w.lambda_id) * (t.id1 + t.id2) + w.lambda_id * (t.sid1 + t.sid2) +
         (1.0 - w.lambda_tri) * (t.tri1 + t.tri2) + w.lambda_tri * (t.stri1 + t.stri2);
}

namespace {

struct TeacherOutput {
  Tensor probs;
  Tensor features;
};

TeacherOutput teacher_pass(const Tensor& view, const Network& avg) {
  Tensor f = encode(view, avg.encoder);
  Tensor p = classify(f, avg.classifier);
  return {std::move(p), std::move(f)};
}

struct StudentTerms {
  Var id, sid, tri, stri;
};

StudentTerms student_terms(Tape& tape, const Tensor& view, Network& net,
                           const TeacherOutput& teacher, std::span<const int> labels,
                           bool teacher_own_mining) {
  Var f = encode(tape, tape.constant(view), net.encoder);
  Var p = classify(tape, f, net.classifier);
  const MiningResult mining = mine_hardest(f.value(), labels);
  const std::vector<double> soft_t =
      teacher_own_mining
          ? softmax_triplet_values(teacher.features, mine_hardest(teacher.features, labels))
          : softmax_triplet_values(teacher.features, mining);
  return {hard_ce_loss(p, labels), soft_ce_loss(p, teacher.probs),
          hard_softmax_triplet_loss(f, mining), soft_softmax_triplet_loss(f, soft_t, mining)};
}

}  // namespace

MmtLoss total_mmt_loss(Tape& tape, const MmtBatch& batch, NetworkPair& pair,
                       const LossWeights& w, const MmtLossOptions& options) {
  if (batch.view1.shape() != batch.view2.shape() || batch.view1.rows() != batch.labels.size()) {
    throw DimensionError("total_mmt_loss: views and labels disagree in size");
  }
  MmtLoss out{tape.constant(Tensor::scalar(0.0)), {}};
  if (options.single_network) {
    const TeacherOutput self_teacher = teacher_pass(batch.view2, pair.avg1);
    const auto s = student_terms(tape, batch.view1, pair.net1, self_teacher, batch.labels,
                                 options.teacher_own_mining);
    out.total = scale(s.id, 1.0 - w.lambda_id) + scale(s.sid, w.lambda_id) +
                scale(s.tri, 1.0 - w.lambda_tri) + scale(s.stri, w.lambda_tri);
    out.terms = {s.id.value().item(),  0.0, s.sid.value().item(),  0.0,
                 s.tri.value().item(), 0.0, s.stri.value().item(), 0.0};
    return out;
  }

  // net1 learns from avg2 on view2, net2 from avg1 on view1.
  const TeacherOutput teacher1 = teacher_pass(batch.view1, pair.avg1);
  const TeacherOutput teacher2 = teacher_pass(batch.view2, pair.avg2);
  const auto a = student_terms(tape, batch.view1, pair.net1, teacher2, batch.labels,
                               options.teacher_own_mining);
  const auto b = student_terms(tape, batch.view2, pair.net2, teacher1, batch.labels,
                               options.teacher_own_mining);
  out.total = scale(a.id + b.id, 1.0 - w.lambda_id) + scale(a.sid + b.sid, w.lambda_id) +
              scale(a.tri + b.tri, 1.0 - w.lambda_tri) + scale(a.stri + b.stri, w.lambda_tri);
  out.terms = {a.id.value().item(),   b.id.value().item(),   a.sid.value().item(),
               b.sid.value().item(),  a.tri.value().item(),  b.tri.value().item(),
               a.stri.value().item(), b.stri.value().item()};
  return out;
}

}  // namespace mmt
