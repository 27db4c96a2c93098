#include "mmt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "mmt/error.hpp"
#include "mmt/log.hpp"

namespace mmt {

// ---- optimizer -------------------------------------------------------------

void Adam::step(std::span<Tensor* const> params, double lr) {
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->numel(), 0.0);
      v_.emplace_back(p->numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw std::logic_error("Adam: parameter list changed");
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k]->data();
    const auto g = params[k]->grad();
    auto& m = m_[k];
    auto& v = v_[k];
    if (m.size() != w.size()) throw std::logic_error("Adam: parameter shape changed");
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      w[i] -= lr * config_.weight_decay * w[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

void Adam::reset() {
  m_.clear();
  v_.clear();
  t_ = 0;
}

namespace {

std::vector<Tensor*> encoder_params(Network& n) {
  return {&n.encoder.w1, &n.encoder.b1, &n.encoder.w2, &n.encoder.b2};
}

std::vector<Tensor*> classifier_params(Network& n) { return {&n.classifier.w, &n.classifier.b}; }

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string(what) + " is not finite");
}

Tensor gather_views(std::span<const LabeledSample> samples, std::span<const std::size_t> idx,
                    const Augmentation& aug, std::uint64_t step_seed, Tensor* second) {
  const std::size_t d = samples.front().vector.size();
  Tensor first(Shape{idx.size(), d});
  if (second) *second = Tensor(Shape{idx.size(), d});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const LabeledSample& s = samples[idx[b]];
    if (second) {
      auto [v1, v2] = two_views(s, aug, mix_seed(step_seed, b));
      std::copy(v1.begin(), v1.end(), first.data().begin() + b * d);
      std::copy(v2.begin(), v2.end(), second->data().begin() + b * d);
    } else {
      const View v = augment(s.vector, aug, mix_seed(step_seed, b));
      std::copy(v.begin(), v.end(), first.data().begin() + b * d);
    }
  }
  return first;
}

}  // namespace

// ---- stage 1 ---------------------------------------------------------------

double pretrain_learning_rate(const RunConfig& config, std::size_t epoch) {
  const double e = static_cast<double>(epoch);
  const double total = static_cast<double>(config.epochs_pretrain);
  double lr = config.lr_pretrain;
  if (e >= 0.5 * total) lr *= 0.1;
  if (e >= 0.875 * total) lr *= 0.1;
  return lr;
}

NetworkPair pretrain_source(std::span<const LabeledSample> source, const RunConfig& config) {
  config.validate();
  if (source.empty()) throw ArtifactError("pretrain_source: empty source dataset");
  const std::vector<int> ids = identities_of(source);
  const int max_id = *std::max_element(ids.begin(), ids.end());
  if (max_id < 1) throw SamplingError("pretrain_source: need at least two source identities");
  NetworkPair pair = init_pair(config, static_cast<std::size_t>(max_id) + 1, config.seeds.net1,
                               config.seeds.net2);
  pair.net1.set_requires_grad(true);
  pair.net2.set_requires_grad(true);
  Adam opt[2] = {Adam(config.adam), Adam(config.adam)};
  Network* nets[2] = {&pair.net1, &pair.net2};
  const Augmentation aug{config.augment.sigma, config.augment.p_drop};

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs_pretrain; ++epoch) {
    const double lr = pretrain_learning_rate(config, epoch);
    double epoch_loss = 0.0;
    for (std::size_t it = 0; it < config.iters_pretrain; ++it, ++step) {
      const std::uint64_t seed = mix_seed(config.seeds.sampler, 1'000'000 + step);
      const auto idx = sample_pk_batch(ids, config.P, config.K, seed);
      const Tensor x = gather_views(source, idx, aug, mix_seed(seed, 1), nullptr);
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (std::size_t i : idx) labels.push_back(ids[i]);
      for (std::size_t k = 0; k < 2; ++k) {
        Tape tape;
        Var f = encode(tape, tape.constant(x), nets[k]->encoder);
        Var p = classify(tape, f, nets[k]->classifier);
        Var loss = source_loss(f, p, labels, config.weights);
        check_finite(loss.value().item(), "source loss");
        epoch_loss += loss.value().item();
        tape.backward(loss);
        auto params = nets[k]->parameters();
        opt[k].step(params, lr);
        nets[k]->zero_grad();
      }
    }
    spdlog::debug("pretrain epoch {} lr {} mean loss {}", epoch, lr,
                  epoch_loss / std::max<double>(1.0, 2.0 * config.iters_pretrain));
  }
  pair.net1.set_requires_grad(false);
  pair.net2.set_requires_grad(false);
  pair.avg1 = snapshot(pair.net1);
  pair.avg2 = snapshot(pair.net2);
  pair.iteration = 0;
  return pair;
}

// ---- stage 2 ---------------------------------------------------------------

namespace {

// Unit-norm class centers of the average model's normalized features.
ClassifierParams classifier_from_centers(const Network& avg, const Tensor& target_vectors,
                                         std::span<const int> labels, std::size_t classes) {
  const Tensor f = l2_normalize_rows(encode(target_vectors, avg.encoder));
  const std::size_t d = f.cols();
  Tensor centers(Shape{classes, d});
  for (std::size_t i = 0; i < f.rows(); ++i)
    for (std::size_t t = 0; t < d; ++t)
      centers.at(static_cast<std::size_t>(labels[i]), t) += f.at(i, t);
  centers = l2_normalize_rows(std::move(centers));
  ClassifierParams c{Tensor(Shape{d, classes}), Tensor(Shape{classes})};
  for (std::size_t j = 0; j < classes; ++j)
    for (std::size_t t = 0; t < d; ++t) c.w.at(t, j) = centers.at(j, t);
  return c;
}

}  // namespace

AdaptResult adapt_mmt(NetworkPair pair, const Tensor& target_vectors, const RunConfig& config_in,
                      const EpochEvaluator& evaluator) {
  config_in.validate();
  const RunConfig config = config_in.effective();
  AdaptResult result;
  if (config.epochs_adapt == 0) {
    result.pair = std::move(pair);
    return result;
  }
  if (target_vectors.rows() < config.num_pseudo_classes) {
    throw ClusterError("adapt_mmt: fewer target samples than pseudo classes");
  }

  // The trainer only ever sees vectors; identities stay with the evaluator.
  std::vector<LabeledSample> target(target_vectors.rows());
  const std::size_t d = target_vectors.cols();
  for (std::size_t i = 0; i < target.size(); ++i) {
    target[i].vector.assign(target_vectors.data().begin() + i * d,
                            target_vectors.data().begin() + (i + 1) * d);
    target[i].identity = -1;
    target[i].domain = Domain::target;
  }

  const bool single = config.ablation.single_network;
  const std::size_t active = single ? 1 : 2;
  Network* nets[2] = {&pair.net1, &pair.net2};
  Network* avgs[2] = {&pair.avg1, &pair.avg2};
  const std::uint64_t net_seeds[2] = {config.seeds.net1, config.seeds.net2};
  Adam enc_opt[2] = {Adam(config.adam), Adam(config.adam)};
  Adam cls_opt[2] = {Adam(config.adam), Adam(config.adam)};
  const Augmentation aug{config.augment.sigma, config.augment.p_drop};
  const RelabelOptions relabel{config.cluster.normalize, config.cluster.use_raw_network,
                               config.cluster.max_iter};
  const MmtLossOptions loss_options{single, config.teacher_own_mining};
  const std::size_t classes = config.num_pseudo_classes;

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs_adapt; ++epoch) {
    PseudoLabeling labeling =
        relabel_epoch(pair, target, classes, mix_seed(config.seeds.cluster, epoch), relabel);
    labeling.epoch = epoch;
    const std::vector<int>& labels = labeling.assignments;

    if (epoch == 0 || config.reset_classifier) {
      for (std::size_t k = 0; k < 2; ++k) {
        ClassifierParams fresh =
            config.classifier_from_centroids
                ? classifier_from_centers(*avgs[k], target_vectors, labels, classes)
                : make_classifier(config.model.feature_dim, classes,
                                  mix_seed(net_seeds[k], 500 + epoch));
        avgs[k]->classifier = ClassifierParams{fresh.w.detached(), fresh.b.detached()};
        nets[k]->classifier = std::move(fresh);
        cls_opt[k].reset();
      }
    }
    for (std::size_t k = 0; k < active; ++k) nets[k]->set_requires_grad(true);

    double kl_sum = 0.0;
    for (std::size_t it = 0; it < config.iters_adapt; ++it, ++step) {
      const std::uint64_t seed = mix_seed(config.seeds.sampler, step);
      const auto idx = sample_pk_batch(labels, config.P, config.K, seed);
      MmtBatch batch;
      batch.view1 = gather_views(target, idx, aug, mix_seed(seed, 1), &batch.view2);
      batch.labels.reserve(idx.size());
      for (std::size_t i : idx) batch.labels.push_back(labels[i]);

      Tape tape;
      MmtLoss loss = total_mmt_loss(tape, batch, pair, config.weights, loss_options);
      check_finite(loss.total.value().item(), "adaptation loss");
      tape.backward(loss.total);
      for (std::size_t k = 0; k < active; ++k) {
        auto enc = encoder_params(*nets[k]);
        auto cls = classifier_params(*nets[k]);
        enc_opt[k].step(enc, config.lr_adapt);
        cls_opt[k].step(cls, config.lr_adapt);
        nets[k]->zero_grad();
        ema_update_inplace(*avgs[k], *nets[k], config.alpha);
      }
      ++pair.iteration;

      StepLog row;
      row.step = step;
      row.epoch = epoch;
      row.terms = loss.terms;
      row.total = loss.total.value().item();
      row.lr = config.lr_adapt;
      row.peer_kl = peer_kl(classify(encode(batch.view1, pair.avg1.encoder), pair.avg1.classifier),
                            classify(encode(batch.view1, pair.avg2.encoder), pair.avg2.classifier));
      kl_sum += row.peer_kl;
      result.log.steps.push_back(row);
    }

    EpochLog elog;
    elog.epoch = epoch;
    elog.mean_kl = config.iters_adapt ? kl_sum / static_cast<double>(config.iters_adapt) : 0.0;
    if (evaluator) elog.eval = evaluator(pair, labeling);
    if (elog.eval) {
      spdlog::info("adapt epoch {} purity {:.3f} mAP avg1 {:.3f} avg2 {:.3f} kl {:.4f}", epoch,
                   elog.eval->purity, elog.eval->map_avg1, elog.eval->map_avg2, elog.mean_kl);
    }
    result.log.epochs.push_back(elog);
    result.last_labeling = std::move(labeling);
  }
  pair.net1.set_requires_grad(false);
  pair.net2.set_requires_grad(false);
  result.pair = std::move(pair);
  return result;
}

std::string to_string(InferenceModel m) { return m == InferenceModel::avg1 ? "avg1" : "avg2"; }

const Network& inference_network(const NetworkPair& pair, InferenceModel m) {
  return m == InferenceModel::avg1 ? pair.avg1 : pair.avg2;
}

InferenceModel select_inference_model(const NetworkPair& pair,
                                      std::span<const LabeledSample> validation,
                                      std::uint64_t split_seed) {
  if (validation.empty()) throw DimensionError("select_inference_model: empty validation set");
  const double m1 = evaluate_encoder(pair.avg1.encoder, validation, split_seed).mAP;
  const double m2 = evaluate_encoder(pair.avg2.encoder, validation, split_seed).mAP;
  return m2 > m1 ? InferenceModel::avg2 : InferenceModel::avg1;
}

// ---- experiments -----------------------------------------------------------

RunConfig with_seed_set(const RunConfig& config, std::uint64_t s) {
  RunConfig c = config;
  c.seeds.data = s;
  c.seeds.net1 = 100 * s + 1;
  c.seeds.net2 = 100 * s + 2;
  c.seeds.sampler = 100 * s + 3;
  c.seeds.cluster = 100 * s + 4;
  return c;
}

namespace {

std::uint64_t target_split_seed(const RunConfig& c) { return mix_seed(c.seeds.data, 50); }
std::uint64_t validation_split_seed(const RunConfig& c) { return mix_seed(c.seeds.data, 51); }

}  // namespace

ExperimentResult evaluate_pair(const NetworkPair& pair, const ExperimentData& data,
                               const RunConfig& config) {
  ExperimentResult r;
  if (config.ablation.single_network) {
    r.chosen = InferenceModel::avg1;
  } else if (config.oracle_validation) {
    r.chosen = select_inference_model(pair, data.target_test, target_split_seed(config));
  } else {
    r.chosen = select_inference_model(pair, data.source_val, validation_split_seed(config));
  }
  r.target = evaluate_encoder(inference_network(pair, r.chosen).encoder, data.target_test,
                              target_split_seed(config));
  return r;
}

ExperimentResult run_adaptation(const NetworkPair& pretrained, const ExperimentData& data,
                                const RunConfig& config, NetworkPair* adapted) {
  const std::vector<int> truth = identities_of(data.target_train);
  const std::uint64_t split = target_split_seed(config);
  EpochEvaluator evaluator = [&](const NetworkPair& pair, const PseudoLabeling& labeling) {
    EpochEval e;
    e.purity = cluster_purity(labeling.assignments, truth);
    e.map_net1 = evaluate_encoder(pair.net1.encoder, data.target_test, split).mAP;
    e.map_net2 = evaluate_encoder(pair.net2.encoder, data.target_test, split).mAP;
    e.map_avg1 = evaluate_encoder(pair.avg1.encoder, data.target_test, split).mAP;
    e.map_avg2 = evaluate_encoder(pair.avg2.encoder, data.target_test, split).mAP;
    return e;
  };
  AdaptResult adapt = adapt_mmt(pretrained, stack_vectors(data.target_train), config, evaluator);
  ExperimentResult r = evaluate_pair(adapt.pair, data, config);
  if (!adapt.log.epochs.empty()) r.final_mean_kl = adapt.log.epochs.back().mean_kl;
  r.log = std::move(adapt.log);
  if (adapted) *adapted = std::move(adapt.pair);
  return r;
}

std::vector<AblationVariant> ablation_variants() {
  return {
      {"pretrained", {}},
      {"baseline",
       [](RunConfig& c) {
         c.weights.lambda_id = 0.0;
         c.weights.lambda_tri = 0.0;
       }},
      {"only_soft",
       [](RunConfig& c) {
         c.weights.lambda_id = 1.0;
         c.weights.lambda_tri = 1.0;
       }},
      {"wo_hard_id", [](RunConfig& c) { c.ablation.no_hard_id = true; }},
      {"wo_hard_tri", [](RunConfig& c) { c.ablation.no_hard_tri = true; }},
      {"wo_soft_id", [](RunConfig& c) { c.ablation.no_soft_id = true; }},
      {"wo_soft_tri", [](RunConfig& c) { c.ablation.no_soft_tri = true; }},
      {"wo_theta2", [](RunConfig& c) { c.ablation.single_network = true; }},
      {"wo_ema", [](RunConfig& c) { c.ablation.no_ema = true; }},
      {"mmt", [](RunConfig&) {}},
  };
}

std::vector<AblationRow> run_ablation_suite(const RunConfig& base_config,
                                            const std::vector<std::string>& only) {
  base_config.validate();
  const ExperimentData data = make_experiment_data(base_config.data, base_config.seeds.data);
  const NetworkPair pretrained = pretrain_source(data.source_train, base_config);
  std::vector<AblationRow> rows;
  for (const auto& variant : ablation_variants()) {
    if (!only.empty() && std::find(only.begin(), only.end(), variant.name) == only.end()) continue;
    AblationRow row;
    row.name = variant.name;
    try {
      RunConfig c = base_config;
      if (variant.apply) {
        variant.apply(c);
        const ExperimentResult r = run_adaptation(pretrained, data, c);
        row.metrics = r.target;
        row.final_mean_kl = r.final_mean_kl;
      } else {
        row.metrics = evaluate_pair(pretrained, data, c).target;
      }
    } catch (const std::exception& e) {
      row.error = e.what();
      spdlog::error("ablation row {} failed: {}", variant.name, e.what());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---- CSV -------------------------------------------------------------------

std::string format_double(double v) { return fmt::format("{}", v); }

namespace {

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write " + path);
  return out;
}

}  // namespace

void write_steps_csv(const std::string& path, const TrainLog& log) {
  auto out = open_csv(path);
  out << "step,epoch,id1,id2,sid1,sid2,tri1,tri2,stri1,stri2,total,lr,peer_kl\n";
  for (const auto& s : log.steps) {
    const auto& t = s.terms;
    out << s.step << ',' << s.epoch;
    for (double v : {t.id1, t.id2, t.sid1, t.sid2, t.tri1, t.tri2, t.stri1, t.stri2, s.total,
                     s.lr, s.peer_kl})
      out << ',' << format_double(v);
    out << '\n';
  }
}

void write_epochs_csv(const std::string& path, const TrainLog& log) {
  auto out = open_csv(path);
  out << "epoch,purity,map_net1,map_net2,map_avg1,map_avg2,mean_kl\n";
  for (const auto& e : log.epochs) {
    out << e.epoch;
    if (e.eval) {
      for (double v : {e.eval->purity, e.eval->map_net1, e.eval->map_net2, e.eval->map_avg1,
                       e.eval->map_avg2})
        out << ',' << format_double(v);
    } else {
      out << ",,,,,";
    }
    out << ',' << format_double(e.mean_kl) << '\n';
  }
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  auto out = open_csv(path);
  out << "row,mAP,top1,top5,top10,status\n";
  for (const auto& r : rows) {
    out << r.name;
    if (r.metrics) {
      out << ',' << format_double(r.metrics->mAP) << ',' << format_double(r.metrics->cmc1) << ','
          << format_double(r.metrics->cmc5) << ',' << format_double(r.metrics->cmc10) << ",ok\n";
    } else {
      out << ",,,,,failed\n";
    }
  }
}

}  // namespace mmt
