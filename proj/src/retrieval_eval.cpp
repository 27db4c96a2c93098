#include "mmt/retrieval_eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "mmt/error.hpp"

namespace mmt {

std::vector<std::size_t> rank_gallery(std::span<const double> query, const Tensor& gallery) {
  const std::size_t n = gallery.rows(), d = gallery.cols();
  if (n == 0 || gallery.numel() == 0) throw DimensionError("rank_gallery: empty gallery");
  if (query.size() != d) throw DimensionError("rank_gallery: query dimension mismatch");
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double t = gallery.at(i, j) - query[j];
      s += t * t;
    }
    dist[i] = s;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  return order;
}

std::optional<double> average_precision(std::span<const std::size_t> ranking,
                                        const std::vector<bool>& relevant) {
  std::size_t hits = 0;
  double acc = 0.0;
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    if (!relevant.at(ranking[r])) continue;
    ++hits;
    acc += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  if (hits == 0) return std::nullopt;
  return acc / static_cast<double>(hits);
}

double cmc_at_k(const std::vector<std::vector<std::size_t>>& rankings,
                const std::vector<std::vector<bool>>& relevant, std::size_t k) {
  if (k == 0) throw ConfigError("cmc_at_k: k must be at least 1");
  if (rankings.size() != relevant.size()) throw DimensionError("cmc_at_k: size mismatch");
  std::size_t counted = 0, matched = 0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    const auto& rel = relevant[q];
    if (std::none_of(rel.begin(), rel.end(), [](bool b) { return b; })) continue;
    ++counted;
    const std::size_t top = std::min(k, rankings[q].size());
    for (std::size_t r = 0; r < top; ++r) {
      if (rel[rankings[q][r]]) {
        ++matched;
        break;
      }
    }
  }
  if (counted == 0) return 0.0;
  return static_cast<double>(matched) / static_cast<double>(counted);
}

double peer_kl(const Tensor& p, const Tensor& q) {
  if (p.shape() != q.shape()) {
    throw DimensionError("peer_kl: shape mismatch " + shape_string(p.shape()) + " vs " +
                         shape_string(q.shape()));
  }
  constexpr double floor = 1e-12;
  const std::size_t m = p.rows(), n = p.cols();
  if (m == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    // KL(p||q) + KL(q||p) = sum (p - q)(log p - log q), symmetric term by term.
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double a = p[i * n + j], b = q[i * n + j];
      row += (a - b) * (std::log(std::clamp(a, floor, 1.0)) - std::log(std::clamp(b, floor, 1.0)));
    }
    total += 0.5 * row;
  }
  return total / static_cast<double>(m);
}

double cluster_purity(std::span<const int> assignments, std::span<const int> identities) {
  if (assignments.size() != identities.size()) {
    throw DimensionError("cluster_purity: assignments and identities differ in length");
  }
  if (assignments.empty()) throw DimensionError("cluster_purity: empty input");
  std::map<int, std::map<int, std::size_t>> table;
  for (std::size_t i = 0; i < assignments.size(); ++i) ++table[assignments[i]][identities[i]];
  std::size_t majority = 0;
  for (const auto& [cluster, counts] : table) {
    std::size_t best = 0;
    for (const auto& [id, c] : counts) best = std::max(best, c);
    majority += best;
  }
  return static_cast<double>(majority) / static_cast<double>(assignments.size());
}

QueryGallerySplit split_query_gallery(std::span<const int> identities, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < identities.size(); ++i) groups[identities[i]].push_back(i);
  std::mt19937_64 rng(seed);
  QueryGallerySplit split;
  for (auto& [id, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    std::size_t nq = 0;
    if (members.size() >= 2) {
      nq = std::max<std::size_t>(1, static_cast<std::size_t>(
                                        std::llround(0.25 * static_cast<double>(members.size()))));
    }
    split.query.insert(split.query.end(), members.begin(),
                       members.begin() + static_cast<std::ptrdiff_t>(nq));
    split.gallery.insert(split.gallery.end(), members.begin() + static_cast<std::ptrdiff_t>(nq),
                         members.end());
  }
  std::sort(split.query.begin(), split.query.end());
  std::sort(split.gallery.begin(), split.gallery.end());
  return split;
}

RetrievalMetrics evaluate_retrieval(const Tensor& features, std::span<const int> identities,
                                    const QueryGallerySplit& split) {
  if (features.rows() != identities.size()) {
    throw DimensionError("evaluate_retrieval: one identity per feature row required");
  }
  if (split.gallery.empty()) throw DimensionError("evaluate_retrieval: empty gallery");
  const Tensor normed = l2_normalize_rows(features.detached());
  const std::size_t d = normed.cols();
  Tensor gallery(Shape{split.gallery.size(), d});
  for (std::size_t g = 0; g < split.gallery.size(); ++g)
    std::copy_n(normed.data().begin() + split.gallery[g] * d, d, gallery.data().begin() + g * d);

  RetrievalMetrics m;
  std::vector<std::vector<std::size_t>> rankings;
  std::vector<std::vector<bool>> masks;
  double ap_sum = 0.0;
  for (std::size_t qi : split.query) {
    std::span<const double> q(normed.data().data() + qi * d, d);
    auto ranking = rank_gallery(q, gallery);
    std::vector<bool> rel(split.gallery.size());
    for (std::size_t g = 0; g < split.gallery.size(); ++g)
      rel[g] = identities[split.gallery[g]] == identities[qi];
    const auto ap = average_precision(ranking, rel);
    if (!ap) {
      ++m.excluded_queries;
      continue;
    }
    ap_sum += *ap;
    rankings.push_back(std::move(ranking));
    masks.push_back(std::move(rel));
  }
  m.num_queries = rankings.size();
  if (m.num_queries > 0) {
    m.mAP = ap_sum / static_cast<double>(m.num_queries);
    m.cmc1 = cmc_at_k(rankings, masks, 1);
    m.cmc5 = cmc_at_k(rankings, masks, 5);
    m.cmc10 = cmc_at_k(rankings, masks, 10);
  }
  return m;
}

RetrievalMetrics evaluate_encoder(const EncoderParams& encoder,
                                  std::span<const LabeledSample> samples, std::uint64_t seed) {
  if (samples.empty()) throw DimensionError("evaluate_encoder: empty evaluation set");
  const auto ids = identities_of(samples);
  return evaluate_retrieval(encode(stack_vectors(samples), encoder), ids,
                            split_query_gallery(ids, seed));
}

nlohmann::json metrics_to_json(const RetrievalMetrics& m) {
  return {{"mAP", m.mAP},
          {"cmc1", m.cmc1},
          {"cmc5", m.cmc5},
          {"cmc10", m.cmc10},
          {"num_queries", m.num_queries},
          {"excluded_queries", m.excluded_queries}};
}

}  // namespace mmt
