#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmt/datagen.hpp"
#include "mmt/diffcore.hpp"
#include "mmt/model.hpp"

namespace mmt {

// Gallery indices by ascending Euclidean distance to the query; equal
// distances keep gallery order. gallery: n x d.
std::vector<std::size_t> rank_gallery(std::span<const double> query, const Tensor& gallery);

// relevant is indexed by gallery index. Returns nullopt when nothing is
// relevant, which callers treat as an excluded query.
std::optional<double> average_precision(std::span<const std::size_t> ranking,
                                        const std::vector<bool>& relevant);

// Fraction of (non-excluded) queries with a relevant item in the top k.
double cmc_at_k(const std::vector<std::vector<std::size_t>>& rankings,
                const std::vector<std::vector<bool>>& relevant, std::size_t k);

// Mean over rows of 0.5 * [KL(p||q) + KL(q||p)], logs clamped at 1e-12.
double peer_kl(const Tensor& p, const Tensor& q);

// sum over clusters of the majority identity count, divided by N.
double cluster_purity(std::span<const int> assignments, std::span<const int> identities);

struct QueryGallerySplit {
  std::vector<std::size_t> query;
  std::vector<std::size_t> gallery;
};

// Per identity a seeded 25% of samples become queries (at least one when the
// identity has two or more samples); the rest form the gallery.
QueryGallerySplit split_query_gallery(std::span<const int> identities, std::uint64_t seed);

struct RetrievalMetrics {
  double mAP = 0.0;
  double cmc1 = 0.0;
  double cmc5 = 0.0;
  double cmc10 = 0.0;
  std::size_t num_queries = 0;
  std::size_t excluded_queries = 0;
};

// Features are L2-normalized before ranking.
RetrievalMetrics evaluate_retrieval(const Tensor& features, std::span<const int> identities,
                                    const QueryGallerySplit& split);
RetrievalMetrics evaluate_encoder(const EncoderParams& encoder,
                                  std::span<const LabeledSample> samples, std::uint64_t seed);

nlohmann::json metrics_to_json(const RetrievalMetrics& m);

}  // namespace mmt
