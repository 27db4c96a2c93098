#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmt/datagen.hpp"
#include "mmt/diffcore.hpp"
#include "mmt/model.hpp"

namespace mmt {

struct PseudoLabeling {
  std::vector<int> assignments;  // sample index -> class in [0, M_t)
  Tensor centroids;              // M_t x d
  double inertia = 0.0;          // sum of squared distances to the assigned centroid
  std::size_t epoch = 0;
  std::vector<double> inertia_history;  // one entry per Lloyd iteration

  std::size_t num_classes() const { return centroids.rows(); }
};

// k-means++ seeding: indices of the chosen initial centers.
std::vector<std::size_t> kmeanspp_init(const Tensor& features, std::size_t k,
                                       std::uint64_t seed);

// Lloyd iterations from the given centers until the assignment reaches a
// fixpoint or max_iter is hit. An empty cluster takes over the point that is
// farthest from its own centroid (among clusters with more than one member).
PseudoLabeling kmeans_from(const Tensor& features, Tensor initial_centroids,
                           std::size_t max_iter);

// features: n x d. Throws ClusterError when n < num_clusters.
PseudoLabeling kmeans(const Tensor& features, std::size_t num_clusters, std::uint64_t seed,
                      std::size_t max_iter = 100);

struct RelabelOptions {
  bool normalize = true;
  bool use_raw_network = false;  // net1 instead of the average model avg1
  std::size_t max_iter = 100;
};

// Encodes the target set with avg1 (no gradients), clusters it and writes the
// result into each sample's pseudo_label.
PseudoLabeling relabel_epoch(const NetworkPair& pair, std::span<LabeledSample> target,
                             std::size_t num_classes, std::uint64_t seed,
                             const RelabelOptions& options = {});

// "sample_index,pseudo_label" rows with a header line.
void write_pseudo_labels_csv(const std::string& path, const PseudoLabeling& labeling);

}  // namespace mmt
