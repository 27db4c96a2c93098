#include "mmt/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "mmt/error.hpp"

namespace mmt {
namespace {

double squared_distance(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double t = a[j] - b[j];
    s += t * t;
  }
  return s;
}

}  // namespace

std::vector<std::size_t> kmeanspp_init(const Tensor& features, std::size_t k,
                                       std::uint64_t seed) {
  const std::size_t n = features.rows(), d = features.cols();
  if (k == 0 || n < k) {
    throw ClusterError("k-means needs at least " + std::to_string(k) + " samples, got " +
                       std::to_string(n));
  }
  const double* x = features.data().data();
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> centers;
  centers.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (centers.size() < k) {
    const double* c = x + centers.back() * d;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(x + i * d, c, d));
      total += nearest[i];
    }
    std::size_t next = 0;
    if (total > 0.0) {
      double r = unit(rng) * total;
      next = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (nearest[i] <= 0.0) continue;
        r -= nearest[i];
        if (r < 0.0) {
          next = i;
          break;
        }
      }
      // Rounding can leave r >= 0 at the end; fall back to the last candidate.
      while (nearest[next] <= 0.0 && next > 0) --next;
    } else {
      // All points coincide with a center; any unused index will do.
      next = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      while (std::find(centers.begin(), centers.end(), next) != centers.end())
        next = (next + 1) % n;
    }
    centers.push_back(next);
  }
  return centers;
}

PseudoLabeling kmeans_from(const Tensor& features, Tensor initial_centroids,
                           std::size_t max_iter) {
  const std::size_t n = features.rows(), d = features.cols();
  const std::size_t k = initial_centroids.rows();
  if (d == 0) throw ClusterError("k-means needs feature dimension >= 1");
  if (n < k) {
    throw ClusterError("k-means needs at least " + std::to_string(k) + " samples, got " +
                       std::to_string(n));
  }
  if (initial_centroids.cols() != d) throw DimensionError("k-means: centroid dimension mismatch");

  const double* x = features.data().data();
  PseudoLabeling out;
  out.centroids = std::move(initial_centroids);
  out.assignments.assign(n, -1);
  std::vector<int> previous;
  std::vector<double> dist(n);
  std::vector<std::size_t> counts(k);

  for (std::size_t iter = 0; iter < std::max<std::size_t>(max_iter, 1); ++iter) {
    double* c = out.centroids.data().data();
    previous = out.assignments;
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (std::size_t j = 0; j < k; ++j) {
        const double s = squared_distance(x + i * d, c + j * d, d);
        if (s < best) {
          best = s;
          arg = static_cast<int>(j);
        }
      }
      out.assignments[i] = arg;
      dist[i] = best;
      ++counts[static_cast<std::size_t>(arg)];
    }

    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] != 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[static_cast<std::size_t>(out.assignments[i])] < 2) continue;
        if (far == n || dist[i] > dist[far]) far = i;
      }
      if (far == n) break;
      --counts[static_cast<std::size_t>(out.assignments[far])];
      out.assignments[far] = static_cast<int>(j);
      counts[j] = 1;
      dist[far] = 0.0;
    }

    std::fill(out.centroids.data().begin(), out.centroids.data().end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double* cj = c + static_cast<std::size_t>(out.assignments[i]) * d;
      for (std::size_t t = 0; t < d; ++t) cj[t] += x[i * d + t];
    }
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t t = 0; t < d; ++t) c[j * d + t] /= static_cast<double>(counts[j]);

    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      inertia += squared_distance(x + i * d, c + static_cast<std::size_t>(out.assignments[i]) * d, d);
    out.inertia = inertia;
    out.inertia_history.push_back(inertia);
    if (out.assignments == previous) break;
  }
  for (double v : out.centroids.data()) {
    if (std::isnan(v)) throw ClusterError("k-means produced a NaN centroid");
  }
  return out;
}

PseudoLabeling kmeans(const Tensor& features, std::size_t num_clusters, std::uint64_t seed,
                      std::size_t max_iter) {
  const auto init = kmeanspp_init(features, num_clusters, seed);
  const std::size_t d = features.cols();
  Tensor centroids(Shape{num_clusters, d});
  for (std::size_t j = 0; j < num_clusters; ++j)
    std::copy_n(features.data().begin() + init[j] * d, d, centroids.data().begin() + j * d);
  return kmeans_from(features, std::move(centroids), max_iter);
}

PseudoLabeling relabel_epoch(const NetworkPair& pair, std::span<LabeledSample> target,
                             std::size_t num_classes, std::uint64_t seed,
                             const RelabelOptions& options) {
  const Network& model = options.use_raw_network ? pair.net1 : pair.avg1;
  Tensor features = encode(stack_vectors(target), model.encoder);
  if (options.normalize) features = l2_normalize_rows(std::move(features));
  PseudoLabeling labeling = kmeans(features, num_classes, seed, options.max_iter);
  for (std::size_t i = 0; i < target.size(); ++i) target[i].pseudo_label = labeling.assignments[i];
  return labeling;
}

void write_pseudo_labels_csv(const std::string& path, const PseudoLabeling& labeling) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write " + path);
  out << "sample_index,pseudo_label\n";
  for (std::size_t i = 0; i < labeling.assignments.size(); ++i)
    out << i << ',' << labeling.assignments[i] << '\n';
}

}  // namespace mmt
