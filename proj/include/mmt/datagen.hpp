#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmt/config.hpp"
#include "mmt/diffcore.hpp"

namespace mmt {

enum class Domain { source, target };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

struct LabeledSample {
  std::vector<double> vector;
  int identity = 0;  // ground truth; only evaluators may read it during adaptation
  Domain domain = Domain::source;
  std::optional<int> pseudo_label;
};

// Affine map x -> A x + b applied to every target-domain sample.
struct DomainShift {
  Tensor transform;            // input_dim x input_dim, invertible
  std::vector<double> offset;  // input_dim

  static DomainShift identity(std::size_t dim);
};

struct DomainSpec {
  std::size_t input_dim = 16;
  std::size_t num_identities = 30;
  std::size_t samples_per_identity = 20;
  double sigma_between = 4.0;
  double sigma_within = 0.6;
  Domain domain = Domain::source;
  DomainShift shift;  // ignored for the source domain
  std::uint64_t seed = 0;

  // Throws ConfigError on bad sizes or a singular transform. A noise level
  // at or above the prototype spread only logs a warning.
  void validate() const;
};

// Prototypes ~ N(0, sigma_between^2 I), samples = prototype + N(0, sigma_within^2 I),
// identity-major order. Target samples are then mapped through the shift.
std::vector<LabeledSample> generate(const DomainSpec& spec);

// Orthogonal matrix with determinant +1 from a seeded Gaussian draw.
Tensor random_rotation(std::size_t dim, std::uint64_t seed);
// scale * R * diag(s) with R a random rotation and s log-spaced over
// [1/anisotropy, anisotropy], plus a random offset of the given norm.
DomainShift make_domain_shift(std::size_t dim, double scale, double offset_norm,
                              std::uint64_t seed, double anisotropy = 1.0);
double determinant(const Tensor& square);

struct Augmentation {
  double sigma = 0.0;   // additive Gaussian jitter
  double p_drop = 0.0;  // per-coordinate zeroing probability
};

using View = std::vector<double>;

View augment(std::span<const double> x, const Augmentation& aug, std::uint64_t seed);
// Two independent corruptions of the same sample; deterministic in seed.
std::pair<View, View> two_views(const LabeledSample& x, const Augmentation& aug,
                                std::uint64_t seed);

// P classes x K instances, grouped by class. Negative labels mark unlabeled
// samples and are never drawn. Classes with fewer than K members are filled
// up by drawing with replacement after every member is used once.
std::vector<std::size_t> sample_pk_batch(std::span<const int> labels, std::size_t P,
                                         std::size_t K, std::uint64_t seed);

// The four datasets of one experiment: labeled source train and validation
// identities, and disjoint target train/test identity sets sharing one shift.
struct ExperimentData {
  std::vector<LabeledSample> source_train;
  std::vector<LabeledSample> source_val;
  std::vector<LabeledSample> target_train;
  std::vector<LabeledSample> target_test;
};

ExperimentData make_experiment_data(const DataConfig& data, std::uint64_t seed);

// Rows of sample vectors as a [n x dim] tensor.
Tensor stack_vectors(std::span<const LabeledSample> samples);
std::vector<int> identities_of(std::span<const LabeledSample> samples);

// JSON lines, one sample per line.
void write_samples(const std::string& path, std::span<const LabeledSample> samples);
std::vector<LabeledSample> read_samples(const std::string& path);

// splitmix64 finalizer; derives independent sub-seeds from (seed, stream).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace mmt
