#include "mmt/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"
#include "mmt/error.hpp"
#include "mmt/log.hpp"

namespace mmt {

std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain domain_from_string(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw ArtifactError("unknown domain '" + s + "'");
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

DomainShift DomainShift::identity(std::size_t dim) {
  DomainShift s{Tensor(Shape{dim, dim}), std::vector<double>(dim, 0.0)};
  for (std::size_t i = 0; i < dim; ++i) s.transform.at(i, i) = 1.0;
  return s;
}

double determinant(const Tensor& square) {
  if (square.rank() != 2 || square.rows() != square.cols()) {
    throw DimensionError("determinant of non-square " + shape_string(square.shape()));
  }
  const std::size_t n = square.rows();
  std::vector<double> a(square.data().begin(), square.data().end());
  double det = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t pivot = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r * n + c]) > std::abs(a[pivot * n + c])) pivot = r;
    if (a[pivot * n + c] == 0.0) return 0.0;
    if (pivot != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a[c * n + k], a[pivot * n + k]);
      det = -det;
    }
    det *= a[c * n + c];
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r * n + c] / a[c * n + c];
      for (std::size_t k = c; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
    }
  }
  return det;
}

void DomainSpec::validate() const {
  if (input_dim == 0 || num_identities == 0 || samples_per_identity == 0) {
    throw ConfigError("DomainSpec: sizes must be positive");
  }
  if (!(sigma_between > 0.0) || sigma_within < 0.0) {
    throw ConfigError("DomainSpec: sigma_between must be positive, sigma_within non-negative");
  }
  if (sigma_within >= sigma_between) {
    spdlog::warn("sigma_within ({}) >= sigma_between ({}): identities overlap heavily",
                 sigma_within, sigma_between);
  }
  if (domain == Domain::target) {
    if (shift.transform.shape() != Shape{input_dim, input_dim} ||
        shift.offset.size() != input_dim) {
      throw ConfigError("DomainSpec: domain shift does not match input_dim");
    }
    if (std::abs(determinant(shift.transform)) < 1e-12) {
      throw ConfigError("DomainSpec: domain transform is singular");
    }
  }
}

std::vector<LabeledSample> generate(const DomainSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = spec.input_dim;

  std::vector<LabeledSample> out;
  out.reserve(spec.num_identities * spec.samples_per_identity);
  std::vector<double> proto(d);
  std::vector<double> x(d);
  for (std::size_t id = 0; id < spec.num_identities; ++id) {
    for (double& v : proto) v = spec.sigma_between * normal(rng);
    for (std::size_t s = 0; s < spec.samples_per_identity; ++s) {
      for (std::size_t j = 0; j < d; ++j) x[j] = proto[j] + spec.sigma_within * normal(rng);
      LabeledSample sample{x, static_cast<int>(id), spec.domain, std::nullopt};
      if (spec.domain == Domain::target) {
        const Tensor& A = spec.shift.transform;
        for (std::size_t i = 0; i < d; ++i) {
          double acc = spec.shift.offset[i];
          for (std::size_t j = 0; j < d; ++j) acc += A.at(i, j) * x[j];
          sample.vector[i] = acc;
        }
      }
      out.push_back(std::move(sample));
    }
  }
  return out;
}

Tensor random_rotation(std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Columns orthonormalized by modified Gram-Schmidt.
  std::vector<std::vector<double>> cols(dim, std::vector<double>(dim));
  for (auto& c : cols)
    for (double& v : c) v = normal(rng);
  for (std::size_t k = 0; k < dim; ++k) {
    for (std::size_t p = 0; p < k; ++p) {
      const double dot = std::inner_product(cols[k].begin(), cols[k].end(), cols[p].begin(), 0.0);
      for (std::size_t i = 0; i < dim; ++i) cols[k][i] -= dot * cols[p][i];
    }
    const double norm =
        std::sqrt(std::inner_product(cols[k].begin(), cols[k].end(), cols[k].begin(), 0.0));
    for (double& v : cols[k]) v /= norm;
  }
  Tensor q(Shape{dim, dim});
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) q.at(i, j) = cols[j][i];
  if (determinant(q) < 0.0) {
    for (std::size_t i = 0; i < dim; ++i) q.at(i, 0) = -q.at(i, 0);
  }
  return q;
}

DomainShift make_domain_shift(std::size_t dim, double scale, double offset_norm,
                              std::uint64_t seed, double anisotropy) {
  if (!(anisotropy >= 1.0)) throw ConfigError("domain shift anisotropy must be at least 1");
  DomainShift shift{random_rotation(dim, seed), std::vector<double>(dim, 0.0)};
  const double log_c = std::log(anisotropy);
  for (std::size_t j = 0; j < dim; ++j) {
    const double t = dim > 1 ? static_cast<double>(j) / static_cast<double>(dim - 1) : 0.5;
    const double stretch = scale * std::exp(log_c * (2.0 * t - 1.0));
    for (std::size_t i = 0; i < dim; ++i) shift.transform.at(i, j) *= stretch;
  }
  if (offset_norm > 0.0) {
    std::mt19937_64 rng(mix_seed(seed, 1));
    std::normal_distribution<double> normal(0.0, 1.0);
    double norm = 0.0;
    for (double& v : shift.offset) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : shift.offset) v *= offset_norm / norm;
  }
  return shift;
}

View augment(std::span<const double> x, const Augmentation& aug, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  View v(x.begin(), x.end());
  for (double& c : v) {
    const double jitter = aug.sigma * normal(rng);
    const bool drop = unit(rng) < aug.p_drop;
    c = drop ? 0.0 : c + jitter;
  }
  return v;
}

std::pair<View, View> two_views(const LabeledSample& x, const Augmentation& aug,
                                std::uint64_t seed) {
  return {augment(x.vector, aug, mix_seed(seed, 0)), augment(x.vector, aug, mix_seed(seed, 1))};
}

std::vector<std::size_t> sample_pk_batch(std::span<const int> labels, std::size_t P,
                                         std::size_t K, std::uint64_t seed) {
  if (P == 0 || K < 2) throw SamplingError("P x K sampling needs P >= 1 and K >= 2");
  int max_label = -1;
  for (int l : labels) max_label = std::max(max_label, l);
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) members[static_cast<std::size_t>(labels[i])].push_back(i);
  std::vector<std::size_t> classes;
  for (std::size_t c = 0; c < members.size(); ++c)
    if (!members[c].empty()) classes.push_back(c);
  if (classes.size() < P) {
    throw SamplingError("P x K sampling needs " + std::to_string(P) +
                        " non-empty classes, found " + std::to_string(classes.size()));
  }

  std::mt19937_64 rng(seed);
  std::shuffle(classes.begin(), classes.end(), rng);
  std::vector<std::size_t> batch;
  batch.reserve(P * K);
  for (std::size_t p = 0; p < P; ++p) {
    std::vector<std::size_t> pool = members[classes[p]];
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::size_t take = std::min(K, pool.size());
    batch.insert(batch.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (std::size_t k = take; k < K; ++k) batch.push_back(pool[pick(rng)]);
  }
  return batch;
}

ExperimentData make_experiment_data(const DataConfig& data, std::uint64_t seed) {
  DomainSpec base;
  base.input_dim = data.input_dim;
  base.samples_per_identity = data.samples_per_identity;
  base.sigma_between = data.sigma_between;
  base.sigma_within = data.sigma_within;

  ExperimentData out;
  DomainSpec src = base;
  src.num_identities = data.source_identities;
  src.seed = mix_seed(seed, 10);
  out.source_train = generate(src);
  src.num_identities = data.source_val_identities;
  src.seed = mix_seed(seed, 11);
  out.source_val = generate(src);

  DomainSpec tgt = base;
  tgt.domain = Domain::target;
  tgt.shift = make_domain_shift(data.input_dim, data.target_scale, data.target_offset,
                                mix_seed(seed, 20), data.target_anisotropy);
  tgt.num_identities = data.target_identities;
  tgt.seed = mix_seed(seed, 21);
  out.target_train = generate(tgt);
  tgt.num_identities = data.target_test_identities;
  tgt.seed = mix_seed(seed, 22);
  out.target_test = generate(tgt);
  return out;
}

Tensor stack_vectors(std::span<const LabeledSample> samples) {
  if (samples.empty()) return Tensor(Shape{0, 0});
  const std::size_t d = samples.front().vector.size();
  Tensor t(Shape{samples.size(), d});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].vector.size() != d) throw DimensionError("samples differ in dimension");
    std::copy(samples[i].vector.begin(), samples[i].vector.end(), t.data().begin() + i * d);
  }
  return t;
}

std::vector<int> identities_of(std::span<const LabeledSample> samples) {
  std::vector<int> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.identity);
  return ids;
}

void write_samples(const std::string& path, std::span<const LabeledSample> samples) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write " + path);
  for (const auto& s : samples) {
    nlohmann::json j{{"vector", s.vector}, {"identity", s.identity}, {"domain", to_string(s.domain)}};
    if (s.pseudo_label) j["pseudo_label"] = *s.pseudo_label;
    out << j.dump() << '\n';
  }
}

std::vector<LabeledSample> read_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("missing dataset " + path);
  std::vector<LabeledSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      LabeledSample s{j.at("vector").get<std::vector<double>>(), j.at("identity").get<int>(),
                      domain_from_string(j.at("domain").get<std::string>()), std::nullopt};
      if (j.contains("pseudo_label")) s.pseudo_label = j.at("pseudo_label").get<int>();
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ArtifactError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mmt
