#ifndef WILDLAB_SYNTHETIC_H_
#define WILDLAB_SYNTHETIC_H_

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "wildlab/dataset.h"
#include "wildlab/rng.h"

namespace wildlab {

// x + N(0, sigma^2 I). sigma == 0 is the identity.
struct AdditiveNoise {
  double sigma = 1.0;
};

// x + offset.
struct AffineShift {
  std::vector<double> offset;
};

// Rotation by `angle` radians in the plane of the first two coordinates.
struct Rotation {
  double angle = 0.0;
};

using CovariateTransform = std::variant<AdditiveNoise, AffineShift, Rotation>;

std::string transform_name(const CovariateTransform& t);

struct GaussianCluster {
  std::vector<double> mean;
  double scale = 1.0;
};

// Sizes of every generated split. The wild pools are what mix_wild samples
// from; the test splits are held out for evaluation.
struct SplitSizes {
  size_t id_train = 2000;
  size_t id_pool = 5000;
  size_t cov_pool = 5000;
  size_t sem_pool = 5000;
  size_t id_test = 1000;
  size_t cov_test = 1000;
  size_t sem_test = 1000;
};

struct SyntheticSpec {
  int num_classes = 4;
  size_t dim = 8;
  std::vector<std::vector<double>> id_means;  // num_classes points of length dim
  double id_cov_scale = 1.0;                  // isotropic standard deviation
  CovariateTransform covariate = AdditiveNoise{1.0};
  std::vector<GaussianCluster> semantic_clusters;
  uint64_t seed = 0;
  SplitSizes sizes;

  void validate() const;
};

// Seeded default benchmark: C=4, d=8, two semantic clusters.
SyntheticSpec desk_benchmark_spec(uint64_t seed);

struct SyntheticData {
  Dataset id_train;
  Dataset id_pool;
  Dataset cov_pool;
  Dataset sem_pool;
  Dataset id_test;
  Dataset cov_test;
  Dataset sem_test;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

// The untransformed class-conditional draw that a covariate split is built
// from. Rows are labeled round-robin (row i has class i % C).
Dataset draw_id_split(const SyntheticSpec& spec, size_t n, const std::string& stream,
                      Membership tag);

void apply_covariate_transform(const CovariateTransform& t, std::span<double> x, Rng& noise_rng);

struct WildMixtureSpec {
  double pi_c = 0.5;
  double pi_s = 0.1;
  size_t m = 5000;

  void validate() const;
};

// Draws m rows i.i.d. from (1 - pi_c - pi_s) * ID + pi_c * COV + pi_s * SEM,
// sampling each component pool with replacement. Ground truth goes into the
// membership tags and the answer key only; every class label is UNLABELED.
Dataset mix_wild(const Dataset& id_pool, const Dataset& cov_pool, const Dataset& sem_pool,
                 const WildMixtureSpec& spec, uint64_t seed);

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);
void to_json(nlohmann::json& j, const WildMixtureSpec& s);
void from_json(const nlohmann::json& j, WildMixtureSpec& s);
void to_json(nlohmann::json& j, const CovariateTransform& t);
void from_json(const nlohmann::json& j, CovariateTransform& t);

}  // namespace wildlab

#endif  // WILDLAB_SYNTHETIC_H_
