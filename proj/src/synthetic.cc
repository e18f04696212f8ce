#include "wildlab/synthetic.h"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "wildlab/errors.h"
#include "wildlab/json_util.h"

namespace wildlab {
namespace {

void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw ValidationError(what + " must be finite");
}

}  // namespace

std::string transform_name(const CovariateTransform& t) {
  struct Visitor {
    std::string operator()(const AdditiveNoise& n) const {
      return "additive-gaussian-noise(" + std::to_string(n.sigma) + ")";
    }
    std::string operator()(const AffineShift& s) const {
      std::string out = "affine-shift(";
      char buf[32];
      for (size_t i = 0; i < s.offset.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%s%g", i ? " " : "", s.offset[i]);
        out += buf;
      }
      return out + ")";
    }
    std::string operator()(const Rotation& r) const {
      return "rotation(" + std::to_string(r.angle) + ")";
    }
  };
  return std::visit(Visitor{}, t);
}

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ValidationError("synthetic: num_classes must be >= 2");
  if (dim < 1) throw ValidationError("synthetic: dim must be >= 1");
  if (id_means.size() != static_cast<size_t>(num_classes)) {
    throw ValidationError("synthetic: need one ID mean per class");
  }
  for (const auto& mu : id_means) {
    if (mu.size() != dim) throw ValidationError("synthetic: ID mean has wrong dimension");
    for (double v : mu) require_finite(v, "synthetic: ID mean");
  }
  if (!(id_cov_scale > 0.0) || !std::isfinite(id_cov_scale)) {
    throw ValidationError("synthetic: id_cov_scale must be > 0");
  }
  if (semantic_clusters.empty()) throw ValidationError("synthetic: need >= 1 semantic cluster");
  for (const auto& c : semantic_clusters) {
    if (c.mean.size() != dim) throw ValidationError("synthetic: semantic mean has wrong dimension");
    if (!(c.scale > 0.0) || !std::isfinite(c.scale)) {
      throw ValidationError("synthetic: semantic cluster scale must be > 0");
    }
  }
  if (const auto* n = std::get_if<AdditiveNoise>(&covariate)) {
    if (!(n->sigma >= 0.0) || !std::isfinite(n->sigma)) {
      throw ValidationError("synthetic: noise sigma must be >= 0");
    }
  } else if (const auto* s = std::get_if<AffineShift>(&covariate)) {
    if (s->offset.size() != dim) throw ValidationError("synthetic: shift offset has wrong dimension");
  } else if (const auto* r = std::get_if<Rotation>(&covariate)) {
    require_finite(r->angle, "synthetic: rotation angle");
    if (dim < 2) throw ValidationError("synthetic: rotation needs dim >= 2");
  }
}

SyntheticSpec desk_benchmark_spec(uint64_t seed) {
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.dim = 8;
  spec.id_means.assign(4, std::vector<double>(8, 0.0));
  for (int c = 0; c < 4; ++c) spec.id_means[c][c] = 4.0;
  spec.id_cov_scale = 1.0;
  // Half-turn in the (x0, x1) plane: classes 0 and 1 land in empty space,
  // classes 2 and 3 keep their ID distribution.
  spec.covariate = Rotation{std::numbers::pi};
  // Two clusters on the class 0/1 tie, mirrored along x4.
  spec.semantic_clusters = {
      {{2.0, 2.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0}, 0.4},
      {{2.0, 2.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0}, 0.4},
  };
  spec.seed = seed;
  return spec;
}

Dataset draw_id_split(const SyntheticSpec& spec, size_t n, const std::string& stream,
                      Membership tag) {
  Rng rng = make_rng(spec.seed, stream);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds(spec.dim, spec.num_classes);
  ds.reserve(n);
  std::vector<double> x(spec.dim);
  for (size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % static_cast<size_t>(spec.num_classes));
    for (size_t j = 0; j < spec.dim; ++j) {
      x[j] = spec.id_means[y][j] + spec.id_cov_scale * normal(rng);
    }
    ds.append(std::span<const double>(x), y, tag);
  }
  return ds;
}

void apply_covariate_transform(const CovariateTransform& t, std::span<double> x, Rng& noise_rng) {
  if (const auto* n = std::get_if<AdditiveNoise>(&t)) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : x) v += n->sigma * normal(noise_rng);
  } else if (const auto* s = std::get_if<AffineShift>(&t)) {
    for (size_t j = 0; j < x.size(); ++j) x[j] += s->offset[j];
  } else if (const auto* r = std::get_if<Rotation>(&t)) {
    const double c = std::cos(r->angle);
    const double sn = std::sin(r->angle);
    const double a = x[0];
    const double b = x[1];
    x[0] = c * a - sn * b;
    x[1] = sn * a + c * b;
  }
}

namespace {

Dataset draw_covariate_split(const SyntheticSpec& spec, size_t n, const std::string& stream) {
  const Dataset base = draw_id_split(spec, n, stream, Membership::kCovariate);
  Rng noise = make_rng(spec.seed, stream + "/noise");
  Dataset out(spec.dim, spec.num_classes);
  out.reserve(n);
  std::vector<double> x(spec.dim);
  for (size_t i = 0; i < base.size(); ++i) {
    const auto row = base.row(i);
    for (size_t j = 0; j < spec.dim; ++j) x[j] = row[j];
    apply_covariate_transform(spec.covariate, x, noise);
    out.append(std::span<const double>(x), base.label(i), Membership::kCovariate);
  }
  return out;
}

Dataset draw_semantic_split(const SyntheticSpec& spec, size_t n, const std::string& stream) {
  Rng rng = make_rng(spec.seed, stream);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds(spec.dim, spec.num_classes);
  ds.reserve(n);
  std::vector<double> x(spec.dim);
  const size_t k = spec.semantic_clusters.size();
  for (size_t i = 0; i < n; ++i) {
    const GaussianCluster& cluster = spec.semantic_clusters[i % k];
    for (size_t j = 0; j < spec.dim; ++j) x[j] = cluster.mean[j] + cluster.scale * normal(rng);
    ds.append(std::span<const double>(x), kBottom, Membership::kSemantic);
  }
  return ds;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const SplitSizes& n = spec.sizes;
  SyntheticData out;
  out.id_train = draw_id_split(spec, n.id_train, "id_train", Membership::kId);
  out.id_pool = draw_id_split(spec, n.id_pool, "id_pool", Membership::kId);
  out.cov_pool = draw_covariate_split(spec, n.cov_pool, "cov_pool");
  out.sem_pool = draw_semantic_split(spec, n.sem_pool, "sem_pool");
  out.id_test = draw_id_split(spec, n.id_test, "id_test", Membership::kId);
  out.cov_test = draw_covariate_split(spec, n.cov_test, "cov_test");
  out.sem_test = draw_semantic_split(spec, n.sem_test, "sem_test");
  return out;
}

void WildMixtureSpec::validate() const {
  if (!(pi_c >= 0.0 && pi_c <= 1.0)) throw ValidationError("wild mixture: pi_c must be in [0,1]");
  if (!(pi_s >= 0.0 && pi_s <= 1.0)) throw ValidationError("wild mixture: pi_s must be in [0,1]");
  if (pi_c + pi_s > 1.0) throw ValidationError("wild mixture: pi_c + pi_s must be <= 1");
}

Dataset mix_wild(const Dataset& id_pool, const Dataset& cov_pool, const Dataset& sem_pool,
                 const WildMixtureSpec& spec, uint64_t seed) {
  spec.validate();
  const double pi_id = 1.0 - spec.pi_c - spec.pi_s;
  if (pi_id > 0.0 && id_pool.empty()) throw ValidationError("wild mixture: ID pool is empty");
  if (spec.pi_c > 0.0 && cov_pool.empty()) {
    throw ValidationError("wild mixture: covariate pool is empty");
  }
  if (spec.pi_s > 0.0 && sem_pool.empty()) {
    throw ValidationError("wild mixture: semantic pool is empty");
  }
  if (id_pool.dim() != cov_pool.dim() || id_pool.dim() != sem_pool.dim()) {
    throw ValidationError("wild mixture: pools have different dimensions");
  }

  Rng rng = make_rng(seed, "mix_wild");
  Dataset wild(id_pool.dim(), id_pool.num_classes());
  wild.reserve(spec.m);
  for (size_t i = 0; i < spec.m; ++i) {
    const double u = uniform01(rng);
    const Dataset* pool = &id_pool;
    Membership tag = Membership::kId;
    if (u < spec.pi_s) {
      pool = &sem_pool;
      tag = Membership::kSemantic;
    } else if (u < spec.pi_s + spec.pi_c) {
      pool = &cov_pool;
      tag = Membership::kCovariate;
    }
    const size_t j = static_cast<size_t>(uniform01(rng) * static_cast<double>(pool->size()));
    wild.append(pool->row(j), kUnlabeled, tag, pool->label(j));
  }
  return wild;
}

void to_json(nlohmann::json& j, const CovariateTransform& t) {
  if (const auto* n = std::get_if<AdditiveNoise>(&t)) {
    j = {{"type", "additive-gaussian-noise"}, {"sigma", n->sigma}};
  } else if (const auto* s = std::get_if<AffineShift>(&t)) {
    j = {{"type", "affine-shift"}, {"offset", s->offset}};
  } else {
    j = {{"type", "rotation"}, {"angle", std::get<Rotation>(t).angle}};
  }
}

void from_json(const nlohmann::json& j, CovariateTransform& t) {
  StrictObject o(j, "covariate_transform");
  std::string type;
  o.required("type", type);
  if (type == "additive-gaussian-noise") {
    AdditiveNoise n;
    o.required("sigma", n.sigma);
    t = n;
  } else if (type == "affine-shift") {
    AffineShift s;
    o.required("offset", s.offset);
    t = s;
  } else if (type == "rotation") {
    Rotation r;
    o.required("angle", r.angle);
    t = r;
  } else {
    throw ValidationError("covariate_transform: unknown type '" + type + "'");
  }
  o.finish();
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  nlohmann::json clusters = nlohmann::json::array();
  for (const auto& c : s.semantic_clusters) clusters.push_back({{"mean", c.mean}, {"scale", c.scale}});
  j = {{"num_classes", s.num_classes},
       {"dim", s.dim},
       {"id_means", s.id_means},
       {"id_cov_scale", s.id_cov_scale},
       {"covariate_transform", s.covariate},
       {"semantic_clusters", clusters},
       {"seed", s.seed},
       {"sizes",
        {{"id_train", s.sizes.id_train},
         {"id_pool", s.sizes.id_pool},
         {"cov_pool", s.sizes.cov_pool},
         {"sem_pool", s.sizes.sem_pool},
         {"id_test", s.sizes.id_test},
         {"cov_test", s.sizes.cov_test},
         {"sem_test", s.sizes.sem_test}}}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  StrictObject o(j, "synthetic");
  o.optional("num_classes", s.num_classes);
  o.optional("dim", s.dim);
  o.optional("id_means", s.id_means);
  o.optional("id_cov_scale", s.id_cov_scale);
  o.optional("covariate_transform", s.covariate);
  if (o.has("semantic_clusters")) {
    nlohmann::json clusters;
    o.optional("semantic_clusters", clusters);
    if (!clusters.is_array()) throw ValidationError("synthetic.semantic_clusters: expected array");
    s.semantic_clusters.clear();
    for (const auto& c : clusters) {
      StrictObject co(c, "synthetic.semantic_clusters[]");
      GaussianCluster g;
      co.required("mean", g.mean);
      co.optional("scale", g.scale);
      co.finish();
      s.semantic_clusters.push_back(std::move(g));
    }
  }
  o.optional("seed", s.seed);
  if (o.has("sizes")) {
    nlohmann::json sizes;
    o.optional("sizes", sizes);
    StrictObject so(sizes, "synthetic.sizes");
    so.optional("id_train", s.sizes.id_train);
    so.optional("id_pool", s.sizes.id_pool);
    so.optional("cov_pool", s.sizes.cov_pool);
    so.optional("sem_pool", s.sizes.sem_pool);
    so.optional("id_test", s.sizes.id_test);
    so.optional("cov_test", s.sizes.cov_test);
    so.optional("sem_test", s.sizes.sem_test);
    so.finish();
  }
  o.finish();
}

void to_json(nlohmann::json& j, const WildMixtureSpec& s) {
  j = {{"pi_c", s.pi_c}, {"pi_s", s.pi_s}, {"m", s.m}};
}

void from_json(const nlohmann::json& j, WildMixtureSpec& s) {
  StrictObject o(j, "wild");
  o.optional("pi_c", s.pi_c);
  o.optional("pi_s", s.pi_s);
  o.optional("m", s.m);
  o.finish();
}

}  // namespace wildlab
