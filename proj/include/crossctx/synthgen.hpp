#pragma once

// Synthetic multi-context datasets with known latent structure.
//
// Every object owns a shared latent z_o ~ N(0, I_g). Under a context c the
// object is rendered from
//
//   h = sqrt(f) z_o + sqrt(1 - f) u_{o, group(c)}
//
// where u is a private latent drawn per object and per private group and f is
// the cross-context fidelity. By default each (tool, behavior) pair is its own
// group, so f = 0 leaves no structure shared between contexts. The renderer is
// x = A_c h + b_c (optionally through tanh), plus isotropic Gaussian noise;
// A_c has orthonormal columns scaled by `gain`, so linear renderings preserve
// latent distances when gain = 1.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crossctx/data_model.hpp"
#include "crossctx/errors.hpp"
#include "crossctx/rng.hpp"

namespace crossctx {

enum class PrivateGrouping : std::uint8_t {
  per_context,  ///< every (tool, behavior) pair has its own private latents
  per_behavior, ///< contexts sharing a behavior share private latents
  per_tool,     ///< contexts sharing a tool share private latents
};

struct SynthConfig {
  int n_objects = 15;
  int latent_dim = 8;
  double fidelity = 1.0;
  double noise_scale = 0.3;
  bool nonlinear = false;
  double gain = 1.0;
  PrivateGrouping grouping = PrivateGrouping::per_context;
  std::vector<Context> contexts = all_contexts();
};

struct ContextRenderer {
  Eigen::MatrixXd mixing;  ///< D_c x g
  Eigen::VectorXd offset;  ///< D_c
  double noise_scale = 0.0;
  bool nonlinear = false;
};

struct SyntheticWorld {
  std::vector<std::string> objects;
  std::vector<Context> contexts;
  std::map<std::string, Eigen::VectorXd> object_latents;
  std::map<Context, ContextRenderer> renderers;
  /// private_latents[group][object]
  std::map<std::string, std::map<std::string, Eigen::VectorXd>> private_latents;
  double fidelity = 1.0;
  PrivateGrouping grouping = PrivateGrouping::per_context;
  std::uint64_t seed = 0;

  std::string group_of(const Context& c) const {
    switch (grouping) {
      case PrivateGrouping::per_behavior: return std::string(to_string(c.behavior));
      case PrivateGrouping::per_tool: return std::string(to_string(c.tool));
      case PrivateGrouping::per_context: break;
    }
    return to_string(c.pair());
  }

  /// Noise-free feature vector of an object under a context.
  Eigen::VectorXd render_mean(const Context& c, const std::string& object) const {
    auto rit = renderers.find(c);
    if (rit == renderers.end())
      throw DataError("crossctx::SyntheticWorld: unknown context " + to_string(c));
    auto oit = object_latents.find(object);
    if (oit == object_latents.end())
      throw DataError("crossctx::SyntheticWorld: unknown object '" + object + "'");
    const Eigen::VectorXd& u = private_latents.at(group_of(c)).at(object);
    const Eigen::VectorXd h = std::sqrt(fidelity) * oit->second + std::sqrt(1.0 - fidelity) * u;
    const ContextRenderer& r = rit->second;
    Eigen::VectorXd x = r.mixing * h + r.offset;
    if (r.nonlinear) x = x.array().tanh().matrix();
    return x;
  }
};

inline std::vector<std::string> synthetic_object_names(int n) {
  if (n == static_cast<int>(kObjectCount)) return reference_objects();
  std::vector<std::string> names;
  for (int i = 0; i < n; ++i) names.push_back("object-" + std::string(i < 10 ? "0" : "") + std::to_string(i));
  return names;
}

namespace detail {
inline Eigen::VectorXd normal_vector(Rng& rng, Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

/// D x g Gaussian matrix orthonormalized by modified Gram-Schmidt.
inline Eigen::MatrixXd random_orthonormal_columns(Rng& rng, Eigen::Index d, Eigen::Index g) {
  Eigen::MatrixXd q(d, g);
  for (Eigen::Index j = 0; j < g; ++j) {
    Eigen::VectorXd v = normal_vector(rng, d);
    for (Eigen::Index k = 0; k < j; ++k) v -= q.col(k).dot(v) * q.col(k);
    q.col(j) = v / v.norm();
  }
  return q;
}
}  // namespace detail

inline SyntheticWorld generate_world(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.n_objects < 2) throw ConfigError("crossctx::generate_world: need at least 2 objects");
  if (cfg.latent_dim < 1) throw ConfigError("crossctx::generate_world: latent_dim must be >= 1");
  if (!(cfg.fidelity >= 0.0 && cfg.fidelity <= 1.0))
    throw ConfigError("crossctx::generate_world: fidelity must lie in [0, 1]");
  if (cfg.noise_scale < 0.0) throw ConfigError("crossctx::generate_world: negative noise scale");
  if (cfg.contexts.empty()) throw ConfigError("crossctx::generate_world: no contexts");
  for (const auto& c : cfg.contexts)
    if (c.dim() < cfg.latent_dim)
      throw ConfigError("crossctx::generate_world: latent_dim exceeds feature dimension of " +
                        to_string(c));

  SyntheticWorld w;
  w.objects = synthetic_object_names(cfg.n_objects);
  w.contexts = cfg.contexts;
  w.fidelity = cfg.fidelity;
  w.grouping = cfg.grouping;
  w.seed = seed;
  const Eigen::Index g = cfg.latent_dim;

  for (std::size_t i = 0; i < w.objects.size(); ++i) {
    Rng rng(derive_seed(seed, {fnv1a64("object"), i}));
    w.object_latents[w.objects[i]] = detail::normal_vector(rng, g);
  }
  for (const auto& c : w.contexts) {
    const std::string group = w.group_of(c);
    if (!w.private_latents.count(group)) {
      for (std::size_t i = 0; i < w.objects.size(); ++i) {
        Rng rng(derive_seed(seed, {fnv1a64("private"), fnv1a64(group), i}));
        w.private_latents[group][w.objects[i]] = detail::normal_vector(rng, g);
      }
    }
    Rng rng(derive_seed(seed, {fnv1a64("renderer"), fnv1a64(to_string(c))}));
    ContextRenderer r;
    r.mixing = cfg.gain * detail::random_orthonormal_columns(rng, c.dim(), g);
    r.offset = detail::normal_vector(rng, c.dim());
    r.noise_scale = cfg.noise_scale;
    r.nonlinear = cfg.nonlinear;
    w.renderers[c] = std::move(r);
  }
  return w;
}

/// Trials with indices 0..n_trials-1 and provenance synthetic.
inline std::vector<TrialFeature> render_trials(const SyntheticWorld& world, const Context& c,
                                               const std::string& object, int n_trials,
                                               std::uint64_t seed) {
  if (n_trials < 0) throw ConfigError("crossctx::render_trials: negative trial count");
  const Eigen::VectorXd mean = world.render_mean(c, object);
  const double noise = world.renderers.at(c).noise_scale;
  Rng rng(derive_seed(seed, {fnv1a64("render"), fnv1a64(to_string(c)), fnv1a64(object)}));
  std::vector<TrialFeature> out;
  for (int i = 0; i < n_trials; ++i) {
    TrialFeature t;
    t.object = object;
    t.trial_index = i;
    t.provenance = Provenance::synthetic;
    t.values = mean;
    for (Eigen::Index d = 0; d < t.values.size(); ++d) t.values[d] += noise * rng.normal();
    out.push_back(std::move(t));
  }
  return out;
}

/// Dataset covering every context and object of the world.
inline Dataset synthesize_dataset(const SyntheticWorld& world, int n_trials, std::uint64_t seed) {
  Dataset ds(world.contexts, world.objects);
  for (const auto& c : world.contexts)
    for (const auto& o : world.objects)
      for (auto& t : render_trials(world, c, o, n_trials, seed)) ds.add_trial(c, std::move(t));
  return ds;
}

}  // namespace crossctx
