#pragma once

// Shared fixtures for the test executables.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crossctx/crossctx.hpp"

namespace testing_support {

namespace fs = std::filesystem;

/// Fresh directory under the build tree, removed at construction.
inline fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::path(CROSSCTX_TEST_TMP) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline crossctx::TrialFeature trial(const std::string& object, int index, Eigen::VectorXd values,
                                    crossctx::Provenance p = crossctx::Provenance::measured) {
  crossctx::TrialFeature t;
  t.object = object;
  t.trial_index = index;
  t.values = std::move(values);
  t.provenance = p;
  return t;
}

/// Random vector with entries uniform in [-1, 1].
inline Eigen::VectorXd random_vector(crossctx::Rng& rng, Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(-1.0, 1.0);
  return v;
}

/// 15 reference objects x 10 measured trials over the given contexts, random
/// values.
inline crossctx::Dataset random_dataset(const std::vector<crossctx::Context>& contexts,
                                        std::uint64_t seed) {
  crossctx::Dataset ds(contexts, crossctx::reference_objects());
  crossctx::Rng rng(seed);
  for (const auto& c : contexts)
    for (const auto& o : crossctx::reference_objects())
      for (int i = 0; i < 10; ++i) ds.add_trial(c, trial(o, i, random_vector(rng, c.dim())));
  return ds;
}

/// Synthetic world restricted to a tool x behavior grid.
inline crossctx::SynthConfig grid_config(const std::vector<crossctx::Tool>& tools,
                                         const std::vector<crossctx::Behavior>& behaviors) {
  crossctx::SynthConfig cfg;
  cfg.contexts.clear();
  for (auto t : tools)
    for (auto b : behaviors)
      for (auto m : crossctx::kAllModalities) cfg.contexts.push_back({t, b, m});
  return cfg;
}

/// Small, fast experiment settings for unit tests.
inline crossctx::ExperimentConfig quick_config() {
  crossctx::ExperimentConfig cfg;
  cfg.repetitions = 2;
  cfg.tl.epochs = 20;
  cfg.tl.learning_rate = 1e-3;
  cfg.tl.hidden = {32};
  cfg.tl.latent_dim = 8;
  cfg.kema.latent_dim = 8;
  cfg.classifier.epochs = 60;
  cfg.classifier.hidden = 32;
  cfg.classifier.learning_rate = 1e-3;
  return cfg;
}

}  // namespace testing_support
