#pragma once

// Contexts, trials, datasets and the seeded object/trial splits.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "crossctx/errors.hpp"
#include "crossctx/rng.hpp"

namespace crossctx {

enum class Tool : std::uint8_t {
  metal_scissor,
  metal_whisk,
  plastic_knife,
  plastic_spoon,
  wooden_chopstick,
  wooden_fork,
};

enum class Behavior : std::uint8_t {
  stirring_slow,
  stirring_fast,
  stirring_twist,
  whisk,
  poke,
};

enum class Modality : std::uint8_t { audio, effort, force };

enum class Provenance : std::uint8_t { measured, augmented, synthetic };

inline constexpr std::array kAllTools = {Tool::metal_scissor,  Tool::metal_whisk,
                                         Tool::plastic_knife,  Tool::plastic_spoon,
                                         Tool::wooden_chopstick, Tool::wooden_fork};
inline constexpr std::array kAllBehaviors = {Behavior::stirring_slow, Behavior::stirring_fast,
                                             Behavior::stirring_twist, Behavior::whisk,
                                             Behavior::poke};
inline constexpr std::array kAllModalities = {Modality::audio, Modality::effort,
                                              Modality::force};

inline constexpr std::array<std::string_view, 6> kToolNames = {
    "metal-scissor", "metal-whisk",      "plastic-knife",
    "plastic-spoon", "wooden-chopstick", "wooden-fork"};
inline constexpr std::array<std::string_view, 5> kBehaviorNames = {
    "stirring-slow", "stirring-fast", "stirring-twist", "whisk", "poke"};
inline constexpr std::array<std::string_view, 3> kModalityNames = {"audio", "effort", "force"};
inline constexpr std::array<std::string_view, 3> kProvenanceNames = {"measured", "augmented",
                                                                     "synthetic"};

/// The 15 granular objects of the reference dataset.
inline const std::vector<std::string>& reference_objects() {
  static const std::vector<std::string> names = {
      "cane-sugar",  "chia-seed",       "chickpea",       "detergent",      "empty",
      "glass-bead",  "kidney-bean",     "metal-nut-bolt", "plastic-bead",   "salt",
      "split-green-pea", "styrofoam-bead", "water",       "wheat",          "wooden-button"};
  return names;
}

inline constexpr std::size_t kObjectCount = 15;
inline constexpr std::size_t kSharedObjectCount = 10;
inline constexpr std::size_t kMeasuredTrialsPerObject = 10;
inline constexpr std::size_t kTrainTrialsPerObject = 8;

/// Feature dimension D_c of a modality: 10x10 spectro-temporal histogram for
/// audio, 6 joints x 10 bins for effort, 3 axes x 10 bins for force.
constexpr int feature_dim(Modality m) {
  switch (m) {
    case Modality::audio: return 100;
    case Modality::effort: return 60;
    case Modality::force: return 30;
  }
  return 0;
}

inline std::string_view to_string(Tool t) { return kToolNames[static_cast<std::size_t>(t)]; }
inline std::string_view to_string(Behavior b) {
  return kBehaviorNames[static_cast<std::size_t>(b)];
}
inline std::string_view to_string(Modality m) {
  return kModalityNames[static_cast<std::size_t>(m)];
}
inline std::string_view to_string(Provenance p) {
  return kProvenanceNames[static_cast<std::size_t>(p)];
}

namespace detail {
template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<std::string_view, N>& names,
                std::string_view kind) {
  for (std::size_t i = 0; i < N; ++i)
    if (names[i] == s) return static_cast<Enum>(i);
  throw DataError("crossctx::parse: unknown " + std::string(kind) + " '" + std::string(s) + "'");
}
}  // namespace detail

inline Tool parse_tool(std::string_view s) { return detail::parse_enum<Tool>(s, kToolNames, "tool"); }
inline Behavior parse_behavior(std::string_view s) {
  return detail::parse_enum<Behavior>(s, kBehaviorNames, "behavior");
}
inline Modality parse_modality(std::string_view s) {
  return detail::parse_enum<Modality>(s, kModalityNames, "modality");
}
inline Provenance parse_provenance(std::string_view s) {
  return detail::parse_enum<Provenance>(s, kProvenanceNames, "provenance");
}

/// A (tool, behavior) pair; the unit a robot "uses" independently of modality.
struct ToolBehavior {
  Tool tool{};
  Behavior behavior{};
  auto operator<=>(const ToolBehavior&) const = default;
};

struct Context {
  Tool tool{};
  Behavior behavior{};
  Modality modality{};

  auto operator<=>(const Context&) const = default;

  ToolBehavior pair() const { return {tool, behavior}; }
  int dim() const { return feature_dim(modality); }
};

inline std::string to_string(const ToolBehavior& tb) {
  return std::string(to_string(tb.tool)) + "_" + std::string(to_string(tb.behavior));
}
inline std::string to_string(const Context& c) {
  return to_string(c.pair()) + "_" + std::string(to_string(c.modality));
}

/// Every (tool, behavior) pair in canonical order, tool-major.
inline std::vector<ToolBehavior> all_tool_behaviors() {
  std::vector<ToolBehavior> out;
  for (Tool t : kAllTools)
    for (Behavior b : kAllBehaviors) out.push_back({t, b});
  return out;
}

inline std::vector<Context> all_contexts() {
  std::vector<Context> out;
  for (const auto& tb : all_tool_behaviors())
    for (Modality m : kAllModalities) out.push_back({tb.tool, tb.behavior, m});
  return out;
}

/// Measured and synthetic trials are observations; augmented ones are resamples
/// and may only ever be used for training.
constexpr bool is_observed(Provenance p) { return p != Provenance::augmented; }

struct TrialFeature {
  std::string object;
  int trial_index = 0;
  Eigen::VectorXd values;
  Provenance provenance = Provenance::measured;

  bool operator==(const TrialFeature& o) const {
    return object == o.object && trial_index == o.trial_index && provenance == o.provenance &&
           values.size() == o.values.size() && values == o.values;
  }
};

/// Immutable after construction; all mutation goes through add_trial which
/// enforces the dimension and finiteness invariants.
class Dataset {
 public:
  using Key = std::pair<Context, std::string>;

  Dataset() = default;
  Dataset(std::vector<Context> contexts, std::vector<std::string> objects)
      : contexts_(std::move(contexts)), objects_(std::move(objects)) {
    std::set<Context> seen_ctx;
    for (const auto& c : contexts_)
      if (!seen_ctx.insert(c).second)
        throw DataError("crossctx::Dataset: duplicate context " + to_string(c));
    std::set<std::string> seen_obj;
    for (const auto& o : objects_)
      if (!seen_obj.insert(o).second)
        throw DataError("crossctx::Dataset: duplicate object '" + o + "'");
  }

  const std::vector<Context>& contexts() const { return contexts_; }
  const std::vector<std::string>& objects() const { return objects_; }
  const std::map<Key, std::vector<TrialFeature>>& all_trials() const { return trials_; }

  bool has_context(const Context& c) const {
    return std::find(contexts_.begin(), contexts_.end(), c) != contexts_.end();
  }
  bool has_object(const std::string& o) const {
    return std::find(objects_.begin(), objects_.end(), o) != objects_.end();
  }

  void add_trial(const Context& ctx, TrialFeature trial) {
    if (!has_context(ctx))
      throw DataError("crossctx::Dataset::add_trial: context " + to_string(ctx) +
                      " is not declared");
    if (!has_object(trial.object))
      throw DataError("crossctx::Dataset::add_trial: object '" + trial.object +
                      "' is not declared");
    const std::string where = to_string(ctx) + " object '" + trial.object + "' trial " +
                              std::to_string(trial.trial_index);
    if (trial.trial_index < 0)
      throw DataError("crossctx::Dataset::add_trial: negative trial index at " + where);
    if (trial.values.size() != ctx.dim())
      throw DataError("crossctx::Dataset::add_trial: dimension mismatch at " + where +
                      ": expected " + std::to_string(ctx.dim()) + ", got " +
                      std::to_string(trial.values.size()));
    if (!trial.values.allFinite())
      throw DataError("crossctx::Dataset::add_trial: non-finite value at " + where);
    auto& list = trials_[{ctx, trial.object}];
    for (const auto& t : list)
      if (t.trial_index == trial.trial_index)
        throw DataError("crossctx::Dataset::add_trial: duplicate trial at " + where);
    list.push_back(std::move(trial));
  }

  bool has_trials(const Context& ctx, const std::string& object) const {
    return trials_.count({ctx, object}) != 0;
  }

  const std::vector<TrialFeature>& trials(const Context& ctx, const std::string& object) const {
    auto it = trials_.find({ctx, object});
    if (it == trials_.end())
      throw DataError("crossctx::Dataset::trials: no trials for " + to_string(ctx) +
                      " object '" + object + "'");
    return it->second;
  }

  /// Number of observed interactions recorded under one modality.
  std::size_t interaction_count(Modality m) const {
    std::size_t n = 0;
    for (const auto& [key, list] : trials_) {
      if (key.first.modality != m) continue;
      for (const auto& t : list) n += is_observed(t.provenance) ? 1 : 0;
    }
    return n;
  }

  std::size_t trial_count() const {
    std::size_t n = 0;
    for (const auto& [key, list] : trials_) n += list.size();
    return n;
  }

  bool operator==(const Dataset&) const = default;

 private:
  std::vector<Context> contexts_;
  std::vector<std::string> objects_;
  std::map<Key, std::vector<TrialFeature>> trials_;
};

struct ObjectSplit {
  std::vector<std::string> shared;
  std::vector<std::string> novel;
  std::uint64_t seed = 0;
};

/// Uniformly random choice of 10 shared objects out of 15; the other 5 are
/// novel. Both lists keep the input order.
inline ObjectSplit split_objects(const std::vector<std::string>& objects, std::uint64_t seed) {
  if (objects.size() != kObjectCount)
    throw ConfigError("crossctx::split_objects: expected " + std::to_string(kObjectCount) +
                      " objects, got " + std::to_string(objects.size()));
  if (std::set<std::string>(objects.begin(), objects.end()).size() != objects.size())
    throw ConfigError("crossctx::split_objects: object labels are not distinct");

  std::vector<std::size_t> order(objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, {fnv1a64("split_objects")}));
  rng.shuffle(order);

  std::vector<bool> is_shared(objects.size(), false);
  for (std::size_t i = 0; i < kSharedObjectCount; ++i) is_shared[order[i]] = true;

  ObjectSplit split;
  split.seed = seed;
  for (std::size_t i = 0; i < objects.size(); ++i)
    (is_shared[i] ? split.shared : split.novel).push_back(objects[i]);
  return split;
}

struct TrialPartition {
  std::vector<TrialFeature> train;
  std::vector<TrialFeature> test;
};

/// Per object: 8 observed trials to train, 2 to test. Augmented trials in the
/// input always land in train. The draw for an object depends only on the seed
/// and the object label, not on the other objects present.
inline TrialPartition split_trials(const std::vector<TrialFeature>& trials, std::uint64_t seed) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const TrialFeature*>> observed;
  std::map<std::string, std::vector<const TrialFeature*>> resampled;
  for (const auto& t : trials) {
    if (!observed.count(t.object) && !resampled.count(t.object)) order.push_back(t.object);
    (is_observed(t.provenance) ? observed[t.object] : resampled[t.object]).push_back(&t);
  }

  TrialPartition out;
  for (const auto& object : order) {
    auto obs = observed[object];
    if (obs.size() != kMeasuredTrialsPerObject)
      throw DataError("crossctx::split_trials: object '" + object + "' has " +
                      std::to_string(obs.size()) + " measured trials, expected " +
                      std::to_string(kMeasuredTrialsPerObject));
    std::sort(obs.begin(), obs.end(), [](const TrialFeature* a, const TrialFeature* b) {
      return a->trial_index < b->trial_index;
    });
    Rng rng(derive_seed(seed, {fnv1a64("split_trials"), fnv1a64(object)}));
    rng.shuffle(obs);
    for (std::size_t i = 0; i < obs.size(); ++i)
      (i < kTrainTrialsPerObject ? out.train : out.test).push_back(*obs[i]);
    for (const auto* t : resampled[object]) out.train.push_back(*t);
  }
  return out;
}

}  // namespace crossctx
