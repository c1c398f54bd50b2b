#pragma once

// The transfer protocol: repeated object and trial splits, transfer and
// baseline conditions, modality fusion, projection sweeps, the accuracy-delta
// matrix with its embedding, and single-context cross-validation.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "crossctx/data_model.hpp"
#include "crossctx/errors.hpp"
#include "crossctx/featurize.hpp"
#include "crossctx/kema.hpp"
#include "crossctx/linalg.hpp"
#include "crossctx/recognition.hpp"
#include "crossctx/rng.hpp"
#include "crossctx/transfer_tl.hpp"

namespace crossctx {

enum class Method : std::uint8_t { tl, kema };
enum class TransferTask : std::uint8_t { cross_tool, cross_behavior, all_pairs };
enum class ConditionKind : std::uint8_t { transfer, baseline1, baseline2 };
enum class FusionWeights : std::uint8_t { training, inner_split, equal };

inline std::string_view to_string(Method m) { return m == Method::tl ? "tl" : "kema"; }
inline std::string_view to_string(TransferTask t) {
  switch (t) {
    case TransferTask::cross_tool: return "cross-tool";
    case TransferTask::cross_behavior: return "cross-behavior";
    case TransferTask::all_pairs: break;
  }
  return "all-pairs";
}
inline std::string_view to_string(ConditionKind k) {
  switch (k) {
    case ConditionKind::transfer: return "transfer";
    case ConditionKind::baseline1: return "baseline1";
    case ConditionKind::baseline2: break;
  }
  return "baseline2";
}
inline std::string_view to_string(FusionWeights f) {
  switch (f) {
    case FusionWeights::training: return "training";
    case FusionWeights::inner_split: return "inner-split";
    case FusionWeights::equal: break;
  }
  return "equal";
}

inline Method parse_method(std::string_view s) {
  if (s == "tl" || s == "TL") return Method::tl;
  if (s == "kema" || s == "KEMA") return Method::kema;
  throw ConfigError("crossctx::parse_method: unknown method '" + std::string(s) +
                    "' (expected tl or kema)");
}
inline TransferTask parse_task(std::string_view s) {
  if (s == "cross-tool") return TransferTask::cross_tool;
  if (s == "cross-behavior") return TransferTask::cross_behavior;
  if (s == "all-pairs") return TransferTask::all_pairs;
  throw ConfigError("crossctx::parse_task: unknown task '" + std::string(s) +
                    "' (expected cross-tool, cross-behavior or all-pairs)");
}
inline FusionWeights parse_fusion_weights(std::string_view s) {
  if (s == "training") return FusionWeights::training;
  if (s == "inner-split") return FusionWeights::inner_split;
  if (s == "equal") return FusionWeights::equal;
  throw ConfigError("crossctx::parse_fusion_weights: unknown mode '" + std::string(s) + "'");
}

struct Projection {
  ToolBehavior source;
  ToolBehavior target;

  auto operator<=>(const Projection&) const = default;
};

inline std::string to_string(const Projection& p) {
  return to_string(p.source) + "->" + to_string(p.target);
}

/// Which task a source/target pair belongs to; pairs that are identical or
/// change both tool and behavior have none.
inline std::optional<TransferTask> task_of(const Projection& p) {
  const bool same_tool = p.source.tool == p.target.tool;
  const bool same_behavior = p.source.behavior == p.target.behavior;
  if (same_tool && !same_behavior) return TransferTask::cross_behavior;
  if (!same_tool && same_behavior) return TransferTask::cross_tool;
  return std::nullopt;
}

/// Ordered projections of a task over the given tools and behaviors, in
/// canonical (source, target) order.
inline std::vector<Projection> enumerate_projections(
    TransferTask task, const std::vector<Tool>& tools = {kAllTools.begin(), kAllTools.end()},
    const std::vector<Behavior>& behaviors = {kAllBehaviors.begin(), kAllBehaviors.end()}) {
  std::vector<ToolBehavior> grid;
  for (Tool t : tools)
    for (Behavior b : behaviors) grid.push_back({t, b});
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  std::vector<Projection> out;
  for (const auto& s : grid)
    for (const auto& t : grid) {
      if (s == t) continue;
      const Projection p{s, t};
      if (task == TransferTask::all_pairs || task_of(p) == task) out.push_back(p);
    }
  return out;
}

struct ExperimentConfig {
  TlHyper tl;
  KemaConfig kema;
  ClassifierHyper classifier;
  bool augment = true;
  int augment_count = 10;  ///< synthetic trials added per object and context
  int repetitions = 10;
  std::vector<Modality> modalities{kAllModalities.begin(), kAllModalities.end()};
  FusionWeights fusion = FusionWeights::training;
  /// Test-only: permit source == target.
  bool allow_identical_contexts = false;

  nlohmann::json to_json() const {
    std::vector<std::string> mods;
    for (Modality m : modalities) mods.emplace_back(to_string(m));
    return {{"tl", tl.to_json()},
            {"kema", kema.to_json()},
            {"classifier", classifier.to_json()},
            {"augment", augment},
            {"augment_count", augment_count},
            {"repetitions", repetitions},
            {"modalities", mods},
            {"fusion_weights", std::string(to_string(fusion))},
            {"allow_identical_contexts", allow_identical_contexts}};
  }

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw ConfigError("crossctx::ExperimentConfig: " + field + ": " + why);
    };
    if (repetitions < 1) fail("repetitions", "must be >= 1");
    if (augment_count < 0) fail("augment_count", "must be >= 0");
    if (modalities.empty()) fail("modalities", "must not be empty");
    if (std::set<Modality>(modalities.begin(), modalities.end()).size() != modalities.size())
      fail("modalities", "duplicate entries");
    if (tl.epochs < 0) fail("tl.epochs", "must be >= 0");
    if (!(tl.learning_rate > 0.0)) fail("tl.learning_rate", "must be > 0");
    if (tl.margin < 0.0) fail("tl.margin", "must be >= 0");
    if (tl.latent_dim < 1) fail("tl.latent_dim", "must be >= 1");
    if (tl.batch_size < 1) fail("tl.batch_size", "must be >= 1");
    for (int h : tl.hidden)
      if (h < 1) fail("tl.hidden", "layer sizes must be >= 1");
    if (kema.mu < 0.0 || kema.mu > 1.0) fail("kema.mu", "must lie in [0, 1]");
    if (kema.latent_dim < 1) fail("kema.latent_dim", "must be >= 1");
    if (kema.knn < 1) fail("kema.knn", "must be >= 1");
    if (!(kema.ridge > 0.0)) fail("kema.ridge", "must be > 0");
    if (classifier.hidden < 1) fail("classifier.hidden", "must be >= 1");
    if (classifier.epochs < 0) fail("classifier.epochs", "must be >= 0");
    if (!(classifier.learning_rate > 0.0)) fail("classifier.learning_rate", "must be > 0");
    if (classifier.batch_size < 1) fail("classifier.batch_size", "must be >= 1");
  }
};

namespace detail {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, const std::string& where, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("crossctx::config: " + where + key + ": wrong type");
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                           const std::string& where) {
  if (!j.is_object()) throw ConfigError("crossctx::config: " + where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("crossctx::config: unknown field " + where + k);
}

}  // namespace detail

/// Overlays the fields present in `j` on `base`; unknown fields are errors.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j,
                                                    ExperimentConfig base = {}) {
  using detail::read_field;
  detail::reject_unknown(j, {"tl", "kema", "classifier", "augment", "augment_count",
                             "repetitions", "modalities", "fusion_weights",
                             "allow_identical_contexts"},
                         "");
  if (j.contains("tl")) {
    const auto& t = j.at("tl");
    detail::reject_unknown(t, {"epochs", "learning_rate", "margin", "latent_dim", "hidden",
                               "batch_size", "resample_triplets", "standardize"},
                           "tl.");
    read_field(t, "epochs", "tl.", base.tl.epochs);
    read_field(t, "learning_rate", "tl.", base.tl.learning_rate);
    read_field(t, "margin", "tl.", base.tl.margin);
    read_field(t, "latent_dim", "tl.", base.tl.latent_dim);
    read_field(t, "hidden", "tl.", base.tl.hidden);
    read_field(t, "batch_size", "tl.", base.tl.batch_size);
    read_field(t, "resample_triplets", "tl.", base.tl.resample_triplets);
    read_field(t, "standardize", "tl.", base.tl.standardize);
  }
  if (j.contains("kema")) {
    const auto& k = j.at("kema");
    detail::reject_unknown(k, {"mu", "latent_dim", "knn", "ridge", "standardize"}, "kema.");
    read_field(k, "mu", "kema.", base.kema.mu);
    read_field(k, "latent_dim", "kema.", base.kema.latent_dim);
    read_field(k, "knn", "kema.", base.kema.knn);
    read_field(k, "ridge", "kema.", base.kema.ridge);
    read_field(k, "standardize", "kema.", base.kema.standardize);
  }
  if (j.contains("classifier")) {
    const auto& c = j.at("classifier");
    detail::reject_unknown(c, {"hidden", "epochs", "learning_rate", "batch_size", "standardize"},
                           "classifier.");
    read_field(c, "hidden", "classifier.", base.classifier.hidden);
    read_field(c, "epochs", "classifier.", base.classifier.epochs);
    read_field(c, "learning_rate", "classifier.", base.classifier.learning_rate);
    read_field(c, "batch_size", "classifier.", base.classifier.batch_size);
    read_field(c, "standardize", "classifier.", base.classifier.standardize);
  }
  read_field(j, "augment", "", base.augment);
  read_field(j, "augment_count", "", base.augment_count);
  read_field(j, "repetitions", "", base.repetitions);
  read_field(j, "allow_identical_contexts", "", base.allow_identical_contexts);
  if (j.contains("modalities")) {
    std::vector<std::string> names;
    read_field(j, "modalities", "", names);
    base.modalities.clear();
    for (const auto& n : names) {
      try {
        base.modalities.push_back(parse_modality(n));
      } catch (const DataError& e) {
        throw ConfigError(std::string("crossctx::config: modalities: ") + e.what());
      }
    }
  }
  if (j.contains("fusion_weights")) {
    std::string mode;
    read_field(j, "fusion_weights", "", mode);
    base.fusion = parse_fusion_weights(mode);
  }
  base.validate();
  return base;
}

/// Seeds: projection <- master; repetition <- projection. Within a repetition,
/// counters 1..5 feed the object split, trial split, augmentation, transfer
/// model and classifier.
inline std::uint64_t projection_seed(std::uint64_t master, const Projection& p) {
  return derive_seed(master, {fnv1a64("projection"), static_cast<std::uint64_t>(p.source.tool),
                              static_cast<std::uint64_t>(p.source.behavior),
                              static_cast<std::uint64_t>(p.target.tool),
                              static_cast<std::uint64_t>(p.target.behavior)});
}
inline std::uint64_t repetition_seed(std::uint64_t projection_seed, int repetition) {
  return derive_seed(projection_seed, {static_cast<std::uint64_t>(repetition)});
}
namespace seed_slot {
inline constexpr std::uint64_t object_split = 1;
inline constexpr std::uint64_t trial_split = 2;
inline constexpr std::uint64_t augment = 3;
inline constexpr std::uint64_t transfer_model = 4;
inline constexpr std::uint64_t classifier = 5;
}  // namespace seed_slot

/// One trial's appearance in a repetition.
struct TrialUse {
  Context context;
  std::string object;
  int trial_index = 0;
  Provenance provenance = Provenance::measured;

  auto operator<=>(const TrialUse&) const = default;
};

struct RepetitionAudit {
  int repetition = 0;
  std::set<TrialUse> training;  ///< anything a model or augmentation saw
  std::set<TrialUse> test;
};

/// Throws DataError if a test trial is augmented or shares (object, trial
/// index) with any observed training trial.
inline void check_no_leakage(const RepetitionAudit& audit) {
  std::set<std::pair<std::string, int>> seen;
  for (const auto& u : audit.training)
    if (is_observed(u.provenance)) seen.insert({u.object, u.trial_index});
  for (const auto& u : audit.test) {
    if (!is_observed(u.provenance))
      throw DataError("crossctx::check_no_leakage: repetition " +
                      std::to_string(audit.repetition) + " tests on augmented trial " + u.object +
                      "#" + std::to_string(u.trial_index));
    if (seen.count({u.object, u.trial_index}))
      throw DataError("crossctx::check_no_leakage: repetition " +
                      std::to_string(audit.repetition) + " test trial " + to_string(u.context) +
                      " " + u.object + "#" + std::to_string(u.trial_index) +
                      " also appears in training");
  }
}

/// Trials of one modality for one repetition.
struct ModalityPools {
  Context source;
  Context target;
  std::vector<TrialFeature> source_shared;  ///< transfer model training, source side
  std::vector<TrialFeature> target_shared;  ///< transfer model training, target side
  std::vector<TrialFeature> source_novel_train;
  std::vector<TrialFeature> target_novel_train;
  std::vector<TrialFeature> target_novel_test;
};

struct RepetitionPlan {
  int repetition = 0;
  std::uint64_t seed = 0;
  ObjectSplit objects;
  std::map<Modality, ModalityPools> pools;
  RepetitionAudit audit;
};

namespace detail {

inline std::vector<TrialFeature> observed_trials(const Dataset& ds, const Context& c,
                                                 const std::string& object) {
  std::vector<TrialFeature> out;
  for (const auto& t : ds.trials(c, object))
    if (is_observed(t.provenance)) out.push_back(t);
  std::sort(out.begin(), out.end(),
            [](const TrialFeature& a, const TrialFeature& b) { return a.trial_index < b.trial_index; });
  return out;
}

inline int max_index(const Dataset& ds, const Context& c, const std::string& object) {
  int m = -1;
  for (const auto& t : ds.trials(c, object)) m = std::max(m, t.trial_index);
  return m;
}

inline void record(std::set<TrialUse>& into, const Context& c,
                   const std::vector<TrialFeature>& trials) {
  for (const auto& t : trials) into.insert({c, t.object, t.trial_index, t.provenance});
}

/// Appends augmented trials for each object drawn from `basis` (one object's
/// trials at a time); new indices start above every index stored for that
/// object in the dataset.
inline void append_augmented(std::vector<TrialFeature>& pool, const Dataset& ds, const Context& c,
                             const std::map<std::string, std::vector<TrialFeature>>& basis,
                             int count, std::uint64_t seed) {
  for (const auto& [object, trials] : basis) {
    const int first = std::max(max_index(ds, c, object) + 1,
                               static_cast<int>(kMeasuredTrialsPerObject));
    for (auto& t : augment_object_trials(trials, count, seed, first)) pool.push_back(std::move(t));
  }
}

}  // namespace detail

/// Every (context, object) the projection needs, missing ones listed.
inline std::vector<std::string> missing_inputs(const Dataset& ds, const Projection& p,
                                               const std::vector<Modality>& modalities) {
  std::vector<std::string> missing;
  for (Modality m : modalities)
    for (const ToolBehavior& tb : {p.source, p.target}) {
      const Context c{tb.tool, tb.behavior, m};
      if (!ds.has_context(c)) {
        missing.push_back(to_string(c));
        continue;
      }
      for (const auto& o : ds.objects())
        if (!ds.has_trials(c, o)) missing.push_back(to_string(c) + " object '" + o + "'");
    }
  std::sort(missing.begin(), missing.end());
  missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
  return missing;
}

inline void validate_projection(const Projection& p, const ExperimentConfig& cfg) {
  if (p.source == p.target) {
    if (!cfg.allow_identical_contexts)
      throw ConfigError("crossctx::run_transfer_experiment: source and target context are both " +
                        to_string(p.source));
  }
}

/// Object split, trial split and (optional) augmentation for one repetition.
/// Augmentation only ever sees trials that are training-eligible: all
/// observed trials of shared objects and the train split of novel objects.
inline RepetitionPlan prepare_repetition(const Dataset& ds, const Projection& p,
                                         const ExperimentConfig& cfg, int repetition,
                                         std::uint64_t rep_seed) {
  RepetitionPlan plan;
  plan.repetition = repetition;
  plan.seed = rep_seed;
  plan.audit.repetition = repetition;
  plan.objects = split_objects(ds.objects(), derive_seed(rep_seed, {seed_slot::object_split}));
  const std::uint64_t trial_seed = derive_seed(rep_seed, {seed_slot::trial_split});

  std::optional<std::set<std::pair<std::string, int>>> test_keys;
  for (Modality m : cfg.modalities) {
    ModalityPools pools;
    pools.source = {p.source.tool, p.source.behavior, m};
    pools.target = {p.target.tool, p.target.behavior, m};
    auto aug_seed = [&](const Context& c) {
      return derive_seed(rep_seed, {seed_slot::augment, fnv1a64(to_string(c))});
    };

    std::map<std::string, std::vector<TrialFeature>> src_basis, tgt_basis;
    for (const auto& o : plan.objects.shared) {
      auto s = detail::observed_trials(ds, pools.source, o);
      auto t = detail::observed_trials(ds, pools.target, o);
      pools.source_shared.insert(pools.source_shared.end(), s.begin(), s.end());
      pools.target_shared.insert(pools.target_shared.end(), t.begin(), t.end());
      src_basis[o] = std::move(s);
      tgt_basis[o] = std::move(t);
    }
    if (cfg.augment && cfg.augment_count > 0) {
      detail::append_augmented(pools.source_shared, ds, pools.source, src_basis,
                               cfg.augment_count, aug_seed(pools.source));
      detail::append_augmented(pools.target_shared, ds, pools.target, tgt_basis,
                               cfg.augment_count, aug_seed(pools.target));
    }

    std::vector<TrialFeature> target_novel;
    for (const auto& o : plan.objects.novel) {
      auto t = detail::observed_trials(ds, pools.target, o);
      target_novel.insert(target_novel.end(), t.begin(), t.end());
    }
    TrialPartition part = split_trials(target_novel, trial_seed);
    pools.target_novel_train = std::move(part.train);
    pools.target_novel_test = std::move(part.test);

    std::set<std::pair<std::string, int>> train_keys, keys;
    for (const auto& t : pools.target_novel_train) train_keys.insert({t.object, t.trial_index});
    for (const auto& t : pools.target_novel_test) keys.insert({t.object, t.trial_index});
    if (test_keys && *test_keys != keys)
      throw DataError("crossctx::prepare_repetition: trial indices of the novel objects differ "
                      "between modalities of " + to_string(p.target));
    test_keys = keys;

    std::map<std::string, std::vector<TrialFeature>> src_novel_basis, tgt_novel_basis;
    for (const auto& o : plan.objects.novel) {
      for (const auto& t : detail::observed_trials(ds, pools.source, o))
        if (train_keys.count({o, t.trial_index})) src_novel_basis[o].push_back(t);
      if (src_novel_basis[o].size() != kTrainTrialsPerObject)
        throw DataError("crossctx::prepare_repetition: " + to_string(pools.source) +
                        " object '" + o + "' lacks the trial indices used for training");
      pools.source_novel_train.insert(pools.source_novel_train.end(), src_novel_basis[o].begin(),
                                      src_novel_basis[o].end());
    }
    for (const auto& t : pools.target_novel_train) tgt_novel_basis[t.object].push_back(t);
    if (cfg.augment && cfg.augment_count > 0) {
      detail::append_augmented(pools.source_novel_train, ds, pools.source, src_novel_basis,
                               cfg.augment_count, aug_seed(pools.source));
      detail::append_augmented(pools.target_novel_train, ds, pools.target, tgt_novel_basis,
                               cfg.augment_count, aug_seed(pools.target));
    }
    plan.pools.emplace(m, std::move(pools));
  }
  return plan;
}

/// A trained transfer model per modality.
struct TransferModels {
  Method method = Method::tl;
  std::map<Modality, EncoderPair> encoders;
  std::map<Modality, KemaModel> kema;
};

inline TransferModels train_transfer_models(const RepetitionPlan& plan, Method method,
                                            const ExperimentConfig& cfg) {
  TransferModels out;
  out.method = method;
  for (const auto& [m, pools] : plan.pools) {
    const int sdim = pools.source.dim();
    const int tdim = pools.target.dim();
    if (method == Method::tl) {
      out.encoders.emplace(
          m, train_encoder(pools.source_shared, pools.target_shared, sdim, tdim, cfg.tl,
                           derive_seed(plan.seed, {seed_slot::transfer_model,
                                                   static_cast<std::uint64_t>(m)})));
    } else {
      out.kema.emplace(m, fit_kema(pools.source_shared, pools.target_shared, sdim, tdim, cfg.kema));
    }
  }
  return out;
}

struct ConditionOutcome {
  ConditionKind kind = ConditionKind::baseline1;
  double accuracy = 0.0;
  std::vector<int> predicted;
  std::vector<int> truth;
  std::map<Modality, double> modality_accuracy;
  std::map<Modality, double> fusion_weight;
};

namespace detail {

inline std::vector<int> novel_labels(const std::vector<TrialFeature>& trials,
                                     const std::vector<std::string>& novel) {
  return object_labels(trials, novel);
}

/// Accuracy of a classifier trained without one observed example per class
/// (the one with the largest trial index), scored on the held-out examples.
inline double inner_split_accuracy(const Eigen::MatrixXd& x, const std::vector<int>& y,
                                   const std::vector<TrialFeature>& trials, int classes,
                                   const ClassifierHyper& hyper, std::uint64_t seed) {
  std::vector<int> held(static_cast<std::size_t>(classes), -1);
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (!is_observed(trials[i].provenance)) continue;
    int& h = held[static_cast<std::size_t>(y[i])];
    if (h < 0 || trials[i].trial_index > trials[static_cast<std::size_t>(h)].trial_index)
      h = static_cast<int>(i);
  }
  std::vector<Eigen::Index> fit_cols, eval_cols;
  for (std::size_t i = 0; i < trials.size(); ++i)
    (std::find(held.begin(), held.end(), static_cast<int>(i)) != held.end() ? eval_cols : fit_cols)
        .push_back(static_cast<Eigen::Index>(i));
  Eigen::MatrixXd xf(x.rows(), static_cast<Eigen::Index>(fit_cols.size()));
  Eigen::MatrixXd xe(x.rows(), static_cast<Eigen::Index>(eval_cols.size()));
  std::vector<int> yf, ye;
  for (std::size_t i = 0; i < fit_cols.size(); ++i) {
    xf.col(static_cast<Eigen::Index>(i)) = x.col(fit_cols[i]);
    yf.push_back(y[static_cast<std::size_t>(fit_cols[i])]);
  }
  for (std::size_t i = 0; i < eval_cols.size(); ++i) {
    xe.col(static_cast<Eigen::Index>(i)) = x.col(eval_cols[i]);
    ye.push_back(y[static_cast<std::size_t>(eval_cols[i])]);
  }
  const Classifier c = train_classifier(xf, yf, classes, hyper, derive_seed(seed, {fnv1a64("inner")}));
  return accuracy_percent(argmax_columns(c.scores(xe)), ye);
}

/// Trains one classifier per modality, scores the test columns and fuses.
/// `train[m]`/`test[m]` are the inputs, `train_trials[m]` identifies the
/// training columns for the inner-split weighting.
inline ConditionOutcome classify_and_fuse(
    ConditionKind kind, const std::map<Modality, Eigen::MatrixXd>& train,
    const std::map<Modality, std::vector<TrialFeature>>& train_trials,
    const std::map<Modality, Eigen::MatrixXd>& test, const std::vector<int>& truth,
    const std::vector<std::string>& classes, const ExperimentConfig& cfg, std::uint64_t rep_seed) {
  ConditionOutcome out;
  out.kind = kind;
  out.truth = truth;
  std::map<Modality, Eigen::MatrixXd> scores;
  const int n_classes = static_cast<int>(classes.size());
  for (const auto& [m, x] : train) {
    const auto& trials = train_trials.at(m);
    const std::vector<int> y = novel_labels(trials, classes);
    const std::uint64_t seed =
        derive_seed(rep_seed, {seed_slot::classifier, static_cast<std::uint64_t>(m)});
    const Classifier clf = train_classifier(x, y, n_classes, cfg.classifier, seed);
    scores[m] = clf.scores(test.at(m));
    out.modality_accuracy[m] = accuracy_percent(argmax_columns(scores[m]), truth);
    switch (cfg.fusion) {
      case FusionWeights::training: out.fusion_weight[m] = clf.training_accuracy; break;
      case FusionWeights::inner_split:
        out.fusion_weight[m] = inner_split_accuracy(x, y, trials, n_classes, cfg.classifier, seed);
        break;
      case FusionWeights::equal: out.fusion_weight[m] = 1.0; break;
    }
  }
  std::map<Modality, double> weights = out.fusion_weight;
  double total = 0.0;
  for (const auto& [m, w] : weights) total += w;
  if (!(total > 0.0))
    for (auto& [m, w] : weights) w = 1.0;
  out.predicted = fuse_modalities(scores, weights);
  out.accuracy = accuracy_percent(out.predicted, truth);
  return out;
}

}  // namespace detail

/// Trains and tests the classifier for one condition on every modality of the
/// plan, then fuses. `models` is required for the transfer condition only.
inline ConditionOutcome evaluate_condition(ConditionKind kind, const RepetitionPlan& plan,
                                           const ExperimentConfig& cfg,
                                           const TransferModels* models = nullptr) {
  if (kind == ConditionKind::transfer && !models)
    throw ConfigError("crossctx::evaluate_condition: transfer condition needs a trained model");
  std::map<Modality, Eigen::MatrixXd> train, test;
  std::map<Modality, std::vector<TrialFeature>> train_trials;
  std::optional<std::vector<int>> truth;
  for (const auto& [m, pools] : plan.pools) {
    const auto& test_trials = pools.target_novel_test;
    const std::vector<int> y = detail::novel_labels(test_trials, plan.objects.novel);
    if (truth && *truth != y)
      throw DataError("crossctx::evaluate_condition: test trials differ between modalities");
    truth = y;
    const Eigen::Index sdim = pools.source.dim();
    const Eigen::Index tdim = pools.target.dim();
    switch (kind) {
      case ConditionKind::baseline1:
        train[m] = stack_columns(pools.target_novel_train, tdim);
        train_trials[m] = pools.target_novel_train;
        test[m] = stack_columns(test_trials, tdim);
        break;
      case ConditionKind::baseline2:
        if (sdim != tdim)
          throw DataError("crossctx::evaluate_condition: baseline2 needs equal feature dimensions");
        train[m] = stack_columns(pools.source_novel_train, sdim);
        train_trials[m] = pools.source_novel_train;
        test[m] = stack_columns(test_trials, tdim);
        break;
      case ConditionKind::transfer:
        if (models->method == Method::tl) {
          auto it = models->encoders.find(m);
          if (it == models->encoders.end())
            throw DataError("crossctx::evaluate_condition: no encoder for modality " +
                            std::string(to_string(m)));
          train[m] = project(it->second, Side::source, pools.source_novel_train);
          test[m] = project(it->second, Side::target, test_trials);
        } else {
          auto it = models->kema.find(m);
          if (it == models->kema.end())
            throw DataError("crossctx::evaluate_condition: no KEMA model for modality " +
                            std::string(to_string(m)));
          train[m] = kema_project(it->second, Side::source, pools.source_novel_train);
          test[m] = kema_project(it->second, Side::target, test_trials);
        }
        train_trials[m] = pools.source_novel_train;
        break;
    }
  }
  return detail::classify_and_fuse(kind, train, train_trials, test, *truth, plan.objects.novel,
                                   cfg, plan.seed);
}

/// Everything a repetition fed into training or testing.
inline RepetitionAudit audit_repetition(const RepetitionPlan& plan) {
  RepetitionAudit a;
  a.repetition = plan.repetition;
  for (const auto& [m, p] : plan.pools) {
    detail::record(a.training, p.source, p.source_shared);
    detail::record(a.training, p.target, p.target_shared);
    detail::record(a.training, p.source, p.source_novel_train);
    detail::record(a.training, p.target, p.target_novel_train);
    detail::record(a.test, p.target, p.target_novel_test);
  }
  return a;
}

struct RepetitionScores {
  int repetition = 0;
  double transfer = 0.0;
  double baseline1 = 0.0;
  double baseline2 = 0.0;

  double adelta_b1() const { return accuracy_delta(baseline1, transfer); }
  double adelta_b2() const { return accuracy_delta(baseline2, transfer); }
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  ///< sample standard deviation; 0 for a single value
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd out;
  if (v.empty()) return out;
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return out;
}

struct ExperimentResult {
  Projection projection;
  Method method = Method::tl;
  std::uint64_t seed = 0;  ///< projection seed
  std::vector<RepetitionScores> repetitions;
  std::vector<RepetitionAudit> audits;

  MeanStd transfer() const { return stat(&RepetitionScores::transfer); }
  MeanStd baseline1() const { return stat(&RepetitionScores::baseline1); }
  MeanStd baseline2() const { return stat(&RepetitionScores::baseline2); }
  /// Difference of the means, which equals the mean of per-repetition deltas.
  double adelta_b1() const { return baseline1().mean - transfer().mean; }
  double adelta_b2() const { return baseline2().mean - transfer().mean; }
  MeanStd adelta_b1_stat() const {
    std::vector<double> v;
    for (const auto& r : repetitions) v.push_back(r.adelta_b1());
    return mean_std(v);
  }
  MeanStd adelta_b2_stat() const {
    std::vector<double> v;
    for (const auto& r : repetitions) v.push_back(r.adelta_b2());
    return mean_std(v);
  }

 private:
  MeanStd stat(double RepetitionScores::*field) const {
    std::vector<double> v;
    for (const auto& r : repetitions) v.push_back(r.*field);
    return mean_std(v);
  }
};

/// Called after each transfer model is trained (checkpointing hook).
using ModelSink = std::function<void(const Projection&, int repetition, Method,
                                     const TransferModels&)>;

struct RunOptions {
  bool keep_audits = true;
  ModelSink on_model;
};

namespace detail {

/// Re-throws with the repetition index prefixed, keeping the error category.
[[noreturn]] inline void rethrow_tagged(int repetition, const Projection& p) {
  const std::string tag = to_string(p) + " repetition " + std::to_string(repetition) + ": ";
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(tag + e.what());
  } catch (const DataError& e) {
    throw DataError(tag + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(tag + e.what());
  }
}

}  // namespace detail

/// The full protocol for one projection. Baselines are computed once per
/// repetition and shared by every requested method, so methods are compared on
/// identical splits. Returns one result per method, in the order given.
inline std::vector<ExperimentResult> run_transfer_experiment(const Projection& p,
                                                             const std::vector<Method>& methods,
                                                             const Dataset& ds,
                                                             const ExperimentConfig& cfg,
                                                             std::uint64_t master_seed,
                                                             const RunOptions& opts = {}) {
  cfg.validate();
  validate_projection(p, cfg);
  if (methods.empty()) throw ConfigError("crossctx::run_transfer_experiment: no methods given");
  if (const auto missing = missing_inputs(ds, p, cfg.modalities); !missing.empty()) {
    std::string msg = "crossctx::run_transfer_experiment: missing data for";
    for (const auto& m : missing) msg += "\n  " + m;
    throw DataError(msg);
  }

  const std::uint64_t pseed = projection_seed(master_seed, p);
  std::vector<ExperimentResult> results(methods.size());
  for (std::size_t i = 0; i < methods.size(); ++i) {
    results[i].projection = p;
    results[i].method = methods[i];
    results[i].seed = pseed;
  }
  for (int rep = 0; rep < cfg.repetitions; ++rep) {
    try {
      const RepetitionPlan plan = prepare_repetition(ds, p, cfg, rep, repetition_seed(pseed, rep));
      RepetitionAudit audit = audit_repetition(plan);
      check_no_leakage(audit);
      const double b1 = evaluate_condition(ConditionKind::baseline1, plan, cfg).accuracy;
      const double b2 = evaluate_condition(ConditionKind::baseline2, plan, cfg).accuracy;
      for (std::size_t i = 0; i < methods.size(); ++i) {
        const TransferModels models = train_transfer_models(plan, methods[i], cfg);
        if (opts.on_model) opts.on_model(p, rep, methods[i], models);
        const double t = evaluate_condition(ConditionKind::transfer, plan, cfg, &models).accuracy;
        results[i].repetitions.push_back({rep, t, b1, b2});
        if (opts.keep_audits) results[i].audits.push_back(audit);
      }
    } catch (const ConfigError&) {
      detail::rethrow_tagged(rep, p);
    } catch (const DataError&) {
      detail::rethrow_tagged(rep, p);
    } catch (const NumericalError&) {
      detail::rethrow_tagged(rep, p);
    }
  }
  return results;
}

struct SweepOptions {
  std::vector<Tool> tools{kAllTools.begin(), kAllTools.end()};
  std::vector<Behavior> behaviors{kAllBehaviors.begin(), kAllBehaviors.end()};
  int jobs = 1;
  bool keep_audits = false;
  ModelSink on_model;  ///< may be called concurrently when jobs > 1
  std::function<void(const Projection&, std::size_t done, std::size_t total)> on_progress;
};

/// Canonical order: projection, then method.
inline void sort_results(std::vector<ExperimentResult>& r) {
  std::stable_sort(r.begin(), r.end(), [](const ExperimentResult& a, const ExperimentResult& b) {
    return std::tie(a.projection, a.method) < std::tie(b.projection, b.method);
  });
}

/// Runs every projection of the task. Missing contexts are reported before
/// any training. Projections are independent jobs with their own seeds, so the
/// result table does not depend on `jobs`.
inline std::vector<ExperimentResult> sweep_projections(TransferTask task,
                                                       const std::vector<Method>& methods,
                                                       const Dataset& ds,
                                                       const ExperimentConfig& cfg,
                                                       std::uint64_t master_seed,
                                                       const SweepOptions& opts = {}) {
  cfg.validate();
  if (opts.jobs < 1) throw ConfigError("crossctx::sweep_projections: jobs must be >= 1");
  const auto projections = enumerate_projections(task, opts.tools, opts.behaviors);
  if (projections.empty())
    throw ConfigError("crossctx::sweep_projections: the tool/behavior selection yields no projections");
  std::vector<std::string> missing;
  for (const auto& p : projections)
    for (auto& m : missing_inputs(ds, p, cfg.modalities)) missing.push_back(std::move(m));
  std::sort(missing.begin(), missing.end());
  missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
  if (!missing.empty()) {
    std::string msg = "crossctx::sweep_projections: missing data for";
    for (const auto& m : missing) msg += "\n  " + m;
    throw DataError(msg);
  }

  std::vector<std::vector<ExperimentResult>> slots(projections.size());
  std::vector<std::exception_ptr> errors(projections.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  RunOptions run_opts{opts.keep_audits, opts.on_model};
  auto worker = [&] {
    for (std::size_t i = next++; i < projections.size(); i = next++) {
      try {
        slots[i] = run_transfer_experiment(projections[i], methods, ds, cfg, master_seed, run_opts);
      } catch (...) {
        errors[i] = std::current_exception();
      }
      const std::size_t d = ++done;
      if (opts.on_progress) {
        std::lock_guard lock(progress_mutex);
        opts.on_progress(projections[i], d, projections.size());
      }
    }
  };
  const int n_threads = std::min<int>(opts.jobs, static_cast<int>(projections.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<ExperimentResult> out;
  for (auto& s : slots)
    for (auto& r : s) out.push_back(std::move(r));
  sort_results(out);
  return out;
}

/// Grand means over projections for one method (per-projection means pooled).
struct GrandSummary {
  Method method = Method::tl;
  std::size_t projections = 0;
  MeanStd transfer, baseline1, baseline2, adelta_b1, adelta_b2;
};

inline GrandSummary grand_summary(const std::vector<ExperimentResult>& results, Method method) {
  GrandSummary g;
  g.method = method;
  std::vector<double> t, b1, b2, d1, d2;
  for (const auto& r : results) {
    if (r.method != method) continue;
    t.push_back(r.transfer().mean);
    b1.push_back(r.baseline1().mean);
    b2.push_back(r.baseline2().mean);
    d1.push_back(r.adelta_b1());
    d2.push_back(r.adelta_b2());
  }
  g.projections = t.size();
  g.transfer = mean_std(t);
  g.baseline1 = mean_std(b1);
  g.baseline2 = mean_std(b2);
  g.adelta_b1 = mean_std(d1);
  g.adelta_b2 = mean_std(d2);
  return g;
}

/// Mean accuracy delta per source behavior or per source tool over the
/// projections of one task.
struct GroupStat {
  std::string key;
  std::size_t count = 0;
  MeanStd adelta_b1;
  MeanStd adelta_b2;
};

enum class GroupBy : std::uint8_t { behavior, tool };

inline std::vector<GroupStat> group_adelta(const std::vector<ExperimentResult>& results,
                                           TransferTask task, Method method, GroupBy by) {
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& r : results) {
    if (r.method != method) continue;
    if (task != TransferTask::all_pairs && task_of(r.projection) != task) continue;
    if (task == TransferTask::all_pairs && r.projection.source == r.projection.target) continue;
    const int key = by == GroupBy::behavior ? static_cast<int>(r.projection.source.behavior)
                                            : static_cast<int>(r.projection.source.tool);
    groups[key].first.push_back(r.adelta_b1());
    groups[key].second.push_back(r.adelta_b2());
  }
  std::vector<GroupStat> out;
  for (const auto& [key, v] : groups) {
    GroupStat g;
    g.key = by == GroupBy::behavior ? std::string(to_string(static_cast<Behavior>(key)))
                                    : std::string(to_string(static_cast<Tool>(key)));
    g.count = v.first.size();
    g.adelta_b1 = mean_std(v.first);
    g.adelta_b2 = mean_std(v.second);
    out.push_back(std::move(g));
  }
  return out;
}

/// The natural grouping of a task: per behavior for cross-tool projections,
/// per tool for cross-behavior projections.
inline std::vector<GroupStat> group_adelta(const std::vector<ExperimentResult>& results,
                                           TransferTask task, Method method) {
  if (task == TransferTask::all_pairs)
    throw ConfigError("crossctx::group_adelta: grouping needs cross-tool or cross-behavior");
  return group_adelta(results, task, method,
                      task == TransferTask::cross_tool ? GroupBy::behavior : GroupBy::tool);
}

enum class EmbeddingMode : std::uint8_t { rows, columns, symmetrized };

inline EmbeddingMode parse_embedding_mode(std::string_view s) {
  if (s == "rows") return EmbeddingMode::rows;
  if (s == "columns") return EmbeddingMode::columns;
  if (s == "symmetrized") return EmbeddingMode::symmetrized;
  throw ConfigError("crossctx::parse_embedding_mode: unknown mode '" + std::string(s) + "'");
}

struct AdeltaEmbedding {
  std::vector<ToolBehavior> contexts;
  Eigen::MatrixXd matrix;  ///< [source][target] = mean baseline-1 accuracy delta
  PcaResult pca;
};

/// Baseline-1 accuracy-delta matrix over the given contexts (zero diagonal)
/// and its 2-D PCA. Every ordered off-diagonal pair must have a result for
/// `method`; missing pairs are listed in the error.
inline AdeltaEmbedding adelta_matrix_and_embedding(const std::vector<ExperimentResult>& results,
                                                   Method method,
                                                   std::vector<ToolBehavior> contexts = all_tool_behaviors(),
                                                   EmbeddingMode mode = EmbeddingMode::rows) {
  std::sort(contexts.begin(), contexts.end());
  contexts.erase(std::unique(contexts.begin(), contexts.end()), contexts.end());
  if (contexts.size() < 2)
    throw ConfigError("crossctx::adelta_matrix_and_embedding: need at least 2 contexts");
  std::map<Projection, double> by_pair;
  for (const auto& r : results)
    if (r.method == method) by_pair[r.projection] = r.adelta_b1();

  const auto n = static_cast<Eigen::Index>(contexts.size());
  AdeltaEmbedding out;
  out.contexts = contexts;
  out.matrix = Eigen::MatrixXd::Zero(n, n);
  std::vector<std::string> missing;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const Projection p{contexts[static_cast<std::size_t>(i)], contexts[static_cast<std::size_t>(j)]};
      auto it = by_pair.find(p);
      if (it == by_pair.end()) missing.push_back(to_string(p));
      else out.matrix(i, j) = it->second;
    }
  if (!missing.empty()) {
    std::string msg = "crossctx::adelta_matrix_and_embedding: " + std::to_string(missing.size()) +
                      " projections missing:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw DataError(msg);
  }
  Eigen::MatrixXd features;
  switch (mode) {
    case EmbeddingMode::rows: features = out.matrix; break;
    case EmbeddingMode::columns: features = out.matrix.transpose(); break;
    case EmbeddingMode::symmetrized: features = 0.5 * (out.matrix + out.matrix.transpose()); break;
  }
  out.pca = pca(features, 2);
  return out;
}

/// 15-class recognition inside single contexts of one tool.
struct SingleContextTable {
  Tool tool = Tool::metal_scissor;
  std::map<Behavior, double> accuracy;  ///< fused over modalities
  double all_behaviors = 0.0;           ///< fused over modalities and behaviors
};

/// 5-fold cross-validation over trial indices: each object's observed trial
/// indices are shuffled and dealt into folds, the same folds for every
/// behavior and modality of the tool, so the all-behaviors row fuses scores of
/// the same trial index.
inline SingleContextTable single_context_recognition(const Dataset& ds, Tool tool,
                                                     const std::vector<Behavior>& behaviors,
                                                     const ExperimentConfig& cfg,
                                                     std::uint64_t master_seed, int folds = 5) {
  cfg.validate();
  if (behaviors.empty()) throw ConfigError("crossctx::single_context_recognition: no behaviors");
  if (folds < 2) throw ConfigError("crossctx::single_context_recognition: need at least 2 folds");
  const auto& objects = ds.objects();
  const int n_classes = static_cast<int>(objects.size());
  const std::uint64_t seed = derive_seed(master_seed, {fnv1a64("single_context"),
                                                       static_cast<std::uint64_t>(tool)});

  std::vector<std::string> missing;
  std::map<std::string, std::vector<int>> indices;
  for (Behavior b : behaviors)
    for (Modality m : cfg.modalities) {
      const Context c{tool, b, m};
      for (const auto& o : objects) {
        if (!ds.has_context(c) || !ds.has_trials(c, o)) {
          missing.push_back(to_string(c) + " object '" + o + "'");
          continue;
        }
        std::vector<int> idx;
        for (const auto& t : detail::observed_trials(ds, c, o)) idx.push_back(t.trial_index);
        if (idx.size() < static_cast<std::size_t>(folds))
          missing.push_back(to_string(c) + " object '" + o + "' has only " +
                            std::to_string(idx.size()) + " trials");
        else if (!indices.count(o))
          indices[o] = idx;
        else if (indices[o] != idx)
          missing.push_back(to_string(c) + " object '" + o + "' trial indices differ from other contexts");
      }
    }
  if (!missing.empty()) {
    std::string msg = "crossctx::single_context_recognition: missing trials:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw DataError(msg);
  }

  std::map<std::pair<std::string, int>, int> fold_of;
  for (const auto& o : objects) {
    auto idx = indices[o];
    Rng rng(derive_seed(seed, {fnv1a64("folds"), fnv1a64(o)}));
    rng.shuffle(idx);
    for (std::size_t i = 0; i < idx.size(); ++i)
      fold_of[{o, idx[i]}] = static_cast<int>(i % static_cast<std::size_t>(folds));
  }

  // scores[behavior][modality] over all trials in a fixed (object, index) order.
  std::vector<std::pair<std::string, int>> order;
  for (const auto& [key, f] : fold_of) order.push_back(key);
  std::vector<int> truth;
  for (const auto& [o, i] : order)
    truth.push_back(static_cast<int>(std::find(objects.begin(), objects.end(), o) - objects.begin()));
  std::map<Behavior, std::map<Modality, Eigen::MatrixXd>> scores;

  for (Behavior b : behaviors)
    for (Modality m : cfg.modalities) {
      const Context c{tool, b, m};
      Eigen::MatrixXd& s = scores[b][m];
      s = Eigen::MatrixXd::Zero(n_classes, static_cast<Eigen::Index>(order.size()));
      for (int f = 0; f < folds; ++f) {
        std::vector<TrialFeature> train;
        std::map<std::string, std::vector<TrialFeature>> basis;
        std::vector<std::size_t> test_cols;
        for (const auto& o : objects)
          for (const auto& t : detail::observed_trials(ds, c, o)) {
            if (fold_of.at({o, t.trial_index}) == f) continue;
            train.push_back(t);
            basis[o].push_back(t);
          }
        for (std::size_t k = 0; k < order.size(); ++k)
          if (fold_of.at(order[k]) == f) test_cols.push_back(k);
        const std::uint64_t fseed = derive_seed(seed, {static_cast<std::uint64_t>(b),
                                                       static_cast<std::uint64_t>(m),
                                                       static_cast<std::uint64_t>(f)});
        if (cfg.augment && cfg.augment_count > 0)
          detail::append_augmented(train, ds, c, basis, cfg.augment_count,
                                   derive_seed(fseed, {seed_slot::augment}));
        const Classifier clf =
            train_classifier(stack_columns(train, c.dim()), object_labels(train, objects),
                             n_classes, cfg.classifier, derive_seed(fseed, {seed_slot::classifier}));
        Eigen::MatrixXd xt(c.dim(), static_cast<Eigen::Index>(test_cols.size()));
        for (std::size_t k = 0; k < test_cols.size(); ++k) {
          const auto& [o, idx] = order[test_cols[k]];
          const auto& list = ds.trials(c, o);
          auto it = std::find_if(list.begin(), list.end(),
                                 [&](const TrialFeature& t) { return t.trial_index == idx; });
          xt.col(static_cast<Eigen::Index>(k)) = it->values;
        }
        const Eigen::MatrixXd sc = clf.scores(xt);
        const double w = cfg.fusion == FusionWeights::equal ? 1.0 : clf.training_accuracy;
        for (std::size_t k = 0; k < test_cols.size(); ++k)
          s.col(static_cast<Eigen::Index>(test_cols[k])) = w * sc.col(static_cast<Eigen::Index>(k));
      }
    }

  // Fold weights are already folded into the scores; fuse with unit weights.
  SingleContextTable table;
  table.tool = tool;
  Eigen::MatrixXd all = Eigen::MatrixXd::Zero(n_classes, static_cast<Eigen::Index>(order.size()));
  for (Behavior b : behaviors) {
    Eigen::MatrixXd fused = Eigen::MatrixXd::Zero(n_classes, static_cast<Eigen::Index>(order.size()));
    for (Modality m : cfg.modalities) fused += scores[b][m];
    table.accuracy[b] = accuracy_percent(argmax_columns(fused), truth);
    all += fused;
  }
  table.all_behaviors = accuracy_percent(argmax_columns(all), truth);
  return table;
}

}  // namespace crossctx
