#pragma once

// Raw recording trees: raw/<tool>/<behavior>/<object>/trial-<n>/ holding
// audio.wav, effort.csv and force.csv.

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "crossctx/data_model.hpp"
#include "crossctx/dataset_io.hpp"
#include "crossctx/errors.hpp"
#include "crossctx/featurize.hpp"
#include "crossctx/raw_io.hpp"

namespace crossctx {

/// Channels of a binned modality (effort: 6 joints, force: 3 axes).
inline std::size_t series_channels(Modality m, int time_bins = 10) {
  return static_cast<std::size_t>(feature_dim(m) / time_bins);
}

inline const char* raw_file_name(Modality m) {
  switch (m) {
    case Modality::audio: return "audio.wav";
    case Modality::effort: return "effort.csv";
    case Modality::force: break;
  }
  return "force.csv";
}

/// Every problem found while featurizing; the tree is only accepted when the
/// list is empty.
class RawTreeError : public DataError {
 public:
  explicit RawTreeError(std::vector<std::string> problems)
      : DataError(format(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string format(const std::vector<std::string>& p) {
    std::string msg = "crossctx::featurize_raw_tree: " + std::to_string(p.size()) + " problem(s):";
    for (const auto& s : p) msg += "\n  " + s;
    return msg;
  }
  std::vector<std::string> problems_;
};

namespace detail {
inline std::vector<std::filesystem::path> sorted_subdirs(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}
}  // namespace detail

/// Object order: reference order when every object is a reference object,
/// otherwise lexicographic.
inline std::vector<std::string> canonical_object_order(const std::set<std::string>& names) {
  const auto& ref = reference_objects();
  if (std::all_of(names.begin(), names.end(),
                  [&](const std::string& n) { return std::find(ref.begin(), ref.end(), n) != ref.end(); })) {
    std::vector<std::string> out;
    for (const auto& r : ref)
      if (names.count(r)) out.push_back(r);
    return out;
  }
  return {names.begin(), names.end()};
}

/// Measured-trial dataset over every (tool, behavior) directory found, with
/// all three modalities per trial. Throws RawTreeError listing every
/// unreadable, malformed or missing file.
inline Dataset featurize_raw_tree(const std::filesystem::path& raw, const FeatureConfig& cfg = {}) {
  if (!std::filesystem::is_directory(raw))
    throw DataError("crossctx::featurize_raw_tree: '" + raw.string() + "' is not a directory");
  std::vector<std::string> problems;
  struct Pending {
    Context context;
    TrialFeature trial;
  };
  std::vector<Pending> rows;
  std::set<std::string> objects;
  std::set<Context> contexts;

  for (const auto& tool_dir : detail::sorted_subdirs(raw)) {
    Tool tool;
    try {
      tool = parse_tool(tool_dir.filename().string());
    } catch (const DataError&) {
      problems.push_back(tool_dir.string() + ": unknown tool directory");
      continue;
    }
    for (const auto& beh_dir : detail::sorted_subdirs(tool_dir)) {
      Behavior behavior;
      try {
        behavior = parse_behavior(beh_dir.filename().string());
      } catch (const DataError&) {
        problems.push_back(beh_dir.string() + ": unknown behavior directory");
        continue;
      }
      for (Modality m : kAllModalities) contexts.insert({tool, behavior, m});
      for (const auto& obj_dir : detail::sorted_subdirs(beh_dir)) {
        const std::string object = obj_dir.filename().string();
        objects.insert(object);
        for (const auto& trial_dir : detail::sorted_subdirs(obj_dir)) {
          const std::string name = trial_dir.filename().string();
          int index = -1;
          if (name.rfind("trial-", 0) == 0) {
            try {
              index = static_cast<int>(io::parse_int(name.substr(6), trial_dir.string()));
            } catch (const DataError&) {
              index = -1;
            }
          }
          if (index < 0) {
            problems.push_back(trial_dir.string() + ": trial directories must be named trial-<n>");
            continue;
          }
          for (Modality m : kAllModalities) {
            const auto file = trial_dir / raw_file_name(m);
            if (!std::filesystem::exists(file)) {
              problems.push_back(file.string() + ": missing");
              continue;
            }
            try {
              TrialFeature t;
              t.object = object;
              t.trial_index = index;
              t.provenance = Provenance::measured;
              if (m == Modality::audio) {
                t.values = audio_features(read_wav(file), cfg);
              } else {
                t.values = temporal_bin(read_series_csv(file, series_channels(m, cfg.time_bins)),
                                        cfg.time_bins);
              }
              rows.push_back({{tool, behavior, m}, std::move(t)});
            } catch (const DataError& e) {
              problems.push_back(file.string() + ": " + e.what());
            } catch (const ConfigError& e) {
              problems.push_back(file.string() + ": " + e.what());
            }
          }
        }
      }
    }
  }
  if (contexts.empty() && problems.empty())
    problems.push_back(raw.string() + ": no <tool>/<behavior> directories found");
  if (!problems.empty()) throw RawTreeError(std::move(problems));

  Dataset ds({contexts.begin(), contexts.end()}, canonical_object_order(objects));
  for (auto& r : rows) ds.add_trial(r.context, std::move(r.trial));
  return ds;
}

/// Writes one trial in the raw layout.
inline void write_raw_trial(const std::filesystem::path& raw, const ToolBehavior& tb,
                            const std::string& object, int index, const AudioRecording& audio,
                            const MultiChannelSeries& effort, const MultiChannelSeries& force) {
  const auto dir = raw / std::string(to_string(tb.tool)) / std::string(to_string(tb.behavior)) /
                   object / ("trial-" + std::to_string(index));
  std::filesystem::create_directories(dir);
  write_wav(dir / "audio.wav", audio);
  write_series_csv(dir / "effort.csv", effort);
  write_series_csv(dir / "force.csv", force);
}

/// Adds `count` augmented trials per (context, object) drawn from that pair's
/// observed trials. Existing augmented trials are kept.
inline Dataset augment_dataset(const Dataset& ds, int count, std::uint64_t seed) {
  Dataset out = ds;
  for (const auto& c : ds.contexts())
    for (const auto& o : ds.objects()) {
      if (!ds.has_trials(c, o)) continue;
      std::vector<TrialFeature> observed;
      int first = 0;
      for (const auto& t : ds.trials(c, o)) {
        if (is_observed(t.provenance)) observed.push_back(t);
        first = std::max(first, t.trial_index + 1);
      }
      if (observed.size() < 2)
        throw DataError("crossctx::augment_dataset: " + to_string(c) + " object '" + o +
                        "' has fewer than 2 observed trials");
      for (auto& t : augment_object_trials(observed, count,
                                           derive_seed(seed, {fnv1a64(to_string(c))}), first))
        out.add_trial(c, std::move(t));
    }
  return out;
}

}  // namespace crossctx
