#pragma once

// Result tables: per-repetition CSV rows, the summary JSON, the embedding CSV
// and the report that re-aggregates a results directory.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "crossctx/data_model.hpp"
#include "crossctx/dataset_io.hpp"
#include "crossctx/errors.hpp"
#include "crossctx/experiment.hpp"
#include "crossctx/rng.hpp"

namespace crossctx {

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

/// FNV-1a of the compact JSON dump; nlohmann sorts object keys, so equal
/// configs hash equally regardless of how they were written.
inline std::string config_hash(const nlohmann::json& config) {
  return hex64(fnv1a64(config.dump()));
}

inline const char* results_header() {
  return "task,method,source_tool,source_behavior,target_tool,target_behavior,repetition,"
         "transfer,baseline1,baseline2,adelta_b1,adelta_b2,config_hash,master_seed";
}

/// Rows in the order given; callers sort with sort_results first.
inline std::string results_csv(const std::vector<ExperimentResult>& results,
                               const std::string& hash, std::uint64_t master_seed) {
  std::string out = results_header();
  out += '\n';
  for (const auto& r : results) {
    const auto task = task_of(r.projection);
    const std::string task_name = task                                       ? std::string(to_string(*task))
                                  : r.projection.source == r.projection.target ? "identical"
                                                                               : "cross-both";
    for (const auto& rep : r.repetitions) {
      out += task_name + ',' + std::string(to_string(r.method)) + ',' +
             std::string(to_string(r.projection.source.tool)) + ',' +
             std::string(to_string(r.projection.source.behavior)) + ',' +
             std::string(to_string(r.projection.target.tool)) + ',' +
             std::string(to_string(r.projection.target.behavior)) + ',' +
             std::to_string(rep.repetition) + ',' + io::format_double(rep.transfer) + ',' +
             io::format_double(rep.baseline1) + ',' + io::format_double(rep.baseline2) + ',' +
             io::format_double(rep.adelta_b1()) + ',' + io::format_double(rep.adelta_b2()) + ',' +
             hash + ',' + std::to_string(master_seed) + '\n';
    }
  }
  return out;
}

struct ResultsTable {
  std::vector<ExperimentResult> results;
  std::set<std::string> config_hashes;
  std::set<std::uint64_t> master_seeds;
};

/// Parses one results CSV; rows of the same (projection, method) are merged.
inline void read_results_csv(const std::filesystem::path& path, ResultsTable& table) {
  const auto lines = io::read_lines(path);
  if (lines.empty() || lines.front() != results_header())
    throw DataError("crossctx::read_results_csv: '" + path.string() +
                    "' does not start with the results header");
  std::map<std::pair<Projection, Method>, std::size_t> slot;
  for (std::size_t i = 0; i < table.results.size(); ++i)
    slot[{table.results[i].projection, table.results[i].method}] = i;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const std::string where = path.string() + ":" + std::to_string(ln + 1);
    const auto f = io::split_csv_line(lines[ln]);
    if (f.size() != 14) throw DataError("crossctx::read_results_csv: expected 14 fields at " + where);
    Projection p;
    Method m;
    try {
      p.source = {parse_tool(f[2]), parse_behavior(f[3])};
      p.target = {parse_tool(f[4]), parse_behavior(f[5])};
      m = parse_method(f[1]);
    } catch (const std::exception& e) {
      throw DataError(std::string("crossctx::read_results_csv: ") + e.what() + " at " + where);
    }
    RepetitionScores rep;
    rep.repetition = static_cast<int>(io::parse_int(f[6], where));
    rep.transfer = io::parse_double(f[7], where);
    rep.baseline1 = io::parse_double(f[8], where);
    rep.baseline2 = io::parse_double(f[9], where);
    table.config_hashes.insert(std::string(f[12]));
    table.master_seeds.insert(static_cast<std::uint64_t>(std::stoull(std::string(f[13]))));
    auto [it, fresh] = slot.try_emplace({p, m}, table.results.size());
    if (fresh) {
      ExperimentResult r;
      r.projection = p;
      r.method = m;
      table.results.push_back(std::move(r));
    }
    auto& reps = table.results[it->second].repetitions;
    for (const auto& existing : reps)
      if (existing.repetition == rep.repetition)
        throw DataError("crossctx::read_results_csv: duplicate repetition " +
                        std::to_string(rep.repetition) + " for " + to_string(p) + " at " + where);
    reps.push_back(rep);
  }
}

/// Every results*.csv under dir (recursively), in path order.
inline ResultsTable read_results_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw DataError("crossctx::read_results_dir: '" + dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && name.rfind("results", 0) == 0 && e.path().extension() == ".csv")
      files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw DataError("crossctx::read_results_dir: no results CSV under '" + dir.string() + "'");
  ResultsTable table;
  for (const auto& f : files) read_results_csv(f, table);
  if (table.results.empty())
    throw DataError("crossctx::read_results_dir: results under '" + dir.string() + "' are empty");
  for (auto& r : table.results)
    std::sort(r.repetitions.begin(), r.repetitions.end(),
              [](const RepetitionScores& a, const RepetitionScores& b) { return a.repetition < b.repetition; });
  sort_results(table.results);
  return table;
}

inline nlohmann::json mean_std_json(const MeanStd& s) { return {{"mean", s.mean}, {"std", s.std}}; }

inline nlohmann::json result_json(const ExperimentResult& r) {
  return {{"source", to_string(r.projection.source)},
          {"target", to_string(r.projection.target)},
          {"method", std::string(to_string(r.method))},
          {"repetitions", r.repetitions.size()},
          {"transfer", mean_std_json(r.transfer())},
          {"baseline1", mean_std_json(r.baseline1())},
          {"baseline2", mean_std_json(r.baseline2())},
          {"adelta_b1", mean_std_json(r.adelta_b1_stat())},
          {"adelta_b2", mean_std_json(r.adelta_b2_stat())}};
}

inline nlohmann::json grand_summary_json(const GrandSummary& g) {
  return {{"method", std::string(to_string(g.method))},
          {"projections", g.projections},
          {"transfer", mean_std_json(g.transfer)},
          {"baseline1", mean_std_json(g.baseline1)},
          {"baseline2", mean_std_json(g.baseline2)},
          {"adelta_b1", mean_std_json(g.adelta_b1)},
          {"adelta_b2", mean_std_json(g.adelta_b2)}};
}

inline std::vector<Method> methods_in(const std::vector<ExperimentResult>& results) {
  std::set<Method> s;
  for (const auto& r : results) s.insert(r.method);
  return {s.begin(), s.end()};
}

/// Summary of a result list: per-projection stats, grand means per task and
/// method, and per-behavior / per-tool groupings, with the projections of
/// each task that have no result listed explicitly.
inline nlohmann::json summarize(const std::vector<ExperimentResult>& results) {
  nlohmann::json j;
  j["projections"] = nlohmann::json::array();
  for (const auto& r : results) j["projections"].push_back(result_json(r));
  j["tasks"] = nlohmann::json::object();
  for (TransferTask task : {TransferTask::cross_tool, TransferTask::cross_behavior}) {
    std::vector<ExperimentResult> subset;
    for (const auto& r : results)
      if (task_of(r.projection) == task) subset.push_back(r);
    if (subset.empty()) continue;
    nlohmann::json t;
    for (Method m : methods_in(subset)) {
      nlohmann::json mj = grand_summary_json(grand_summary(subset, m));
      for (GroupBy by : {GroupBy::behavior, GroupBy::tool}) {
        nlohmann::json groups = nlohmann::json::array();
        for (const auto& g : group_adelta(subset, task, m, by))
          groups.push_back({{"group", g.key},
                            {"projections", g.count},
                            {"adelta_b1", mean_std_json(g.adelta_b1)},
                            {"adelta_b2", mean_std_json(g.adelta_b2)}});
        mj[by == GroupBy::behavior ? "by_source_behavior" : "by_source_tool"] = groups;
      }
      std::set<Projection> have;
      for (const auto& r : subset)
        if (r.method == m) have.insert(r.projection);
      nlohmann::json missing = nlohmann::json::array();
      for (const auto& p : enumerate_projections(task))
        if (!have.count(p)) missing.push_back(to_string(p));
      mj["expected_projections"] = enumerate_projections(task).size();
      mj["missing_projections"] = missing;
      t[std::string(to_string(m))] = mj;
    }
    j["tasks"][std::string(to_string(task))] = t;
  }
  return j;
}

inline std::string embedding_csv(const AdeltaEmbedding& e) {
  std::string out = "context,tool,behavior,pc1,pc2\n";
  for (std::size_t i = 0; i < e.contexts.size(); ++i) {
    const auto& c = e.contexts[i];
    const auto row = static_cast<Eigen::Index>(i);
    out += to_string(c) + ',' + std::string(to_string(c.tool)) + ',' +
           std::string(to_string(c.behavior)) + ',' + io::format_double(e.pca.coordinates(row, 0)) +
           ',' + io::format_double(e.pca.coordinates(row, 1)) + '\n';
  }
  return out;
}

inline std::string matrix_csv(const AdeltaEmbedding& e) {
  std::string out = "source";
  for (const auto& c : e.contexts) out += ',' + to_string(c);
  out += '\n';
  for (std::size_t i = 0; i < e.contexts.size(); ++i) {
    out += to_string(e.contexts[i]);
    for (std::size_t j = 0; j < e.contexts.size(); ++j)
      out += ',' + io::format_double(e.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    out += '\n';
  }
  return out;
}

/// Contexts appearing on either side of any result.
inline std::vector<ToolBehavior> contexts_in(const std::vector<ExperimentResult>& results) {
  std::set<ToolBehavior> s;
  for (const auto& r : results) {
    s.insert(r.projection.source);
    s.insert(r.projection.target);
  }
  return {s.begin(), s.end()};
}

}  // namespace crossctx
