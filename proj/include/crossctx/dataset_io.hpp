#pragma once

// On-disk dataset format.
//
//   dataset.json   { "objects": [...],
//                    "contexts": [{"tool": .., "behavior": .., "modality": ..}, ...],
//                    "features_file": "features.csv" | {"audio": "...", ...} }
//   features CSV   tool,behavior,modality,object,trial,provenance,f0,...,f{D-1}
//
// Values are written with 17 significant digits, which round-trips IEEE-754
// doubles exactly. One features file per modality is written; the reader also
// accepts a single file holding rows of several modalities.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "crossctx/data_model.hpp"
#include "crossctx/errors.hpp"

namespace crossctx {

namespace io {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

/// Shortest decimal form; used where exactness is not required (reports).
inline std::string format_short(double v, int precision = 6) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, precision);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last)
    throw DataError("crossctx::io: cannot parse number '" + std::string(s) + "' at " + where);
  return v;
}

inline long long parse_int(std::string_view s, const std::string& where) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw DataError("crossctx::io: cannot parse integer '" + std::string(s) + "' at " + where);
  return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("crossctx::io: cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("crossctx::io: cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("crossctx::io: write failed for '" + path.string() + "'");
}

/// Lines with trailing '\r' removed; empty lines skipped.
inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace io

inline std::string features_header(int dim) {
  std::string h = "tool,behavior,modality,object,trial,provenance";
  for (int i = 0; i < dim; ++i) h += ",f" + std::to_string(i);
  return h;
}

inline std::string features_row(const Context& ctx, const TrialFeature& t) {
  std::string row;
  row.reserve(32 + 24 * static_cast<std::size_t>(t.values.size()));
  row += to_string(ctx.tool);
  row += ',';
  row += to_string(ctx.behavior);
  row += ',';
  row += to_string(ctx.modality);
  row += ',';
  row += t.object;
  row += ',';
  row += std::to_string(t.trial_index);
  row += ',';
  row += to_string(t.provenance);
  for (Eigen::Index i = 0; i < t.values.size(); ++i) {
    row += ',';
    row += io::format_double(t.values[i]);
  }
  return row;
}

namespace detail {

inline void read_features_file(const std::filesystem::path& path, Dataset& ds) {
  const auto lines = io::read_lines(path);
  if (lines.empty()) throw DataError("crossctx::load_dataset: empty features file '" +
                                     path.string() + "'");
  const auto header = io::split_csv_line(lines.front());
  static constexpr std::array<std::string_view, 6> kFixed = {"tool",   "behavior", "modality",
                                                             "object", "trial",    "provenance"};
  if (header.size() < kFixed.size())
    throw DataError("crossctx::load_dataset: malformed header in '" + path.string() + "'");
  for (std::size_t i = 0; i < kFixed.size(); ++i)
    if (header[i] != kFixed[i])
      throw DataError("crossctx::load_dataset: header column " + std::to_string(i) +
                      " must be '" + std::string(kFixed[i]) + "' in '" + path.string() + "'");

  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const std::string where = path.filename().string() + ":" + std::to_string(ln + 1);
    const auto f = io::split_csv_line(lines[ln]);
    if (f.size() < kFixed.size())
      throw DataError("crossctx::load_dataset: truncated row at " + where);
    Context ctx{parse_tool(f[0]), parse_behavior(f[1]), parse_modality(f[2])};
    TrialFeature t;
    t.object = std::string(f[3]);
    t.trial_index = static_cast<int>(io::parse_int(f[4], where));
    t.provenance = parse_provenance(f[5]);
    const std::size_t n = f.size() - kFixed.size();
    if (static_cast<int>(n) != ctx.dim())
      throw DataError("crossctx::load_dataset: dimension mismatch at " + where + " (" +
                      to_string(ctx) + " object '" + t.object + "' trial " +
                      std::to_string(t.trial_index) + "): expected " +
                      std::to_string(ctx.dim()) + ", got " + std::to_string(n));
    t.values.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
      t.values[static_cast<Eigen::Index>(i)] = io::parse_double(f[kFixed.size() + i], where);
    ds.add_trial(ctx, std::move(t));
  }
}

}  // namespace detail

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  if (!std::filesystem::exists(manifest_path))
    throw DataError("crossctx::load_dataset: manifest '" + manifest_path.string() +
                    "' does not exist");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("crossctx::load_dataset: malformed manifest '" + manifest_path.string() +
                    "': " + e.what());
  }
  if (!j.is_object() || !j.contains("objects") || !j.contains("contexts") ||
      !j.contains("features_file"))
    throw DataError("crossctx::load_dataset: manifest must define objects, contexts and "
                    "features_file");

  std::vector<std::string> objects;
  std::vector<Context> contexts;
  try {
    objects = j.at("objects").get<std::vector<std::string>>();
    for (const auto& c : j.at("contexts"))
      contexts.push_back({parse_tool(c.at("tool").get<std::string>()),
                          parse_behavior(c.at("behavior").get<std::string>()),
                          parse_modality(c.at("modality").get<std::string>())});
  } catch (const nlohmann::json::exception& e) {
    throw DataError("crossctx::load_dataset: malformed manifest: " + std::string(e.what()));
  }

  Dataset ds(std::move(contexts), std::move(objects));
  const auto base = manifest_path.parent_path();
  const auto& ff = j.at("features_file");
  if (ff.is_string()) {
    detail::read_features_file(base / ff.get<std::string>(), ds);
  } else if (ff.is_object()) {
    for (const auto& [modality, file] : ff.items()) {
      parse_modality(modality);
      if (!file.is_string())
        throw DataError("crossctx::load_dataset: features_file entries must be strings");
      detail::read_features_file(base / file.get<std::string>(), ds);
    }
  } else {
    throw DataError("crossctx::load_dataset: features_file must be a string or an object");
  }
  return ds;
}

/// Writes `<dir>/dataset.json` and one `features_<modality>.csv` per modality
/// present. Returns the manifest path.
inline std::filesystem::path save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["objects"] = ds.objects();
  j["contexts"] = nlohmann::json::array();
  std::set<Modality> modalities;
  for (const auto& c : ds.contexts()) {
    j["contexts"].push_back({{"tool", std::string(to_string(c.tool))},
                             {"behavior", std::string(to_string(c.behavior))},
                             {"modality", std::string(to_string(c.modality))}});
    modalities.insert(c.modality);
  }
  nlohmann::json files = nlohmann::json::object();
  for (Modality m : modalities) {
    const std::string name = "features_" + std::string(to_string(m)) + ".csv";
    files[std::string(to_string(m))] = name;
    std::string text = features_header(feature_dim(m)) + "\n";
    for (const auto& c : ds.contexts()) {
      if (c.modality != m) continue;
      for (const auto& o : ds.objects()) {
        if (!ds.has_trials(c, o)) continue;
        for (const auto& t : ds.trials(c, o)) text += features_row(c, t) + "\n";
      }
    }
    io::write_text_file(dir / name, text);
  }
  j["features_file"] = files;
  const auto manifest = dir / "dataset.json";
  io::write_text_file(manifest, j.dump(2) + "\n");
  return manifest;
}

}  // namespace crossctx
