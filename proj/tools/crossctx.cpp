// crossctx command-line tool: featurize, augment, synth, run, sweep, report,
// verify. See README.md for the config schema and output layout.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "crossctx/crossctx.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace crossctx;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumerical = 4, kVerify = 5 };

// ---------------------------------------------------------------- logging

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

class Log {
 public:
  Log() {
    if (const char* env = std::getenv("CROSSCTX_LOG")) {
      const std::string v = env;
      if (v == "error") level_ = Level::error;
      else if (v == "warn") level_ = Level::warn;
      else if (v == "info") level_ = Level::info;
      else if (v == "debug") level_ = Level::debug;
      else std::cerr << "crossctx: ignoring unknown CROSSCTX_LOG value '" << v << "'\n";
    }
  }

  /// Timestamped copy of every message goes to this file.
  void attach(const fs::path& file) {
    fs::create_directories(file.parent_path());
    file_.open(file, std::ios::app);
  }

  void write(Level l, const std::string& msg) {
    static const char* names[] = {"error", "warn", "info", "debug"};
    if (file_.is_open()) {
      const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
      char stamp[32];
      std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%S", std::localtime(&now));
      file_ << stamp << ' ' << names[static_cast<int>(l)] << ' ' << msg << '\n';
      file_.flush();
    }
    if (static_cast<int>(l) <= static_cast<int>(level_))
      std::cerr << "[" << names[static_cast<int>(l)] << "] " << msg << '\n';
  }
  void error(const std::string& m) { write(Level::error, m); }
  void warn(const std::string& m) { write(Level::warn, m); }
  void info(const std::string& m) { write(Level::info, m); }
  void debug(const std::string& m) { write(Level::debug, m); }

 private:
  Level level_ = Level::info;
  std::ofstream file_;
};

Log& logger() {
  static Log l;
  return l;
}

// ---------------------------------------------------------------- config

struct RunConfig {
  fs::path dataset;
  std::string task = "cross-tool";
  std::string method = "tl";
  std::optional<std::uint64_t> seed;
  fs::path out;
  int jobs = 1;
  std::string source;
  std::string target;
  std::vector<std::string> tools;
  std::vector<std::string> behaviors;
  bool checkpoints = true;
  ExperimentConfig experiment;
};

/// Flag values; unset options leave the config untouched.
struct Overrides {
  std::string config;
  std::string dataset;
  std::string task;
  std::string method;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> jobs;
  std::string source;
  std::string target;
  std::vector<std::string> tools;
  std::vector<std::string> behaviors;
  bool no_augment = false;
  bool no_checkpoints = false;
  std::optional<int> repetitions;
};

ToolBehavior parse_pair(const std::string& s, const std::string& field) {
  const auto slash = s.find('/');
  if (slash == std::string::npos)
    throw ConfigError("config: " + field + ": expected <tool>/<behavior>, got '" + s + "'");
  try {
    return {parse_tool(s.substr(0, slash)), parse_behavior(s.substr(slash + 1))};
  } catch (const DataError& e) {
    throw ConfigError("config: " + field + ": " + e.what());
  }
}

std::vector<Method> parse_methods(const std::string& s) {
  if (s == "both") return {Method::tl, Method::kema};
  return {parse_method(s)};
}

/// defaults < config file < flags.
RunConfig resolve_config(const Overrides& o) {
  RunConfig rc;
  if (!o.config.empty()) {
    const fs::path path = o.config;
    if (!fs::exists(path)) throw ConfigError("config: file '" + path.string() + "' does not exist");
    json j;
    try {
      j = json::parse(io::read_text_file(path));
    } catch (const json::parse_error& e) {
      throw ConfigError("config: '" + path.string() + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    static const std::set<std::string> known = {"dataset", "task",  "method",     "seed",
                                                "out",     "jobs",  "source",     "target",
                                                "tools",   "behaviors", "checkpoints", "experiment"};
    for (const auto& [k, v] : j.items())
      if (!known.count(k)) throw ConfigError("config: unknown field " + k);
    const fs::path base = path.parent_path();
    auto get = [&](const char* key, auto& into) {
      if (!j.contains(key)) return;
      try {
        j.at(key).get_to(into);
      } catch (const json::exception&) {
        throw ConfigError(std::string("config: ") + key + ": wrong type");
      }
    };
    std::string s;
    if (j.contains("dataset")) {
      get("dataset", s);
      rc.dataset = fs::path(s).is_absolute() ? fs::path(s) : base / s;
    }
    if (j.contains("out")) {
      get("out", s);
      rc.out = fs::path(s).is_absolute() ? fs::path(s) : base / s;
    }
    get("task", rc.task);
    get("method", rc.method);
    if (j.contains("seed")) {
      std::uint64_t seed = 0;
      get("seed", seed);
      rc.seed = seed;
    }
    get("jobs", rc.jobs);
    get("source", rc.source);
    get("target", rc.target);
    get("tools", rc.tools);
    get("behaviors", rc.behaviors);
    get("checkpoints", rc.checkpoints);
    if (j.contains("experiment"))
      rc.experiment = experiment_config_from_json(j.at("experiment"), rc.experiment);
  }
  if (!o.dataset.empty()) rc.dataset = o.dataset;
  if (!o.task.empty()) rc.task = o.task;
  if (!o.method.empty()) rc.method = o.method;
  if (o.seed) rc.seed = o.seed;
  if (!o.out.empty()) rc.out = o.out;
  if (o.jobs) rc.jobs = *o.jobs;
  if (!o.source.empty()) rc.source = o.source;
  if (!o.target.empty()) rc.target = o.target;
  if (!o.tools.empty()) rc.tools = o.tools;
  if (!o.behaviors.empty()) rc.behaviors = o.behaviors;
  if (o.no_augment) rc.experiment.augment = false;
  if (o.no_checkpoints) rc.checkpoints = false;
  if (o.repetitions) rc.experiment.repetitions = *o.repetitions;

  parse_methods(rc.method);
  if (rc.jobs < 1) throw ConfigError("config: jobs: must be >= 1");
  rc.experiment.validate();
  return rc;
}

void require_common(const RunConfig& rc) {
  if (!rc.seed) throw ConfigError("config: seed: required (pass --seed or set \"seed\")");
  if (rc.dataset.empty()) throw ConfigError("config: dataset: required");
  if (!fs::exists(rc.dataset))
    throw ConfigError("config: dataset: '" + rc.dataset.string() + "' does not exist");
  if (rc.out.empty()) throw ConfigError("config: out: required");
}

std::string dataset_fingerprint(const Dataset& ds) {
  std::string text;
  for (const auto& c : ds.contexts())
    for (const auto& o : ds.objects()) {
      if (!ds.has_trials(c, o)) continue;
      for (const auto& t : ds.trials(c, o)) text += features_row(c, t) + "\n";
    }
  for (const auto& o : ds.objects()) text += o + "\n";
  return hex64(fnv1a64(text));
}

/// The part of the config that determines results. Paths and parallelism are
/// left out; the dataset enters through its content fingerprint.
json hashed_config(const std::string& command, const RunConfig& rc, const std::string& fingerprint) {
  json j = {{"command", command},
            {"method", rc.method},
            {"experiment", rc.experiment.to_json()},
            {"dataset_fingerprint", fingerprint}};
  if (command == "run") {
    j["source"] = rc.source;
    j["target"] = rc.target;
  } else {
    j["task"] = rc.task;
    j["tools"] = rc.tools;
    j["behaviors"] = rc.behaviors;
  }
  return j;
}

// ---------------------------------------------------------------- artifacts

/// artifacts.json: config hash, seed and FNV-1a of every output file.
void write_artifacts(const fs::path& out, const std::string& hash, std::uint64_t seed) {
  json files = json::object();
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(out))
    if (e.is_regular_file()) paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    const std::string rel = fs::relative(p, out).generic_string();
    if (rel == "artifacts.json" || rel == "run.log") continue;
    files[rel] = hex64(fnv1a64(io::read_text_file(p)));
  }
  json j = {{"config_hash", hash}, {"master_seed", seed}, {"files", files}};
  io::write_text_file(out / "artifacts.json", j.dump(2) + "\n");
}

void write_config_file(const fs::path& out, const json& hashed, const std::string& hash,
                       std::uint64_t seed) {
  json j = {{"config_hash", hash}, {"master_seed", seed}, {"config", hashed}};
  io::write_text_file(out / "config.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------- commands

int cmd_featurize(const std::string& raw, const std::string& out, bool log_power) {
  if (raw.empty() || out.empty()) throw ConfigError("featurize: --raw and --out are required");
  FeatureConfig cfg;
  cfg.log_power = log_power;
  logger().info("featurizing " + raw);
  const Dataset ds = featurize_raw_tree(raw, cfg);
  const auto manifest = save_dataset(ds, out);
  for (Modality m : kAllModalities) {
    std::size_t rows = 0;
    for (const auto& [key, list] : ds.all_trials())
      if (key.first.modality == m) rows += list.size();
    std::cout << to_string(m) << ": " << rows << " rows x " << feature_dim(m) << " dims\n";
  }
  std::cout << "wrote " << manifest.string() << "\n";
  return kOk;
}

int cmd_augment(const std::string& dataset, const std::string& out,
                std::optional<std::uint64_t> seed, int count) {
  if (dataset.empty() || out.empty()) throw ConfigError("augment: --dataset and --out are required");
  if (!seed) throw ConfigError("augment: --seed is required");
  if (count < 0) throw ConfigError("augment: --count must be >= 0");
  const Dataset ds = augment_dataset(load_dataset(dataset), count, *seed);
  const auto manifest = save_dataset(ds, out);
  std::cout << "wrote " << manifest.string() << " (" << ds.trial_count() << " trials)\n";
  return kOk;
}

struct SynthArgs {
  std::optional<std::uint64_t> seed;
  std::string out;
  double fidelity = 1.0;
  double noise = 0.3;
  double gain = 1.0;
  bool nonlinear = false;
  int objects = 15;
  int trials = 10;
  int latent_dim = 8;
  std::string grouping = "per-context";
  std::vector<std::string> tools;
  std::vector<std::string> behaviors;
};

int cmd_synth(const SynthArgs& a) {
  if (!a.seed) throw ConfigError("synth: --seed is required");
  if (a.out.empty()) throw ConfigError("synth: --out is required");
  if (a.trials < 0) throw ConfigError("synth: --trials must be >= 0");
  SynthConfig cfg;
  cfg.n_objects = a.objects;
  cfg.latent_dim = a.latent_dim;
  cfg.fidelity = a.fidelity;
  cfg.noise_scale = a.noise;
  cfg.gain = a.gain;
  cfg.nonlinear = a.nonlinear;
  if (a.grouping == "per-context") cfg.grouping = PrivateGrouping::per_context;
  else if (a.grouping == "per-behavior") cfg.grouping = PrivateGrouping::per_behavior;
  else if (a.grouping == "per-tool") cfg.grouping = PrivateGrouping::per_tool;
  else throw ConfigError("synth: --grouping must be per-context, per-behavior or per-tool");
  std::vector<Tool> tools;
  std::vector<Behavior> behaviors;
  try {
    for (const auto& t : a.tools) tools.push_back(parse_tool(t));
    for (const auto& b : a.behaviors) behaviors.push_back(parse_behavior(b));
  } catch (const DataError& e) {
    throw ConfigError(std::string("synth: ") + e.what());
  }
  if (tools.empty()) tools.assign(kAllTools.begin(), kAllTools.end());
  if (behaviors.empty()) behaviors.assign(kAllBehaviors.begin(), kAllBehaviors.end());
  cfg.contexts.clear();
  for (Tool t : tools)
    for (Behavior b : behaviors)
      for (Modality m : kAllModalities) cfg.contexts.push_back({t, b, m});
  const SyntheticWorld world = generate_world(cfg, *a.seed);
  const Dataset ds = synthesize_dataset(world, a.trials, derive_seed(*a.seed, {fnv1a64("trials")}));
  const auto manifest = save_dataset(ds, a.out);
  std::cout << "wrote " << manifest.string() << " (" << ds.contexts().size() << " contexts, "
            << ds.objects().size() << " objects, " << ds.trial_count() << " trials)\n";
  return kOk;
}

void write_run_outputs(const fs::path& out, const std::string& command, const RunConfig& rc,
                       const json& hashed, const std::string& hash,
                       std::vector<ExperimentResult> results) {
  sort_results(results);
  io::write_text_file(out / "results.csv", results_csv(results, hash, *rc.seed));
  json summary = summarize(results);
  summary["config_hash"] = hash;
  summary["master_seed"] = *rc.seed;
  summary["command"] = command;
  io::write_text_file(out / "summary.json", summary.dump(2) + "\n");
  write_config_file(out, hashed, hash, *rc.seed);
}

ModelSink checkpoint_sink(const fs::path& out, const std::string& hash, const RunConfig& rc) {
  return [out, hash, rc](const Projection& p, int rep, Method method, const TransferModels& models) {
    const fs::path dir = out / "checkpoints" / (to_string(p.source) + "--" + to_string(p.target)) / ("rep-" + std::to_string(rep)) /
                         std::string(to_string(method));
    const json extra = {{"config_hash", hash}, {"master_seed", *rc.seed}};
    for (const auto& [m, enc] : models.encoders) {
      const json ctx = {{"source", to_string(p.source)}, {"target", to_string(p.target)},
                        {"modality", std::string(to_string(m))}, {"config_hash", hash}};
      save_encoders(dir / std::string(to_string(m)), enc, *rc.seed, rc.experiment.tl, ctx);
    }
    for (const auto& [m, model] : models.kema)
      save_kema(dir / (std::string(to_string(m)) + ".kema"), model, extra);
  };
}

int cmd_run(const RunConfig& rc) {
  require_common(rc);
  if (rc.source.empty() || rc.target.empty())
    throw ConfigError("run: source and target are required (--source/--target or config)");
  const Projection p{parse_pair(rc.source, "source"), parse_pair(rc.target, "target")};
  fs::create_directories(rc.out);
  logger().attach(rc.out / "run.log");
  const Dataset ds = load_dataset(rc.dataset);
  const json hashed = hashed_config("run", rc, dataset_fingerprint(ds));
  const std::string hash = config_hash(hashed);
  logger().info("run " + to_string(p) + " method=" + rc.method + " config=" + hash);
  RunOptions opts;
  opts.keep_audits = true;
  if (rc.checkpoints) opts.on_model = checkpoint_sink(rc.out, hash, rc);
  auto results = run_transfer_experiment(p, parse_methods(rc.method), ds, rc.experiment, *rc.seed, opts);
  for (const auto& r : results)
    for (const auto& a : r.audits) check_no_leakage(a);
  for (const auto& r : results)
    logger().info(std::string(to_string(r.method)) + ": transfer " +
                  io::format_short(r.transfer().mean, 4) + " b1 " +
                  io::format_short(r.baseline1().mean, 4) + " b2 " +
                  io::format_short(r.baseline2().mean, 4));
  write_run_outputs(rc.out, "run", rc, hashed, hash, std::move(results));
  write_artifacts(rc.out, hash, *rc.seed);
  std::cout << "wrote " << (rc.out / "results.csv").string() << "\n";
  return kOk;
}

std::pair<std::vector<Tool>, std::vector<Behavior>> selection(const RunConfig& rc) {
  std::vector<Tool> tools;
  std::vector<Behavior> behaviors;
  try {
    for (const auto& t : rc.tools) tools.push_back(parse_tool(t));
    for (const auto& b : rc.behaviors) behaviors.push_back(parse_behavior(b));
  } catch (const DataError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (tools.empty()) tools.assign(kAllTools.begin(), kAllTools.end());
  if (behaviors.empty()) behaviors.assign(kAllBehaviors.begin(), kAllBehaviors.end());
  return {tools, behaviors};
}

std::string single_context_csv(const std::vector<SingleContextTable>& tables,
                               const std::vector<Behavior>& behaviors, const std::string& hash,
                               std::uint64_t seed) {
  std::string out = "tool,behavior,accuracy,config_hash,master_seed\n";
  for (const auto& t : tables) {
    for (Behavior b : behaviors)
      out += std::string(to_string(t.tool)) + ',' + std::string(to_string(b)) + ',' +
             io::format_double(t.accuracy.at(b)) + ',' + hash + ',' + std::to_string(seed) + '\n';
    out += std::string(to_string(t.tool)) + ",all-behaviors," + io::format_double(t.all_behaviors) +
           ',' + hash + ',' + std::to_string(seed) + '\n';
  }
  return out;
}

int cmd_sweep(const RunConfig& rc) {
  require_common(rc);
  fs::create_directories(rc.out);
  logger().attach(rc.out / "run.log");
  const Dataset ds = load_dataset(rc.dataset);
  const json hashed = hashed_config("sweep", rc, dataset_fingerprint(ds));
  const std::string hash = config_hash(hashed);
  const auto [tools, behaviors] = selection(rc);

  if (rc.task == "single-context") {
    std::vector<SingleContextTable> tables;
    for (Tool t : tools) {
      logger().info("single-context recognition for " + std::string(to_string(t)));
      tables.push_back(single_context_recognition(ds, t, behaviors, rc.experiment, *rc.seed));
    }
    io::write_text_file(rc.out / "single_context.csv",
                        single_context_csv(tables, behaviors, hash, *rc.seed));
    write_config_file(rc.out, hashed, hash, *rc.seed);
    write_artifacts(rc.out, hash, *rc.seed);
    std::cout << "wrote " << (rc.out / "single_context.csv").string() << "\n";
    return kOk;
  }

  SweepOptions opts;
  opts.tools = tools;
  opts.behaviors = behaviors;
  opts.jobs = rc.jobs;
  opts.keep_audits = true;
  opts.on_progress = [](const Projection& p, std::size_t done, std::size_t total) {
    logger().info("[" + std::to_string(done) + "/" + std::to_string(total) + "] " + to_string(p));
  };
  logger().info("sweep task=" + rc.task + " method=" + rc.method + " config=" + hash);
  auto results =
      sweep_projections(parse_task(rc.task), parse_methods(rc.method), ds, rc.experiment, *rc.seed, opts);
  for (auto& r : results) {
    for (const auto& a : r.audits) check_no_leakage(a);
    r.audits.clear();
  }
  write_run_outputs(rc.out, "sweep", rc, hashed, hash, std::move(results));
  write_artifacts(rc.out, hash, *rc.seed);
  std::cout << "wrote " << (rc.out / "results.csv").string() << "\n";
  return kOk;
}

json single_context_report(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() == "single_context.csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  json rows = json::array();
  for (const auto& f : files) {
    const auto lines = io::read_lines(f);
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto fields = io::split_csv_line(lines[i]);
      if (fields.size() != 5)
        throw DataError("report: malformed row at " + f.string() + ":" + std::to_string(i + 1));
      rows.push_back({{"tool", std::string(fields[0])},
                      {"behavior", std::string(fields[1])},
                      {"accuracy", io::parse_double(fields[2], f.string())}});
    }
  }
  return rows;
}

int cmd_report(const std::string& results_dir, const std::string& out_arg,
               const std::string& mode_name) {
  if (results_dir.empty()) throw ConfigError("report: --results is required");
  const EmbeddingMode mode = parse_embedding_mode(mode_name);
  const fs::path out = out_arg.empty() ? fs::path(results_dir) / "report" : fs::path(out_arg);
  json report;
  ResultsTable table;
  bool have_transfer = true;
  try {
    table = read_results_dir(results_dir);
  } catch (const DataError&) {
    have_transfer = false;
  }
  const json single = fs::is_directory(results_dir) ? single_context_report(results_dir) : json::array();
  if (!have_transfer && single.empty())
    throw DataError("report: no results under '" + results_dir + "'");

  report["single_context"] = single;
  if (have_transfer) {
    report = summarize(table.results);
    report["single_context"] = single;
    report["config_hashes"] = table.config_hashes;
    report["master_seeds"] = table.master_seeds;
    report["embedding"] = json::object();
    const auto contexts = contexts_in(table.results);
    for (Method m : methods_in(table.results)) {
      const std::string name(to_string(m));
      try {
        const AdeltaEmbedding e = adelta_matrix_and_embedding(table.results, m, contexts, mode);
        io::write_text_file(out / ("adelta_matrix_" + name + ".csv"), matrix_csv(e));
        io::write_text_file(out / ("embedding_" + name + ".csv"), embedding_csv(e));
        report["embedding"][name] = {{"contexts", contexts.size()},
                                     {"mode", mode_name},
                                     {"explained_variance",
                                      {e.pca.explained_variance[0], e.pca.explained_variance[1]}}};
      } catch (const DataError&) {
        std::set<Projection> have;
        for (const auto& r : table.results)
          if (r.method == m) have.insert(r.projection);
        json missing = json::array();
        for (const auto& p : enumerate_projections(TransferTask::all_pairs))
          if (!have.count(p)) missing.push_back(to_string(p));
        report["embedding"][name] = {{"available", false},
                                     {"reason", "the matrix needs every ordered pair of contexts"},
                                     {"missing_projections", missing}};
      } catch (const ConfigError&) {
        report["embedding"][name] = {{"available", false}, {"reason", "fewer than 2 contexts"}};
      }
    }
  }
  io::write_text_file(out / "report.json", report.dump(2) + "\n");
  std::cout << "wrote " << (out / "report.json").string() << "\n";
  return kOk;
}

int cmd_verify(const std::string& dir_arg) {
  if (dir_arg.empty()) throw ConfigError("verify: --dir is required");
  const fs::path dir = dir_arg;
  const fs::path art_path = dir / "artifacts.json";
  const fs::path cfg_path = dir / "config.json";
  if (!fs::exists(art_path) || !fs::exists(cfg_path))
    throw DataError("verify: '" + dir.string() + "' lacks artifacts.json or config.json");
  json art, cfg;
  try {
    art = json::parse(io::read_text_file(art_path));
    cfg = json::parse(io::read_text_file(cfg_path));
  } catch (const json::parse_error& e) {
    throw DataError(std::string("verify: malformed JSON: ") + e.what());
  }
  std::vector<std::string> problems;
  const std::string hash = art.value("config_hash", "");
  const std::uint64_t seed = art.value("master_seed", std::uint64_t{0});
  if (config_hash(cfg.at("config")) != hash) problems.push_back("config.json: hash mismatch");
  if (cfg.value("config_hash", "") != hash) problems.push_back("config.json: recorded hash differs");
  if (cfg.value("master_seed", std::uint64_t{0}) != seed)
    problems.push_back("config.json: recorded seed differs");
  for (const auto& [rel, expected] : art.at("files").items()) {
    const fs::path p = dir / rel;
    if (!fs::exists(p)) {
      problems.push_back(rel + ": missing");
      continue;
    }
    if (hex64(fnv1a64(io::read_text_file(p))) != expected.get<std::string>())
      problems.push_back(rel + ": content hash mismatch");
  }
  for (const char* name : {"results.csv", "single_context.csv"}) {
    if (!fs::exists(dir / name)) continue;
    const auto lines = io::read_lines(dir / name);
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto f = io::split_csv_line(lines[i]);
      if (f.size() < 2 || f[f.size() - 2] != hash || f.back() != std::to_string(seed)) {
        problems.push_back(std::string(name) + ":" + std::to_string(i + 1) +
                           ": config hash or seed does not match");
        break;
      }
    }
  }
  if (fs::exists(dir / "summary.json")) {
    const json s = json::parse(io::read_text_file(dir / "summary.json"));
    if (s.value("config_hash", "") != hash || s.value("master_seed", std::uint64_t{0}) != seed)
      problems.push_back("summary.json: config hash or seed does not match");
  }
  if (!problems.empty()) {
    for (const auto& p : problems) std::cerr << "verify: " << p << "\n";
    return kVerify;
  }
  std::cout << "verified " << art.at("files").size() << " files, config " << hash << "\n";
  return kOk;
}

void add_run_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON config file");
  cmd->add_option("--dataset", o.dataset, "dataset manifest (dataset.json)");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--method", o.method, "tl, kema or both");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--jobs", o.jobs, "parallel projections");
  cmd->add_option("--repetitions", o.repetitions, "repetitions per projection");
  cmd->add_flag("--no-augment", o.no_augment, "disable augmentation");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-context knowledge transfer experiments"};
  app.require_subcommand(1);

  std::string raw, out, dataset, results_dir, verify_dir, embedding_mode = "rows";
  bool log_power = false;
  std::optional<std::uint64_t> seed;
  int count = 10;
  SynthArgs synth;
  Overrides run_o, sweep_o;

  auto* featurize = app.add_subcommand("featurize", "raw recordings -> feature dataset");
  featurize->add_option("--raw", raw, "raw tree <tool>/<behavior>/<object>/trial-<n>/")->required();
  featurize->add_option("--out", out, "output directory")->required();
  featurize->add_flag("--log-power", log_power, "histogram over dB power");

  auto* augment = app.add_subcommand("augment", "add Gaussian-resampled trials");
  augment->add_option("--dataset", dataset, "dataset manifest")->required();
  augment->add_option("--out", out, "output directory")->required();
  augment->add_option("--seed", seed, "seed");
  augment->add_option("--count", count, "trials added per object and context");

  auto* synth_cmd = app.add_subcommand("synth", "synthetic dataset with known latent structure");
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--seed", synth.seed, "seed");
  synth_cmd->add_option("--fidelity", synth.fidelity, "shared-latent fidelity in [0, 1]");
  synth_cmd->add_option("--noise", synth.noise, "per-trial noise scale");
  synth_cmd->add_option("--gain", synth.gain, "renderer gain");
  synth_cmd->add_flag("--nonlinear", synth.nonlinear, "tanh after the affine renderer");
  synth_cmd->add_option("--objects", synth.objects, "object count");
  synth_cmd->add_option("--trials", synth.trials, "trials per object and context");
  synth_cmd->add_option("--latent-dim", synth.latent_dim, "latent dimension");
  synth_cmd->add_option("--grouping", synth.grouping, "per-context, per-behavior or per-tool");
  synth_cmd->add_option("--tools", synth.tools, "tool subset")->delimiter(',');
  synth_cmd->add_option("--behaviors", synth.behaviors, "behavior subset")->delimiter(',');

  auto* run = app.add_subcommand("run", "one projection, all repetitions");
  add_run_flags(run, run_o);
  run->add_option("--source", run_o.source, "<tool>/<behavior>");
  run->add_option("--target", run_o.target, "<tool>/<behavior>");
  run->add_flag("--no-checkpoints", run_o.no_checkpoints, "skip model checkpoints");

  auto* sweep = app.add_subcommand("sweep", "every projection of a task");
  add_run_flags(sweep, sweep_o);
  sweep->add_option("--task", sweep_o.task, "cross-tool, cross-behavior, all-pairs or single-context");
  sweep->add_option("--tools", sweep_o.tools, "tool subset")->delimiter(',');
  sweep->add_option("--behaviors", sweep_o.behaviors, "behavior subset")->delimiter(',');

  auto* report = app.add_subcommand("report", "aggregate a results directory");
  report->add_option("--results", results_dir, "results directory")->required();
  report->add_option("--out", out, "report directory (default <results>/report)");
  report->add_option("--embedding-mode", embedding_mode, "rows, columns or symmetrized");

  auto* verify = app.add_subcommand("verify", "recompute and check artifact hashes");
  verify->add_option("--dir", verify_dir, "output directory of run or sweep")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return e.get_exit_code() == 0 ? app.exit(e) : (app.exit(e), kConfig);
  }

  try {
    if (*featurize) return cmd_featurize(raw, out, log_power);
    if (*augment) return cmd_augment(dataset, out, seed, count);
    if (*synth_cmd) return cmd_synth(synth);
    if (*run) {
      RunConfig rc = resolve_config(run_o);
      return cmd_run(rc);
    }
    if (*sweep) {
      RunConfig rc = resolve_config(sweep_o);
      if (rc.task != "single-context") parse_task(rc.task);
      return cmd_sweep(rc);
    }
    if (*report) return cmd_report(results_dir, out, embedding_mode);
    if (*verify) return cmd_verify(verify_dir);
  } catch (const RawTreeError& e) {
    logger().error(e.what());
    return kData;
  } catch (const ConfigError& e) {
    logger().error(e.what());
    return kConfig;
  } catch (const DataError& e) {
    logger().error(e.what());
    return kData;
  } catch (const NumericalError& e) {
    logger().error(e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    logger().error(e.what());
    return kOther;
  }
  return kOther;
}
