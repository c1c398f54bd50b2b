#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace crossctx;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome cli(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string(CROSSCTX_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = io::read_text_file(out);
  o.err = io::read_text_file(err);
  fs::remove(out);
  fs::remove(err);
  return o;
}

// Every file under dir except the timestamped log, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "run.log")
      files[fs::relative(e.path(), dir).generic_string()] = io::read_text_file(e.path());
  return files;
}

const char* kQuick = R"({
  "experiment": {
    "repetitions": 2,
    "modalities": ["force", "effort"],
    "tl": {"epochs": 5, "hidden": [16], "latent_dim": 4, "learning_rate": 0.001},
    "kema": {"latent_dim": 4},
    "classifier": {"epochs": 10, "hidden": 16, "learning_rate": 0.001}
  }
})";

struct Workspace {
  fs::path dir;
  fs::path dataset;
  fs::path config;
};

Workspace synth_workspace(const std::string& name) {
  Workspace w;
  w.dir = testing_support::scratch_dir(name);
  w.config = w.dir / "quick.json";
  io::write_text_file(w.config, kQuick);
  const auto r = cli("synth --seed 3 --out " + (w.dir / "data").string() +
                         " --tools metal-scissor,metal-whisk --behaviors poke",
                     w.dir);
  REQUIRE(r.code == 0);
  w.dataset = w.dir / "data" / "dataset.json";
  REQUIRE(fs::exists(w.dataset));
  return w;
}

std::string run_args(const Workspace& w, const fs::path& out, const std::string& extra = "") {
  return "run --config " + w.config.string() + " --dataset " + w.dataset.string() +
         " --source metal-scissor/poke --target metal-whisk/poke --seed 11 --out " + out.string() +
         " " + extra;
}

}  // namespace

TEST_CASE("usage errors exit with the config code", "[cli]") {
  const auto dir = testing_support::scratch_dir("cli_usage");
  REQUIRE(cli("", dir).code == 2);
  REQUIRE(cli("frobnicate", dir).code == 2);
  REQUIRE(cli("--help", dir).code == 0);
  REQUIRE(cli("synth --out " + (dir / "x").string(), dir).code == 2);  // no seed
  REQUIRE(cli("run --dataset " + (dir / "nope.json").string() + " --seed 1 --out " + (dir / "o").string(), dir)
              .code == 2);
  io::write_text_file(dir / "bad.json", R"({"experiment": {"tl": {"epoch": 1}}})");
  const auto bad = cli("run --config " + (dir / "bad.json").string(), dir);
  REQUIRE(bad.code == 2);
  REQUIRE(bad.err.find("tl.epoch") != std::string::npos);
}

TEST_CASE("data errors exit with the data code", "[cli]") {
  const auto dir = testing_support::scratch_dir("cli_data");
  io::write_text_file(dir / "dataset.json", R"({"objects": ["salt"], "contexts": []})");
  REQUIRE(cli("run --dataset " + (dir / "dataset.json").string() +
                  " --seed 1 --source metal-scissor/poke --target metal-whisk/poke --out " +
                  (dir / "o").string(),
              dir)
              .code == 3);
  REQUIRE(cli("report --results " + testing_support::scratch_dir("cli_empty").string(), dir).code == 3);
}

TEST_CASE("featurize lists every missing force recording", "[cli]") {
  const auto dir = testing_support::scratch_dir("cli_featurize");
  const fs::path raw = dir / "raw";
  const ToolBehavior tb{Tool::wooden_fork, Behavior::poke};
  AudioRecording silent;
  silent.samples.assign(8000, 0.0);
  MultiChannelSeries effort, force;
  effort.channels.assign(6, std::vector<double>(50, 0.5));
  force.channels.assign(3, std::vector<double>(50, 1.5));
  for (const char* o : {"salt", "water"})
    for (int i = 0; i < 2; ++i) write_raw_trial(raw, tb, o, i, silent, effort, force);

  const auto ok = cli("featurize --raw " + raw.string() + " --out " + (dir / "features").string(), dir);
  REQUIRE(ok.code == 0);
  REQUIRE(ok.out.find("audio: 4 rows x 100 dims") != std::string::npos);
  REQUIRE(ok.out.find("effort: 4 rows x 60 dims") != std::string::npos);
  REQUIRE(ok.out.find("force: 4 rows x 30 dims") != std::string::npos);
  const Dataset ds = load_dataset(dir / "features" / "dataset.json");
  for (const auto& t : ds.trials({Tool::wooden_fork, Behavior::poke, Modality::audio}, "salt"))
    REQUIRE(t.values.isZero(0.0));

  fs::remove(raw / "wooden-fork" / "poke" / "salt" / "trial-0" / "force.csv");
  fs::remove(raw / "wooden-fork" / "poke" / "water" / "trial-1" / "force.csv");
  const auto missing = cli("featurize --raw " + raw.string() + " --out " + (dir / "f2").string(), dir);
  REQUIRE(missing.code == 3);
  REQUIRE(missing.err.find("salt/trial-0/force.csv") != std::string::npos);
  REQUIRE(missing.err.find("water/trial-1/force.csv") != std::string::npos);
}

TEST_CASE("run, rerun and verify", "[cli]") {
  const Workspace w = synth_workspace("cli_run");
  const auto first = cli(run_args(w, w.dir / "a", "--method both"), w.dir);
  REQUIRE(first.code == 0);
  const auto second = cli(run_args(w, w.dir / "b", "--method both"), w.dir);
  REQUIRE(second.code == 0);
  const auto a = snapshot(w.dir / "a");
  REQUIRE(a == snapshot(w.dir / "b"));
  REQUIRE(a.count("results.csv"));
  REQUIRE(a.count("summary.json"));
  REQUIRE(a.count("checkpoints/metal-scissor_poke--metal-whisk_poke/rep-0/tl/force.source.ckpt"));
  REQUIRE(fs::exists(w.dir / "a" / "run.log"));

  // Both methods: same baselines on every repetition.
  const auto lines = io::read_lines(w.dir / "a" / "results.csv");
  REQUIRE(lines.size() == 5);
  std::map<std::string, std::string> baselines;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = io::split_csv_line(lines[i]);
    const std::string key = std::string(f[6]);
    const std::string b = std::string(f[8]) + "," + std::string(f[9]);
    if (baselines.count(key)) REQUIRE(baselines[key] == b);
    baselines[key] = b;
  }

  REQUIRE(cli("verify --dir " + (w.dir / "a").string(), w.dir).code == 0);
  std::ofstream(w.dir / "a" / "results.csv", std::ios::app) << "tampered\n";
  const auto tampered = cli("verify --dir " + (w.dir / "a").string(), w.dir);
  REQUIRE(tampered.code == 5);
  REQUIRE(tampered.err.find("results.csv") != std::string::npos);

  // The log level never changes results.
  REQUIRE(cli("run --no-checkpoints " + run_args(w, w.dir / "c").substr(4), w.dir).code == 0);
  ::setenv("CROSSCTX_LOG", "debug", 1);
  REQUIRE(cli("run --no-checkpoints " + run_args(w, w.dir / "d").substr(4), w.dir).code == 0);
  ::unsetenv("CROSSCTX_LOG");
  REQUIRE(snapshot(w.dir / "c") == snapshot(w.dir / "d"));

  // A different seed gives a different config record.
  std::string reseeded = run_args(w, w.dir / "e").substr(4);
  reseeded.replace(reseeded.find("--seed 11"), 9, "--seed 12");
  REQUIRE(cli("run --no-checkpoints " + reseeded, w.dir).code == 0);
  REQUIRE(snapshot(w.dir / "e").at("results.csv") != snapshot(w.dir / "c").at("results.csv"));
}

TEST_CASE("sweep and report", "[cli]") {
  const Workspace w = synth_workspace("cli_sweep");
  const std::string base = "sweep --config " + w.config.string() + " --dataset " + w.dataset.string() +
                           " --seed 5 --task cross-tool --tools metal-scissor,metal-whisk --behaviors poke";
  REQUIRE(cli(base + " --out " + (w.dir / "s1").string(), w.dir).code == 0);
  REQUIRE(cli(base + " --jobs 2 --out " + (w.dir / "s2").string(), w.dir).code == 0);
  REQUIRE(snapshot(w.dir / "s1") == snapshot(w.dir / "s2"));
  REQUIRE(io::read_lines(w.dir / "s1" / "results.csv").size() == 1 + 2 * 2);
  REQUIRE(cli("verify --dir " + (w.dir / "s1").string(), w.dir).code == 0);

  REQUIRE(cli("report --results " + (w.dir / "s1").string() + " --out " + (w.dir / "r1").string(), w.dir).code == 0);
  REQUIRE(cli("report --results " + (w.dir / "s1").string() + " --out " + (w.dir / "r2").string(), w.dir).code == 0);
  REQUIRE(snapshot(w.dir / "r1") == snapshot(w.dir / "r2"));
  const auto report = nlohmann::json::parse(io::read_text_file(w.dir / "r1" / "report.json"));
  // Both ordered pairs of the two contexts are present, so the matrix is complete.
  REQUIRE(report["embedding"]["tl"]["contexts"] == 2);
  REQUIRE(io::read_lines(w.dir / "r1" / "embedding_tl.csv").size() == 3);

  const auto bad = cli("sweep --dataset " + w.dataset.string() + " --seed 5 --task cross-everything --out " +
                           (w.dir / "s3").string(),
                       w.dir);
  REQUIRE(bad.code == 2);
  // Sweeping over contexts the dataset lacks names them before training.
  const auto missing = cli("sweep --config " + w.config.string() + " --dataset " + w.dataset.string() +
                               " --seed 5 --task cross-tool --tools metal-scissor,wooden-fork --behaviors poke --out " +
                               (w.dir / "s4").string(),
                           w.dir);
  REQUIRE(missing.code == 3);
  REQUIRE(missing.err.find("wooden-fork_poke_force") != std::string::npos);
}
