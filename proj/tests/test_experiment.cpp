#include <catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <set>

#include "support.hpp"

using namespace crossctx;

namespace {

using testing_support::grid_config;
using testing_support::quick_config;

// One repetition with fixed accuracies per projection; no training involved.
std::vector<ExperimentResult> fabricated(const std::vector<Projection>& ps,
                                         const std::function<double(const Projection&)>& delta) {
  std::vector<ExperimentResult> out;
  for (const auto& p : ps) {
    ExperimentResult r;
    r.projection = p;
    r.method = Method::tl;
    r.repetitions.push_back({0, 50.0, 50.0 + delta(p), 30.0});
    out.push_back(r);
  }
  return out;
}

std::size_t index_of(ToolBehavior tb) {
  return static_cast<std::size_t>(tb.tool) * kAllBehaviors.size() + static_cast<std::size_t>(tb.behavior);
}

Dataset small_world(double fidelity, std::uint64_t seed,
                    std::vector<Tool> tools = {Tool::metal_scissor, Tool::metal_whisk},
                    std::vector<Behavior> behaviors = {Behavior::poke}) {
  SynthConfig sc = grid_config(tools, behaviors);
  sc.fidelity = fidelity;
  return synthesize_dataset(generate_world(sc, seed), 10, seed + 1);
}

const Projection kScissorToWhisk{{Tool::metal_scissor, Behavior::poke}, {Tool::metal_whisk, Behavior::poke}};

}  // namespace

TEST_CASE("projection enumeration counts", "[experiment]") {
  const auto ct = enumerate_projections(TransferTask::cross_tool);
  const auto cb = enumerate_projections(TransferTask::cross_behavior);
  const auto ap = enumerate_projections(TransferTask::all_pairs);
  REQUIRE(ct.size() == 150);
  REQUIRE(cb.size() == 120);
  REQUIRE(ap.size() == 870);
  for (const auto& p : ct) REQUIRE(task_of(p) == TransferTask::cross_tool);
  for (const auto& p : cb) REQUIRE(task_of(p) == TransferTask::cross_behavior);
  REQUIRE(std::set<Projection>(ap.begin(), ap.end()).size() == 870);
  for (const auto& p : ap) REQUIRE(p.source != p.target);
  REQUIRE(std::is_sorted(ap.begin(), ap.end()));
  REQUIRE(enumerate_projections(TransferTask::cross_tool, {Tool::wooden_fork}).empty());
}

TEST_CASE("accuracy-delta groups", "[experiment]") {
  auto delta = [](const Projection& p) {
    return static_cast<double>(index_of(p.source)) - 0.5 * static_cast<double>(index_of(p.target));
  };
  const auto ct = fabricated(enumerate_projections(TransferTask::cross_tool), delta);
  const auto cb = fabricated(enumerate_projections(TransferTask::cross_behavior), delta);

  const auto by_behavior = group_adelta(ct, TransferTask::cross_tool, Method::tl);
  REQUIRE(by_behavior.size() == 5);
  for (const auto& g : by_behavior) REQUIRE(g.count == 30);
  const auto ct_by_tool = group_adelta(ct, TransferTask::cross_tool, Method::tl, GroupBy::tool);
  REQUIRE(ct_by_tool.size() == 6);
  for (const auto& g : ct_by_tool) REQUIRE(g.count == 25);
  const auto by_tool = group_adelta(cb, TransferTask::cross_behavior, Method::tl);
  REQUIRE(by_tool.size() == 6);
  for (const auto& g : by_tool) REQUIRE(g.count == 20);
  REQUIRE(group_adelta(cb, TransferTask::cross_behavior, Method::kema).empty());
  REQUIRE_THROWS_AS(group_adelta(ct, TransferTask::all_pairs, Method::tl), ConfigError);

  // Means against a direct recomputation.
  for (const auto& g : by_behavior) {
    double sum = 0.0;
    int n = 0;
    for (const auto& p : enumerate_projections(TransferTask::cross_tool))
      if (to_string(p.source.behavior) == g.key) sum += delta(p), ++n;
    REQUIRE(g.adelta_b1.mean == Catch::Approx(sum / n).epsilon(1e-12));
  }
}

TEST_CASE("accuracy-delta matrix and embedding", "[experiment]") {
  auto delta = [](const Projection& p) {
    return 1.0 + static_cast<double>(index_of(p.source) * 31 + index_of(p.target)) / 100.0;
  };
  const auto all = fabricated(enumerate_projections(TransferTask::all_pairs), delta);
  const AdeltaEmbedding e = adelta_matrix_and_embedding(all, Method::tl);
  REQUIRE(e.matrix.rows() == 30);
  REQUIRE(e.matrix.cols() == 30);
  REQUIRE(e.matrix.diagonal().isZero(0.0));
  for (const auto& r : all)
    REQUIRE(e.matrix(static_cast<Eigen::Index>(index_of(r.projection.source)),
                     static_cast<Eigen::Index>(index_of(r.projection.target))) == r.adelta_b1());
  REQUIRE(e.pca.coordinates.rows() == 30);
  REQUIRE(e.pca.coordinates.cols() == 2);

  // Identical rows: every point coincides.
  const auto flat = fabricated(enumerate_projections(TransferTask::all_pairs),
                               [](const Projection&) { return 0.0; });
  REQUIRE(adelta_matrix_and_embedding(flat, Method::tl).pca.coordinates.isZero(0.0));

  auto partial = all;
  partial.erase(partial.begin() + 7);
  partial.erase(partial.begin() + 100);
  try {
    adelta_matrix_and_embedding(partial, Method::tl);
    FAIL("expected DataError");
  } catch (const DataError& err) {
    REQUIRE(std::string(err.what()).find("2 projections missing") != std::string::npos);
  }
}

TEST_CASE("experiment config JSON", "[experiment]") {
  const auto cfg = experiment_config_from_json(nlohmann::json::parse(R"({
    "tl": {"epochs": 7, "hidden": [10, 5]},
    "kema": {"mu": 0.25},
    "repetitions": 3,
    "modalities": ["force", "audio"],
    "fusion_weights": "equal"
  })"));
  REQUIRE(cfg.tl.epochs == 7);
  REQUIRE(cfg.tl.hidden == std::vector<int>{10, 5});
  REQUIRE(cfg.tl.learning_rate == 1e-4);
  REQUIRE(cfg.kema.mu == 0.25);
  REQUIRE(cfg.repetitions == 3);
  REQUIRE(cfg.modalities == std::vector<Modality>{Modality::force, Modality::audio});
  REQUIRE(cfg.fusion == FusionWeights::equal);
  REQUIRE(experiment_config_from_json(cfg.to_json()).to_json() == cfg.to_json());

  using nlohmann::json;
  auto err = [](const char* text) {
    try {
      experiment_config_from_json(json::parse(text));
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  REQUIRE(err(R"({"tl": {"epoch": 3}})").find("unknown field tl.epoch") != std::string::npos);
  REQUIRE(err(R"({"repetitons": 3})").find("unknown field repetitons") != std::string::npos);
  REQUIRE(err(R"({"tl": {"epochs": "many"}})").find("tl.epochs: wrong type") != std::string::npos);
  REQUIRE(err(R"({"kema": {"mu": 1.5}})").find("kema.mu") != std::string::npos);
  REQUIRE(err(R"({"modalities": ["smell"]})").find("modalities") != std::string::npos);
  REQUIRE(err(R"({"fusion_weights": "vote"})").find("unknown mode") != std::string::npos);
  REQUIRE(err(R"({"repetitions": 0})").find("repetitions") != std::string::npos);
}

TEST_CASE("runs are deterministic and methods share splits", "[experiment]") {
  const Dataset ds = small_world(1.0, 3);
  const auto cfg = quick_config();
  const auto a = run_transfer_experiment(kScissorToWhisk, {Method::tl, Method::kema}, ds, cfg, 42);
  const auto b = run_transfer_experiment(kScissorToWhisk, {Method::tl, Method::kema}, ds, cfg, 42);
  REQUIRE(a.size() == 2);
  for (std::size_t m = 0; m < 2; ++m) {
    REQUIRE(a[m].repetitions.size() == 2);
    for (std::size_t r = 0; r < 2; ++r) {
      REQUIRE(a[m].repetitions[r].transfer == b[m].repetitions[r].transfer);
      REQUIRE(a[m].repetitions[r].baseline1 == b[m].repetitions[r].baseline1);
      REQUIRE(a[m].repetitions[r].baseline2 == b[m].repetitions[r].baseline2);
    }
  }
  // Paired comparison: both methods see identical baselines, and the TL run
  // alone reproduces them.
  const auto tl_only = run_transfer_experiment(kScissorToWhisk, {Method::tl}, ds, cfg, 42);
  for (std::size_t r = 0; r < 2; ++r) {
    REQUIRE(a[0].repetitions[r].baseline1 == a[1].repetitions[r].baseline1);
    REQUIRE(a[0].repetitions[r].baseline2 == a[1].repetitions[r].baseline2);
    REQUIRE(tl_only[0].repetitions[r].transfer == a[0].repetitions[r].transfer);
    REQUIRE(tl_only[0].repetitions[r].baseline1 == a[0].repetitions[r].baseline1);
  }
  // Accuracy-delta identities and ranges.
  for (const auto& res : a) {
    double sum = 0.0;
    for (const auto& rep : res.repetitions) {
      for (double v : {rep.transfer, rep.baseline1, rep.baseline2}) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 100.0);
      }
      REQUIRE(rep.adelta_b1() == rep.baseline1 - rep.transfer);
      sum += rep.adelta_b1();
    }
    REQUIRE(res.adelta_b1() == Catch::Approx(sum / 2.0).margin(1e-12));
  }
  const auto other = run_transfer_experiment(kScissorToWhisk, {Method::tl}, ds, cfg, 43);
  REQUIRE(other[0].seed != a[0].seed);
}

TEST_CASE("test trials are measured and never trained on", "[experiment]") {
  const Dataset ds = small_world(1.0, 5);
  auto cfg = quick_config();
  cfg.repetitions = 3;
  cfg.tl.epochs = 2;
  cfg.classifier.epochs = 2;
  const auto res = run_transfer_experiment(kScissorToWhisk, {Method::tl}, ds, cfg, 7);
  REQUIRE(res[0].audits.size() == 3);
  for (const auto& audit : res[0].audits) {
    REQUIRE_NOTHROW(check_no_leakage(audit));
    // 5 novel objects x 2 held-out trials x 3 modalities.
    REQUIRE(audit.test.size() == 30);
    std::set<std::pair<std::string, int>> trained;
    bool saw_augmented = false;
    for (const auto& u : audit.training) {
      if (u.provenance == Provenance::augmented) saw_augmented = true;
      else trained.insert({u.object, u.trial_index});
    }
    REQUIRE(saw_augmented);
    for (const auto& u : audit.test) {
      REQUIRE(u.provenance != Provenance::augmented);
      REQUIRE(u.context.pair() == kScissorToWhisk.target);
      REQUIRE_FALSE(trained.count({u.object, u.trial_index}));
    }
  }

  RepetitionAudit bad = res[0].audits[0];
  const TrialUse t = *bad.test.begin();
  bad.training.insert(t);
  REQUIRE_THROWS_AS(check_no_leakage(bad), DataError);
  bad = res[0].audits[0];
  TrialUse aug = t;
  aug.provenance = Provenance::augmented;
  aug.trial_index = 99;
  bad.test.insert(aug);
  REQUIRE_THROWS_AS(check_no_leakage(bad), DataError);
}

TEST_CASE("identical source and target contexts", "[experiment]") {
  const Dataset ds = small_world(1.0, 9);
  auto cfg = quick_config();
  cfg.repetitions = 4;
  cfg.tl.hidden = {64};
  cfg.tl.latent_dim = 16;
  cfg.tl.epochs = 40;
  const Projection same{kScissorToWhisk.target, kScissorToWhisk.target};
  REQUIRE_THROWS_AS(run_transfer_experiment(same, {Method::tl}, ds, cfg, 1), ConfigError);
  cfg.allow_identical_contexts = true;
  const auto r = run_transfer_experiment(same, {Method::tl}, ds, cfg, 1);
  for (const auto& rep : r[0].repetitions) REQUIRE(rep.baseline2 == rep.baseline1);
  REQUIRE(std::abs(r[0].transfer().mean - r[0].baseline1().mean) < 10.0);
}

TEST_CASE("zero shared structure gives chance transfer", "[experiment]") {
  const Dataset ds = small_world(0.0, 13);
  auto cfg = quick_config();
  cfg.repetitions = 10;
  cfg.tl.hidden = {64};
  cfg.tl.latent_dim = 16;
  cfg.tl.epochs = 30;
  const auto r = run_transfer_experiment(kScissorToWhisk, {Method::tl}, ds, cfg, 2);
  REQUIRE(std::abs(r[0].transfer().mean - 20.0) <= 10.0);
  REQUIRE(r[0].baseline1().mean >= 60.0);
}

TEST_CASE("missing inputs are reported before training", "[experiment]") {
  const Context kept{Tool::metal_scissor, Behavior::poke, Modality::force};
  const Context other{Tool::metal_whisk, Behavior::poke, Modality::force};
  Dataset ds = testing_support::random_dataset({kept, other}, 1);
  auto cfg = quick_config();
  try {
    run_transfer_experiment(kScissorToWhisk, {Method::tl}, ds, cfg, 1);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("metal-scissor_poke_audio") != std::string::npos);
    REQUIRE(msg.find("metal-whisk_poke_effort") != std::string::npos);
  }
  try {
    SweepOptions opts;
    opts.tools = {Tool::metal_scissor, Tool::metal_whisk, Tool::wooden_fork};
    opts.behaviors = {Behavior::poke};
    sweep_projections(TransferTask::cross_tool, {Method::tl}, ds, cfg, 1, opts);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    REQUIRE(std::string(e.what()).find("wooden-fork_poke_force") != std::string::npos);
  }
  cfg.modalities = {Modality::force};
  REQUIRE(run_transfer_experiment(kScissorToWhisk, {Method::tl}, ds, cfg, 1)[0].repetitions.size() == 2);
}

TEST_CASE("parallel sweeps equal serial sweeps", "[experiment]") {
  const Dataset ds = small_world(1.0, 17);
  auto cfg = quick_config();
  cfg.repetitions = 1;
  cfg.modalities = {Modality::force};
  SweepOptions opts;
  opts.tools = {Tool::metal_scissor, Tool::metal_whisk};
  opts.behaviors = {Behavior::poke};
  const auto serial = sweep_projections(TransferTask::cross_tool, {Method::tl}, ds, cfg, 8, opts);
  opts.jobs = 2;
  const auto parallel = sweep_projections(TransferTask::cross_tool, {Method::tl}, ds, cfg, 8, opts);
  REQUIRE(serial.size() == 2);
  REQUIRE(results_csv(serial, "h", 8) == results_csv(parallel, "h", 8));

  // A single projection re-run in isolation reproduces its sweep row.
  const auto alone = run_transfer_experiment(serial[1].projection, {Method::tl}, ds, cfg, 8);
  REQUIRE(results_csv(alone, "h", 8) ==
          results_csv(std::vector<ExperimentResult>{serial[1]}, "h", 8));
}

TEST_CASE("results CSV round-trips", "[experiment]") {
  auto rows = fabricated(enumerate_projections(TransferTask::cross_behavior, {Tool::metal_whisk}),
                         [](const Projection& p) { return static_cast<double>(index_of(p.target)) / 3.0; });
  rows.front().repetitions.push_back({1, 12.5, 40.0, 20.0});
  sort_results(rows);
  const auto dir = testing_support::scratch_dir("results_csv");
  io::write_text_file(dir / "results.csv", results_csv(rows, "abc", 5));
  const ResultsTable t = read_results_dir(dir);
  REQUIRE(t.config_hashes == std::set<std::string>{"abc"});
  REQUIRE(t.master_seeds == std::set<std::uint64_t>{5});
  REQUIRE(results_csv(t.results, "abc", 5) == results_csv(rows, "abc", 5));
  REQUIRE_THROWS_AS(read_results_dir(testing_support::scratch_dir("results_empty")), DataError);
}

TEST_CASE("embedding groups behaviors that transfer among themselves", "[experiment]") {
  // Contexts sharing a behavior share their private latents; across behaviors
  // nothing is shared.
  const std::vector<Tool> tools{Tool::metal_scissor, Tool::metal_whisk};
  const std::vector<Behavior> behaviors{Behavior::poke, Behavior::whisk, Behavior::stirring_slow};
  SynthConfig sc = grid_config(tools, behaviors);
  sc.fidelity = 0.0;
  sc.grouping = PrivateGrouping::per_behavior;
  const Dataset ds = synthesize_dataset(generate_world(sc, 21), 10, 22);
  auto cfg = quick_config();
  cfg.repetitions = 1;
  cfg.modalities = {Modality::force};
  cfg.tl.hidden = {64};
  cfg.tl.latent_dim = 16;
  cfg.tl.epochs = 40;
  SweepOptions opts;
  opts.tools = tools;
  opts.behaviors = behaviors;
  const auto results = sweep_projections(TransferTask::all_pairs, {Method::tl}, ds, cfg, 3, opts);
  REQUIRE(results.size() == 30);
  std::vector<ToolBehavior> contexts;
  for (Tool t : tools)
    for (Behavior b : behaviors) contexts.push_back({t, b});
  const AdeltaEmbedding e = adelta_matrix_and_embedding(results, Method::tl, contexts);
  double within = 0.0, between = 0.0;
  int nw = 0, nb = 0;
  for (std::size_t i = 0; i < e.contexts.size(); ++i)
    for (std::size_t j = i + 1; j < e.contexts.size(); ++j) {
      const double d = (e.pca.coordinates.row(static_cast<Eigen::Index>(i)) -
                        e.pca.coordinates.row(static_cast<Eigen::Index>(j))).norm();
      if (e.contexts[i].behavior == e.contexts[j].behavior) within += d, ++nw;
      else between += d, ++nb;
    }
  REQUIRE(within / nw < between / nb);
}

TEST_CASE("single-context recognition on random features is near chance", "[experiment]") {
  const Context c{Tool::wooden_fork, Behavior::poke, Modality::force};
  const Dataset ds = testing_support::random_dataset({c}, 31);
  auto cfg = quick_config();
  cfg.modalities = {Modality::force};
  const auto table = single_context_recognition(ds, Tool::wooden_fork, {Behavior::poke}, cfg, 4);
  // 150 test predictions over 15 classes; chance is 6.67%.
  REQUIRE(table.accuracy.at(Behavior::poke) <= 15.0);
  REQUIRE(table.all_behaviors == table.accuracy.at(Behavior::poke));
  REQUIRE_THROWS_AS(single_context_recognition(ds, Tool::wooden_fork, {Behavior::whisk}, cfg, 4),
                    DataError);
  REQUIRE_THROWS_AS(single_context_recognition(ds, Tool::wooden_fork, {Behavior::poke}, cfg, 4, 1),
                    ConfigError);
}

TEST_CASE("single-context recognition separates clean synthetic objects", "[experiment]") {
  SynthConfig sc = grid_config({Tool::wooden_fork}, {Behavior::poke, Behavior::whisk});
  sc.noise_scale = 0.1;
  const Dataset ds = synthesize_dataset(generate_world(sc, 41), 10, 42);
  auto cfg = quick_config();
  cfg.modalities = {Modality::force};
  cfg.classifier.epochs = 150;
  const auto table =
      single_context_recognition(ds, Tool::wooden_fork, {Behavior::poke, Behavior::whisk}, cfg, 4);
  REQUIRE(table.accuracy.at(Behavior::poke) >= 90.0);
  REQUIRE(table.all_behaviors >= 90.0);
}
