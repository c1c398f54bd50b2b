#include <catch_amalgamated.hpp>

#include <cmath>

#include "support.hpp"

using namespace crossctx;
using testing_support::trial;

namespace {

// Two classes around +-c in each domain; the target domain is a rotated,
// shifted copy of a different dimension.
struct Toy {
  std::vector<TrialFeature> src, tgt, src_test, tgt_test;
};

Toy two_clusters(std::uint64_t seed, int per_class, double spread) {
  crossctx::Rng rng(seed);
  Toy toy;
  Eigen::VectorXd cs = testing_support::random_vector(rng, 4) * 3.0;
  Eigen::VectorXd ct = testing_support::random_vector(rng, 6) * 3.0;
  for (int i = 0; i < 2 * per_class; ++i) {
    const bool test = i >= per_class;
    for (int k = 0; k < 2; ++k) {
      const std::string o = k == 0 ? "salt" : "water";
      const double s = k == 0 ? 1.0 : -1.0;
      auto& src = test ? toy.src_test : toy.src;
      auto& tgt = test ? toy.tgt_test : toy.tgt;
      src.push_back(trial(o, i, s * cs + spread * testing_support::random_vector(rng, 4)));
      tgt.push_back(trial(o, i, s * ct + spread * testing_support::random_vector(rng, 6)));
    }
  }
  return toy;
}

Eigen::VectorXd centroid(const Eigen::MatrixXd& z, const std::vector<TrialFeature>& t,
                         const std::string& object) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(z.rows());
  int n = 0;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i].object == object) c += z.col(static_cast<Eigen::Index>(i)), ++n;
  return c / n;
}

}  // namespace

TEST_CASE("rbf kernel", "[kema]") {
  crossctx::Rng rng(1);
  Eigen::MatrixXd x(3, 5);
  for (Eigen::Index j = 0; j < 5; ++j) x.col(j) = testing_support::random_vector(rng, 3);
  const Eigen::MatrixXd k = rbf_kernel(x, x, 0.7);
  REQUIRE(k.diagonal() == Eigen::VectorXd::Ones(5));
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 5; ++j)
      REQUIRE(k(i, j) == Catch::Approx(std::exp(-(x.col(i) - x.col(j)).squaredNorm() / (2 * 0.49))).epsilon(1e-12));

  const double bw = 1.3;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(1, 1), b(1, 1);
  b(0, 0) = bw * std::sqrt(2.0);
  REQUIRE(rbf_kernel(a, b, bw)(0, 0) == Catch::Approx(std::exp(-1.0)).epsilon(1e-14));
  REQUIRE(rbf_kernel(x, x, 1e8).minCoeff() > 1.0 - 1e-12);
  REQUIRE_THROWS_AS(rbf_kernel(x, x, 0.0), ConfigError);
}

TEST_CASE("alignment Laplacians", "[kema]") {
  crossctx::Rng rng(2);
  Eigen::MatrixXd fs(2, 6), ft(3, 4);
  for (Eigen::Index j = 0; j < 6; ++j) fs.col(j) = testing_support::random_vector(rng, 2);
  for (Eigen::Index j = 0; j < 4; ++j) ft.col(j) = testing_support::random_vector(rng, 3);
  const auto lap = build_alignment_laplacians({0, 1, 2, 0, 1, 2}, {2, 1, 0, 0}, fs, ft, 2);
  for (const auto* l : {&lap.geometry, &lap.similarity, &lap.dissimilarity}) {
    REQUIRE(l->rows() == 10);
    REQUIRE(l->rowwise().sum().cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(*l == l->transpose());
  }
  // No geometry edges across domains.
  REQUIRE(lap.geometry.topRightCorner(6, 4).isZero(0.0));

  const auto single = build_alignment_laplacians({4, 4, 4}, {4, 4}, fs.leftCols(3), ft.leftCols(2));
  REQUIRE(single.dissimilarity.isZero(0.0));

  Eigen::MatrixXd one(1, 1);
  one(0, 0) = 0.0;
  const auto pair = build_alignment_laplacians({0}, {0}, one, one);
  Eigen::Matrix2d expect;
  expect << 1, -1, -1, 1;
  REQUIRE(pair.similarity == expect);
}

TEST_CASE("solve_kema shape contract and determinism", "[kema]") {
  const Toy toy = two_clusters(3, 6, 0.3);
  KemaConfig cfg;
  cfg.latent_dim = 2;
  const KemaModel m = fit_kema(toy.src, toy.tgt, 4, 6, cfg);
  REQUIRE(m.dual.cols() == 2);
  REQUIRE(m.dual.rows() == static_cast<Eigen::Index>(toy.src.size() + toy.tgt.size()));
  const KemaModel again = fit_kema(toy.src, toy.tgt, 4, 6, cfg);
  REQUIRE(again.dual == m.dual);
  REQUIRE(kema_project(m, Side::source, {}).cols() == 0);
  REQUIRE(kema_project(m, Side::source, {}).rows() == 2);
}

TEST_CASE("projecting a training point reproduces its embedding row", "[kema]") {
  const Toy toy = two_clusters(4, 5, 0.5);
  KemaConfig cfg;
  cfg.latent_dim = 3;
  const KemaModel m = fit_kema(toy.src, toy.tgt, 4, 6, cfg);
  // Training embedding: K alpha with the block-diagonal kernel.
  const Eigen::Index ns = m.support_source.cols();
  const Eigen::MatrixXd ks = rbf_kernel(m.support_source, m.support_source, m.bandwidth_source);
  const Eigen::MatrixXd kt = rbf_kernel(m.support_target, m.support_target, m.bandwidth_target);
  const Eigen::MatrixXd emb_s = ks * m.dual.topRows(ns);
  const Eigen::MatrixXd emb_t = kt * m.dual.bottomRows(m.dual.rows() - ns);
  REQUIRE((kema_project(m, Side::source, toy.src).transpose() - emb_s).norm() < 1e-9 * (1 + emb_s.norm()));
  REQUIRE((kema_project(m, Side::target, toy.tgt).transpose() - emb_t).norm() < 1e-9 * (1 + emb_t.norm()));
}

TEST_CASE("separated toy domains align by class", "[kema]") {
  const Toy toy = two_clusters(5, 10, 0.2);
  KemaConfig cfg;
  cfg.latent_dim = 2;
  const KemaModel m = fit_kema(toy.src, toy.tgt, 4, 6, cfg);
  const Eigen::MatrixXd zs = kema_project(m, Side::source, toy.src);
  const Eigen::MatrixXd zt = kema_project(m, Side::target, toy.tgt);
  double worst_same = 0.0, best_diff = 1e300;
  for (std::size_t i = 0; i < toy.src.size(); ++i)
    for (std::size_t j = 0; j < toy.tgt.size(); ++j) {
      const double d = (zs.col(static_cast<Eigen::Index>(i)) - zt.col(static_cast<Eigen::Index>(j))).norm();
      if (toy.src[i].object == toy.tgt[j].object) worst_same = std::max(worst_same, d);
      else best_diff = std::min(best_diff, d);
    }
  REQUIRE(worst_same < best_diff);

  // Held-out target points land nearer their class's source centroid.
  const Eigen::MatrixXd ztest = kema_project(m, Side::target, toy.tgt_test);
  const Eigen::VectorXd c_salt = centroid(zs, toy.src, "salt");
  const Eigen::VectorXd c_water = centroid(zs, toy.src, "water");
  int hits = 0;
  for (std::size_t i = 0; i < toy.tgt_test.size(); ++i) {
    const auto z = ztest.col(static_cast<Eigen::Index>(i));
    const bool salt = (z - c_salt).norm() < (z - c_water).norm();
    hits += salt == (toy.tgt_test[i].object == "salt") ? 1 : 0;
  }
  REQUIRE(hits >= static_cast<int>(0.9 * static_cast<double>(toy.tgt_test.size())));
}

TEST_CASE("mu = 1 ignores the similarity graph", "[kema]") {
  const Toy toy = two_clusters(6, 5, 0.5);
  std::vector<int> ls, lt;
  for (const auto& t : toy.src) ls.push_back(t.object == "salt" ? 0 : 1);
  for (const auto& t : toy.tgt) lt.push_back(t.object == "salt" ? 0 : 1);
  const Eigen::MatrixXd xs = stack_columns(toy.src, 4), xt = stack_columns(toy.tgt, 6);
  const Eigen::MatrixXd ks = rbf_kernel(xs, xs, 1.0), kt = rbf_kernel(xt, xt, 1.0);
  auto lap = build_alignment_laplacians(ls, lt, xs, xt);
  const KemaSolution a = solve_kema(ks, kt, lap, 1.0, 3);
  lap.similarity.setZero();
  const KemaSolution b = solve_kema(ks, kt, lap, 1.0, 3);
  REQUIRE((a.dual - b.dual).norm() < 1e-8 * a.dual.norm());
  // Swapping the class names leaves every graph and hence the solution unchanged.
  for (auto& l : ls) l = 1 - l;
  for (auto& l : lt) l = 1 - l;
  const KemaSolution c = solve_kema(ks, kt, build_alignment_laplacians(ls, lt, xs, xt), 1.0, 3);
  REQUIRE((a.dual - c.dual).norm() < 1e-8 * a.dual.norm());
  REQUIRE_THROWS_AS(solve_kema(ks, kt, lap, 1.5, 3), ConfigError);
  REQUIRE_THROWS_AS(solve_kema(ks, kt, lap, 0.5, 0), ConfigError);
}

TEST_CASE("KEMA models round-trip through files", "[kema]") {
  const Toy toy = two_clusters(7, 4, 0.4);
  KemaConfig cfg;
  cfg.latent_dim = 3;
  const KemaModel m = fit_kema(toy.src, toy.tgt, 4, 6, cfg);
  const auto dir = testing_support::scratch_dir("kema_ckpt");
  save_kema(dir / "k.ckpt", m);
  const KemaModel back = load_kema(dir / "k.ckpt");
  REQUIRE(kema_project(back, Side::target, toy.tgt_test) == kema_project(m, Side::target, toy.tgt_test));
}
