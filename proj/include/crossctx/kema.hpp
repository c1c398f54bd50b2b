#pragma once

// Kernel manifold alignment baseline.
//
// Both domains are stacked into one point set with a block-diagonal RBF
// kernel K. Three graphs over the stacked points drive the alignment:
// geometry (k nearest neighbours inside each domain), class similarity (same
// label, any domain) and class dissimilarity (different label). The dual
// coefficients solve the generalized symmetric eigenproblem
//
//   K (mu L_geo + (1 - mu) L_sim) K a = lambda (K L_dis K + rho I) a
//
// keeping the eigenvectors of smallest eigenvalue. A point of either domain is
// projected with its own domain's kernel row times that domain's block of
// coefficients.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <json.hpp>

#include "crossctx/blob_io.hpp"
#include "crossctx/data_model.hpp"
#include "crossctx/errors.hpp"
#include "crossctx/linalg.hpp"
#include "crossctx/transfer_tl.hpp"

namespace crossctx {

/// K[i, j] = exp(-|x_i - y_j|^2 / (2 bandwidth^2)); points are columns.
inline Eigen::MatrixXd rbf_kernel(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                  double bandwidth) {
  if (x.rows() != y.rows())
    throw ConfigError("crossctx::rbf_kernel: point dimensions differ");
  if (!(bandwidth > 0.0)) throw ConfigError("crossctx::rbf_kernel: bandwidth must be positive");
  const Eigen::VectorXd xx = x.colwise().squaredNorm().transpose();
  const Eigen::RowVectorXd yy = y.colwise().squaredNorm();
  Eigen::MatrixXd d2 = -2.0 * x.transpose() * y;
  d2.colwise() += xx;
  d2.rowwise() += yy;
  Eigen::MatrixXd k = (d2.cwiseMax(0.0) / (-2.0 * bandwidth * bandwidth)).array().exp().matrix();
  if (&x == &y)
    for (Eigen::Index i = 0; i < k.rows(); ++i) k(i, i) = 1.0;
  return k;
}

inline Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.cols();
  Eigen::MatrixXd d(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) d(i, j) = (x.col(i) - x.col(j)).norm();
  return d;
}

/// Median of the pairwise distances between distinct points; 1 when undefined
/// or zero.
inline double median_bandwidth(const Eigen::MatrixXd& x) {
  std::vector<double> d;
  for (Eigen::Index j = 1; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < j; ++i) d.push_back((x.col(i) - x.col(j)).norm());
  if (d.empty()) return 1.0;
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  double med = d[mid];
  if (d.size() % 2 == 0) {
    const double lo = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
    med = 0.5 * (med + lo);
  }
  return med > 0.0 ? med : 1.0;
}

inline Eigen::MatrixXd graph_laplacian(const Eigen::MatrixXd& w) {
  Eigen::MatrixXd l = -w;
  for (Eigen::Index i = 0; i < w.rows(); ++i) l(i, i) += w.row(i).sum();
  return l;
}

struct AlignmentLaplacians {
  Eigen::MatrixXd geometry;
  Eigen::MatrixXd similarity;
  Eigen::MatrixXd dissimilarity;
};

/// Graphs over the stacked points [source; target]. Geometry uses the
/// symmetrized k-nearest-neighbour graph inside each domain; the feature
/// matrices hold one point per column.
inline AlignmentLaplacians build_alignment_laplacians(const std::vector<int>& labels_source,
                                                      const std::vector<int>& labels_target,
                                                      const Eigen::MatrixXd& features_source,
                                                      const Eigen::MatrixXd& features_target,
                                                      int k = 5) {
  const auto ns = static_cast<Eigen::Index>(labels_source.size());
  const auto nt = static_cast<Eigen::Index>(labels_target.size());
  if (ns == 0 || nt == 0)
    throw ConfigError("crossctx::build_alignment_laplacians: label lists must be non-empty");
  if (features_source.cols() != ns || features_target.cols() != nt)
    throw ConfigError("crossctx::build_alignment_laplacians: features and labels disagree");
  const Eigen::Index n = ns + nt;
  std::vector<int> labels(labels_source);
  labels.insert(labels.end(), labels_target.begin(), labels_target.end());

  Eigen::MatrixXd w_sim = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd w_dis = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) w_sim(i, j) = 1.0;
      else w_dis(i, j) = 1.0;
    }

  Eigen::MatrixXd w_geo = Eigen::MatrixXd::Zero(n, n);
  auto knn = [&](const Eigen::MatrixXd& x, Eigen::Index offset) {
    const Eigen::MatrixXd d = pairwise_distances(x);
    const Eigen::Index m = x.cols();
    const Eigen::Index kk = std::min<Eigen::Index>(k, m - 1);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) {
      std::iota(idx.begin(), idx.end(), Eigen::Index{0});
      std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
        return d(i, a) < d(i, b);
      });
      Eigen::Index taken = 0;
      for (Eigen::Index j : idx) {
        if (taken >= kk) break;
        if (j == i) continue;
        w_geo(offset + i, offset + j) = 1.0;
        w_geo(offset + j, offset + i) = 1.0;
        ++taken;
      }
    }
  };
  knn(features_source, 0);
  knn(features_target, ns);

  return {graph_laplacian(w_geo), graph_laplacian(w_sim), graph_laplacian(w_dis)};
}

struct KemaConfig {
  double mu = 0.5;
  int latent_dim = 125;
  int knn = 5;
  /// rho = ridge * trace(K L_dis K) / n
  double ridge = 1e-6;
  bool standardize = true;

  nlohmann::json to_json() const {
    return {{"mu", mu}, {"latent_dim", latent_dim}, {"knn", knn}, {"ridge", ridge},
            {"standardize", standardize}};
  }
};

struct KemaSolution {
  Eigen::MatrixXd dual;  ///< (n_source + n_target) x latent_dims
  Eigen::VectorXd eigenvalues;
  int sweeps = 0;
};

/// Generalized problem reduced through the Cholesky factor of the regularized
/// right-hand side, C = L^-1 A L^-T, then solved by Jacobi.
inline KemaSolution solve_kema(const Eigen::MatrixXd& k_source, const Eigen::MatrixXd& k_target,
                               const AlignmentLaplacians& lap, double mu, int latent_dims,
                               double ridge = 1e-6) {
  if (k_source.rows() != k_source.cols() || k_target.rows() != k_target.cols())
    throw ConfigError("crossctx::solve_kema: kernel matrices must be square");
  if (mu < 0.0 || mu > 1.0) throw ConfigError("crossctx::solve_kema: mu must lie in [0, 1]");
  const Eigen::Index ns = k_source.rows();
  const Eigen::Index n = ns + k_target.rows();
  if (lap.geometry.rows() != n || lap.similarity.rows() != n || lap.dissimilarity.rows() != n)
    throw ConfigError("crossctx::solve_kema: Laplacian size does not match kernels");
  if (latent_dims < 1 || latent_dims > n)
    throw ConfigError("crossctx::solve_kema: latent_dims must lie in [1, " + std::to_string(n) + "]");

  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
  k.topLeftCorner(ns, ns) = k_source;
  k.bottomRightCorner(n - ns, n - ns) = k_target;

  const Eigen::MatrixXd mix = mu * lap.geometry + (1.0 - mu) * lap.similarity;
  Eigen::MatrixXd a = k * mix * k;
  Eigen::MatrixXd b = k * lap.dissimilarity * k;
  a = 0.5 * (a + a.transpose());
  b = 0.5 * (b + b.transpose());
  const double rho = ridge * std::max(b.trace(), 1e-12) / static_cast<double>(n);
  b.diagonal().array() += rho;

  Eigen::LLT<Eigen::MatrixXd> llt(b);
  if (llt.info() != Eigen::Success)
    throw NumericalError("crossctx::solve_kema: right-hand matrix is not positive definite");
  const Eigen::MatrixXd lower = llt.matrixL();
  Eigen::MatrixXd c = lower.triangularView<Eigen::Lower>().solve(a);
  c = lower.triangularView<Eigen::Lower>().solve(c.transpose()).transpose();
  c = 0.5 * (c + c.transpose());

  const SymmetricEigen eig = jacobi_eigen(c);
  KemaSolution sol;
  sol.sweeps = eig.sweeps;
  const Eigen::MatrixXd y = eig.vectors.leftCols(latent_dims);
  sol.dual = lower.transpose().triangularView<Eigen::Upper>().solve(y);
  sol.eigenvalues = eig.values.head(latent_dims);
  canonicalize_signs(sol.dual);
  return sol;
}

struct KemaModel {
  Eigen::MatrixXd support_source;  ///< standardized source points, one per column
  Eigen::MatrixXd support_target;
  Eigen::MatrixXd dual;
  Eigen::VectorXd eigenvalues;
  double bandwidth_source = 1.0;
  double bandwidth_target = 1.0;
  Standardizer source_norm;
  Standardizer target_norm;
  double mu = 0.5;

  int latent_dim() const { return static_cast<int>(dual.cols()); }
  Eigen::Index input_dim(Side s) const {
    return s == Side::source ? support_source.rows() : support_target.rows();
  }
};

/// Label indices in order of first appearance of each object in `order`.
inline std::vector<int> object_labels(const std::vector<TrialFeature>& trials,
                                      const std::vector<std::string>& order) {
  std::vector<int> labels;
  labels.reserve(trials.size());
  for (const auto& t : trials) {
    auto it = std::find(order.begin(), order.end(), t.object);
    if (it == order.end())
      throw DataError("crossctx::object_labels: unknown object '" + t.object + "'");
    labels.push_back(static_cast<int>(it - order.begin()));
  }
  return labels;
}

/// Fits the alignment on labelled trials of both domains.
inline KemaModel fit_kema(const std::vector<TrialFeature>& source,
                          const std::vector<TrialFeature>& target, int source_dim, int target_dim,
                          const KemaConfig& cfg) {
  if (source.empty() || target.empty())
    throw DataError("crossctx::fit_kema: both domains need training points");
  std::vector<std::string> classes;
  for (const auto* side : {&source, &target})
    for (const auto& t : *side)
      if (std::find(classes.begin(), classes.end(), t.object) == classes.end())
        classes.push_back(t.object);

  KemaModel m;
  m.mu = cfg.mu;
  const Eigen::MatrixXd xs = stack_columns(source, source_dim);
  const Eigen::MatrixXd xt = stack_columns(target, target_dim);
  m.source_norm = cfg.standardize ? Standardizer::fit(xs) : Standardizer::identity(source_dim);
  m.target_norm = cfg.standardize ? Standardizer::fit(xt) : Standardizer::identity(target_dim);
  m.support_source = m.source_norm.apply(xs);
  m.support_target = m.target_norm.apply(xt);
  m.bandwidth_source = median_bandwidth(m.support_source);
  m.bandwidth_target = median_bandwidth(m.support_target);

  const auto lap = build_alignment_laplacians(object_labels(source, classes),
                                              object_labels(target, classes), m.support_source,
                                              m.support_target, cfg.knn);
  const Eigen::MatrixXd ks = rbf_kernel(m.support_source, m.support_source, m.bandwidth_source);
  const Eigen::MatrixXd kt = rbf_kernel(m.support_target, m.support_target, m.bandwidth_target);
  const int dims = std::min<int>(cfg.latent_dim, static_cast<int>(source.size() + target.size()));
  KemaSolution sol = solve_kema(ks, kt, lap, cfg.mu, dims, cfg.ridge);
  m.dual = std::move(sol.dual);
  m.eigenvalues = std::move(sol.eigenvalues);
  return m;
}

/// Latent vectors (one column per point) for raw, unstandardized points.
inline Eigen::MatrixXd kema_project_points(const KemaModel& m, Side side, const Eigen::MatrixXd& x) {
  if (x.rows() != m.input_dim(side))
    throw ConfigError("crossctx::kema_project: " + std::string(to_string(side)) +
                      " side expects dimension " + std::to_string(m.input_dim(side)) + ", got " +
                      std::to_string(x.rows()));
  if (x.cols() == 0) return Eigen::MatrixXd(m.latent_dim(), 0);
  const bool src = side == Side::source;
  const Eigen::MatrixXd& support = src ? m.support_source : m.support_target;
  const Eigen::MatrixXd k =
      rbf_kernel(support, (src ? m.source_norm : m.target_norm).apply(x),
                 src ? m.bandwidth_source : m.bandwidth_target);
  const Eigen::Index ns = m.support_source.cols();
  const Eigen::MatrixXd block =
      src ? m.dual.topRows(ns) : m.dual.bottomRows(m.dual.rows() - ns);
  return block.transpose() * k;
}

inline Eigen::MatrixXd kema_project(const KemaModel& m, Side side,
                                    const std::vector<TrialFeature>& trials) {
  if (trials.empty()) return Eigen::MatrixXd(m.latent_dim(), 0);
  return kema_project_points(m, side, stack_columns(trials, m.input_dim(side)));
}

/// Model file: blob container with header {"kind": "kema", bandwidths, mu,
/// normalization} and blocks support_source, support_target, dual,
/// eigenvalues.
inline void save_kema(const std::filesystem::path& path, const KemaModel& m,
                      const nlohmann::json& extra = nlohmann::json::object()) {
  BlobFile blob;
  blob.header = extra;
  blob.header["kind"] = "kema";
  blob.header["bandwidth_source"] = m.bandwidth_source;
  blob.header["bandwidth_target"] = m.bandwidth_target;
  blob.header["mu"] = m.mu;
  blob.header["source_normalization"] = m.source_norm.to_json();
  blob.header["target_normalization"] = m.target_norm.to_json();
  blob.add("support_source", m.support_source);
  blob.add("support_target", m.support_target);
  blob.add("dual", m.dual);
  blob.add("eigenvalues", m.eigenvalues);
  write_blob_file(path, blob);
}

inline KemaModel load_kema(const std::filesystem::path& path) {
  const BlobFile blob = read_blob_file(path);
  if (blob.header.value("kind", "") != "kema")
    throw DataError("crossctx::load_kema: '" + path.string() + "' is not a KEMA model");
  KemaModel m;
  m.bandwidth_source = blob.header.at("bandwidth_source").get<double>();
  m.bandwidth_target = blob.header.at("bandwidth_target").get<double>();
  m.mu = blob.header.at("mu").get<double>();
  m.source_norm = Standardizer::from_json(blob.header.at("source_normalization"));
  m.target_norm = Standardizer::from_json(blob.header.at("target_normalization"));
  m.support_source = blob.block("support_source");
  m.support_target = blob.block("support_target");
  m.dual = blob.block("dual");
  m.eigenvalues = blob.block("eigenvalues");
  return m;
}

}  // namespace crossctx
