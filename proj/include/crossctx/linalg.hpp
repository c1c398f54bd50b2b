#pragma once

// Symmetric eigendecomposition by cyclic Jacobi rotations, and PCA on top of it.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crossctx/errors.hpp"

namespace crossctx {

struct SymmetricEigen {
  Eigen::VectorXd values;   ///< ascending
  Eigen::MatrixXd vectors;  ///< column i pairs with values[i]
  int sweeps = 0;
};

inline double off_diagonal_norm(const Eigen::MatrixXd& a) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

/// Flip each column so its largest-magnitude entry is positive (first one
/// wins among ties).
inline void canonicalize_signs(Eigen::MatrixXd& columns) {
  for (Eigen::Index c = 0; c < columns.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < columns.rows(); ++r)
      if (std::abs(columns(r, c)) > std::abs(columns(best, c))) best = r;
    if (columns.rows() > 0 && columns(best, c) < 0.0) columns.col(c) *= -1.0;
  }
}

/// Cyclic Jacobi. Stops once the off-diagonal norm is at most
/// tolerance * ||A||_F; throws NumericalError after max_sweeps sweeps.
inline SymmetricEigen jacobi_eigen(const Eigen::MatrixXd& input, int max_sweeps = 100,
                                   double tolerance = 1e-12) {
  if (input.rows() != input.cols())
    throw ConfigError("crossctx::jacobi_eigen: matrix is not square");
  if (!input.allFinite()) throw NumericalError("crossctx::jacobi_eigen: non-finite input");
  const Eigen::Index n = input.rows();
  Eigen::MatrixXd a = 0.5 * (input + input.transpose());
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double scale = a.norm();
  const double target = tolerance * (scale > 0.0 ? scale : 1.0);

  SymmetricEigen out;
  double* ad = a.data();
  double* vd = v.data();
  auto at = [n](double* d, Eigen::Index r, Eigen::Index c) -> double& { return d[c * n + r]; };

  while (off_diagonal_norm(a) > target) {
    if (out.sweeps >= max_sweeps)
      throw NumericalError("crossctx::jacobi_eigen: no convergence after " +
                           std::to_string(max_sweeps) + " sweeps");
    ++out.sweeps;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = at(ad, p, q);
        if (apq == 0.0) continue;
        const double app = at(ad, p, p);
        const double aqq = at(ad, q, q);
        // Skip rotations that can no longer change the diagonal.
        if (out.sweeps > 3 && std::abs(apq) < 1e-300 + 1e-18 * (std::abs(app) + std::abs(aqq)))
        {
          at(ad, p, q) = 0.0;
          at(ad, q, p) = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // J^T A J touches rows and columns p, q only; update the columns,
        // mirror them into the rows, then set the 2x2 block directly.
        double* colp = ad + p * n;
        double* colq = ad + q * n;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = colp[k];
          const double akq = colq[k];
          colp[k] = c * akp - s * akq;
          colq[k] = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          at(ad, p, k) = colp[k];
          at(ad, q, k) = colq[k];
        }
        at(ad, p, p) = c * c * app - 2.0 * c * s * apq + s * s * aqq;
        at(ad, q, q) = s * s * app + 2.0 * c * s * apq + c * c * aqq;
        at(ad, p, q) = 0.0;
        at(ad, q, p) = 0.0;
        double* vp = vd + p * n;
        double* vq = vd + q * n;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double x = vp[k];
          const double y = vq[k];
          vp[k] = c * x - s * y;
          vq[k] = s * x + c * y;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i) < a(j, j); });
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.values[k] = a(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(k)]);
    out.vectors.col(k) = v.col(order[static_cast<std::size_t>(k)]);
  }
  return out;
}

struct PcaResult {
  Eigen::MatrixXd coordinates;  ///< one row per observation
  Eigen::MatrixXd components;   ///< one column per component
  Eigen::VectorXd explained_variance;
};

/// Rows are observations. Mean-centered, top components of the covariance,
/// component signs canonicalized.
inline PcaResult pca(const Eigen::MatrixXd& rows, int n_components = 2) {
  if (rows.rows() < 1 || n_components < 1 || n_components > rows.cols())
    throw ConfigError("crossctx::pca: invalid input shape or component count");
  const Eigen::RowVectorXd mean = rows.colwise().mean();
  const Eigen::MatrixXd centered = rows.rowwise() - mean;
  const double denom = rows.rows() > 1 ? static_cast<double>(rows.rows() - 1) : 1.0;
  const Eigen::MatrixXd cov = centered.transpose() * centered / denom;
  const SymmetricEigen eig = jacobi_eigen(cov);
  const Eigen::Index d = cov.rows();
  PcaResult out;
  out.components.resize(d, n_components);
  out.explained_variance.resize(n_components);
  for (int k = 0; k < n_components; ++k) {
    out.components.col(k) = eig.vectors.col(d - 1 - k);
    out.explained_variance[k] = std::max(0.0, eig.values[d - 1 - k]);
  }
  canonicalize_signs(out.components);
  out.coordinates = centered * out.components;
  return out;
}

}  // namespace crossctx
