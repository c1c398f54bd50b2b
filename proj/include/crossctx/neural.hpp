#pragma once

// Feedforward rectifier networks with exact backpropagation, Adam, triplet
// and softmax cross-entropy losses, and a finite-difference gradient checker.
//
// Batches are column-major: one example per column. Gradients are held in an
// Mlp of the same shape as the parameters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crossctx/blob_io.hpp"
#include "crossctx/errors.hpp"
#include "crossctx/rng.hpp"

namespace crossctx {

/// Rectifier on hidden layers, identity on the output layer.
/// weights[l] is (layer_sizes[l+1] x layer_sizes[l]).
struct Mlp {
  std::vector<int> layer_sizes;
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static Mlp zeros(std::vector<int> sizes) {
    if (sizes.size() < 2) throw ConfigError("crossctx::Mlp: need at least input and output sizes");
    for (int s : sizes)
      if (s < 1) throw ConfigError("crossctx::Mlp: layer sizes must be positive");
    Mlp m;
    m.layer_sizes = std::move(sizes);
    for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
      m.weights.push_back(Eigen::MatrixXd::Zero(m.layer_sizes[l + 1], m.layer_sizes[l]));
      m.biases.push_back(Eigen::VectorXd::Zero(m.layer_sizes[l + 1]));
    }
    return m;
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static Mlp initialized(std::vector<int> sizes, std::uint64_t seed) {
    Mlp m = zeros(std::move(sizes));
    Rng rng(derive_seed(seed, {fnv1a64("mlp_init")}));
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(m.layer_sizes[l]));
      auto& w = m.weights[l];
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-bound, bound);
      for (Eigen::Index r = 0; r < m.biases[l].size(); ++r) m.biases[l][r] = rng.uniform(-bound, bound);
    }
    return m;
  }

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return weights.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l)
      n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    return n;
  }

  Mlp zeros_like() const { return zeros(layer_sizes); }

  void set_zero() {
    for (auto& w : weights) w.setZero();
    for (auto& b : biases) b.setZero();
  }

  /// this += alpha * other
  void axpy(double alpha, const Mlp& other) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += alpha * other.weights[l];
      biases[l] += alpha * other.biases[l];
    }
  }

  void scale(double alpha) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] *= alpha;
      biases[l] *= alpha;
    }
  }

  bool all_finite() const {
    for (std::size_t l = 0; l < weights.size(); ++l)
      if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    return true;
  }

  bool same_shape(const Mlp& o) const { return layer_sizes == o.layer_sizes; }

  bool operator==(const Mlp& o) const {
    if (layer_sizes != o.layer_sizes) return false;
    for (std::size_t l = 0; l < weights.size(); ++l)
      if (weights[l] != o.weights[l] || biases[l] != o.biases[l]) return false;
    return true;
  }

  /// Flat layout: for each layer, weights row-major then biases.
  Eigen::VectorXd flatten() const {
    Eigen::VectorXd flat(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      for (Eigen::Index r = 0; r < weights[l].rows(); ++r)
        for (Eigen::Index c = 0; c < weights[l].cols(); ++c) flat[k++] = weights[l](r, c);
      for (Eigen::Index r = 0; r < biases[l].size(); ++r) flat[k++] = biases[l][r];
    }
    return flat;
  }

  static Mlp unflatten(std::vector<int> sizes, const Eigen::VectorXd& flat) {
    Mlp m = zeros(std::move(sizes));
    if (static_cast<std::size_t>(flat.size()) != m.parameter_count())
      throw DataError("crossctx::Mlp::unflatten: expected " + std::to_string(m.parameter_count()) +
                      " parameters, got " + std::to_string(flat.size()));
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      for (Eigen::Index r = 0; r < m.weights[l].rows(); ++r)
        for (Eigen::Index c = 0; c < m.weights[l].cols(); ++c) m.weights[l](r, c) = flat[k++];
      for (Eigen::Index r = 0; r < m.biases[l].size(); ++r) m.biases[l][r] = flat[k++];
    }
    return m;
  }
};

/// activations[0] is the input batch, activations.back() the output.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> activations;
};

inline Eigen::MatrixXd forward_batch(const Mlp& net, const Eigen::MatrixXd& x,
                                     ForwardCache* cache = nullptr) {
  if (x.rows() != net.input_dim())
    throw ConfigError("crossctx::forward_batch: input dimension " + std::to_string(x.rows()) +
                      " does not match network input " + std::to_string(net.input_dim()));
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(x);
  }
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    Eigen::MatrixXd z = net.weights[l] * a;
    z.colwise() += net.biases[l];
    if (l + 1 < net.num_layers()) z = z.cwiseMax(0.0);
    a = std::move(z);
    if (cache) cache->activations.push_back(a);
  }
  return a;
}

inline Eigen::VectorXd mlp_forward(const Mlp& net, const Eigen::VectorXd& input) {
  if (input.size() != net.input_dim())
    throw ConfigError("crossctx::mlp_forward: input dimension " + std::to_string(input.size()) +
                      " does not match network input " + std::to_string(net.input_dim()));
  return forward_batch(net, input);
}

/// Accumulates (sums over the batch) parameter gradients given dL/d(output).
inline void backward_batch(const Mlp& net, const ForwardCache& cache, Eigen::MatrixXd grad_out,
                           Mlp& grads) {
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    const Eigen::MatrixXd& a_in = cache.activations[l];
    grads.weights[l].noalias() += grad_out * a_in.transpose();
    grads.biases[l] += grad_out.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd g = net.weights[l].transpose() * grad_out;
    // Rectifier derivative: 1 where the unit was active.
    g = g.cwiseProduct((a_in.array() > 0.0).cast<double>().matrix());
    grad_out = std::move(g);
  }
}

/// Smallest |pre-activation| over hidden units for a batch; gradient checks
/// near zero are unreliable at the rectifier kink.
inline double min_abs_preactivation(const Mlp& net, const Eigen::MatrixXd& x) {
  double best = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l + 1 < net.num_layers(); ++l) {
    Eigen::MatrixXd z = net.weights[l] * a;
    z.colwise() += net.biases[l];
    best = std::min(best, z.cwiseAbs().minCoeff());
    a = z.cwiseMax(0.0);
  }
  return best;
}

struct TripletLossResult {
  double loss = 0.0;
  Eigen::VectorXd grad_anchor;
  Eigen::VectorXd grad_positive;
  Eigen::VectorXd grad_negative;
};

/// max(0, |a - p| - |a - n| + margin) with Euclidean distances. The gradient
/// of a distance at zero is taken as the zero vector; an inactive hinge gives
/// zero gradients.
inline TripletLossResult triplet_loss(const Eigen::VectorXd& a, const Eigen::VectorXd& p,
                                      const Eigen::VectorXd& n, double margin) {
  if (a.size() != p.size() || a.size() != n.size())
    throw ConfigError("crossctx::triplet_loss: anchor, positive and negative dimensions differ");
  if (margin < 0.0) throw ConfigError("crossctx::triplet_loss: margin must be non-negative");
  TripletLossResult r;
  r.grad_anchor = Eigen::VectorXd::Zero(a.size());
  r.grad_positive = Eigen::VectorXd::Zero(a.size());
  r.grad_negative = Eigen::VectorXd::Zero(a.size());
  const Eigen::VectorXd ap = a - p;
  const Eigen::VectorXd an = a - n;
  const double d_ap = ap.norm();
  const double d_an = an.norm();
  const double value = d_ap - d_an + margin;
  if (value <= 0.0) return r;
  r.loss = value;
  if (d_ap > 0.0) {
    r.grad_anchor += ap / d_ap;
    r.grad_positive -= ap / d_ap;
  }
  if (d_an > 0.0) {
    r.grad_anchor -= an / d_an;
    r.grad_negative += an / d_an;
  }
  return r;
}

struct SoftmaxResult {
  double loss = 0.0;            ///< mean cross-entropy over the batch
  Eigen::MatrixXd grad_logits;  ///< d(mean loss)/d(logits)
};

inline Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double mx = logits.col(c).maxCoeff();
    p.col(c) = (logits.col(c).array() - mx).exp().matrix();
    p.col(c) /= p.col(c).sum();
  }
  return p;
}

inline SoftmaxResult softmax_cross_entropy(const Eigen::MatrixXd& logits,
                                           const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.cols())
    throw ConfigError("crossctx::softmax_cross_entropy: label count does not match batch");
  SoftmaxResult r;
  r.grad_logits = softmax_columns(logits);
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const int y = labels[static_cast<std::size_t>(c)];
    if (y < 0 || y >= logits.rows()) throw ConfigError("crossctx::softmax_cross_entropy: label out of range");
    r.loss -= std::log(std::max(r.grad_logits(y, c), 1e-300)) * inv_n;
    r.grad_logits(y, c) -= 1.0;
  }
  r.grad_logits *= inv_n;
  return r;
}

struct AdamState {
  long step = 0;
  Mlp m;
  Mlp v;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(const Mlp& params, double lr = 1e-4) {
    AdamState s;
    s.m = params.zeros_like();
    s.v = params.zeros_like();
    s.learning_rate = lr;
    return s;
  }
};

/// Bias-corrected Adam update, in place. The step counter is incremented first.
inline void adam_step(Mlp& params, const Mlp& grads, AdamState& state) {
  if (!params.same_shape(grads) || !params.same_shape(state.m) || !params.same_shape(state.v))
    throw ConfigError("crossctx::adam_step: parameter, gradient and state shapes differ");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseAbs2();
    p.array() -= state.learning_rate * (m.array() / c1) /
                 ((v.array() / c2).sqrt() + state.epsilon);
  };
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    update(params.weights[l], grads.weights[l], state.m.weights[l], state.v.weights[l]);
    update(params.biases[l], grads.biases[l], state.m.biases[l], state.v.biases[l]);
  }
}

/// Location of one scalar parameter.
struct ParamRef {
  std::size_t layer = 0;
  bool bias = false;
  Eigen::Index row = 0;
  Eigen::Index col = 0;

  bool operator==(const ParamRef&) const = default;
};

struct GradientCheckReport {
  double max_rel_error = 0.0;
  ParamRef worst;
  std::vector<ParamRef> flagged;  ///< parameters whose error exceeds the tolerance
  std::size_t checked = 0;

  bool passed() const { return flagged.empty(); }
};

/// Loss with analytic gradient; must write the full gradient into *grads when
/// grads is non-null.
using LossFunction = std::function<double(const Mlp& params, Mlp* grads)>;

/// Central differences with step h against the analytic gradient; relative
/// error |g_a - g_fd| / max(1, |g_a| + |g_fd|).
inline GradientCheckReport gradient_check(const Mlp& params, const LossFunction& loss_fn,
                                          double tolerance, double h = 1e-5) {
  GradientCheckReport report;
  Mlp analytic = params.zeros_like();
  loss_fn(params, &analytic);
  Mlp probe = params;
  auto check = [&](double& slot, double g_a, ParamRef ref) {
    const double saved = slot;
    slot = saved + h;
    const double up = loss_fn(probe, nullptr);
    slot = saved - h;
    const double down = loss_fn(probe, nullptr);
    slot = saved;
    const double g_fd = (up - down) / (2.0 * h);
    const double err = std::abs(g_a - g_fd) / std::max(1.0, std::abs(g_a) + std::abs(g_fd));
    ++report.checked;
    if (err > report.max_rel_error || report.checked == 1) {
      report.max_rel_error = std::max(report.max_rel_error, err);
      report.worst = ref;
    }
    if (err > tolerance) report.flagged.push_back(ref);
  };
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    auto& w = probe.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        check(w(r, c), analytic.weights[l](r, c), {l, false, r, c});
    auto& b = probe.biases[l];
    for (Eigen::Index r = 0; r < b.size(); ++r) check(b[r], analytic.biases[l][r], {l, true, r, 0});
  }
  return report;
}

/// Checkpoint: blob container with header {"kind": "mlp", "layer_sizes",
/// "activation": "relu", "output": "identity", "seed", ...extra} and one
/// "parameters" block (1 x N) in Mlp::flatten order.
inline BlobFile mlp_to_blob(const Mlp& net, std::uint64_t seed,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  BlobFile blob;
  blob.header = extra;
  blob.header["kind"] = "mlp";
  blob.header["layer_sizes"] = net.layer_sizes;
  blob.header["activation"] = "relu";
  blob.header["output"] = "identity";
  blob.header["seed"] = seed;
  blob.add("parameters", net.flatten().transpose());
  return blob;
}

inline Mlp mlp_from_blob(const BlobFile& blob) {
  if (blob.header.value("kind", "") != "mlp")
    throw DataError("crossctx::mlp_from_blob: not an mlp checkpoint");
  const auto sizes = blob.header.at("layer_sizes").get<std::vector<int>>();
  const Eigen::MatrixXd& p = blob.block("parameters");
  return Mlp::unflatten(sizes, p.transpose());
}

inline void save_mlp(const std::filesystem::path& path, const Mlp& net, std::uint64_t seed,
                     const nlohmann::json& extra = nlohmann::json::object()) {
  write_blob_file(path, mlp_to_blob(net, seed, extra));
}

inline Mlp load_mlp(const std::filesystem::path& path) { return mlp_from_blob(read_blob_file(path)); }

}  // namespace crossctx
