#pragma once

// Shared latent space learned with a triplet objective.
//
// Anchors always come from the source context. For every anchor trial four
// triplets are drawn, one per branch of {positive from source, positive from
// target} x {negative from source, negative from target}; each branch samples
// a single example uniformly from its candidates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "crossctx/data_model.hpp"
#include "crossctx/errors.hpp"
#include "crossctx/neural.hpp"
#include "crossctx/rng.hpp"

namespace crossctx {

enum class Side : std::uint8_t { source, target };

inline std::string_view to_string(Side s) { return s == Side::source ? "source" : "target"; }

struct TrialRef {
  Side side = Side::source;
  std::string object;
  int trial_index = 0;

  auto operator<=>(const TrialRef&) const = default;
};

enum class TripletRule : std::uint8_t {
  positive_source_negative_source,
  positive_source_negative_target,
  positive_target_negative_source,
  positive_target_negative_target,
};

struct TripletSpec {
  TrialRef anchor;
  TrialRef positive;
  TrialRef negative;
  TripletRule rule{};
};

/// Label and side constraints every triplet must satisfy.
inline bool triplet_is_valid(const TripletSpec& t) {
  if (t.anchor.side != Side::source) return false;
  if (t.positive.object != t.anchor.object) return false;
  if (t.negative.object == t.anchor.object) return false;
  if (t.positive.side == Side::source && t.positive.trial_index == t.anchor.trial_index)
    return false;
  const bool pos_src = t.positive.side == Side::source;
  const bool neg_src = t.negative.side == Side::source;
  switch (t.rule) {
    case TripletRule::positive_source_negative_source: return pos_src && neg_src;
    case TripletRule::positive_source_negative_target: return pos_src && !neg_src;
    case TripletRule::positive_target_negative_source: return !pos_src && neg_src;
    case TripletRule::positive_target_negative_target: return !pos_src && !neg_src;
  }
  return false;
}

namespace detail {
inline std::map<std::string, std::vector<int>> trial_indices_by_object(
    const std::vector<TrialFeature>& trials) {
  std::map<std::string, std::vector<int>> out;
  for (const auto& t : trials) out[t.object].push_back(t.trial_index);
  return out;
}
}  // namespace detail

/// Four triplets per source trial, sampled with the given seed.
inline std::vector<TripletSpec> build_triplets(const std::vector<TrialFeature>& source,
                                               const std::vector<TrialFeature>& target,
                                               std::uint64_t seed) {
  const auto src = detail::trial_indices_by_object(source);
  const auto tgt = detail::trial_indices_by_object(target);
  if (src.size() < 2)
    throw DataError("crossctx::build_triplets: need at least 2 objects to form negatives");
  for (const auto& [object, idx] : src) {
    if (idx.size() < 2)
      throw DataError("crossctx::build_triplets: object '" + object + "' has " +
                      std::to_string(idx.size()) + " source trial(s); need at least 2");
    if (!tgt.count(object))
      throw DataError("crossctx::build_triplets: object '" + object + "' has no target trials");
  }
  for (const auto& [object, idx] : tgt)
    if (!src.count(object))
      throw DataError("crossctx::build_triplets: target object '" + object +
                      "' has no source trials");

  Rng rng(derive_seed(seed, {fnv1a64("build_triplets")}));
  auto pick_negative = [&](const std::map<std::string, std::vector<int>>& pool, Side side,
                           const std::string& exclude) {
    std::size_t total = 0;
    for (const auto& [o, idx] : pool)
      if (o != exclude) total += idx.size();
    std::size_t k = static_cast<std::size_t>(rng.below(total));
    for (const auto& [o, idx] : pool) {
      if (o == exclude) continue;
      if (k < idx.size()) return TrialRef{side, o, idx[k]};
      k -= idx.size();
    }
    return TrialRef{};
  };

  std::vector<TripletSpec> out;
  out.reserve(source.size() * 4);
  for (const auto& anchor_trial : source) {
    const TrialRef anchor{Side::source, anchor_trial.object, anchor_trial.trial_index};
    const auto& same_src = src.at(anchor.object);
    const auto& same_tgt = tgt.at(anchor.object);
    for (int branch = 0; branch < 4; ++branch) {
      TripletSpec t;
      t.anchor = anchor;
      t.rule = static_cast<TripletRule>(branch);
      const bool pos_src = branch < 2;
      const bool neg_src = branch % 2 == 0;
      if (pos_src) {
        // Uniform over the other source trials of the same object.
        std::size_t k = static_cast<std::size_t>(rng.below(same_src.size() - 1));
        std::size_t self = static_cast<std::size_t>(
            std::find(same_src.begin(), same_src.end(), anchor.trial_index) - same_src.begin());
        if (k >= self) ++k;
        t.positive = {Side::source, anchor.object, same_src[k]};
      } else {
        t.positive = {Side::target, anchor.object,
                      same_tgt[static_cast<std::size_t>(rng.below(same_tgt.size()))]};
      }
      t.negative = neg_src ? pick_negative(src, Side::source, anchor.object)
                           : pick_negative(tgt, Side::target, anchor.object);
      out.push_back(std::move(t));
    }
  }
  return out;
}

/// Per-dimension z-score; dimensions with zero spread are only centered.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Standardizer identity(Eigen::Index dim) {
    return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
  }

  static Standardizer fit(const Eigen::MatrixXd& columns) {
    Standardizer s;
    const double n = static_cast<double>(columns.cols());
    s.mean = columns.rowwise().mean();
    const Eigen::MatrixXd centered = columns.colwise() - s.mean;
    s.scale = (centered.cwiseAbs2().rowwise().sum() / n).cwiseSqrt();
    for (Eigen::Index i = 0; i < s.scale.size(); ++i)
      if (!(s.scale[i] > 1e-12)) s.scale[i] = 1.0;
    return s;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& columns) const {
    return (columns.colwise() - mean).array().colwise() / scale.array();
  }

  nlohmann::json to_json() const {
    return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
            {"scale", std::vector<double>(scale.data(), scale.data() + scale.size())}};
  }

  static Standardizer from_json(const nlohmann::json& j) {
    const auto m = j.at("mean").get<std::vector<double>>();
    const auto s = j.at("scale").get<std::vector<double>>();
    Standardizer out;
    out.mean = Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
    out.scale = Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
    return out;
  }
};

inline Eigen::MatrixXd stack_columns(const std::vector<TrialFeature>& trials, Eigen::Index dim) {
  Eigen::MatrixXd x(dim, static_cast<Eigen::Index>(trials.size()));
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (trials[i].values.size() != dim)
      throw ConfigError("crossctx::stack_columns: trial of dimension " +
                        std::to_string(trials[i].values.size()) + ", expected " +
                        std::to_string(dim));
    x.col(static_cast<Eigen::Index>(i)) = trials[i].values;
  }
  return x;
}

struct TlHyper {
  int epochs = 500;
  double learning_rate = 1e-4;
  double margin = 1.0;
  int latent_dim = 125;
  std::vector<int> hidden = {1000, 500, 250};
  int batch_size = 32;
  /// Draw a fresh triplet set every epoch; otherwise one set for all epochs.
  bool resample_triplets = true;
  bool standardize = true;

  nlohmann::json to_json() const {
    return {{"epochs", epochs},       {"learning_rate", learning_rate},
            {"margin", margin},       {"latent_dim", latent_dim},
            {"hidden", hidden},       {"batch_size", batch_size},
            {"resample_triplets", resample_triplets}, {"standardize", standardize}};
  }
};

/// One network when both contexts share an input dimension, otherwise one
/// per side.
struct EncoderPair {
  std::vector<Mlp> nets;
  Standardizer source_norm;
  Standardizer target_norm;
  std::vector<double> loss_trace;  ///< mean triplet loss per epoch, before the epoch's updates
  double final_loss = 0.0;         ///< mean loss on the last epoch's triplets after training

  bool shared() const { return nets.size() == 1; }
  const Mlp& net(Side s) const { return nets[shared() || s == Side::source ? 0 : 1]; }
  const Standardizer& norm(Side s) const { return s == Side::source ? source_norm : target_norm; }
  int latent_dim() const { return nets.front().output_dim(); }
  int input_dim(Side s) const { return net(s).input_dim(); }
};

/// Latent vectors (one column per trial, input order).
inline Eigen::MatrixXd project(const EncoderPair& enc, Side side,
                               const std::vector<TrialFeature>& trials) {
  const int dim = enc.input_dim(side);
  if (trials.empty()) return Eigen::MatrixXd(enc.latent_dim(), 0);
  for (const auto& t : trials)
    if (t.values.size() != dim)
      throw ConfigError("crossctx::project: " + std::string(to_string(side)) +
                        " encoder expects dimension " + std::to_string(dim) + ", got " +
                        std::to_string(t.values.size()));
  return forward_batch(enc.net(side), enc.norm(side).apply(stack_columns(trials, dim)));
}

namespace detail {

/// Resolves TrialRefs into columns of the standardized pools.
struct TripletPools {
  Eigen::MatrixXd source;
  Eigen::MatrixXd target;
  std::map<std::pair<std::string, int>, Eigen::Index> source_col;
  std::map<std::pair<std::string, int>, Eigen::Index> target_col;

  Eigen::Index column(const TrialRef& r) const {
    const auto& m = r.side == Side::source ? source_col : target_col;
    auto it = m.find({r.object, r.trial_index});
    if (it == m.end())
      throw DataError("crossctx::train_encoder: unresolvable triplet reference " + r.object +
                      " trial " + std::to_string(r.trial_index));
    return it->second;
  }
};

/// Forward/backward over a batch of triplets. grads (one per net) receive the
/// gradient of the batch-mean loss when non-null.
inline double triplet_batch(const EncoderPair& enc, const TripletPools& pools,
                            const std::vector<TripletSpec>& triplets,
                            const std::vector<std::size_t>& batch, double margin,
                            std::vector<Mlp>* grads) {
  const std::size_t n_nets = enc.nets.size();
  // Gather, per net, the columns (triplet slot, role) it must process.
  std::vector<std::vector<std::pair<std::size_t, int>>> slots(n_nets);
  auto net_of = [&](Side s) -> std::size_t { return enc.shared() || s == Side::source ? 0 : 1; };
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& t = triplets[batch[i]];
    slots[net_of(t.anchor.side)].push_back({i, 0});
    slots[net_of(t.positive.side)].push_back({i, 1});
    slots[net_of(t.negative.side)].push_back({i, 2});
  }
  std::vector<ForwardCache> caches(n_nets);
  std::vector<Eigen::MatrixXd> outputs(n_nets);
  // where[i][role] = (net, column)
  std::vector<std::array<std::pair<std::size_t, Eigen::Index>, 3>> where(batch.size());
  for (std::size_t k = 0; k < n_nets; ++k) {
    if (slots[k].empty()) continue;
    Eigen::MatrixXd x(enc.nets[k].input_dim(), static_cast<Eigen::Index>(slots[k].size()));
    for (std::size_t c = 0; c < slots[k].size(); ++c) {
      const auto [i, role] = slots[k][c];
      const auto& t = triplets[batch[i]];
      const TrialRef& r = role == 0 ? t.anchor : role == 1 ? t.positive : t.negative;
      const Eigen::MatrixXd& pool = r.side == Side::source ? pools.source : pools.target;
      x.col(static_cast<Eigen::Index>(c)) = pool.col(pools.column(r));
      where[i][static_cast<std::size_t>(role)] = {k, static_cast<Eigen::Index>(c)};
    }
    outputs[k] = forward_batch(enc.nets[k], x, grads ? &caches[k] : nullptr);
  }

  std::vector<Eigen::MatrixXd> grad_out(n_nets);
  for (std::size_t k = 0; k < n_nets; ++k)
    grad_out[k] = Eigen::MatrixXd::Zero(outputs[k].rows(), outputs[k].cols());
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto [ka, ca] = where[i][0];
    const auto [kp, cp] = where[i][1];
    const auto [kn, cn] = where[i][2];
    const auto r = triplet_loss(outputs[ka].col(ca), outputs[kp].col(cp), outputs[kn].col(cn),
                                margin);
    loss_sum += r.loss;
    if (grads && r.loss > 0.0) {
      grad_out[ka].col(ca) += inv_b * r.grad_anchor;
      grad_out[kp].col(cp) += inv_b * r.grad_positive;
      grad_out[kn].col(cn) += inv_b * r.grad_negative;
    }
  }
  if (grads)
    for (std::size_t k = 0; k < n_nets; ++k)
      if (!slots[k].empty()) backward_batch(enc.nets[k], caches[k], grad_out[k], (*grads)[k]);
  return loss_sum;
}

inline TripletPools make_pools(const EncoderPair& enc, const std::vector<TrialFeature>& source,
                               const std::vector<TrialFeature>& target) {
  TripletPools p;
  p.source = enc.source_norm.apply(stack_columns(source, enc.input_dim(Side::source)));
  p.target = enc.target_norm.apply(stack_columns(target, enc.input_dim(Side::target)));
  for (std::size_t i = 0; i < source.size(); ++i)
    p.source_col[{source[i].object, source[i].trial_index}] = static_cast<Eigen::Index>(i);
  for (std::size_t i = 0; i < target.size(); ++i)
    p.target_col[{target[i].object, target[i].trial_index}] = static_cast<Eigen::Index>(i);
  return p;
}

}  // namespace detail

/// Mean triplet loss of fixed encoders over a triplet set.
inline double mean_triplet_loss(const EncoderPair& enc, const std::vector<TrialFeature>& source,
                                const std::vector<TrialFeature>& target,
                                const std::vector<TripletSpec>& triplets, double margin) {
  if (triplets.empty()) return 0.0;
  const auto pools = detail::make_pools(enc, source, target);
  std::vector<std::size_t> all(triplets.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return detail::triplet_batch(enc, pools, triplets, all, margin, nullptr) /
         static_cast<double>(triplets.size());
}

/// Trains the projection on shared-object trials of both contexts (measured
/// and augmented). Deterministic in `seed`.
inline EncoderPair train_encoder(const std::vector<TrialFeature>& source,
                                 const std::vector<TrialFeature>& target, int source_dim,
                                 int target_dim, const TlHyper& hyper, std::uint64_t seed) {
  if (hyper.epochs < 0 || hyper.learning_rate <= 0.0 || hyper.margin < 0.0 ||
      hyper.latent_dim < 1 || hyper.batch_size < 1)
    throw ConfigError("crossctx::train_encoder: invalid hyperparameters");

  EncoderPair enc;
  auto sizes = [&](int in) {
    std::vector<int> s{in};
    s.insert(s.end(), hyper.hidden.begin(), hyper.hidden.end());
    s.push_back(hyper.latent_dim);
    return s;
  };
  enc.nets.push_back(Mlp::initialized(sizes(source_dim), derive_seed(seed, {0})));
  if (source_dim != target_dim)
    enc.nets.push_back(Mlp::initialized(sizes(target_dim), derive_seed(seed, {1})));

  if (hyper.standardize) {
    enc.source_norm = Standardizer::fit(stack_columns(source, source_dim));
    enc.target_norm = Standardizer::fit(stack_columns(target, target_dim));
  } else {
    enc.source_norm = Standardizer::identity(source_dim);
    enc.target_norm = Standardizer::identity(target_dim);
  }
  const auto pools = detail::make_pools(enc, source, target);

  std::vector<AdamState> adam;
  for (const auto& n : enc.nets) adam.push_back(AdamState::for_params(n, hyper.learning_rate));
  std::vector<Mlp> grads;
  for (const auto& n : enc.nets) grads.push_back(n.zeros_like());

  Rng order_rng(derive_seed(seed, {fnv1a64("batch_order")}));
  std::vector<TripletSpec> triplets = build_triplets(source, target, derive_seed(seed, {2, 0}));
  std::vector<std::size_t> order(triplets.size());
  const std::size_t bs = static_cast<std::size_t>(hyper.batch_size);

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    if (hyper.resample_triplets && epoch > 0)
      triplets = build_triplets(source, target,
                                derive_seed(seed, {2, static_cast<std::uint64_t>(epoch)}));
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(
                                                         std::min(order.size(), start + bs)));
      for (auto& g : grads) g.set_zero();
      epoch_loss += detail::triplet_batch(enc, pools, triplets, batch, hyper.margin, &grads);
      for (std::size_t k = 0; k < enc.nets.size(); ++k) adam_step(enc.nets[k], grads[k], adam[k]);
    }
    const double mean = epoch_loss / static_cast<double>(triplets.size());
    if (!std::isfinite(mean))
      throw NumericalError("crossctx::train_encoder: non-finite loss at epoch " +
                           std::to_string(epoch));
    enc.loss_trace.push_back(mean);
  }
  enc.final_loss = mean_triplet_loss(enc, source, target, triplets, hyper.margin);
  if (!std::isfinite(enc.final_loss))
    throw NumericalError("crossctx::train_encoder: non-finite loss after training");
  return enc;
}

/// Writes `<stem>.source.ckpt` (and `<stem>.target.ckpt` for separate
/// networks) plus the `<stem>.json` sidecar with contexts, seed, hyper and
/// normalization statistics.
inline void save_encoders(const std::filesystem::path& stem, const EncoderPair& enc,
                          std::uint64_t seed, const TlHyper& hyper,
                          const nlohmann::json& contexts) {
  save_mlp(stem.string() + ".source.ckpt", enc.nets[0], seed);
  if (!enc.shared()) save_mlp(stem.string() + ".target.ckpt", enc.nets[1], seed);
  nlohmann::json side = {{"contexts", contexts},
                         {"seed", seed},
                         {"shared_network", enc.shared()},
                         {"hyper", hyper.to_json()},
                         {"source_normalization", enc.source_norm.to_json()},
                         {"target_normalization", enc.target_norm.to_json()}};
  io::write_text_file(stem.string() + ".json", side.dump(2) + "\n");
}

inline EncoderPair load_encoders(const std::filesystem::path& stem) {
  const auto side = nlohmann::json::parse(io::read_text_file(stem.string() + ".json"));
  EncoderPair enc;
  enc.nets.push_back(load_mlp(stem.string() + ".source.ckpt"));
  if (!side.at("shared_network").get<bool>()) enc.nets.push_back(load_mlp(stem.string() + ".target.ckpt"));
  enc.source_norm = Standardizer::from_json(side.at("source_normalization"));
  enc.target_norm = Standardizer::from_json(side.at("target_normalization"));
  return enc;
}

}  // namespace crossctx
