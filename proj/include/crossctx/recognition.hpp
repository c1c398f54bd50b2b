#pragma once

// Object classifier (one rectifier hidden layer, softmax output), score
// fusion across modalities and accuracy bookkeeping.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "crossctx/data_model.hpp"
#include "crossctx/errors.hpp"
#include "crossctx/neural.hpp"
#include "crossctx/rng.hpp"
#include "crossctx/transfer_tl.hpp"

namespace crossctx {

struct ClassifierHyper {
  int hidden = 100;
  int epochs = 500;
  double learning_rate = 1e-4;
  int batch_size = 32;
  bool standardize = true;

  nlohmann::json to_json() const {
    return {{"hidden", hidden}, {"epochs", epochs}, {"learning_rate", learning_rate},
            {"batch_size", batch_size}, {"standardize", standardize}};
  }
};

struct Classifier {
  Mlp net;
  Standardizer norm;
  int classes = 0;
  double training_accuracy = 0.0;  ///< percent, on the classifier's own training set

  /// Softmax probabilities, classes x examples.
  Eigen::MatrixXd scores(const Eigen::MatrixXd& x) const {
    return softmax_columns(forward_batch(net, norm.apply(x)));
  }
};

/// Argmax per column; ties go to the lowest class index.
inline std::vector<int> argmax_columns(const Eigen::MatrixXd& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.cols()));
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < scores.rows(); ++r)
      if (scores(r, c) > scores(best, c)) best = r;
    out[static_cast<std::size_t>(c)] = static_cast<int>(best);
  }
  return out;
}

/// correct / total x 100.
inline double accuracy_percent(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size())
    throw ConfigError("crossctx::accuracy_percent: prediction and truth lengths differ");
  if (truth.empty()) throw ConfigError("crossctx::accuracy_percent: empty test set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i] ? 1 : 0;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(truth.size());
}

/// Baseline accuracy minus transfer accuracy; negative when transfer wins.
inline double accuracy_delta(double baseline, double transfer) {
  if (baseline < 0.0 || baseline > 100.0 || transfer < 0.0 || transfer > 100.0)
    throw ConfigError("crossctx::accuracy_delta: accuracies must lie in [0, 100]");
  return baseline - transfer;
}

/// Softmax cross-entropy with Adam over shuffled mini-batches.
inline Classifier train_classifier(const Eigen::MatrixXd& x, const std::vector<int>& labels,
                                   int n_classes, const ClassifierHyper& hyper,
                                   std::uint64_t seed) {
  if (static_cast<Eigen::Index>(labels.size()) != x.cols())
    throw ConfigError("crossctx::train_classifier: label count does not match examples");
  if (n_classes < 1) throw ConfigError("crossctx::train_classifier: need at least one class");
  std::vector<int> per_class(static_cast<std::size_t>(n_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= n_classes) throw ConfigError("crossctx::train_classifier: label out of range");
    ++per_class[static_cast<std::size_t>(y)];
  }
  for (int k = 0; k < n_classes; ++k)
    if (per_class[static_cast<std::size_t>(k)] == 0)
      throw DataError("crossctx::train_classifier: class " + std::to_string(k) +
                      " has no training examples");

  Classifier clf;
  clf.classes = n_classes;
  clf.norm = hyper.standardize ? Standardizer::fit(x) : Standardizer::identity(x.rows());
  const Eigen::MatrixXd xs = clf.norm.apply(x);
  clf.net = Mlp::initialized({static_cast<int>(x.rows()), hyper.hidden, n_classes},
                             derive_seed(seed, {fnv1a64("classifier")}));
  AdamState adam = AdamState::for_params(clf.net, hyper.learning_rate);
  Mlp grads = clf.net.zeros_like();
  Rng rng(derive_seed(seed, {fnv1a64("classifier_order")}));

  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.cols()));
  const std::size_t bs = static_cast<std::size_t>(std::max(1, hyper.batch_size));
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t stop = std::min(order.size(), start + bs);
      Eigen::MatrixXd xb(xs.rows(), static_cast<Eigen::Index>(stop - start));
      std::vector<int> yb;
      for (std::size_t i = start; i < stop; ++i) {
        xb.col(static_cast<Eigen::Index>(i - start)) = xs.col(order[i]);
        yb.push_back(labels[static_cast<std::size_t>(order[i])]);
      }
      ForwardCache cache;
      const Eigen::MatrixXd logits = forward_batch(clf.net, xb, &cache);
      const SoftmaxResult r = softmax_cross_entropy(logits, yb);
      if (!std::isfinite(r.loss))
        throw NumericalError("crossctx::train_classifier: non-finite loss at epoch " +
                             std::to_string(epoch));
      grads.set_zero();
      backward_batch(clf.net, cache, r.grad_logits, grads);
      adam_step(clf.net, grads, adam);
    }
  }
  clf.training_accuracy = accuracy_percent(argmax_columns(clf.scores(x)), labels);
  return clf;
}

/// Weighted sum of per-modality score matrices (classes x trials) with
/// weights normalized to sum to one, then argmax with ties to the lowest
/// class index.
inline std::vector<int> fuse_scores(const std::vector<Eigen::MatrixXd>& scores,
                                    const std::vector<double>& weights) {
  if (scores.empty() || scores.size() != weights.size())
    throw ConfigError("crossctx::fuse_scores: need one weight per score matrix");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w)) throw ConfigError("crossctx::fuse_scores: weights must be >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw ConfigError("crossctx::fuse_scores: at least one weight must be > 0");
  for (const auto& s : scores)
    if (s.rows() != scores.front().rows() || s.cols() != scores.front().cols())
      throw DataError("crossctx::fuse_scores: score matrices cover different classes or trials");
  Eigen::MatrixXd fused = Eigen::MatrixXd::Zero(scores.front().rows(), scores.front().cols());
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (weights[i] > 0.0) fused += (weights[i] / total) * scores[i];
  return argmax_columns(fused);
}

/// Modality-keyed form; weights are per-modality training accuracies.
inline std::vector<int> fuse_modalities(const std::map<Modality, Eigen::MatrixXd>& scores,
                                        const std::map<Modality, double>& training_accuracy) {
  std::vector<Eigen::MatrixXd> s;
  std::vector<double> w;
  for (const auto& [m, sc] : scores) {
    auto it = training_accuracy.find(m);
    if (it == training_accuracy.end())
      throw DataError("crossctx::fuse_modalities: no weight for modality " +
                      std::string(to_string(m)));
    s.push_back(sc);
    w.push_back(it->second);
  }
  if (s.size() != training_accuracy.size())
    throw DataError("crossctx::fuse_modalities: modality sets differ");
  return fuse_scores(s, w);
}

}  // namespace crossctx
