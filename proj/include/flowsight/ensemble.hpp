#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "flowsight/model.hpp"

namespace flowsight {

// Deterministic parallel map: job i writes only slot i, so thread count and
// scheduling never change the result.
template <typename Fn>
inline void parallel_for(std::size_t n, Fn&& fn) {
  unsigned threads = std::min<unsigned>(std::thread::hardware_concurrency(),
                                        static_cast<unsigned>(n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

namespace detail {

// Training data compacted to active features with integer-encoded labels.
struct EncodedData {
  std::vector<double> x;  // n x d
  std::vector<int> y;
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<std::string> feature_names;
  std::vector<std::string> alphabet;

  TrainView view() const { return {x.data(), n, d}; }
};

inline EncodedData encode(const FeatureMatrix& m,
                          const std::vector<std::string>& alphabet_in) {
  if (!m.has_labels()) throw ValidationError("training needs a labeled matrix");
  EncodedData data;
  data.alphabet = alphabet_in;
  if (data.alphabet.empty()) {
    data.alphabet = m.labels;
    std::sort(data.alphabet.begin(), data.alphabet.end());
    data.alphabet.erase(std::unique(data.alphabet.begin(), data.alphabet.end()),
                        data.alphabet.end());
  }
  if (data.alphabet.size() < 2)
    throw ValidationError("training needs at least 2 classes");

  std::vector<std::size_t> active = m.active_indices();
  data.d = active.size();
  data.n = m.n_rows();
  for (std::size_t j : active) data.feature_names.push_back(m.names[j]);

  data.x.reserve(data.n * data.d);
  for (std::size_t r = 0; r < data.n; ++r)
    for (std::size_t j : active) {
      double v = m.at(r, j);
      if (!std::isfinite(v))
        throw DataError("non-finite feature value in row " + std::to_string(r));
      data.x.push_back(v);
    }

  data.y.resize(data.n);
  std::vector<std::size_t> counts(data.alphabet.size(), 0);
  for (std::size_t r = 0; r < data.n; ++r) {
    auto it = std::find(data.alphabet.begin(), data.alphabet.end(), m.labels[r]);
    if (it == data.alphabet.end())
      throw DataError("row label '" + m.labels[r] + "' not in the alphabet");
    data.y[r] = static_cast<int>(it - data.alphabet.begin());
    ++counts[static_cast<std::size_t>(data.y[r])];
  }
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] == 0)
      throw DataError("class '" + data.alphabet[c] + "' has no training rows");
  return data;
}

inline Standardizer fit_standardizer(const EncodedData& data) {
  Standardizer s;
  s.mean.assign(data.d, 0.0);
  s.scale.assign(data.d, 1.0);
  for (std::size_t r = 0; r < data.n; ++r)
    for (std::size_t j = 0; j < data.d; ++j) s.mean[j] += data.x[r * data.d + j];
  for (std::size_t j = 0; j < data.d; ++j) s.mean[j] /= static_cast<double>(data.n);
  std::vector<double> var(data.d, 0.0);
  for (std::size_t r = 0; r < data.n; ++r)
    for (std::size_t j = 0; j < data.d; ++j) {
      double diff = data.x[r * data.d + j] - s.mean[j];
      var[j] += diff * diff;
    }
  for (std::size_t j = 0; j < data.d; ++j) {
    var[j] /= static_cast<double>(data.n);
    if (var[j] > 0) s.scale[j] = std::sqrt(var[j]);
  }
  return s;
}

inline std::size_t sqrt_subset(std::size_t d) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(
                                      static_cast<double>(d))));
}

inline std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

inline TreeEnsembleParams train_forest(const EncodedData& data,
                                       const ModelSpec& spec, bool bootstrap,
                                       bool random_thresholds) {
  const std::size_t members = static_cast<std::size_t>(spec.n_estimators);
  TreeEnsembleParams ensemble;
  ensemble.trees.resize(members);
  ensemble.tree_weights.assign(members, 1.0 / static_cast<double>(members));
  const std::vector<double> weights(data.n, 1.0);
  TrainView view = data.view();

  parallel_for(members, [&](std::size_t member) {
    Rng rng(derive_seed(spec.seed, member));
    std::vector<std::size_t> rows;
    if (bootstrap) {
      rows.resize(data.n);
      for (std::size_t i = 0; i < data.n; ++i)
        rows[i] = static_cast<std::size_t>(rng.bounded(data.n));
    } else {
      rows = all_rows(data.n);
    }
    CartOptions options;
    options.max_depth = spec.max_depth;
    options.n_classes = data.alphabet.size();
    options.feature_subset = sqrt_subset(data.d);
    options.random_thresholds = random_thresholds;
    options.seed = rng.next_u64();
    CartBuilder builder(view, data.y, weights, options);
    ensemble.trees[member] = builder.build(rows);
  });
  return ensemble;
}

// Multi-class AdaBoost (SAMME) over depth-capped trees. Leaves are converted
// to one-hot votes so the ensemble is additive in margin space.
inline TreeEnsembleParams train_adaboost(const EncodedData& data,
                                         const ModelSpec& spec) {
  const std::size_t k = data.alphabet.size();
  TreeEnsembleParams ensemble;
  std::vector<double> weights(data.n, 1.0 / static_cast<double>(data.n));
  std::vector<std::size_t> rows = all_rows(data.n);
  TrainView view = data.view();

  for (int round = 0; round < spec.n_estimators; ++round) {
    CartOptions options;
    options.max_depth = spec.max_depth;
    options.n_classes = k;
    CartBuilder builder(view, data.y, weights, options);
    Tree tree = builder.build(rows);

    double err = 0;
    std::vector<int> predictions(data.n);
    for (std::size_t i = 0; i < data.n; ++i) {
      const std::vector<double>& dist = tree.descend(&data.x[i * data.d]);
      int pred = static_cast<int>(argmax_lowest(dist));
      predictions[i] = pred;
      if (pred != data.y[i]) err += weights[i];
    }

    // One-hot leaves: the ensemble margin counts weighted votes per class.
    for (Tree::Node& node : tree.nodes) {
      if (node.feature >= 0) continue;
      std::size_t vote = argmax_lowest(node.values);
      std::fill(node.values.begin(), node.values.end(), 0.0);
      node.values[vote] = 1.0;
    }

    if (err <= 0) {
      ensemble.trees.push_back(std::move(tree));
      ensemble.tree_weights.push_back(1.0);
      break;
    }
    double chance = 1.0 - 1.0 / static_cast<double>(k);
    if (err >= chance) {
      if (ensemble.trees.empty())
        throw DataError("boosting base learner is no better than chance");
      break;
    }
    double alpha = spec.learning_rate *
                   (std::log((1.0 - err) / err) +
                    std::log(static_cast<double>(k) - 1.0));
    if (alpha <= 0) break;

    ensemble.trees.push_back(std::move(tree));
    ensemble.tree_weights.push_back(alpha);

    double total = 0;
    for (std::size_t i = 0; i < data.n; ++i) {
      if (predictions[i] != data.y[i]) weights[i] *= std::exp(alpha);
      total += weights[i];
    }
    for (double& w : weights) w /= total;
  }
  return ensemble;
}

// Gradient-boosted trees on the softmax cross-entropy objective with
// second-order leaf weights (L2 lambda 1, split gain threshold 0, minimum
// child hessian 1). One tree per class per round; classes within a round are
// independent and trained in parallel.
inline TreeEnsembleParams train_xgb(const EncodedData& data, const ModelSpec& spec) {
  const std::size_t k = data.alphabet.size();
  const std::size_t n = data.n;
  TreeEnsembleParams ensemble;
  std::vector<double> margins(n * k, 0.0);
  std::vector<std::size_t> rows = all_rows(n);
  TrainView view = data.view();

  BoostTreeOptions tree_options;
  tree_options.max_depth = spec.max_depth;
  tree_options.lambda = 1.0;
  tree_options.gamma = 0.0;
  tree_options.min_child_weight = 1.0;

  std::vector<double> probs(n * k);
  for (int round = 0; round < spec.n_estimators; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      double mx = margins[i * k];
      for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, margins[i * k + c]);
      double sum = 0;
      for (std::size_t c = 0; c < k; ++c) {
        probs[i * k + c] = std::exp(margins[i * k + c] - mx);
        sum += probs[i * k + c];
      }
      for (std::size_t c = 0; c < k; ++c) probs[i * k + c] /= sum;
    }

    std::vector<Tree> round_trees(k);
    parallel_for(k, [&](std::size_t c) {
      std::vector<double> grad(n), hess(n);
      for (std::size_t i = 0; i < n; ++i) {
        double p = probs[i * k + c];
        grad[i] = p - (data.y[i] == static_cast<int>(c) ? 1.0 : 0.0);
        hess[i] = std::max(p * (1.0 - p), 1e-16);
      }
      BoostTreeBuilder builder(view, grad, hess, tree_options);
      round_trees[c] = builder.build(rows);
    });

    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < n; ++i)
        margins[i * k + c] +=
            spec.learning_rate * round_trees[c].descend(&data.x[i * data.d])[0];
      // Store the class tree with vector leaves so margins are additive.
      Tree stored = std::move(round_trees[c]);
      for (Tree::Node& node : stored.nodes) {
        if (node.feature >= 0) continue;
        double w = node.values[0];
        node.values.assign(k, 0.0);
        node.values[c] = spec.learning_rate * w;
      }
      ensemble.trees.push_back(std::move(stored));
      ensemble.tree_weights.push_back(1.0);
    }
  }
  return ensemble;
}

inline NaiveBayesParams train_naive_bayes(const EncodedData& data) {
  const std::size_t k = data.alphabet.size();
  const std::size_t d = data.d;
  NaiveBayesParams nb;
  nb.means.assign(k * d, 0.0);
  nb.vars.assign(k * d, 0.0);
  nb.log_priors.assign(k, 0.0);

  std::vector<double> counts(k, 0.0);
  for (std::size_t i = 0; i < data.n; ++i) {
    std::size_t c = static_cast<std::size_t>(data.y[i]);
    counts[c] += 1;
    for (std::size_t j = 0; j < d; ++j)
      nb.means[c * d + j] += data.x[i * d + j];
  }
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < d; ++j) nb.means[c * d + j] /= counts[c];
  for (std::size_t i = 0; i < data.n; ++i) {
    std::size_t c = static_cast<std::size_t>(data.y[i]);
    for (std::size_t j = 0; j < d; ++j) {
      double diff = data.x[i * d + j] - nb.means[c * d + j];
      nb.vars[c * d + j] += diff * diff;
    }
  }
  // Smoothing: 1e-9 times the largest overall feature variance.
  std::vector<double> grand_mean(d, 0.0), grand_var(d, 0.0);
  for (std::size_t i = 0; i < data.n; ++i)
    for (std::size_t j = 0; j < d; ++j) grand_mean[j] += data.x[i * d + j];
  for (std::size_t j = 0; j < d; ++j) grand_mean[j] /= static_cast<double>(data.n);
  for (std::size_t i = 0; i < data.n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double diff = data.x[i * d + j] - grand_mean[j];
      grand_var[j] += diff * diff;
    }
  double max_var = 0;
  for (std::size_t j = 0; j < d; ++j)
    max_var = std::max(max_var, grand_var[j] / static_cast<double>(data.n));
  double smoothing = std::max(1e-9 * max_var, 1e-300);

  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < d; ++j)
      nb.vars[c * d + j] = nb.vars[c * d + j] / counts[c] + smoothing;
  for (std::size_t c = 0; c < k; ++c)
    nb.log_priors[c] = std::log(counts[c] / static_cast<double>(data.n));
  return nb;
}

// Multinomial softmax regression with L2 (lambda 1e-4) on standardized
// inputs, trained by full-batch gradient descent with Armijo backtracking.
inline LinearParams train_logistic(const EncodedData& data, const ModelSpec& spec,
                                   const Standardizer& standardizer) {
  const std::size_t k = data.alphabet.size();
  const std::size_t d = data.d;
  const std::size_t n = data.n;
  const double lambda = 1e-4;

  std::vector<double> z(data.x);
  for (std::size_t i = 0; i < n; ++i) standardizer.apply(&z[i * d]);

  LinearParams lr;
  lr.weights.assign(k * d, 0.0);
  lr.bias.assign(k, 0.0);

  std::vector<double> probs(n * k);
  auto eval = [&](const std::vector<double>& w, const std::vector<double>& b,
                  bool fill_probs) {
    double loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -1e300;
      for (std::size_t c = 0; c < k; ++c) {
        double acc = b[c];
        for (std::size_t j = 0; j < d; ++j) acc += w[c * d + j] * z[i * d + j];
        probs[i * k + c] = acc;
        mx = std::max(mx, acc);
      }
      double sum = 0;
      for (std::size_t c = 0; c < k; ++c) {
        probs[i * k + c] = std::exp(probs[i * k + c] - mx);
        sum += probs[i * k + c];
      }
      for (std::size_t c = 0; c < k; ++c) probs[i * k + c] /= sum;
      loss -= std::log(std::max(probs[i * k + static_cast<std::size_t>(data.y[i])],
                                1e-300));
      if (!fill_probs) continue;
    }
    loss /= static_cast<double>(n);
    double reg = 0;
    for (double v : w) reg += v * v;
    return loss + 0.5 * lambda * reg;
  };

  std::vector<double> grad_w(k * d), grad_b(k);
  std::vector<double> trial_w(k * d), trial_b(k);
  double step = 1.0;
  double loss = eval(lr.weights, lr.bias, true);

  for (int iter = 0; iter < spec.max_iterations; ++iter) {
    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    std::fill(grad_b.begin(), grad_b.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < k; ++c) {
        double delta = probs[i * k + c] -
                       (data.y[i] == static_cast<int>(c) ? 1.0 : 0.0);
        grad_b[c] += delta;
        for (std::size_t j = 0; j < d; ++j)
          grad_w[c * d + j] += delta * z[i * d + j];
      }
    double grad_norm2 = 0;
    for (std::size_t idx = 0; idx < grad_w.size(); ++idx) {
      grad_w[idx] = grad_w[idx] / static_cast<double>(n) + lambda * lr.weights[idx];
      grad_norm2 += grad_w[idx] * grad_w[idx];
    }
    for (std::size_t c = 0; c < k; ++c) {
      grad_b[c] /= static_cast<double>(n);
      grad_norm2 += grad_b[c] * grad_b[c];
    }
    if (grad_norm2 < 1e-16) break;

    step = std::min(step * 2.0, 1e4);
    bool accepted = false;
    for (int attempt = 0; attempt < 60; ++attempt) {
      for (std::size_t idx = 0; idx < trial_w.size(); ++idx)
        trial_w[idx] = lr.weights[idx] - step * grad_w[idx];
      for (std::size_t c = 0; c < k; ++c)
        trial_b[c] = lr.bias[c] - step * grad_b[c];
      double trial_loss = eval(trial_w, trial_b, true);
      if (trial_loss <= loss - 0.5 * step * grad_norm2) {
        lr.weights.swap(trial_w);
        lr.bias.swap(trial_b);
        loss = trial_loss;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  return lr;
}

inline KnnParams train_knn(const EncodedData& data, const ModelSpec& spec,
                           const Standardizer& standardizer) {
  KnnParams knn;
  knn.x = data.x;
  for (std::size_t i = 0; i < data.n; ++i)
    standardizer.apply(&knn.x[i * data.d]);
  knn.y = data.y;
  knn.k = spec.k_neighbors;
  return knn;
}

}  // namespace detail

// Trains one model on the active features of a labeled matrix. When
// `alphabet` is given it fixes the class order (every class must appear in
// the data); otherwise the sorted distinct labels are used.
inline TrainedModel train(const ModelSpec& spec, const FeatureMatrix& m,
                          const std::vector<std::string>& alphabet = {}) {
  detail::EncodedData data = detail::encode(m, alphabet);

  TrainedModel model;
  model.spec = spec;
  model.labels = data.alphabet;
  model.features = data.feature_names;

  switch (spec.kind) {
    case ModelKind::dt: {
      CartOptions options;
      options.max_depth = spec.max_depth;
      options.n_classes = data.alphabet.size();
      std::vector<double> weights(data.n, 1.0);
      TrainView view = data.view();
      detail::CartBuilder builder(view, data.y, weights, options);
      TreeEnsembleParams ensemble;
      ensemble.trees.push_back(builder.build(detail::all_rows(data.n)));
      ensemble.tree_weights.push_back(1.0);
      model.params = std::move(ensemble);
      break;
    }
    case ModelKind::rf:
      model.params = detail::train_forest(data, spec, /*bootstrap=*/true,
                                          /*random_thresholds=*/false);
      break;
    case ModelKind::et:
      model.params = detail::train_forest(data, spec, /*bootstrap=*/false,
                                          /*random_thresholds=*/true);
      break;
    case ModelKind::ab:
      model.params = detail::train_adaboost(data, spec);
      break;
    case ModelKind::xgb:
      model.params = detail::train_xgb(data, spec);
      break;
    case ModelKind::nb:
      model.params = detail::train_naive_bayes(data);
      break;
    case ModelKind::lr: {
      Standardizer s = detail::fit_standardizer(data);
      model.params = detail::train_logistic(data, spec, s);
      model.standardizer = std::move(s);
      break;
    }
    case ModelKind::knn: {
      Standardizer s = detail::fit_standardizer(data);
      model.params = detail::train_knn(data, spec, s);
      model.standardizer = std::move(s);
      break;
    }
  }
  return model;
}

// Rows of a matrix restricted to its active features, ready for predict().
inline std::vector<std::vector<double>> active_rows(const FeatureMatrix& m) {
  std::vector<std::size_t> active = m.active_indices();
  std::vector<std::vector<double>> rows(m.n_rows());
  for (std::size_t r = 0; r < m.n_rows(); ++r) {
    rows[r].reserve(active.size());
    for (std::size_t j : active) rows[r].push_back(m.at(r, j));
  }
  return rows;
}

// Restricts a matrix to exactly the model's feature columns, matched by
// name, so any 77-column CSV can feed a model trained on the pruned set.
inline FeatureMatrix project_to_model(const TrainedModel& model,
                                      const FeatureMatrix& m) {
  std::vector<std::size_t> columns;
  columns.reserve(model.features.size());
  for (const std::string& name : model.features) {
    auto it = std::find(m.names.begin(), m.names.end(), name);
    if (it == m.names.end())
      throw DataError("input is missing model feature '" + name + "'");
    columns.push_back(static_cast<std::size_t>(it - m.names.begin()));
  }
  FeatureMatrix out{std::vector<std::string>(model.features)};
  out.labels = m.labels;
  std::vector<double> row(columns.size());
  for (std::size_t r = 0; r < m.n_rows(); ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c)
      row[c] = m.at(r, columns[c]);
    out.data.insert(out.data.end(), row.begin(), row.end());
  }
  return out;
}

}  // namespace flowsight
