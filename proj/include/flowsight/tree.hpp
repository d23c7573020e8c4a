#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "flowsight/error.hpp"
#include "flowsight/rng.hpp"

namespace flowsight {

// Axis-aligned binary decision tree. Leaves carry a vector payload (class
// distribution for probability models, per-class additive scores for boosted
// ones). Descent rule: x[feature] <= threshold goes left.
struct Tree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0;
    int left = -1;
    int right = -1;
    std::vector<double> values;  // leaf payload
  };
  std::vector<Node> nodes;

  bool empty() const { return nodes.empty(); }

  const std::vector<double>& descend(const double* row) const {
    int node = 0;
    while (nodes[node].feature >= 0)
      node = row[nodes[node].feature] <= nodes[node].threshold
                 ? nodes[node].left
                 : nodes[node].right;
    return nodes[node].values;
  }

  int depth() const { return depth_below(0); }

 private:
  int depth_below(int node) const {
    if (nodes[node].feature < 0) return 0;
    return 1 + std::max(depth_below(nodes[node].left),
                        depth_below(nodes[node].right));
  }
};

// Compact row-major training view: n rows by d active features.
struct TrainView {
  const double* x = nullptr;
  std::size_t n = 0;
  std::size_t d = 0;

  double at(std::size_t row, std::size_t col) const { return x[row * d + col]; }
};

struct CartOptions {
  int max_depth = 30;
  std::size_t n_classes = 2;
  std::size_t feature_subset = 0;  // 0 = consider every feature
  bool random_thresholds = false;  // draw one uniform threshold per candidate
  std::uint64_t seed = 0;
  // Zero-gain splits are allowed (reference tool behavior; resolves XOR-like
  // nodes); a strictly better candidate must beat the incumbent by this much.
  double tie_epsilon = 1e-12;
};

namespace detail {

inline double gini(const std::vector<double>& class_weights, double total) {
  if (total <= 0) return 0.0;
  double acc = 0;
  for (double w : class_weights) {
    double p = w / total;
    acc += p * p;
  }
  return 1.0 - acc;
}

struct SplitChoice {
  bool found = false;
  std::size_t feature = 0;
  double threshold = 0;
  double gain = 0;
};

// Candidate features for one split: either all of them or a seeded draw of
// `subset` distinct indices, examined in ascending order for deterministic
// tie-breaks.
inline std::vector<std::size_t> candidate_features(std::size_t d,
                                                   std::size_t subset,
                                                   Rng& rng) {
  std::vector<std::size_t> all(d);
  std::iota(all.begin(), all.end(), 0);
  if (subset == 0 || subset >= d) return all;
  for (std::size_t i = 0; i < subset; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.bounded(d - i));
    std::swap(all[i], all[j]);
  }
  all.resize(subset);
  std::sort(all.begin(), all.end());
  return all;
}

class CartBuilder {
 public:
  CartBuilder(const TrainView& view, const std::vector<int>& y,
              const std::vector<double>& sample_weights, const CartOptions& options)
      : view_(view), y_(y), weights_(sample_weights), options_(options),
        rng_(options.seed) {}

  Tree build(const std::vector<std::size_t>& rows) {
    Tree tree;
    grow(tree, rows, 0);
    return tree;
  }

 private:
  int grow(Tree& tree, const std::vector<std::size_t>& rows, int depth) {
    std::vector<double> class_weights(options_.n_classes, 0.0);
    double total = 0;
    for (std::size_t r : rows) {
      class_weights[static_cast<std::size_t>(y_[r])] += weights_[r];
      total += weights_[r];
    }

    int node_index = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();

    bool pure = std::count_if(class_weights.begin(), class_weights.end(),
                              [](double w) { return w > 0; }) <= 1;
    SplitChoice split;
    if (!pure && depth < options_.max_depth && rows.size() >= 2)
      split = find_split(rows, class_weights, total);

    if (!split.found) {
      make_leaf(tree.nodes[node_index], class_weights, total);
      return node_index;
    }

    std::vector<std::size_t> left_rows, right_rows;
    for (std::size_t r : rows)
      (view_.at(r, split.feature) <= split.threshold ? left_rows : right_rows)
          .push_back(r);
    if (left_rows.empty() || right_rows.empty()) {
      make_leaf(tree.nodes[node_index], class_weights, total);
      return node_index;
    }

    tree.nodes[node_index].feature = static_cast<int>(split.feature);
    tree.nodes[node_index].threshold = split.threshold;
    int left = grow(tree, left_rows, depth + 1);
    tree.nodes[node_index].left = left;
    int right = grow(tree, right_rows, depth + 1);
    tree.nodes[node_index].right = right;
    return node_index;
  }

  void make_leaf(Tree::Node& node, const std::vector<double>& class_weights,
                 double total) {
    node.feature = -1;
    node.values.resize(options_.n_classes, 0.0);
    if (total > 0)
      for (std::size_t c = 0; c < options_.n_classes; ++c)
        node.values[c] = class_weights[c] / total;
  }

  SplitChoice find_split(const std::vector<std::size_t>& rows,
                         const std::vector<double>& class_weights, double total) {
    SplitChoice best;
    double parent = gini(class_weights, total);
    std::vector<std::size_t> features =
        candidate_features(view_.d, options_.feature_subset, rng_);

    std::vector<std::pair<double, std::size_t>> order(rows.size());
    std::vector<double> left(options_.n_classes);

    for (std::size_t j : features) {
      if (options_.random_thresholds) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (std::size_t r : rows) {
          lo = std::min(lo, view_.at(r, j));
          hi = std::max(hi, view_.at(r, j));
        }
        if (!(lo < hi)) continue;
        double threshold = rng_.uniform(lo, hi);
        std::fill(left.begin(), left.end(), 0.0);
        double left_total = 0;
        for (std::size_t r : rows)
          if (view_.at(r, j) <= threshold) {
            left[static_cast<std::size_t>(y_[r])] += weights_[r];
            left_total += weights_[r];
          }
        double right_total = total - left_total;
        if (left_total <= 0 || right_total <= 0) continue;
        std::vector<double> right(class_weights);
        for (std::size_t c = 0; c < options_.n_classes; ++c) right[c] -= left[c];
        double gain = parent - (left_total * gini(left, left_total) +
                                right_total * gini(right, right_total)) /
                                   total;
        if (!best.found || gain > best.gain + options_.tie_epsilon)
          best = {true, j, threshold, gain};
        continue;
      }

      for (std::size_t i = 0; i < rows.size(); ++i)
        order[i] = {view_.at(rows[i], j), rows[i]};
      std::sort(order.begin(), order.end());
      if (order.front().first == order.back().first) continue;

      std::fill(left.begin(), left.end(), 0.0);
      double left_total = 0;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        std::size_t r = order[i].second;
        left[static_cast<std::size_t>(y_[r])] += weights_[r];
        left_total += weights_[r];
        if (order[i].first == order[i + 1].first) continue;
        double right_total = total - left_total;
        if (left_total <= 0 || right_total <= 0) continue;
        double left_gini = gini(left, left_total);
        std::vector<double> right(class_weights);
        for (std::size_t c = 0; c < options_.n_classes; ++c) right[c] -= left[c];
        double gain = parent - (left_total * left_gini +
                                right_total * gini(right, right_total)) /
                                   total;
        if (!best.found || gain > best.gain + options_.tie_epsilon) {
          double threshold =
              order[i].first + (order[i + 1].first - order[i].first) / 2.0;
          if (threshold == order[i + 1].first) threshold = order[i].first;
          best = {true, j, threshold, gain};
        }
      }
    }
    return best;
  }

  const TrainView& view_;
  const std::vector<int>& y_;
  const std::vector<double>& weights_;
  CartOptions options_;
  Rng rng_;
};

struct BoostTreeOptions {
  int max_depth = 30;
  double lambda = 1.0;            // L2 on leaf weights
  double gamma = 0.0;             // minimum split gain
  double min_child_weight = 1.0;  // minimum hessian sum per child
  double min_gain_eps = 1e-12;
};

// Second-order regression tree on (gradient, hessian) pairs; leaf weight is
// -G/(H+lambda). Returned leaves carry a single value.
class BoostTreeBuilder {
 public:
  BoostTreeBuilder(const TrainView& view, const std::vector<double>& grad,
                   const std::vector<double>& hess, const BoostTreeOptions& options)
      : view_(view), grad_(grad), hess_(hess), options_(options) {}

  Tree build(const std::vector<std::size_t>& rows) {
    Tree tree;
    grow(tree, rows, 0);
    return tree;
  }

 private:
  static double leaf_objective(double g, double h, double lambda) {
    return -0.5 * g * g / (h + lambda);
  }

  int grow(Tree& tree, const std::vector<std::size_t>& rows, int depth) {
    double g_total = 0, h_total = 0;
    for (std::size_t r : rows) {
      g_total += grad_[r];
      h_total += hess_[r];
    }

    int node_index = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();

    bool can_split = depth < options_.max_depth && rows.size() >= 2 &&
                     h_total >= 2 * options_.min_child_weight;
    double best_gain = 0;
    std::size_t best_feature = 0;
    double best_threshold = 0;
    bool found = false;

    if (can_split) {
      double parent_obj = leaf_objective(g_total, h_total, options_.lambda);
      std::vector<std::pair<double, std::size_t>> order(rows.size());
      for (std::size_t j = 0; j < view_.d; ++j) {
        for (std::size_t i = 0; i < rows.size(); ++i)
          order[i] = {view_.at(rows[i], j), rows[i]};
        std::sort(order.begin(), order.end());
        if (order.front().first == order.back().first) continue;

        double g_left = 0, h_left = 0;
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
          std::size_t r = order[i].second;
          g_left += grad_[r];
          h_left += hess_[r];
          if (order[i].first == order[i + 1].first) continue;
          double h_right = h_total - h_left;
          if (h_left < options_.min_child_weight ||
              h_right < options_.min_child_weight)
            continue;
          double g_right = g_total - g_left;
          double gain = leaf_objective(g_left, h_left, options_.lambda) +
                        leaf_objective(g_right, h_right, options_.lambda) -
                        parent_obj;
          gain = -gain - options_.gamma;  // objective decreases; flip sign
          if (gain > best_gain + options_.min_gain_eps) {
            best_gain = gain;
            best_feature = j;
            best_threshold =
                order[i].first + (order[i + 1].first - order[i].first) / 2.0;
            if (best_threshold == order[i + 1].first)
              best_threshold = order[i].first;
            found = true;
          }
        }
      }
    }

    if (!found || best_gain <= options_.min_gain_eps) {
      tree.nodes[node_index].feature = -1;
      tree.nodes[node_index].values = {-g_total / (h_total + options_.lambda)};
      return node_index;
    }

    std::vector<std::size_t> left_rows, right_rows;
    for (std::size_t r : rows)
      (view_.at(r, best_feature) <= best_threshold ? left_rows : right_rows)
          .push_back(r);
    tree.nodes[node_index].feature = static_cast<int>(best_feature);
    tree.nodes[node_index].threshold = best_threshold;
    int left = grow(tree, left_rows, depth + 1);
    tree.nodes[node_index].left = left;
    int right = grow(tree, right_rows, depth + 1);
    tree.nodes[node_index].right = right;
    return node_index;
  }

  const TrainView& view_;
  const std::vector<double>& grad_;
  const std::vector<double>& hess_;
  BoostTreeOptions options_;
};

}  // namespace detail
}  // namespace flowsight
