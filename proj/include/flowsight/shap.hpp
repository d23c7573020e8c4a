#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "flowsight/ensemble.hpp"
#include "flowsight/error.hpp"
#include "flowsight/model.hpp"
#include "flowsight/rng.hpp"

namespace flowsight {

enum class ScoreMode { probability, margin };

// Scalar view of one model output: a class score in probability or margin
// space. Explainers only see this interface, so they stay model-agnostic.
struct ScoreFunction {
  std::size_t n_features = 0;
  std::function<double(const double*)> eval;

  double operator()(const double* row) const { return eval(row); }
};

// The explained score: class probability for probability models, raw
// per-class margin for boosted kinds (whose probabilities are not additive
// over trees).
inline ScoreMode default_score_mode(const TrainedModel& model) {
  return model.is_margin_kind() ? ScoreMode::margin : ScoreMode::probability;
}

inline ScoreFunction make_score_function(const TrainedModel& model,
                                         std::size_t class_index,
                                         std::optional<ScoreMode> mode = {}) {
  if (class_index >= model.n_classes())
    throw ValidationError("class index out of range");
  ScoreMode resolved = mode.value_or(default_score_mode(model));
  if (resolved == ScoreMode::margin && !model.is_margin_kind())
    throw ValidationError("margin mode is only defined for boosted models");
  if (resolved == ScoreMode::probability && model.spec.kind == ModelKind::xgb)
    throw ValidationError(
        "probability mode of the boosted softmax is not additive; explain "
        "margins instead");

  ScoreFunction f;
  f.n_features = model.n_features();
  // Tree ensembles in margin space, and probability-kind ensembles, are a
  // plain weighted sum over leaves for one class; evaluate them without
  // materializing the full score vector.
  if (model.is_tree_kind() &&
      (resolved == ScoreMode::margin || !model.is_margin_kind())) {
    const auto& ensemble = std::get<TreeEnsembleParams>(model.params);
    f.eval = [&ensemble, class_index](const double* row) {
      double acc = 0;
      for (std::size_t t = 0; t < ensemble.trees.size(); ++t)
        acc += ensemble.tree_weights[t] *
               ensemble.trees[t].descend(row)[class_index];
      return acc;
    };
  } else if (resolved == ScoreMode::margin) {
    f.eval = [&model, class_index](const double* row) {
      return predict_margins_row(model, row)[class_index];
    };
  } else {
    f.eval = [&model, class_index](const double* row) {
      return predict_scores_row(model, row)[class_index];
    };
  }
  return f;
}

// Background rows in compact row-major form (active features only).
struct Background {
  std::vector<double> x;
  std::size_t n = 0;
  std::size_t d = 0;

  const double* row(std::size_t i) const { return &x[i * d]; }
};

inline Background background_from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ValidationError("background must be non-empty");
  Background bg;
  bg.n = rows.size();
  bg.d = rows.front().size();
  bg.x.reserve(bg.n * bg.d);
  for (const auto& row : rows) bg.x.insert(bg.x.end(), row.begin(), row.end());
  return bg;
}

// Seeded sample of `max_rows` active-feature rows, the default background.
inline Background sample_background(const FeatureMatrix& m, std::size_t max_rows,
                                    std::uint64_t seed) {
  if (m.n_rows() == 0) throw ValidationError("background must be non-empty");
  std::vector<std::size_t> indices(m.n_rows());
  std::iota(indices.begin(), indices.end(), 0);
  if (m.n_rows() > max_rows) {
    Rng rng(seed);
    rng.shuffle(indices.data(), indices.size());
    indices.resize(max_rows);
    std::sort(indices.begin(), indices.end());
  }
  std::vector<std::size_t> active = m.active_indices();
  Background bg;
  bg.n = indices.size();
  bg.d = active.size();
  bg.x.reserve(bg.n * bg.d);
  for (std::size_t r : indices)
    for (std::size_t j : active) bg.x.push_back(m.at(r, j));
  return bg;
}

struct Attribution {
  double base_value = 0;  // expected score over the background
  double fx = 0;          // score at the explained instance
  std::vector<double> phi;
  std::size_t instance_index = 0;
  std::string class_label;
};

inline constexpr std::size_t kExactShapleyMaxFeatures = 15;

// Exact interventional Shapley values by full coalition enumeration. The
// value of a coalition S is the background mean of the score on rows that
// take x on S and the background row elsewhere.
inline Attribution exact_shapley(const ScoreFunction& f, const double* x,
                                 const Background& bg) {
  const std::size_t d = f.n_features;
  if (d != bg.d) throw ValidationError("background width mismatch");
  if (d > kExactShapleyMaxFeatures)
    throw ValidationError(
        "exact enumeration is limited to " +
        std::to_string(kExactShapleyMaxFeatures) +
        " features; use the tree or kernel explainer for wider models");
  if (bg.n == 0) throw ValidationError("background must be non-empty");

  const std::size_t n_masks = std::size_t{1} << d;
  std::vector<double> value(n_masks, 0.0);
  std::vector<double> composite(d);

  for (std::size_t b = 0; b < bg.n; ++b) {
    const double* base_row = bg.row(b);
    std::copy(base_row, base_row + d, composite.begin());
    std::size_t gray = 0;
    value[0] += f(composite.data());
    for (std::size_t i = 1; i < n_masks; ++i) {
      std::size_t next_gray = i ^ (i >> 1);
      std::size_t flipped = gray ^ next_gray;  // single bit
      std::size_t j = static_cast<std::size_t>(std::countr_zero(flipped));
      composite[j] = (next_gray >> j) & 1 ? x[j] : base_row[j];
      gray = next_gray;
      value[gray] += f(composite.data());
    }
  }
  for (double& v : value) v /= static_cast<double>(bg.n);

  std::vector<double> factorial(d + 1, 1.0);
  for (std::size_t i = 1; i <= d; ++i)
    factorial[i] = factorial[i - 1] * static_cast<double>(i);

  Attribution out;
  out.base_value = value[0];
  out.fx = value[n_masks - 1];
  out.phi.assign(d, 0.0);
  for (std::size_t mask = 0; mask < n_masks; ++mask) {
    std::size_t s = static_cast<std::size_t>(std::popcount(mask));
    for (std::size_t j = 0; j < d; ++j) {
      if (mask & (std::size_t{1} << j)) continue;
      double weight = factorial[s] * factorial[d - s - 1] / factorial[d];
      out.phi[j] += weight * (value[mask | (std::size_t{1} << j)] - value[mask]);
    }
  }
  return out;
}

namespace detail {

// Pascal's triangle for the leaf weights of the interventional traversal.
// n is bounded by the active feature count (at most one constraint per
// feature on a path).
inline double binomial(std::size_t n, std::size_t k) {
  constexpr std::size_t N = 96;
  static const auto table = [] {
    std::array<std::array<double, N>, N> c{};
    for (std::size_t i = 0; i < N; ++i) {
      c[i][0] = 1;
      for (std::size_t j = 1; j <= i; ++j)
        c[i][j] = c[i - 1][j - 1] + (j <= i - 1 ? c[i - 1][j] : 0);
    }
    return c;
  }();
  if (n >= N || k > n) throw InternalError("binomial argument out of range");
  return table[n][k];
}

// Shapley weight of a leaf constraint set: a leaf reachable iff R is inside
// the coalition and Q outside contributes W(|R|,|Q|) to each feature in R
// (positively) and W(|Q|,|R|) to each feature in Q (negatively), where
// W(r,q) = (r-1)! q! / (r+q)!.
inline double leaf_weight(std::size_t r, std::size_t q) {
  return 1.0 / (static_cast<double>(r) * binomial(r + q, q));
}

// One (tree, instance, background-row) traversal. Walks every leaf reachable
// for some coalition, tracking which features must come from x (state 1) or
// from the background row (state 2).
class TreePathAccumulator {
 public:
  TreePathAccumulator(const Tree& tree, const double* x, const double* bg,
                      double scale, std::size_t class_index, std::size_t d,
                      std::vector<double>& phi)
      : tree_(tree), x_(x), bg_(bg), scale_(scale), class_index_(class_index),
        phi_(phi), state_(d, 0) {}

  // Returns the tree's value on the pure-background row (the base share).
  double run() {
    walk(0);
    return base_;
  }

 private:
  void walk(int node_index) {
    const Tree::Node& node = tree_.nodes[node_index];
    if (node.feature < 0) {
      double value = scale_ * node.values[class_index_];
      std::size_t r = need_x_.size(), q = need_b_.size();
      if (r == 0) base_ += value;  // the leaf the background row descends to
      if (r > 0) {
        double w = leaf_weight(r, q) * value;
        for (std::size_t j : need_x_) phi_[j] += w;
      }
      if (q > 0) {
        double w = leaf_weight(q, r) * value;
        for (std::size_t j : need_b_) phi_[j] -= w;
      }
      return;
    }

    std::size_t j = static_cast<std::size_t>(node.feature);
    bool x_left = x_[j] <= node.threshold;
    bool b_left = bg_[j] <= node.threshold;
    if (x_left == b_left) {
      walk(x_left ? node.left : node.right);
      return;
    }
    switch (state_[j]) {
      case 1:  // already pinned to x
        walk(x_left ? node.left : node.right);
        return;
      case 2:  // already pinned to the background
        walk(b_left ? node.left : node.right);
        return;
      default:
        state_[j] = 1;
        need_x_.push_back(j);
        walk(x_left ? node.left : node.right);
        need_x_.pop_back();
        state_[j] = 2;
        need_b_.push_back(j);
        walk(b_left ? node.left : node.right);
        need_b_.pop_back();
        state_[j] = 0;
        return;
    }
  }

  const Tree& tree_;
  const double* x_;
  const double* bg_;
  double scale_;
  std::size_t class_index_;
  std::vector<double>& phi_;
  std::vector<std::uint8_t> state_;
  std::vector<std::size_t> need_x_;
  std::vector<std::size_t> need_b_;
  double base_ = 0;
};

}  // namespace detail

// Interventional tree-ensemble Shapley values over a background set: exact
// per-tree traversal, averaged over background rows and summed over weighted
// members. Computes the same quantity as exact_shapley for the ensemble's
// score function.
inline Attribution tree_shap(const TrainedModel& model, const double* x,
                             std::size_t class_index, const Background& bg,
                             std::optional<ScoreMode> mode = {}) {
  if (!model.is_tree_kind())
    throw ValidationError("tree_shap requires a tree-ensemble model");
  if (class_index >= model.n_classes())
    throw ValidationError("class index out of range");
  ScoreMode resolved = mode.value_or(default_score_mode(model));
  if (resolved == ScoreMode::margin && !model.is_margin_kind())
    throw ValidationError("margin mode is only defined for boosted models");
  if (resolved == ScoreMode::probability && model.spec.kind == ModelKind::xgb)
    throw ValidationError(
        "probability mode of the boosted softmax is not additive; explain "
        "margins instead");
  const std::size_t d = model.n_features();
  if (d != bg.d) throw ValidationError("background width mismatch");

  const auto& ensemble = std::get<TreeEnsembleParams>(model.params);
  // AB probabilities are margins scaled by the total vote weight.
  double global_scale = 1.0;
  if (model.spec.kind == ModelKind::ab && resolved == ScoreMode::probability) {
    double total = 0;
    for (double w : ensemble.tree_weights) total += w;
    global_scale = 1.0 / total;
  }

  Attribution out;
  out.phi.assign(d, 0.0);
  out.class_label = model.labels[class_index];

  for (std::size_t b = 0; b < bg.n; ++b) {
    for (std::size_t t = 0; t < ensemble.trees.size(); ++t) {
      detail::TreePathAccumulator acc(
          ensemble.trees[t], x, bg.row(b),
          global_scale * ensemble.tree_weights[t], class_index, d, out.phi);
      out.base_value += acc.run();
    }
  }
  double inv_n = 1.0 / static_cast<double>(bg.n);
  out.base_value *= inv_n;
  for (double& p : out.phi) p *= inv_n;

  double fx = 0;
  for (std::size_t t = 0; t < ensemble.trees.size(); ++t)
    fx += global_scale * ensemble.tree_weights[t] *
          ensemble.trees[t].descend(x)[class_index];
  out.fx = fx;
  return out;
}

// Kernel SHAP: weighted least squares over coalitions with the Shapley
// kernel, constrained so the attributions sum to f(x) - base. Enumerates
// coalition sizes outward-in while the budget allows and samples the rest;
// with n_samples >= 2^d - 2 the design is complete and the solution exact.
inline Attribution kernel_shap(const ScoreFunction& f, const double* x,
                               const Background& bg, std::size_t n_samples,
                               std::uint64_t seed) {
  const std::size_t d = f.n_features;
  if (d != bg.d) throw ValidationError("background width mismatch");
  if (d < 2) throw ValidationError("kernel_shap needs at least 2 features");
  if (n_samples < 2 * d + 2)
    throw ValidationError("kernel_shap needs n_samples >= 2d+2");

  double base = 0;
  for (std::size_t b = 0; b < bg.n; ++b) base += f(bg.row(b));
  base /= static_cast<double>(bg.n);
  double fx = f(x);

  // Coalition value: background mean of the spliced row.
  std::vector<double> composite(d);
  auto coalition_value = [&](const std::vector<std::uint8_t>& mask) {
    double acc = 0;
    for (std::size_t b = 0; b < bg.n; ++b) {
      const double* row = bg.row(b);
      for (std::size_t j = 0; j < d; ++j)
        composite[j] = mask[j] ? x[j] : row[j];
      acc += f(composite.data());
    }
    return acc / static_cast<double>(bg.n);
  };

  std::vector<std::vector<std::uint8_t>> masks;
  std::vector<double> weights;

  // Kernel mass per coalition size, normalized.
  std::vector<double> size_mass(d, 0.0);
  double mass_total = 0;
  for (std::size_t s = 1; s <= d - 1; ++s) {
    size_mass[s] = static_cast<double>(d - 1) /
                   (static_cast<double>(s) * static_cast<double>(d - s));
    mass_total += size_mass[s];
  }
  for (std::size_t s = 1; s <= d - 1; ++s) size_mass[s] /= mass_total;

  std::vector<bool> enumerated(d, false);
  std::size_t budget = n_samples;

  auto enumerate_size = [&](std::size_t s) {
    std::vector<std::uint8_t> mask(d, 0);
    std::vector<std::size_t> idx(s);
    std::iota(idx.begin(), idx.end(), 0);
    double per_mask = size_mass[s] / detail::binomial(d, s);
    for (;;) {
      std::fill(mask.begin(), mask.end(), 0);
      for (std::size_t j : idx) mask[j] = 1;
      masks.push_back(mask);
      weights.push_back(per_mask);
      // next combination
      std::size_t i = s;
      while (i > 0 && idx[i - 1] == d - s + i - 1) --i;
      if (i == 0) break;
      ++idx[i - 1];
      for (std::size_t k = i; k < s; ++k) idx[k] = idx[k - 1] + 1;
    }
  };

  std::size_t half = (d - 1) / 2 + 1;
  for (std::size_t s = 1; s <= half && s <= d - 1; ++s) {
    std::size_t partner = d - s;
    double count = detail::binomial(d, s);
    if (partner != s) count *= 2;
    if (count > static_cast<double>(budget)) break;
    enumerate_size(s);
    enumerated[s] = true;
    if (partner != s) {
      enumerate_size(partner);
      enumerated[partner] = true;
    }
    budget -= static_cast<std::size_t>(count);
  }

  double remaining_mass = 0;
  std::vector<std::size_t> open_sizes;
  for (std::size_t s = 1; s <= d - 1; ++s)
    if (!enumerated[s]) {
      open_sizes.push_back(s);
      remaining_mass += size_mass[s];
    }

  const std::size_t sampled_start = masks.size();
  auto draw_samples = [&](std::uint64_t draw_seed) {
    Rng rng(draw_seed);
    masks.resize(sampled_start);
    weights.resize(sampled_start);
    if (!open_sizes.empty() && budget > 0) {
      std::vector<double> cumulative;
      double acc = 0;
      for (std::size_t s : open_sizes) {
        acc += size_mass[s] / remaining_mass;
        cumulative.push_back(acc);
      }
      std::vector<std::size_t> perm(d);
      for (std::size_t i = 0; i < budget; ++i) {
        double u = rng.uniform();
        std::size_t pick = 0;
        while (pick + 1 < cumulative.size() && u > cumulative[pick]) ++pick;
        std::size_t s = open_sizes[pick];
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t k = 0; k < s; ++k) {
          std::size_t j = k + static_cast<std::size_t>(rng.bounded(d - k));
          std::swap(perm[k], perm[j]);
        }
        std::vector<std::uint8_t> mask(d, 0);
        for (std::size_t k = 0; k < s; ++k) mask[perm[k]] = 1;
        masks.push_back(std::move(mask));
        weights.push_back(remaining_mass / static_cast<double>(budget));
      }
    }
  };
  draw_samples(seed);

  auto solve = [&]() -> std::optional<std::vector<double>> {
    const std::size_t n = masks.size();
    const std::size_t p = d - 1;
    Eigen::MatrixXd a(n, p);
    Eigen::VectorXd y(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& mask = masks[i];
      double v = coalition_value(mask);
      double last = mask[d - 1] ? 1.0 : 0.0;
      y(static_cast<Eigen::Index>(i)) = v - base - last * (fx - base);
      double w = std::sqrt(weights[i]);
      for (std::size_t j = 0; j < p; ++j)
        a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            (static_cast<double>(mask[j]) - last);
      a.row(static_cast<Eigen::Index>(i)) *= w;
      y(static_cast<Eigen::Index>(i)) *= w;
    }
    Eigen::MatrixXd gram = a.transpose() * a;
    Eigen::VectorXd rhs = a.transpose() * y;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() != Eigen::Success) return std::nullopt;
    Eigen::VectorXd sol = ldlt.solve(rhs);
    if (!sol.allFinite()) return std::nullopt;
    std::vector<double> phi(d, 0.0);
    double sum = 0;
    for (std::size_t j = 0; j < p; ++j) {
      phi[j] = sol(static_cast<Eigen::Index>(j));
      sum += phi[j];
    }
    phi[d - 1] = (fx - base) - sum;
    return phi;
  };

  std::optional<std::vector<double>> phi = solve();
  if (!phi) {
    // One re-sample, then give up.
    draw_samples(derive_seed(seed, 1));
    phi = solve();
    if (!phi) throw DataError("kernel_shap: singular coalition design");
  }

  Attribution out;
  out.base_value = base;
  out.fx = fx;
  out.phi = std::move(*phi);
  return out;
}

enum class AttributionMethod { exact, tree, kernel };

inline AttributionMethod attribution_method_from_string(const std::string& s) {
  if (s == "exact") return AttributionMethod::exact;
  if (s == "tree") return AttributionMethod::tree;
  if (s == "kernel") return AttributionMethod::kernel;
  throw ValidationError("unknown attribution method: " + s);
}

struct MeanAbsAttributions {
  std::vector<std::string> names;
  std::vector<double> scores;        // mean |phi| per feature
  std::vector<std::size_t> ranking;  // descending score, ties by index
};

struct ExplainOptions {
  AttributionMethod method = AttributionMethod::tree;
  std::size_t kernel_samples = 2048;
  std::uint64_t seed = 0;
};

inline Attribution explain_instance(const TrainedModel& model, const double* row,
                                    std::size_t class_index, const Background& bg,
                                    const ExplainOptions& options = {}) {
  switch (options.method) {
    case AttributionMethod::tree:
      return tree_shap(model, row, class_index, bg);
    case AttributionMethod::exact:
      return exact_shapley(make_score_function(model, class_index), row, bg);
    case AttributionMethod::kernel:
      return kernel_shap(make_score_function(model, class_index), row, bg,
                         options.kernel_samples, options.seed);
  }
  throw InternalError("unreachable");
}

// Mean absolute attribution per feature for one class over a whole matrix,
// with the induced importance ranking.
inline MeanAbsAttributions mean_abs_attributions(const TrainedModel& model,
                                                 const FeatureMatrix& m,
                                                 std::size_t class_index,
                                                 const Background& bg,
                                                 const ExplainOptions& options = {}) {
  auto rows = active_rows(m);
  MeanAbsAttributions out;
  out.names = model.features;
  out.scores.assign(model.n_features(), 0.0);
  if (!rows.empty()) {
    std::vector<std::vector<double>> per_row(rows.size());
    parallel_for(rows.size(), [&](std::size_t i) {
      ExplainOptions row_options = options;
      row_options.seed = derive_seed(options.seed, i);
      per_row[i] =
          explain_instance(model, rows[i].data(), class_index, bg, row_options).phi;
    });
    for (const auto& phi : per_row)
      for (std::size_t j = 0; j < out.scores.size(); ++j)
        out.scores[j] += std::abs(phi[j]);
    for (double& s : out.scores) s /= static_cast<double>(rows.size());
  }
  out.ranking.resize(out.scores.size());
  std::iota(out.ranking.begin(), out.ranking.end(), 0);
  std::stable_sort(out.ranking.begin(), out.ranking.end(),
                   [&](std::size_t a, std::size_t b) {
                     return out.scores[a] > out.scores[b];
                   });
  return out;
}

}  // namespace flowsight
