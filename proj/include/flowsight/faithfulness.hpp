#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "flowsight/ensemble.hpp"
#include "flowsight/error.hpp"
#include "flowsight/lime.hpp"
#include "flowsight/model.hpp"
#include "flowsight/rng.hpp"
#include "flowsight/shap.hpp"

namespace flowsight {

// Per-instance attribution source: returns phi for (row, class). The
// instance index keys any sampling seed so calls are order-independent.
using InstanceExplainer = std::function<std::vector<double>(
    const double* row, std::size_t class_index, std::size_t instance_index)>;

inline InstanceExplainer tree_explainer(const TrainedModel& model,
                                        const Background& bg) {
  return [&model, &bg](const double* row, std::size_t class_index,
                       std::size_t) {
    return tree_shap(model, row, class_index, bg).phi;
  };
}

inline InstanceExplainer exact_explainer(const TrainedModel& model,
                                         const Background& bg) {
  return [&model, &bg](const double* row, std::size_t class_index,
                       std::size_t) {
    return exact_shapley(make_score_function(model, class_index), row, bg).phi;
  };
}

inline InstanceExplainer kernel_explainer(const TrainedModel& model,
                                          const Background& bg,
                                          std::size_t n_samples,
                                          std::uint64_t seed) {
  return [&model, &bg, n_samples, seed](const double* row,
                                        std::size_t class_index,
                                        std::size_t instance_index) {
    return kernel_shap(make_score_function(model, class_index), row, bg,
                       n_samples, derive_seed(seed, instance_index))
        .phi;
  };
}

// LIME as an attribution source: condition weights land on their features,
// everything outside the explanation is 0.
inline InstanceExplainer lime_explainer(const TrainedModel& model,
                                        const QuartileDiscretizer& disc,
                                        const LimeOptions& options) {
  return [&model, &disc, options](const double* row, std::size_t class_index,
                                  std::size_t instance_index) {
    LimeOptions per_instance = options;
    per_instance.seed = derive_seed(options.seed, instance_index);
    LimeExplanation e = lime_explain(model, row, class_index, disc, per_instance);
    std::vector<double> phi(model.n_features(), 0.0);
    for (const auto& cond : e.conditions) phi[cond.feature_pos] = cond.weight;
    return phi;
  };
}

namespace detail {

inline std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[a] < values[b];
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

// Spearman rank correlation with average ranks for ties. Degenerate series:
// two identical constant series correlate perfectly, anything else scores 0.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  bool x_const = std::all_of(x.begin(), x.end(),
                             [&](double v) { return v == x.front(); });
  bool y_const = std::all_of(y.begin(), y.end(),
                             [&](double v) { return v == y.front(); });
  if (x_const || y_const) return (x_const && y_const && x == y) ? 1.0 : 0.0;

  std::vector<double> rx = average_ranks(x);
  std::vector<double> ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double dx = rx[i] - mx, dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) return x == y ? 1.0 : 0.0;
  return sxy / std::sqrt(sxx * syy);
}

struct AttributionPanel {
  std::vector<std::vector<double>> phi;  // per instance
  std::vector<double> mean_abs;          // per feature
};

inline AttributionPanel explain_all(const std::vector<std::vector<double>>& rows,
                                    const std::vector<std::size_t>& classes,
                                    std::size_t d,
                                    const InstanceExplainer& explainer) {
  AttributionPanel panel;
  panel.phi.resize(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    panel.phi[i] = explainer(rows[i].data(), classes[i], i);
  });
  panel.mean_abs.assign(d, 0.0);
  for (const auto& phi : panel.phi)
    for (std::size_t j = 0; j < d; ++j) panel.mean_abs[j] += std::abs(phi[j]);
  for (double& v : panel.mean_abs) v /= static_cast<double>(rows.size());
  return panel;
}

}  // namespace detail

struct ConsistencyReport {
  double overall = 0;               // mean ranking correlation over runs
  std::vector<double> per_run;
  std::vector<double> per_feature;  // attribution-series correlation
};

// Stability of explanations under Gaussian data perturbation: per run, noise
// with sigma = noise_frac * per-feature std is added to the evaluation rows,
// attributions are recomputed for the same (original) predicted classes, and
// the mean-|phi| feature ranking is rank-correlated against the unperturbed
// one. Per-feature scores correlate each feature's per-instance attribution
// series between the original and perturbed data.
inline ConsistencyReport consistency(const TrainedModel& model,
                                     const std::vector<std::vector<double>>& rows,
                                     const InstanceExplainer& explainer,
                                     double noise_frac = 0.05,
                                     std::size_t runs = 5,
                                     std::uint64_t seed = 0) {
  if (rows.size() < 10)
    throw ValidationError("consistency needs at least 10 evaluation rows");
  const std::size_t d = model.n_features();
  const std::size_t n = rows.size();

  std::vector<std::size_t> classes(n);
  for (std::size_t i = 0; i < n; ++i) {
    detail::check_width(model, rows[i].size());
    classes[i] = argmax_lowest(predict_scores_row(model, rows[i].data()));
  }

  detail::AttributionPanel baseline =
      detail::explain_all(rows, classes, d, explainer);

  std::vector<double> feature_std(d, 0.0);
  {
    std::vector<double> mean(d, 0.0);
    for (const auto& row : rows)
      for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
    for (double& v : mean) v /= static_cast<double>(n);
    for (const auto& row : rows)
      for (std::size_t j = 0; j < d; ++j) {
        double diff = row[j] - mean[j];
        feature_std[j] += diff * diff;
      }
    for (double& v : feature_std) v = std::sqrt(v / static_cast<double>(n));
  }

  ConsistencyReport report;
  report.per_feature.assign(d, 0.0);

  for (std::size_t run = 0; run < runs; ++run) {
    Rng rng(derive_seed(seed, run));
    std::vector<std::vector<double>> perturbed = rows;
    for (auto& row : perturbed)
      for (std::size_t j = 0; j < d; ++j)
        row[j] += noise_frac * feature_std[j] * rng.gaussian();

    detail::AttributionPanel shifted =
        detail::explain_all(perturbed, classes, d, explainer);

    report.per_run.push_back(
        detail::spearman(baseline.mean_abs, shifted.mean_abs));

    for (std::size_t j = 0; j < d; ++j) {
      std::vector<double> series0(n), series1(n);
      for (std::size_t i = 0; i < n; ++i) {
        series0[i] = baseline.phi[i][j];
        series1[i] = shifted.phi[i][j];
      }
      report.per_feature[j] += detail::spearman(series0, series1);
    }
  }
  for (double r : report.per_run) report.overall += r;
  report.overall /= static_cast<double>(runs);
  for (double& v : report.per_feature) v /= static_cast<double>(runs);
  return report;
}

// Fraction of instances whose predicted label survives mean-imputation of
// everything outside their top-k attributed features.
inline double sufficiency(const TrainedModel& model,
                          const std::vector<std::vector<double>>& rows,
                          const InstanceExplainer& explainer, std::size_t k,
                          const std::vector<double>& background_mean) {
  const std::size_t d = model.n_features();
  if (k > d)
    throw ValidationError("sufficiency k exceeds the active feature count");
  if (background_mean.size() != d)
    throw ValidationError("background mean width mismatch");
  if (rows.empty()) throw ValidationError("sufficiency needs evaluation rows");

  std::vector<std::uint8_t> hit(rows.size(), 0);
  parallel_for(rows.size(), [&](std::size_t i) {
    detail::check_width(model, rows[i].size());
    std::size_t predicted = argmax_lowest(predict_scores_row(model, rows[i].data()));
    std::vector<double> phi = explainer(rows[i].data(), predicted, i);

    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(phi[a]) > std::abs(phi[b]);
    });

    std::vector<double> masked(background_mean);
    for (std::size_t r = 0; r < k; ++r) masked[order[r]] = rows[i][order[r]];
    std::size_t new_label = argmax_lowest(predict_scores_row(model, masked.data()));
    hit[i] = new_label == predicted ? 1 : 0;
  });

  double score = 0;
  for (std::uint8_t h : hit) score += h;
  return score / static_cast<double>(rows.size());
}

struct FaithfulnessConfig {
  double noise_frac = 0.05;
  std::size_t runs = 5;
  std::size_t top_k = 10;
  std::uint64_t seed = 0;
};

struct FaithfulnessReport {
  double overall_consistency = 0;
  std::vector<std::string> feature_names;
  std::vector<double> per_feature_consistency;
  double sufficiency_score = 0;
  FaithfulnessConfig config;
};

inline FaithfulnessReport faithfulness_report(
    const TrainedModel& model, const std::vector<std::vector<double>>& rows,
    const InstanceExplainer& explainer, const std::vector<double>& background_mean,
    const FaithfulnessConfig& config = {}) {
  FaithfulnessReport report;
  report.config = config;
  report.feature_names = model.features;
  ConsistencyReport c = consistency(model, rows, explainer, config.noise_frac,
                                    config.runs, config.seed);
  report.overall_consistency = c.overall;
  report.per_feature_consistency = c.per_feature;
  report.sufficiency_score =
      sufficiency(model, rows, explainer,
                  std::min(config.top_k, model.n_features()), background_mean);
  return report;
}

inline std::vector<double> column_means(const Background& bg) {
  std::vector<double> mean(bg.d, 0.0);
  for (std::size_t i = 0; i < bg.n; ++i)
    for (std::size_t j = 0; j < bg.d; ++j) mean[j] += bg.row(i)[j];
  for (double& v : mean) v /= static_cast<double>(bg.n);
  return mean;
}

}  // namespace flowsight
