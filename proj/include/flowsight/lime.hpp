#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "flowsight/error.hpp"
#include "flowsight/features.hpp"
#include "flowsight/rng.hpp"
#include "flowsight/shap.hpp"

namespace flowsight {

// Per-feature quartile bins fitted on training data, with the bin occupancy
// frequencies used to drive perturbation sampling.
struct QuartileDiscretizer {
  struct FeatureBins {
    double min = 0, q1 = 0, q2 = 0, q3 = 0, max = 0;
    std::array<double, 4> freq = {0, 0, 0, 0};
    bool degenerate = false;  // no quartile spread; excluded from conditions
  };
  std::vector<std::string> names;
  std::vector<FeatureBins> features;

  static double quantile(const std::vector<double>& sorted, double p) {
    double pos = p * static_cast<double>(sorted.size() - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
  }

  int bin_of(std::size_t pos, double v) const {
    const FeatureBins& b = features[pos];
    if (v <= b.q1) return 0;
    if (v <= b.q2) return 1;
    if (v <= b.q3) return 2;
    return 3;
  }

  // Fits on the active features of a training matrix.
  static QuartileDiscretizer fit(const FeatureMatrix& m) {
    if (m.n_rows() < 2)
      throw ValidationError("quartile discretizer needs >= 2 training rows");
    QuartileDiscretizer disc;
    for (std::size_t j : m.active_indices()) {
      disc.names.push_back(m.names[j]);
      std::vector<double> col(m.n_rows());
      for (std::size_t r = 0; r < m.n_rows(); ++r) col[r] = m.at(r, j);
      std::sort(col.begin(), col.end());
      FeatureBins bins;
      bins.min = col.front();
      bins.max = col.back();
      bins.q1 = quantile(col, 0.25);
      bins.q2 = quantile(col, 0.50);
      bins.q3 = quantile(col, 0.75);
      bins.degenerate = !(bins.q1 < bins.q3);
      disc.features.push_back(bins);
      std::size_t pos = disc.features.size() - 1;
      for (double v : col)
        disc.features[pos].freq[static_cast<std::size_t>(disc.bin_of(pos, v))] +=
            1.0 / static_cast<double>(col.size());
    }
    return disc;
  }
};

struct LimeCondition {
  std::string feature;
  std::size_t feature_pos = 0;  // position among active features
  int bin = 0;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  double weight = 0;

  std::string render() const {
    char buf[128];
    if (bin == 0) {
      std::snprintf(buf, sizeof buf, "%s <= %.2f", feature.c_str(), upper);
    } else if (bin == 3) {
      std::snprintf(buf, sizeof buf, "%s > %.2f", feature.c_str(), lower);
    } else {
      std::snprintf(buf, sizeof buf, "%.2f < %s <= %.2f", lower,
                    feature.c_str(), upper);
    }
    return buf;
  }
};

struct LimeExplanation {
  std::vector<LimeCondition> conditions;  // K entries, |weight| descending
  double intercept = 0;
  double r2 = 0;
  std::string class_label;
  std::size_t instance_index = 0;
};

struct LimeOptions {
  std::size_t top_k = 10;
  std::size_t n_perturb = 5000;
  std::uint64_t seed = 0;
  double ridge_lambda = 1.0;
  double kernel_width_factor = 0.75;
};

// Local surrogate explanation: perturb in quartile-bin space around the
// training distribution, fit a proximity-weighted ridge regression of the
// class score on bin-match indicators, and keep the K largest-weight
// conditions rendered from the instance's own bins.
inline LimeExplanation lime_explain(const ScoreFunction& f, const double* x,
                                    const QuartileDiscretizer& disc,
                                    const LimeOptions& options = {}) {
  const std::size_t d = disc.features.size();
  if (f.n_features != d)
    throw ValidationError("discretizer width does not match the score function");
  if (options.n_perturb < 10)
    throw ValidationError("lime needs at least 10 perturbation samples");

  std::vector<std::size_t> usable;
  for (std::size_t j = 0; j < d; ++j)
    if (!disc.features[j].degenerate) usable.push_back(j);
  const std::size_t du = usable.size();
  if (du == 0) throw DataError("all features are degenerate; nothing to explain");

  std::vector<int> x_bins(d, 0);
  for (std::size_t j = 0; j < d; ++j)
    x_bins[j] = disc.bin_of(j, x[j]);

  Rng rng(options.seed);
  const std::size_t n = options.n_perturb;

  Eigen::MatrixXd z(n, du);
  Eigen::VectorXd y(n), pi(n);
  std::vector<double> sample(d);
  const double sigma2 = options.kernel_width_factor *
                        options.kernel_width_factor * static_cast<double>(du);

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) sample[j] = x[j];
    double mismatch = 0;
    for (std::size_t u = 0; u < du; ++u) {
      std::size_t j = usable[u];
      const auto& bins = disc.features[j];
      double roll = rng.uniform();
      int bin = 0;
      double acc = 0;
      for (; bin < 3; ++bin) {
        acc += bins.freq[static_cast<std::size_t>(bin)];
        if (roll < acc) break;
      }
      double lo, hi;
      switch (bin) {
        case 0: lo = bins.min; hi = bins.q1; break;
        case 1: lo = bins.q1; hi = bins.q2; break;
        case 2: lo = bins.q2; hi = bins.q3; break;
        default: lo = bins.q3; hi = bins.max; break;
      }
      sample[j] = rng.uniform(lo, hi);
      bool match = bin == x_bins[j];
      z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(u)) =
          match ? 1.0 : 0.0;
      if (!match) mismatch += 1.0;
    }
    y(static_cast<Eigen::Index>(i)) = f(sample.data());
    pi(static_cast<Eigen::Index>(i)) = std::exp(-mismatch / sigma2);
  }

  // Weighted ridge with an unpenalized intercept, via weighted centering.
  double weight_total = pi.sum();
  Eigen::VectorXd z_mean = (z.transpose() * pi) / weight_total;
  double y_mean = y.dot(pi) / weight_total;

  Eigen::MatrixXd zc = z.rowwise() - z_mean.transpose();
  Eigen::VectorXd yc = y.array() - y_mean;
  Eigen::MatrixXd gram = zc.transpose() * pi.asDiagonal() * zc;
  gram.diagonal().array() += options.ridge_lambda;
  Eigen::VectorXd beta = Eigen::LDLT<Eigen::MatrixXd>(gram).solve(
      zc.transpose() * (pi.asDiagonal() * yc));

  LimeExplanation out;
  out.intercept = y_mean - z_mean.dot(beta);

  Eigen::VectorXd residual = yc - zc * beta;
  double ss_res = (residual.array().square() * pi.array()).sum();
  double ss_tot = (yc.array().square() * pi.array()).sum();
  out.r2 = ss_tot > 1e-300 ? 1.0 - ss_res / ss_tot : 1.0;

  std::vector<std::size_t> order(du);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(beta(static_cast<Eigen::Index>(a))) >
           std::abs(beta(static_cast<Eigen::Index>(b)));
  });

  std::size_t keep = std::min(options.top_k, du);
  for (std::size_t r = 0; r < keep; ++r) {
    std::size_t u = order[r];
    std::size_t j = usable[u];
    const auto& bins = disc.features[j];
    LimeCondition cond;
    cond.feature = disc.names[j];
    cond.feature_pos = j;
    cond.bin = x_bins[j];
    cond.weight = beta(static_cast<Eigen::Index>(u));
    switch (cond.bin) {
      case 0: cond.upper = bins.q1; break;
      case 1: cond.lower = bins.q1; cond.upper = bins.q2; break;
      case 2: cond.lower = bins.q2; cond.upper = bins.q3; break;
      default: cond.lower = bins.q3; break;
    }
    out.conditions.push_back(std::move(cond));
  }
  return out;
}

// Convenience wrapper for a trained model and class index.
inline LimeExplanation lime_explain(const TrainedModel& model, const double* x,
                                    std::size_t class_index,
                                    const QuartileDiscretizer& disc,
                                    const LimeOptions& options = {}) {
  ScoreFunction f = make_score_function(model, class_index);
  LimeExplanation out = lime_explain(f, x, disc, options);
  out.class_label = model.labels[class_index];
  return out;
}

}  // namespace flowsight
