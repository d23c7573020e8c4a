#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "flowsight/error.hpp"
#include "flowsight/features.hpp"

namespace flowsight {

struct CorrelationMatrix {
  std::vector<std::string> names;  // active features only
  std::vector<std::size_t> feature_indices;
  std::vector<double> values;  // d x d, row-major

  std::size_t size() const { return names.size(); }
  double at(std::size_t i, std::size_t j) const { return values[i * size() + j]; }
};

struct CorrelatedPair {
  std::size_t first;   // positions within the correlation matrix
  std::size_t second;
  double r;
};

struct CorrelationPruneResult {
  std::vector<CorrelatedPair> pairs;        // |r| > threshold, first < second
  std::vector<std::size_t> drop_positions;  // matrix positions to discard
};

struct MIReport {
  std::vector<std::string> names;
  std::vector<std::size_t> feature_indices;
  std::vector<double> scores;   // nats, aligned with names
  std::vector<std::size_t> ranking;  // positions sorted by descending score
};

struct PCAProjection {
  std::vector<std::string> names;  // input features
  std::vector<std::size_t> feature_indices;
  std::vector<double> mean;
  std::vector<double> scale;
  std::size_t n_components = 0;
  std::vector<double> components;  // k x d row-major, orthonormal rows
  std::vector<double> explained_variance;
  std::vector<double> explained_ratio;  // non-increasing

  double component_at(std::size_t k, std::size_t j) const {
    return components[k * names.size() + j];
  }
};

namespace detail {

inline std::vector<double> active_column(const FeatureMatrix& m, std::size_t j) {
  std::vector<double> col(m.n_rows());
  for (std::size_t r = 0; r < m.n_rows(); ++r) col[r] = m.at(r, j);
  return col;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) return 0.0;  // zero-variance convention
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace detail

// Pairwise linear correlation of all active features.
inline CorrelationMatrix pearson_matrix(const FeatureMatrix& m) {
  if (m.n_rows() < 2) throw ValidationError("pearson_matrix needs >= 2 rows");
  CorrelationMatrix c;
  c.feature_indices = m.active_indices();
  for (std::size_t j : c.feature_indices) c.names.push_back(m.names[j]);
  const std::size_t d = c.feature_indices.size();

  std::vector<std::vector<double>> cols(d);
  for (std::size_t a = 0; a < d; ++a)
    cols[a] = detail::active_column(m, c.feature_indices[a]);

  c.values.assign(d * d, 0.0);
  for (std::size_t a = 0; a < d; ++a) {
    c.values[a * d + a] = 1.0;
    for (std::size_t b = a + 1; b < d; ++b) {
      double r = detail::pearson(cols[a], cols[b]);
      c.values[a * d + b] = r;
      c.values[b * d + a] = r;
    }
  }
  return c;
}

// Flags every unordered pair above the threshold and picks a drop set: from
// each connected group of correlated features, the one with the highest MI
// (ties: lowest index) is kept and the rest are dropped.
inline CorrelationPruneResult correlated_pairs(
    const CorrelationMatrix& c, double threshold = 0.9,
    const std::vector<double>& mi_scores = {}) {
  const std::size_t d = c.size();
  CorrelationPruneResult result;

  std::vector<std::size_t> parent(d);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };

  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a + 1; b < d; ++b)
      if (std::abs(c.at(a, b)) > threshold) {
        result.pairs.push_back({a, b, c.at(a, b)});
        parent[find(a)] = find(b);
      }

  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t v = 0; v < d; ++v) groups[find(v)].push_back(v);
  for (auto& [root, members] : groups) {
    if (members.size() < 2) continue;
    std::size_t keep = members[0];
    for (std::size_t v : members) {
      double mv = v < mi_scores.size() ? mi_scores[v] : 0.0;
      double mk = keep < mi_scores.size() ? mi_scores[keep] : 0.0;
      if (mv > mk) keep = v;  // ties keep the lower index (first seen)
    }
    for (std::size_t v : members)
      if (v != keep) result.drop_positions.push_back(v);
  }
  std::sort(result.drop_positions.begin(), result.drop_positions.end());
  return result;
}

namespace detail {

// Discretizes one feature column: integer-valued columns with few distinct
// values keep their natural values; everything else gets equal-frequency
// bins (duplicate quantile edges collapse).
inline std::vector<int> discretize_for_mi(const std::vector<double>& col,
                                          std::size_t bins) {
  std::vector<double> distinct(col);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  bool integral = std::all_of(distinct.begin(), distinct.end(), [](double v) {
    return v == std::floor(v);
  });
  std::vector<int> out(col.size());
  if (integral && distinct.size() <= bins) {
    for (std::size_t i = 0; i < col.size(); ++i) {
      auto it = std::lower_bound(distinct.begin(), distinct.end(), col[i]);
      out[i] = static_cast<int>(it - distinct.begin());
    }
    return out;
  }

  std::vector<double> sorted(col);
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> edges;
  for (std::size_t b = 1; b < bins; ++b) {
    std::size_t idx = b * sorted.size() / bins;
    if (idx == 0 || idx >= sorted.size()) continue;
    edges.push_back(sorted[idx]);
  }
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  for (std::size_t i = 0; i < col.size(); ++i) {
    auto it = std::lower_bound(edges.begin(), edges.end(), col[i]);
    // values equal to an edge fall in the lower bin
    if (it != edges.end() && *it == col[i]) ++it;
    out[i] = static_cast<int>(it - edges.begin());
  }
  return out;
}

inline double plugin_mi(const std::vector<int>& x, const std::vector<int>& y) {
  const std::size_t n = x.size();
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> px, py;
  for (std::size_t i = 0; i < n; ++i) {
    joint[{x[i], y[i]}] += 1;
    px[x[i]] += 1;
    py[y[i]] += 1;
  }
  double mi = 0;
  for (const auto& [key, count] : joint) {
    double pxy = count / n;
    double marginal = (px[key.first] / n) * (py[key.second] / n);
    mi += pxy * std::log(pxy / marginal);
  }
  return std::max(mi, 0.0);
}

}  // namespace detail

// Per-feature mutual information with the label, in nats, using the
// equal-frequency plug-in estimator.
inline MIReport mutual_information(const FeatureMatrix& m, std::size_t bins = 20) {
  if (!m.has_labels()) throw ValidationError("mutual_information needs labels");

  std::vector<std::string> alphabet(m.labels);
  std::sort(alphabet.begin(), alphabet.end());
  alphabet.erase(std::unique(alphabet.begin(), alphabet.end()), alphabet.end());

  std::vector<int> y(m.n_rows());
  for (std::size_t r = 0; r < m.n_rows(); ++r)
    y[r] = static_cast<int>(std::lower_bound(alphabet.begin(), alphabet.end(),
                                             m.labels[r]) -
                            alphabet.begin());

  MIReport report;
  report.feature_indices = m.active_indices();
  for (std::size_t j : report.feature_indices) report.names.push_back(m.names[j]);
  report.scores.resize(report.names.size(), 0.0);

  if (alphabet.size() >= 2) {
    for (std::size_t a = 0; a < report.feature_indices.size(); ++a) {
      std::vector<double> col = detail::active_column(m, report.feature_indices[a]);
      report.scores[a] = detail::plugin_mi(detail::discretize_for_mi(col, bins), y);
    }
  }
  report.ranking.resize(report.scores.size());
  std::iota(report.ranking.begin(), report.ranking.end(), 0);
  std::stable_sort(report.ranking.begin(), report.ranking.end(),
                   [&](std::size_t a, std::size_t b) {
                     return report.scores[a] > report.scores[b];
                   });
  return report;
}

// Fits PCA on z-scored active features, keeping the smallest component count
// whose cumulative explained-variance ratio reaches `variance`.
inline PCAProjection pca_fit(const FeatureMatrix& m, double variance) {
  if (variance <= 0.0 || variance > 1.0)
    throw ValidationError("pca variance must be in (0, 1]");
  if (m.n_rows() < 2) throw ValidationError("pca_fit needs >= 2 rows");

  PCAProjection p;
  p.feature_indices = m.active_indices();
  for (std::size_t j : p.feature_indices) p.names.push_back(m.names[j]);
  const std::size_t d = p.feature_indices.size();
  const std::size_t n = m.n_rows();

  Eigen::MatrixXd x(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t a = 0; a < d; ++a)
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(a)) =
          m.at(r, p.feature_indices[a]);

  p.mean.resize(d);
  p.scale.resize(d);
  for (std::size_t a = 0; a < d; ++a) {
    auto col = x.col(static_cast<Eigen::Index>(a));
    double mean = col.mean();
    double var = (col.array() - mean).square().sum() / static_cast<double>(n);
    double scale = var > 0 ? std::sqrt(var) : 1.0;
    p.mean[a] = mean;
    p.scale[a] = scale;
    col = (col.array() - mean) / scale;
  }

  Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success)
    throw InternalError("pca eigendecomposition failed");

  // Eigen returns ascending eigenvalues; take them in descending order and
  // drop non-positive ones (degenerate directions).
  std::vector<std::pair<double, Eigen::Index>> order;
  for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i)
    order.emplace_back(solver.eigenvalues()(i), i);
  std::sort(order.begin(), order.end(), [](const auto& l, const auto& r) {
    return l.first > r.first;
  });

  double total = 0;
  for (const auto& [value, idx] : order) total += std::max(value, 0.0);
  if (total <= 0) throw DataError("pca: covariance has no positive variance");

  double cumulative = 0;
  for (const auto& [value, idx] : order) {
    if (value <= 1e-12) break;
    Eigen::VectorXd component = solver.eigenvectors().col(idx);
    // Deterministic sign: largest-magnitude coefficient is positive.
    Eigen::Index argmax = 0;
    component.cwiseAbs().maxCoeff(&argmax);
    if (component(argmax) < 0) component = -component;
    for (Eigen::Index a = 0; a < component.size(); ++a)
      p.components.push_back(component(a));
    p.explained_variance.push_back(value);
    p.explained_ratio.push_back(value / total);
    cumulative += value / total;
    ++p.n_components;
    if (cumulative >= variance) break;
  }
  return p;
}

// Projects rows onto the fitted components; output columns are PC1..PCk.
inline FeatureMatrix pca_apply(const PCAProjection& p, const FeatureMatrix& m) {
  const std::size_t d = p.feature_indices.size();
  std::vector<std::string> names;
  for (std::size_t k = 0; k < p.n_components; ++k)
    names.push_back("PC" + std::to_string(k + 1));
  FeatureMatrix out(std::move(names));
  out.labels = m.labels;

  std::vector<double> row(p.n_components);
  for (std::size_t r = 0; r < m.n_rows(); ++r) {
    for (std::size_t k = 0; k < p.n_components; ++k) {
      double acc = 0;
      for (std::size_t a = 0; a < d; ++a) {
        double z = (m.at(r, p.feature_indices[a]) - p.mean[a]) / p.scale[a];
        acc += z * p.component_at(k, a);
      }
      row[k] = acc;
    }
    out.add_row(row.data());
  }
  return out;
}

}  // namespace flowsight
