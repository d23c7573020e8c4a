#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "flowsight/rng.hpp"
#include "flowsight/stats.hpp"

using namespace flowsight;

namespace {

FeatureMatrix matrix_from_columns(const std::vector<std::string>& names,
                                  const std::vector<std::vector<double>>& cols,
                                  std::vector<std::string> labels = {}) {
  FeatureMatrix m{std::vector<std::string>(names)};
  std::size_t n = cols.front().size();
  std::vector<double> row(names.size());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < names.size(); ++j) row[j] = cols[j][r];
    m.add_row(row.data());
  }
  m.labels = std::move(labels);
  return m;
}

}  // namespace

TEST_CASE("pearson detects exact linear relationships") {
  std::vector<double> x, y_pos, y_neg;
  for (int i = 0; i < 50; ++i) {
    x.push_back(i * 0.37 + 1);
    y_pos.push_back(2.0 * x.back());
    y_neg.push_back(-x.back() + 17.0);
  }
  CorrelationMatrix c = pearson_matrix(
      matrix_from_columns({"x", "y2x", "yneg"}, {x, y_pos, y_neg}));
  CHECK(c.at(0, 1) == Catch::Approx(1.0).margin(1e-12));
  CHECK(c.at(0, 2) == Catch::Approx(-1.0).margin(1e-12));
  CHECK(c.at(0, 0) == 1.0);
  CHECK(c.at(1, 2) == Catch::Approx(-1.0).margin(1e-12));
  CHECK(c.at(1, 0) == c.at(0, 1));
}

TEST_CASE("independent uniforms are near-uncorrelated, cross-checked by least squares") {
  Rng rng(7);
  const std::size_t n = 10'000;
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = rng.uniform();
    y[i] = rng.uniform();
  }
  CorrelationMatrix c = pearson_matrix(matrix_from_columns({"x", "y"}, {x, y}));
  double r = c.at(0, 1);
  CHECK(std::abs(r) < 0.05);

  // Independent route: straight-line least squares slope, converted to r.
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  double slope = sxy / sxx;
  double r_from_fit = slope * std::sqrt(sxx / syy);
  CHECK(r == Catch::Approx(r_from_fit).margin(1e-12));
}

TEST_CASE("pearson matrix is invariant under affine transforms up to scale sign") {
  Rng rng(99);
  std::vector<double> x(200), y(200);
  for (auto& v : x) v = rng.gaussian();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.5 * x[i] + rng.gaussian();

  CorrelationMatrix base = pearson_matrix(matrix_from_columns({"x", "y"}, {x, y}));
  std::vector<double> x2(x), y2(y);
  for (auto& v : x2) v = 3.0 * v + 11.0;   // positive scale: r unchanged
  for (auto& v : y2) v = -2.0 * v + 5.0;   // negative scale: r flips sign
  CorrelationMatrix t = pearson_matrix(matrix_from_columns({"x", "y"}, {x2, y2}));
  CHECK(t.at(0, 1) == Catch::Approx(-base.at(0, 1)).margin(1e-12));
}

TEST_CASE("correlated pair flagging and drop policy") {
  SECTION("near-duplicate columns are flagged and the lower-MI one dropped") {
    Rng rng(3);
    std::vector<double> totlen(400), subflow(400), other(400);
    for (std::size_t i = 0; i < totlen.size(); ++i) {
      totlen[i] = rng.uniform(0, 1000);
      subflow[i] = totlen[i] + rng.gaussian() * 12.0;  // r ~ 0.99
      other[i] = rng.uniform();
    }
    FeatureMatrix m = matrix_from_columns(
        {"TotLen Fwd Pkts", "Subflow Fwd Byts", "Other"}, {totlen, subflow, other});
    CorrelationMatrix c = pearson_matrix(m);
    auto result = correlated_pairs(c, 0.9, {0.8, 0.3, 0.1});
    REQUIRE(result.pairs.size() == 1);
    CHECK(result.pairs[0].first == 0);
    CHECK(result.pairs[0].second == 1);
    CHECK(result.pairs[0].r > 0.97);
    REQUIRE(result.drop_positions.size() == 1);
    CHECK(c.names[result.drop_positions[0]] == "Subflow Fwd Byts");
  }

  SECTION("uncorrelated features produce an empty result") {
    CorrelationMatrix c;
    c.names = {"a", "b", "c"};
    c.feature_indices = {0, 1, 2};
    c.values = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    auto result = correlated_pairs(c);
    CHECK(result.pairs.empty());
    CHECK(result.drop_positions.empty());
  }

  SECTION("a transitive group keeps exactly one feature") {
    CorrelationMatrix c;
    c.names = {"a", "b", "c"};
    c.feature_indices = {0, 1, 2};
    c.values = {1, 0.99, 0.99, 0.99, 1, 0.99, 0.99, 0.99, 1};
    auto result = correlated_pairs(c, 0.9, {});
    CHECK(result.pairs.size() == 3);
    REQUIRE(result.drop_positions.size() == 2);
    CHECK(result.drop_positions[0] == 1);  // ties keep the lowest index
    CHECK(result.drop_positions[1] == 2);
  }
}

TEST_CASE("mutual information of a deterministic labeling equals the label entropy") {
  // 4 equiprobable classes, label fully determined by the feature.
  const std::size_t per_class = 500;
  std::vector<double> x;
  std::vector<std::string> labels;
  for (int c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      x.push_back(c);
      labels.push_back("C" + std::to_string(c));
    }
  FeatureMatrix m = matrix_from_columns({"f"}, {x}, labels);
  MIReport report = mutual_information(m);
  CHECK(report.scores[0] == Catch::Approx(std::log(4.0)).margin(0.01));
}

TEST_CASE("mutual information of independent data is near zero") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    Rng rng(seed);
    const std::size_t n = 20'000;
    std::vector<double> x(n);
    std::vector<std::string> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.uniform();
      labels[i] = "L" + std::to_string(rng.bounded(4));
    }
    MIReport report = mutual_information(matrix_from_columns({"f"}, {x}, labels));
    CHECK(report.scores[0] >= 0.0);
    CHECK(report.scores[0] < 0.02);
  }
}

TEST_CASE("mutual information edge cases") {
  SECTION("constant feature scores zero") {
    std::vector<double> x(100, 3.0);
    std::vector<std::string> labels;
    for (int i = 0; i < 100; ++i) labels.push_back(i % 2 ? "A" : "B");
    MIReport report = mutual_information(matrix_from_columns({"f"}, {x}, labels));
    CHECK(report.scores[0] == 0.0);
  }
  SECTION("single label value yields an all-zero report") {
    std::vector<double> x;
    std::vector<std::string> labels;
    for (int i = 0; i < 50; ++i) {
      x.push_back(i);
      labels.push_back("only");
    }
    MIReport report = mutual_information(matrix_from_columns({"f"}, {x}, labels));
    CHECK(report.scores[0] == 0.0);
  }
  SECTION("missing labels are an error") {
    std::vector<double> x(10, 1.0);
    FeatureMatrix m = matrix_from_columns({"f"}, {x});
    CHECK_THROWS_AS(mutual_information(m), ValidationError);
  }
}

TEST_CASE("mutual information is invariant under strictly monotone transforms") {
  Rng rng(11);
  const std::size_t n = 4000;
  std::vector<double> x(n), x_cubed(n);
  std::vector<std::string> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = rng.uniform(0.1, 10.0);
    x_cubed[i] = x[i] * x[i] * x[i];
    labels[i] = x[i] > 5.0 ? (rng.uniform() < 0.8 ? "hi" : "lo")
                           : (rng.uniform() < 0.3 ? "hi" : "lo");
  }
  MIReport a = mutual_information(matrix_from_columns({"f"}, {x}, labels));
  MIReport b = mutual_information(matrix_from_columns({"f"}, {x_cubed}, labels));
  CHECK(a.scores[0] == b.scores[0]);  // equal-frequency bins make this exact
  CHECK(a.scores[0] > 0.05);
}

TEST_CASE("pca keeps one component when a dimension is constant") {
  Rng rng(21);
  std::vector<double> x(100), c(100, 7.0);
  for (auto& v : x) v = rng.gaussian();
  PCAProjection p = pca_fit(matrix_from_columns({"x", "const"}, {x, c}), 0.95);
  CHECK(p.n_components == 1);
  CHECK(p.explained_ratio[0] >= 0.95);
}

TEST_CASE("isotropic gaussian needs all components at 99 percent variance") {
  Rng rng(33);
  const std::size_t n = 6000;
  std::vector<std::vector<double>> cols(3, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) cols[j][i] = rng.gaussian();
  FeatureMatrix m = matrix_from_columns({"a", "b", "c"}, cols);
  PCAProjection p = pca_fit(m, 0.99);
  CHECK(p.n_components == 3);
  for (double ratio : p.explained_ratio)
    CHECK(ratio == Catch::Approx(1.0 / 3.0).margin(0.05));

  // Brute-force verification: each component satisfies the eigen identity
  // for the covariance of the z-scored data, and eigenvalues sum to trace.
  Eigen::MatrixXd z(n, 3);
  for (std::size_t i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j)
      z(static_cast<Eigen::Index>(i), j) = (cols[j][i] - p.mean[j]) / p.scale[j];
  Eigen::MatrixXd cov = (z.transpose() * z) / static_cast<double>(n - 1);
  for (std::size_t k = 0; k < p.n_components; ++k) {
    Eigen::Vector3d v(p.component_at(k, 0), p.component_at(k, 1), p.component_at(k, 2));
    Eigen::Vector3d residual = cov * v - p.explained_variance[k] * v;
    CHECK(residual.norm() < 1e-9);
  }
  double trace = cov(0, 0) + cov(1, 1) + cov(2, 2);
  double sum = p.explained_variance[0] + p.explained_variance[1] + p.explained_variance[2];
  CHECK(sum == Catch::Approx(trace).margin(1e-9));
}

TEST_CASE("pca component rows are orthonormal and ratios behave") {
  Rng rng(55);
  const std::size_t n = 500, d = 8;
  std::vector<std::vector<double>> cols(d, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double shared = rng.gaussian();
    for (std::size_t j = 0; j < d; ++j)
      cols[j][i] = shared * (j < 3 ? 2.0 : 0.2) + rng.gaussian();
  }
  std::vector<std::string> names;
  for (std::size_t j = 0; j < d; ++j) names.push_back("f" + std::to_string(j));
  PCAProjection p = pca_fit(matrix_from_columns(names, cols), 0.95);

  for (std::size_t a = 0; a < p.n_components; ++a)
    for (std::size_t b = 0; b < p.n_components; ++b) {
      double dot = 0;
      for (std::size_t j = 0; j < d; ++j)
        dot += p.component_at(a, j) * p.component_at(b, j);
      CHECK(dot == Catch::Approx(a == b ? 1.0 : 0.0).margin(1e-9));
    }
  for (std::size_t k = 1; k < p.n_components; ++k)
    CHECK(p.explained_ratio[k] <= p.explained_ratio[k - 1] + 1e-12);
  double cum = 0, total = 0;
  for (double ratio : p.explained_ratio) cum += ratio;
  CHECK(cum >= 0.95);
  for (double ratio : p.explained_ratio) total += ratio;
  CHECK(total <= 1.0 + 1e-9);
}

TEST_CASE("reconstruction error equals the dropped eigenvalue mass") {
  Rng rng(77);
  const std::size_t n = 2000, d = 5;
  std::vector<std::vector<double>> cols(d, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double s1 = rng.gaussian(), s2 = rng.gaussian();
    cols[0][i] = 3 * s1;
    cols[1][i] = 3 * s1 + 0.5 * s2;
    cols[2][i] = s2 + 0.1 * rng.gaussian();
    cols[3][i] = 0.5 * rng.gaussian();
    cols[4][i] = 0.25 * rng.gaussian();
  }
  std::vector<std::string> names = {"a", "b", "c", "d", "e"};
  FeatureMatrix m = matrix_from_columns(names, cols);
  PCAProjection p = pca_fit(m, 0.8);
  REQUIRE(p.n_components < d);

  // Total variance (of z-scored data) = sum of all eigenvalues; dropped mass
  // is total minus what the kept components explain.
  Eigen::MatrixXd z(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (cols[j][i] - p.mean[j]) / p.scale[j];
  Eigen::MatrixXd cov = (z.transpose() * z) / static_cast<double>(n - 1);
  double kept = 0;
  for (double ev : p.explained_variance) kept += ev;
  double dropped = cov.trace() - kept;

  FeatureMatrix projected = pca_apply(p, m);
  double err = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double recon = 0;
      for (std::size_t k = 0; k < p.n_components; ++k)
        recon += projected.at(i, k) * p.component_at(k, j);
      double diff = z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - recon;
      err += diff * diff;
    }
  }
  err /= static_cast<double>(n - 1);
  CHECK(err == Catch::Approx(dropped).margin(1e-6));
}

TEST_CASE("pca validates its inputs") {
  std::vector<double> x = {1, 2, 3};
  FeatureMatrix m = matrix_from_columns({"x"}, {x});
  CHECK_THROWS_AS(pca_fit(m, 0.0), ValidationError);
  CHECK_THROWS_AS(pca_fit(m, 1.5), ValidationError);
  FeatureMatrix one = matrix_from_columns({"x"}, {{1.0}});
  CHECK_THROWS_AS(pca_fit(one, 0.95), ValidationError);
}
