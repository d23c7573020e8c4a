#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "flowsight/shap.hpp"
#include "support/oracles.hpp"

using namespace flowsight;

namespace {

ScoreFunction wrap(std::size_t d, std::function<double(const double*)> fn) {
  ScoreFunction f;
  f.n_features = d;
  f.eval = std::move(fn);
  return f;
}

}  // namespace

TEST_CASE("additive models attribute each term to its own feature") {
  // f = g1(x0) + g2(x1) with a third irrelevant feature.
  auto g1 = [](double v) { return 3.0 * v * v; };
  auto g2 = [](double v) { return std::sin(v); };
  ScoreFunction f = wrap(3, [&](const double* row) {
    return g1(row[0]) + g2(row[1]);
  });

  Rng rng(17);
  Background bg = test_oracles::random_background(32, 3, rng);
  std::vector<double> x = {0.8, -0.4, 0.9};
  Attribution a = exact_shapley(f, x.data(), bg);

  double mean_g1 = 0, mean_g2 = 0;
  for (std::size_t b = 0; b < bg.n; ++b) {
    mean_g1 += g1(bg.row(b)[0]);
    mean_g2 += g2(bg.row(b)[1]);
  }
  mean_g1 /= static_cast<double>(bg.n);
  mean_g2 /= static_cast<double>(bg.n);

  CHECK(a.phi[0] == Catch::Approx(g1(x[0]) - mean_g1).margin(1e-9));
  CHECK(a.phi[1] == Catch::Approx(g2(x[1]) - mean_g2).margin(1e-9));
  CHECK(a.phi[2] == Catch::Approx(0.0).margin(1e-12));
  CHECK(a.base_value + a.phi[0] + a.phi[1] + a.phi[2] ==
        Catch::Approx(f(x.data())).margin(1e-9));
}

TEST_CASE("symmetric features receive equal attributions") {
  ScoreFunction f = wrap(2, [](const double* row) { return row[0] + row[1]; });
  // Background symmetric under swapping the two coordinates.
  Background bg;
  bg.n = 4;
  bg.d = 2;
  bg.x = {0.3, -0.7, -0.7, 0.3, 1.1, 0.2, 0.2, 1.1};
  std::vector<double> x = {0.5, 0.5};
  Attribution a = exact_shapley(f, x.data(), bg);
  CHECK(a.phi[0] == Catch::Approx(a.phi[1]).margin(1e-12));
}

TEST_CASE("dummy features get zero attribution by enumeration") {
  ScoreFunction f = wrap(4, [](const double* row) {
    return row[0] * 2.0 + row[2] * row[2];  // ignores features 1 and 3
  });
  Rng rng(5);
  Background bg = test_oracles::random_background(16, 4, rng);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> x = test_oracles::random_instance(4, rng);
    Attribution a = exact_shapley(f, x.data(), bg);
    CHECK(a.phi[1] == Catch::Approx(0.0).margin(1e-12));
    CHECK(a.phi[3] == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("attributions are linear in the score function") {
  ScoreFunction f1 = wrap(3, [](const double* row) { return row[0] * row[1]; });
  ScoreFunction f2 = wrap(3, [](const double* row) {
    return std::cos(row[2]) - row[0];
  });
  ScoreFunction sum = wrap(3, [&](const double* row) {
    return f1(row) + f2(row);
  });
  Rng rng(29);
  Background bg = test_oracles::random_background(20, 3, rng);
  std::vector<double> x = test_oracles::random_instance(3, rng);
  Attribution a1 = exact_shapley(f1, x.data(), bg);
  Attribution a2 = exact_shapley(f2, x.data(), bg);
  Attribution as = exact_shapley(sum, x.data(), bg);
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(as.phi[j] == Catch::Approx(a1.phi[j] + a2.phi[j]).margin(1e-10));
}

TEST_CASE("positive scaling of the score scales attributions and keeps ranks") {
  ScoreFunction f = wrap(3, [](const double* row) {
    return 2.0 * row[0] - 0.5 * row[1] + row[2] * row[1];
  });
  ScoreFunction scaled = wrap(3, [&](const double* row) { return 4.0 * f(row); });
  Rng rng(31);
  Background bg = test_oracles::random_background(12, 3, rng);
  std::vector<double> x = test_oracles::random_instance(3, rng);
  Attribution a = exact_shapley(f, x.data(), bg);
  Attribution b = exact_shapley(scaled, x.data(), bg);
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(b.phi[j] == Catch::Approx(4.0 * a.phi[j]).margin(1e-9));
}

TEST_CASE("exact enumeration refuses too many features") {
  ScoreFunction f = wrap(16, [](const double*) { return 0.0; });
  Background bg;
  bg.n = 1;
  bg.d = 16;
  bg.x.assign(16, 0.0);
  std::vector<double> x(16, 0.0);
  try {
    exact_shapley(f, x.data(), bg);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    std::string what = e.what();
    CHECK(what.find("tree") != std::string::npos);
    CHECK(what.find("kernel") != std::string::npos);
  }
}

TEST_CASE("tree traversal equals exact enumeration on random ensembles") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    std::size_t d = 6 + seed;  // 7..12
    TrainedModel model =
        test_oracles::random_margin_ensemble(d, 3, 4, 4, 1000 + seed);
    Rng rng(seed * 31);
    Background bg = test_oracles::random_background(16, d, rng);
    ScoreFunction f = make_score_function(model, 1);

    double max_delta = 0;
    for (int i = 0; i < 20; ++i) {
      std::vector<double> x = test_oracles::random_instance(d, rng);
      Attribution fast = tree_shap(model, x.data(), 1, bg);
      Attribution exact = exact_shapley(f, x.data(), bg);
      for (std::size_t j = 0; j < d; ++j)
        max_delta = std::max(max_delta, std::abs(fast.phi[j] - exact.phi[j]));
      CHECK(fast.base_value == Catch::Approx(exact.base_value).margin(1e-9));
      CHECK(fast.base_value + std::accumulate(fast.phi.begin(), fast.phi.end(), 0.0) ==
            Catch::Approx(f(x.data())).margin(1e-6));
    }
    INFO("seed " << seed);
    CHECK(max_delta <= 1e-9);
  }
}

TEST_CASE("doubling an ensemble doubles its attributions") {
  TrainedModel single = test_oracles::random_margin_ensemble(6, 2, 1, 3, 99);
  TrainedModel doubled = single;
  {
    auto& ensemble = std::get<TreeEnsembleParams>(doubled.params);
    ensemble.trees.push_back(ensemble.trees[0]);
    ensemble.tree_weights.push_back(1.0);
  }
  Rng rng(12);
  Background bg = test_oracles::random_background(10, 6, rng);
  std::vector<double> x = test_oracles::random_instance(6, rng);
  Attribution a = tree_shap(single, x.data(), 0, bg);
  Attribution b = tree_shap(doubled, x.data(), 0, bg);
  for (std::size_t j = 0; j < 6; ++j)
    CHECK(b.phi[j] == Catch::Approx(2.0 * a.phi[j]).margin(1e-12));
}

TEST_CASE("explaining a background clone yields all-zero attributions") {
  TrainedModel model = test_oracles::random_margin_ensemble(5, 2, 3, 3, 7);
  std::vector<double> x = {0.2, -0.3, 0.9, 0.0, -1.2};
  Background bg;
  bg.n = 8;
  bg.d = 5;
  for (std::size_t i = 0; i < bg.n; ++i)
    bg.x.insert(bg.x.end(), x.begin(), x.end());
  Attribution a = tree_shap(model, x.data(), 1, bg);
  for (double phi : a.phi) CHECK(phi == Catch::Approx(0.0).margin(1e-12));
  CHECK(a.base_value == Catch::Approx(a.fx).margin(1e-12));
}

TEST_CASE("tree_shap validates the model kind") {
  FeatureMatrix m{{"a", "b"}};
  double r1[2] = {0, 1}, r2[2] = {1, 0}, r3[2] = {0, 0}, r4[2] = {1, 1};
  m.add_row(r1, "A");
  m.add_row(r2, "B");
  m.add_row(r3, "A");
  m.add_row(r4, "B");
  TrainedModel knn = train(ModelSpec::defaults(ModelKind::knn), m);
  Background bg;
  bg.n = 1;
  bg.d = 2;
  bg.x = {0.0, 0.0};
  std::vector<double> x = {1.0, 1.0};
  CHECK_THROWS_AS(tree_shap(knn, x.data(), 0, bg), ValidationError);
}

TEST_CASE("kernel SHAP with a complete design reproduces exact values") {
  const std::size_t d = 8;
  TrainedModel model = test_oracles::random_margin_ensemble(d, 2, 4, 3, 404);
  Rng rng(71);
  Background bg = test_oracles::random_background(12, d, rng);
  ScoreFunction f = make_score_function(model, 0);
  for (int i = 0; i < 5; ++i) {
    std::vector<double> x = test_oracles::random_instance(d, rng);
    Attribution exact = exact_shapley(f, x.data(), bg);
    Attribution kernel = kernel_shap(f, x.data(), bg, std::size_t{1} << d, 1234);
    for (std::size_t j = 0; j < d; ++j)
      CHECK(kernel.phi[j] == Catch::Approx(exact.phi[j]).margin(1e-9));
  }
}

TEST_CASE("sampled kernel SHAP stays close to exact values") {
  const std::size_t d = 12;
  TrainedModel model = test_oracles::random_margin_ensemble(d, 2, 5, 4, 808);
  Rng rng(13);
  Background bg = test_oracles::random_background(16, d, rng);
  ScoreFunction f = make_score_function(model, 1);

  double range_lo = 1e300, range_hi = -1e300;
  for (std::size_t b = 0; b < bg.n; ++b) {
    double v = f(bg.row(b));
    range_lo = std::min(range_lo, v);
    range_hi = std::max(range_hi, v);
  }
  double range = range_hi - range_lo;
  REQUIRE(range > 0);

  std::vector<double> x = test_oracles::random_instance(d, rng);
  Attribution exact = exact_shapley(f, x.data(), bg);
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Attribution kernel = kernel_shap(f, x.data(), bg, 2000, seed);
    for (std::size_t j = 0; j < d; ++j)
      worst = std::max(worst, std::abs(kernel.phi[j] - exact.phi[j]));
    // The efficiency constraint holds exactly even when sampling.
    double sum = std::accumulate(kernel.phi.begin(), kernel.phi.end(), 0.0);
    CHECK(kernel.base_value + sum == Catch::Approx(f(x.data())).margin(1e-9));
  }
  CHECK(worst < 0.1 * range);
}

TEST_CASE("kernel SHAP of a constant function is zero") {
  ScoreFunction f = wrap(6, [](const double*) { return 3.5; });
  Rng rng(2);
  Background bg = test_oracles::random_background(8, 6, rng);
  std::vector<double> x = test_oracles::random_instance(6, rng);
  Attribution a = kernel_shap(f, x.data(), bg, 256, 5);
  for (double phi : a.phi) CHECK(phi == Catch::Approx(0.0).margin(1e-9));
  Attribution e = exact_shapley(f, x.data(), bg);
  for (double phi : e.phi) CHECK(phi == 0.0);
}

TEST_CASE("kernel SHAP is deterministic under its seed") {
  const std::size_t d = 10;
  TrainedModel model = test_oracles::random_margin_ensemble(d, 2, 3, 4, 55);
  Rng rng(3);
  Background bg = test_oracles::random_background(10, d, rng);
  ScoreFunction f = make_score_function(model, 0);
  std::vector<double> x = test_oracles::random_instance(d, rng);
  Attribution a = kernel_shap(f, x.data(), bg, 300, 42);
  Attribution b = kernel_shap(f, x.data(), bg, 300, 42);
  for (std::size_t j = 0; j < d; ++j) CHECK(a.phi[j] == b.phi[j]);
  CHECK_THROWS_AS(kernel_shap(f, x.data(), bg, 2 * d + 1, 42), ValidationError);
}

TEST_CASE("mean absolute attributions aggregate per-instance values") {
  const std::size_t d = 6;
  TrainedModel model = test_oracles::random_margin_ensemble(d, 2, 3, 3, 21);
  Rng rng(8);
  Background bg = test_oracles::random_background(10, d, rng);

  FeatureMatrix m{std::vector<std::string>(model.features)};
  std::vector<double> row = test_oracles::random_instance(d, rng);
  m.add_row(row.data(), "C0");

  SECTION("a single row reduces to that row's |phi|") {
    MeanAbsAttributions agg = mean_abs_attributions(model, m, 0, bg);
    Attribution a = tree_shap(model, row.data(), 0, bg);
    for (std::size_t j = 0; j < d; ++j)
      CHECK(agg.scores[j] == Catch::Approx(std::abs(a.phi[j])).margin(1e-12));
    // Ranking is by descending score.
    for (std::size_t r = 1; r < agg.ranking.size(); ++r)
      CHECK(agg.scores[agg.ranking[r - 1]] >= agg.scores[agg.ranking[r]]);
  }

  SECTION("duplicating rows leaves the mean unchanged") {
    FeatureMatrix doubled = m;
    doubled.add_row(row.data(), "C0");
    MeanAbsAttributions once = mean_abs_attributions(model, m, 0, bg);
    MeanAbsAttributions twice = mean_abs_attributions(model, doubled, 0, bg);
    for (std::size_t j = 0; j < d; ++j)
      CHECK(once.scores[j] == Catch::Approx(twice.scores[j]).margin(1e-12));
  }

  SECTION("features absent from every tree score zero") {
    // Build a single-tree model that only ever splits feature 0.
    TrainedModel tiny = model;
    TreeEnsembleParams ensemble;
    Tree tree;
    tree.nodes.resize(3);
    tree.nodes[0].feature = 0;
    tree.nodes[0].threshold = 0.0;
    tree.nodes[0].left = 1;
    tree.nodes[0].right = 2;
    tree.nodes[1].feature = -1;
    tree.nodes[1].values = {1.0, 0.0};
    tree.nodes[2].feature = -1;
    tree.nodes[2].values = {0.0, 1.0};
    ensemble.trees.push_back(std::move(tree));
    ensemble.tree_weights.push_back(1.0);
    tiny.params = std::move(ensemble);

    MeanAbsAttributions agg = mean_abs_attributions(tiny, m, 0, bg);
    for (std::size_t j = 1; j < d; ++j) CHECK(agg.scores[j] == 0.0);
  }
}

TEST_CASE("score function adapter validates modes") {
  FeatureMatrix m{{"a", "b"}};
  double r1[2] = {0, 1}, r2[2] = {1, 0}, r3[2] = {0.2, 0.8}, r4[2] = {0.9, 0.1};
  m.add_row(r1, "A");
  m.add_row(r2, "B");
  m.add_row(r3, "A");
  m.add_row(r4, "B");
  ModelSpec rf_spec = ModelSpec::defaults(ModelKind::rf, 3);
  rf_spec.n_estimators = 5;
  TrainedModel rf_model = train(rf_spec, m);
  CHECK_THROWS_AS(make_score_function(rf_model, 0, ScoreMode::margin),
                  ValidationError);
  CHECK_THROWS_AS(make_score_function(rf_model, 7), ValidationError);

  ModelSpec xgb_spec = ModelSpec::defaults(ModelKind::xgb, 3);
  xgb_spec.n_estimators = 5;
  xgb_spec.max_depth = 3;
  TrainedModel xgb_model = train(xgb_spec, m);
  CHECK_THROWS_AS(make_score_function(xgb_model, 0, ScoreMode::probability),
                  ValidationError);
  CHECK(default_score_mode(xgb_model) == ScoreMode::margin);
  CHECK(default_score_mode(rf_model) == ScoreMode::probability);
}
