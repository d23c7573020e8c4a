// Acceptance suite: runs every release criterion at its stated tolerance and
// prints one [PASS]/[FAIL] line per criterion. Exits nonzero on any failure.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <vector>

#include "flowsight/flowsight.hpp"
#include "support/datasets.hpp"
#include "support/oracles.hpp"
#include "support/pcap_builder.hpp"

#ifndef FLOWSIGHT_GOLDEN_DIR
#define FLOWSIGHT_GOLDEN_DIR "tests/golden"
#endif

using namespace flowsight;
using clock_type = std::chrono::steady_clock;

namespace {

struct Outcome {
  int number;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Outcome> outcomes;

void record(int number, const std::string& name, bool pass,
            const std::string& detail) {
  outcomes.push_back({number, name, pass, detail});
}

double seconds_since(clock_type::time_point start) {
  return std::chrono::duration<double>(clock_type::now() - start).count();
}

std::string fmt(double v) {
  std::ostringstream out;
  out << std::setprecision(6) << v;
  return out.str();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

TrainedModel oracle_fixture(std::uint64_t seed, std::size_t& d_out) {
  std::size_t d = 8 + seed % 5;  // 8..12
  d_out = d;
  return test_oracles::random_margin_ensemble(d, 3, 3 + seed % 4, 4,
                                              7000 + seed);
}

// ---- criterion 1: tree traversal vs exact enumeration ----
void criterion_shapley_oracle() {
  auto start = clock_type::now();
  double worst = 0;
  const std::size_t fixtures = 20, instances = 100;
  for (std::uint64_t seed = 0; seed < fixtures; ++seed) {
    std::size_t d = 0;
    TrainedModel model = oracle_fixture(seed, d);
    Rng rng(100 + seed);
    Background bg = test_oracles::random_background(16, d, rng);
    ScoreFunction f = make_score_function(model, 1);

    std::vector<std::vector<double>> rows(instances);
    for (auto& row : rows) row = test_oracles::random_instance(d, rng);
    std::vector<double> deltas(instances, 0.0);
    parallel_for(instances, [&](std::size_t i) {
      Attribution fast = tree_shap(model, rows[i].data(), 1, bg);
      Attribution exact = exact_shapley(f, rows[i].data(), bg);
      double delta = std::abs(fast.base_value - exact.base_value);
      for (std::size_t j = 0; j < d; ++j)
        delta = std::max(delta, std::abs(fast.phi[j] - exact.phi[j]));
      deltas[i] = delta;
    });
    for (double delta : deltas) worst = std::max(worst, delta);
  }
  double elapsed = seconds_since(start);
  bool pass = worst <= 1e-9 && elapsed < 60.0;
  record(1, "tree SHAP equals exact enumeration on 20 fixtures", pass,
         "max |dphi| = " + fmt(worst) + ", " + fmt(elapsed) + " s");
}

// ---- criterion 2: local accuracy ----
void criterion_local_accuracy() {
  double worst_tree = 0, worst_exact = 0;
  const std::size_t instances = 1000;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::size_t d = 0;
    TrainedModel model = oracle_fixture(seed, d);
    Rng rng(300 + seed);
    Background bg = test_oracles::random_background(16, d, rng);
    ScoreFunction f = make_score_function(model, 2);

    std::vector<std::vector<double>> rows(instances);
    for (auto& row : rows) row = test_oracles::random_instance(d, rng);
    std::vector<double> tree_err(instances, 0.0), exact_err(instances, 0.0);
    bool run_exact = seed < 2;
    parallel_for(instances, [&](std::size_t i) {
      double fx = f(rows[i].data());
      Attribution fast = tree_shap(model, rows[i].data(), 2, bg);
      double sum = fast.base_value;
      for (double phi : fast.phi) sum += phi;
      tree_err[i] = std::abs(sum - fx);
      if (run_exact) {
        Attribution exact = exact_shapley(f, rows[i].data(), bg);
        double esum = exact.base_value;
        for (double phi : exact.phi) esum += phi;
        exact_err[i] = std::abs(esum - fx);
      }
    });
    for (std::size_t i = 0; i < instances; ++i) {
      worst_tree = std::max(worst_tree, tree_err[i]);
      worst_exact = std::max(worst_exact, exact_err[i]);
    }
  }
  bool pass = worst_tree <= 1e-6 && worst_exact <= 1e-6;
  record(2, "local accuracy of exact/tree attributions", pass,
         "max |base+sum(phi)-f(x)|: tree " + fmt(worst_tree) + ", exact " +
             fmt(worst_exact));
}

// ---- criterion 3: kernel SHAP accuracy ----
void criterion_kernel_accuracy() {
  // Full design at d=8.
  std::size_t d8 = 0;
  TrainedModel model8 = oracle_fixture(0, d8);  // seed 0 -> d=8
  Rng rng(71);
  Background bg8 = test_oracles::random_background(16, d8, rng);
  ScoreFunction f8 = make_score_function(model8, 0);
  double worst_full = 0;
  for (int i = 0; i < 30; ++i) {
    std::vector<double> x = test_oracles::random_instance(d8, rng);
    Attribution exact = exact_shapley(f8, x.data(), bg8);
    Attribution kernel = kernel_shap(f8, x.data(), bg8, std::size_t{1} << d8, 9);
    for (std::size_t j = 0; j < d8; ++j)
      worst_full = std::max(worst_full, std::abs(kernel.phi[j] - exact.phi[j]));
  }

  // 4096 samples at d=12, 10 seeds, against the score range.
  std::size_t d12 = 0;
  TrainedModel model12 = oracle_fixture(4, d12);  // seed 4 -> d=12
  Background bg12 = test_oracles::random_background(16, d12, rng);
  ScoreFunction f12 = make_score_function(model12, 1);
  double lo = 1e300, hi = -1e300;
  for (std::size_t b = 0; b < bg12.n; ++b) {
    double v = f12(bg12.row(b));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double range = hi - lo;
  std::vector<double> x12 = test_oracles::random_instance(d12, rng);
  Attribution exact12 = exact_shapley(f12, x12.data(), bg12);
  double worst_sampled = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Attribution kernel = kernel_shap(f12, x12.data(), bg12, 4096, seed);
    for (std::size_t j = 0; j < d12; ++j)
      worst_sampled =
          std::max(worst_sampled, std::abs(kernel.phi[j] - exact12.phi[j]));
  }
  bool pass = worst_full <= 1e-9 && worst_sampled < 0.05 * range;
  record(3, "kernel SHAP: complete design exact, 4096-sample error bound", pass,
         "full-design max err " + fmt(worst_full) + "; sampled max err " +
             fmt(worst_sampled) + " vs bound " + fmt(0.05 * range));
}

// ---- criterion 4: LIME single-feature recovery ----
void criterion_lime_recovery() {
  const std::size_t d = 6;
  std::vector<std::string> names;
  for (std::size_t j = 0; j < d; ++j) names.push_back("f" + std::to_string(j));
  FeatureMatrix training{std::move(names)};
  Rng data_rng(424);
  std::vector<double> row(d);
  for (int i = 0; i < 800; ++i) {
    for (double& v : row) v = data_rng.uniform(0.0, 10.0);
    training.add_row(row.data());
  }
  QuartileDiscretizer disc = QuartileDiscretizer::fit(training);
  ScoreFunction f;
  f.n_features = d;
  f.eval = [](const double* r) { return 5.0 * r[3]; };

  int hits = 0;
  Rng rng(31);
  for (int run = 0; run < 100; ++run) {
    std::vector<double> x(d);
    for (double& v : x) v = rng.uniform(0.0, 10.0);
    LimeOptions options;
    options.seed = 5000 + static_cast<std::uint64_t>(run);
    LimeExplanation e = lime_explain(f, x.data(), disc, options);
    if (!e.conditions.empty() && e.conditions.front().feature_pos == 3) ++hits;
  }
  record(4, "LIME ranks the single relevant feature first", hits >= 95,
         std::to_string(hits) + "/100 runs");
}

// ---- criterion 5: faithfulness analogue ----
void criterion_faithfulness() {
  auto start = clock_type::now();
  bool pass = true;
  std::string detail;
  for (const char* preset : {"synth4", "synth6"}) {
    FeatureMatrix data = prune_static(synth_generate(
        std::strcmp(preset, "synth4") == 0 ? synth4(500, 11) : synth6(500, 12)));
    SplitResult parts = split(data, 0.8, 7);
    TrainedModel model =
        train(ModelSpec::defaults(ModelKind::xgb, 23), parts.train);

    Background bg = sample_background(parts.train, 100, 3);
    auto rows = active_rows(parts.test);
    InstanceExplainer explainer = tree_explainer(model, bg);

    ConsistencyReport noisy = consistency(model, rows, explainer, 0.05, 5, 17);
    ConsistencyReport silent = consistency(model, rows, explainer, 0.0, 5, 17);
    std::vector<double> means = column_means(bg);
    double suff10 = sufficiency(model, rows, explainer, 10, means);
    double suff_all =
        sufficiency(model, rows, explainer, model.n_features(), means);

    bool ok = noisy.overall >= 0.7 && silent.overall == 1.0 &&
              suff10 >= 0.95 && suff_all == 1.0;
    pass = pass && ok;
    detail += std::string(preset) + ": consistency " + fmt(noisy.overall) +
              ", zero-noise " + fmt(silent.overall) + ", sufficiency@10 " +
              fmt(suff10) + ", @d " + fmt(suff_all) + "; ";
  }
  double elapsed = seconds_since(start);
  pass = pass && elapsed < 300.0;
  record(5, "faithfulness analogue on synth fixtures", pass,
         detail + fmt(elapsed) + " s");
}

// ---- criterion 6: pipeline analogue ----
void criterion_pipeline() {
  auto start = clock_type::now();
  bool pass = true;
  std::string detail;

  for (const char* preset : {"synth4", "synth6"}) {
    bool four = std::strcmp(preset, "synth4") == 0;
    FeatureMatrix data =
        prune_static(synth_generate(four ? synth4(500, 31) : synth6(500, 32)));
    SplitResult parts = split(data, 0.8, 5);
    auto rows = active_rows(parts.test);

    for (ModelKind kind :
         {ModelKind::rf, ModelKind::xgb, ModelKind::et, ModelKind::ab}) {
      TrainedModel model = train(ModelSpec::defaults(kind, 41), parts.train);
      auto predictions = predict(model, rows);
      ConfusionMatrix c = confusion(parts.test.labels, predictions, model.labels);
      double accuracy = 0;
      for (std::size_t i = 0; i < c.size(); ++i)
        accuracy += static_cast<double>(c.at(i, i));
      accuracy /= static_cast<double>(c.total());

      double fn_rate;
      if (four) {
        fn_rate = class_metrics(c, c.index_of(LabelSchema::iotcam)).fn_rate;
      } else {
        fn_rate = macro_metrics(c).fn_rate;
      }
      bool ok = accuracy >= 0.95 && fn_rate <= 0.03;
      pass = pass && ok;
      if (!ok)
        detail += std::string(preset) + "/" + to_string(kind) + " acc " +
                  fmt(accuracy) + " fn " + fmt(fn_rate) + "! ";
    }
  }

  // Two-stage gating on every test row of the combined fixture.
  FeatureMatrix combined =
      prune_static(synth_generate(synth_two_stage(200, 51)));
  SplitResult parts = split(combined, 0.8, 9);
  PipelineModel pipeline =
      train_pipeline(ModelSpec::defaults(ModelKind::xgb, 61),
                     ModelSpec::defaults(ModelKind::xgb, 62), parts.train);
  auto rows = active_rows(parts.test);
  std::size_t gating_violations = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    TwoStageResult result =
        two_stage_classify(pipeline, rows[r].data(), rows[r].size());
    if (result.stage2_label.has_value() !=
        (result.stage1_label == LabelSchema::iotcam))
      ++gating_violations;
  }
  pass = pass && gating_violations == 0;
  double elapsed = seconds_since(start);
  pass = pass && elapsed < 600.0;
  record(6, "ensemble accuracy, FN rate and two-stage gating on synth", pass,
         detail + "gating violations " + std::to_string(gating_violations) +
             ", " + fmt(elapsed) + " s");
}

// ---- criterion 7: golden extraction CSVs ----
void criterion_golden_csvs() {
  namespace fs = std::filesystem;
  fs::path golden_dir(FLOWSIGHT_GOLDEN_DIR);
  fs::path work = fs::temp_directory_path() / "flowsight_golden";
  fs::create_directories(work);

  bool pass = true;
  std::string detail;
  std::size_t checked = 0;
  for (const auto& fixture : pcap_builder::golden_fixtures()) {
    fs::path pcap_path = work / (std::string(fixture.name) + ".pcap");
    fixture.build().write(pcap_path.string());
    PcapResult capture = read_pcap(pcap_path.string());
    auto flows = assemble_flows(capture.packets);
    FeatureMatrix m = FeatureMatrix::standard();
    for (const FlowBuffer& flow : flows) m.add_row(compute_features(flow));
    std::ostringstream csv;
    write_feature_csv(csv, m);

    std::string expected = read_file(golden_dir / (std::string(fixture.name) + ".csv"));
    if (csv.str() != expected) {
      pass = false;
      detail += std::string(fixture.name) + " differs; ";
    }
    ++checked;
  }
  record(7, "byte-exact golden feature CSVs for hand-built captures", pass,
         detail + std::to_string(checked) + " fixtures compared");
}

// ---- criterion 8: metrics arithmetic ----
void criterion_metrics_arithmetic() {
  ConfusionMatrix c;
  c.alphabet = {"pos", "neg"};
  c.counts = {8, 2, 1, 9};
  ClassMetrics m = class_metrics(c, 0);
  MacroMetrics macro = macro_metrics(c);

  auto near = [](double a, double b) { return std::abs(a - b) <= 1e-15; };
  bool pass = near(m.precision, 8.0 / 9.0) && near(m.recall, 0.8) &&
              near(m.accuracy, 17.0 / 20.0) && near(m.fn_rate, 0.2) &&
              near(macro.recall, (0.8 + 0.9) / 2.0);

  Rng rng(88);
  double worst_gap = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t l = 2 + rng.bounded(5);
    ConfusionMatrix fuzz;
    for (std::size_t i = 0; i < l; ++i)
      fuzz.alphabet.push_back("L" + std::to_string(i));
    fuzz.counts.resize(l * l);
    for (auto& v : fuzz.counts) v = rng.bounded(50);
    if (fuzz.total() == 0) fuzz.counts[0] = 1;
    for (std::size_t i = 0; i < l; ++i) {
      ClassMetrics cm = class_metrics(fuzz, i);
      if (!cm.recall_undefined)
        worst_gap = std::max(worst_gap, std::abs(cm.fn_rate - (1.0 - cm.recall)));
    }
  }
  pass = pass && worst_gap <= 1e-15;
  record(8, "confusion-matrix arithmetic and fn_rate identity", pass,
         "hand values match; max |fn_rate-(1-recall)| = " + fmt(worst_gap));
}

// ---- criterion 9: statistics ----
void criterion_statistics() {
  bool pass = true;
  std::string detail;

  {  // deterministic labeling: MI = ln k
    std::vector<std::string> labels;
    FeatureMatrix m{{"f"}};
    for (int c = 0; c < 4; ++c)
      for (int i = 0; i < 500; ++i) {
        double v = c;
        m.add_row(&v, "C" + std::to_string(c));
      }
    MIReport report = mutual_information(m);
    double err = std::abs(report.scores[0] - std::log(4.0));
    pass = pass && err <= 0.01;
    detail += "MI(ln4) err " + fmt(err) + "; ";
  }
  {  // independence
    Rng rng(7);
    FeatureMatrix m{{"f"}};
    for (int i = 0; i < 20000; ++i) {
      double v = rng.uniform();
      m.add_row(&v, "L" + std::to_string(rng.bounded(4)));
    }
    MIReport report = mutual_information(m);
    pass = pass && report.scores[0] < 0.02;
    detail += "MI(indep) " + fmt(report.scores[0]) + "; ";
  }
  {  // pearson of y = 2x
    FeatureMatrix m{{"x", "y"}};
    for (int i = 0; i < 100; ++i) {
      double row[2] = {i * 0.31 + 2, 2.0 * (i * 0.31 + 2)};
      m.add_row(row);
    }
    double r = pearson_matrix(m).at(0, 1);
    pass = pass && std::abs(r - 1.0) <= 1e-12;
    detail += "r(y=2x) = " + fmt(r) + "; ";
  }
  {  // pca: threshold reached, rows orthonormal
    Rng rng(55);
    std::vector<std::string> names;
    for (int j = 0; j < 8; ++j) names.push_back("f" + std::to_string(j));
    FeatureMatrix m{std::move(names)};
    std::vector<double> row(8);
    for (int i = 0; i < 600; ++i) {
      double shared = rng.gaussian();
      for (int j = 0; j < 8; ++j)
        row[static_cast<std::size_t>(j)] =
            shared * (j < 3 ? 2.0 : 0.3) + rng.gaussian();
      m.add_row(row.data());
    }
    PCAProjection p = pca_fit(m, 0.95);
    double cumulative = 0;
    for (double ratio : p.explained_ratio) cumulative += ratio;
    double ortho_err = 0;
    for (std::size_t a = 0; a < p.n_components; ++a)
      for (std::size_t b = 0; b < p.n_components; ++b) {
        double dot = 0;
        for (std::size_t j = 0; j < 8; ++j)
          dot += p.component_at(a, j) * p.component_at(b, j);
        ortho_err = std::max(ortho_err, std::abs(dot - (a == b ? 1.0 : 0.0)));
      }
    pass = pass && cumulative >= 0.95 && ortho_err <= 1e-9;
    detail += "pca cumulative " + fmt(cumulative) + ", ortho err " +
              fmt(ortho_err);
  }
  record(9, "MI, correlation and PCA meet their bounds", pass, detail);
}

// ---- criterion 10: report determinism ----
void criterion_report_determinism() {
  namespace fs = std::filesystem;
  fs::path dir1 = fs::temp_directory_path() / "flowsight_acc_rep1";
  fs::path dir2 = fs::temp_directory_path() / "flowsight_acc_rep2";
  fs::remove_all(dir1);
  fs::remove_all(dir2);

  nlohmann::json raw = {
      {"data", {{"source", "synth4"}, {"n_per_class", 120}, {"seed", 77}}},
      {"split", {{"ratio", 0.8}, {"seed", 3}}},
      {"models",
       nlohmann::json::array(
           {nlohmann::json{{"kind", "XGB"}, {"seed", 5}},
            nlohmann::json{{"kind", "RF"}, {"seed", 6}, {"n_estimators", 50}}})},
      {"explain", {{"enabled", true}, {"eval_rows", 20}, {"background", 40}}},
      {"faithfulness",
       {{"enabled", true}, {"runs", 2}, {"eval_rows", 20}, {"k", 10}}},
      {"output_dir", dir1.string()}};

  run_report(resolve_report_config(raw));
  run_report_from_manifest((dir1 / "manifest.json").string(), dir2.string());

  bool pass = read_file(dir1 / "metrics.json") == read_file(dir2 / "metrics.json");
  for (const char* name : {"attributions_XGB.csv", "faithfulness_XGB.json",
                           "attributions_RF.csv", "faithfulness_RF.json"})
    pass = pass && read_file(dir1 / name) == read_file(dir2 / name);
  record(10, "report manifests re-run to byte-identical outputs", pass,
         pass ? "metric, attribution and faithfulness bytes identical"
              : "outputs differ between runs");
}

}  // namespace

int main() {
  auto start = clock_type::now();
  struct Step {
    void (*fn)();
    const char* label;
  };
  const Step steps[] = {
      {criterion_shapley_oracle, "criterion 1"},
      {criterion_local_accuracy, "criterion 2"},
      {criterion_kernel_accuracy, "criterion 3"},
      {criterion_lime_recovery, "criterion 4"},
      {criterion_faithfulness, "criterion 5"},
      {criterion_pipeline, "criterion 6"},
      {criterion_golden_csvs, "criterion 7"},
      {criterion_metrics_arithmetic, "criterion 8"},
      {criterion_statistics, "criterion 9"},
      {criterion_report_determinism, "criterion 10"},
  };
  for (const Step& step : steps) {
    try {
      step.fn();
    } catch (const std::exception& e) {
      record(static_cast<int>(&step - steps) + 1, step.label, false,
             std::string("exception: ") + e.what());
    }
  }

  int failures = 0;
  for (const Outcome& outcome : outcomes) {
    std::cout << (outcome.pass ? "[PASS]" : "[FAIL]") << " criterion "
              << outcome.number << ": " << outcome.name << " (" << outcome.detail
              << ")\n";
    if (!outcome.pass) ++failures;
  }
  std::cout << (failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES PRESENT")
            << " in " << fmt(seconds_since(start)) << " s\n";
  return failures == 0 ? 0 : 1;
}
