// flowsight command line: packet captures to explained flow classifications.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "flowsight/flowsight.hpp"

using namespace flowsight;
namespace fs = std::filesystem;

namespace {

std::uint64_t default_seed() {
  return flowsight::detail::env_default_seed();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out << text;
}

FeatureMatrix load_labeled_csv(const std::string& path) {
  FeatureMatrix m = read_feature_csv(path);
  if (!m.has_labels())
    throw DataError("CSV has no Label column (or it is empty): " + path);
  return m;
}

struct ModelFlags {
  std::string kind = "XGB";
  std::uint64_t seed = default_seed();
  int max_depth = -1;
  int n_estimators = -1;
  int k_neighbors = -1;
  int max_iterations = -1;
  double learning_rate = -1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--model", kind, "Model kind: DT|kNN|NB|LR|RF|XGB|ET|AB")
        ->capture_default_str();
    cmd->add_option("--seed", seed, "Training seed")->capture_default_str();
    cmd->add_option("--max-depth", max_depth, "Tree depth cap override");
    cmd->add_option("--estimators", n_estimators, "Ensemble size override");
    cmd->add_option("--neighbors", k_neighbors, "kNN neighbor count override");
    cmd->add_option("--iterations", max_iterations,
                    "Optimizer iteration cap override");
    cmd->add_option("--learning-rate", learning_rate,
                    "Boosting learning rate override");
  }

  ModelSpec to_spec() const {
    ModelSpec spec = ModelSpec::defaults(model_kind_from_string(kind), seed);
    if (max_depth > 0) spec.max_depth = max_depth;
    if (n_estimators > 0) spec.n_estimators = n_estimators;
    if (k_neighbors > 0) spec.k_neighbors = k_neighbors;
    if (max_iterations > 0) spec.max_iterations = max_iterations;
    if (learning_rate > 0) spec.learning_rate = learning_rate;
    return spec;
  }
};

nlohmann::json metrics_for(const TrainedModel& model, const FeatureMatrix& data) {
  return flowsight::detail::evaluate_model(model, data);
}

void print_macro_summary(const nlohmann::json& metrics, std::ostream& out) {
  const auto& macro = metrics.at("macro");
  out << "rows=" << metrics.at("test_rows").get<std::size_t>()
      << " accuracy=" << macro.at("accuracy").get<double>()
      << " precision=" << macro.at("precision").get<double>()
      << " recall=" << macro.at("recall").get<double>()
      << " f1=" << macro.at("f1").get<double>() << "\n";
}

nlohmann::json attribution_json(const Attribution& attribution,
                                const std::vector<std::string>& names,
                                const std::vector<double>& row) {
  std::vector<std::size_t> order(attribution.phi.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(attribution.phi[a]) > std::abs(attribution.phi[b]);
  });
  nlohmann::json features = nlohmann::json::array();
  for (std::size_t j : order)
    features.push_back({{"name", names[j]},
                        {"value", row[j]},
                        {"phi", attribution.phi[j]}});
  return {{"instance", attribution.instance_index},
          {"class", attribution.class_label},
          {"base", attribution.base_value},
          {"fx", attribution.fx},
          {"features", features}};
}

int run_extract(const std::string& input, const std::string& output,
                double flow_timeout, double activity_timeout,
                const std::string& label) {
  PcapResult capture = read_pcap(input);
  AssemblerOptions options;
  options.flow_timeout_s = flow_timeout;
  options.activity_timeout_s = activity_timeout;
  auto flows = assemble_flows(capture.packets, options);

  FeatureMatrix m = FeatureMatrix::standard();
  for (const FlowBuffer& flow : flows) m.add_row(compute_features(flow), label);
  write_feature_csv(output, m);

  std::cerr << "packets=" << capture.packets.size()
            << " skipped=" << capture.skipped << " flows=" << flows.size();
  if (capture.truncated) std::cerr << " (capture truncated; stopped early)";
  std::cerr << "\n";
  return 0;
}

int run_analyze(const std::string& input, const std::string& outdir,
                std::size_t bins, double corr_threshold, double variance) {
  FeatureMatrix m = read_feature_csv(input);
  if (m.n_rows() < 2) throw DataError("analyze needs at least 2 rows");
  m = prune_static(m);
  fs::create_directories(outdir);

  CorrelationMatrix corr = pearson_matrix(m);
  {
    std::ostringstream csv;
    csv << "feature";
    for (const auto& name : corr.names) csv << ',' << name;
    csv << '\n';
    for (std::size_t i = 0; i < corr.size(); ++i) {
      csv << corr.names[i];
      for (std::size_t j = 0; j < corr.size(); ++j)
        csv << ',' << format_double(corr.at(i, j));
      csv << '\n';
    }
    write_text_file((fs::path(outdir) / "correlation.csv").string(), csv.str());
  }

  std::vector<double> mi_scores;
  if (m.has_labels()) {
    MIReport mi = mutual_information(m, bins);
    mi_scores = mi.scores;
    std::ostringstream csv;
    csv << "rank,feature,mi_nats\n";
    for (std::size_t r = 0; r < mi.ranking.size(); ++r) {
      std::size_t i = mi.ranking[r];
      csv << (r + 1) << ',' << mi.names[i] << ',' << format_double(mi.scores[i])
          << '\n';
    }
    write_text_file((fs::path(outdir) / "mi.csv").string(), csv.str());
  } else {
    std::cerr << "no Label column: skipping mutual information\n";
  }

  CorrelationPruneResult pruned = correlated_pairs(corr, corr_threshold, mi_scores);
  {
    std::ostringstream csv;
    csv << "feature_a,feature_b,r\n";
    for (const auto& pair : pruned.pairs)
      csv << corr.names[pair.first] << ',' << corr.names[pair.second] << ','
          << format_double(pair.r) << '\n';
    csv << "\ndropped\n";
    for (std::size_t position : pruned.drop_positions)
      csv << corr.names[position] << '\n';
    write_text_file((fs::path(outdir) / "correlated_pairs.csv").string(),
                    csv.str());
  }

  PCAProjection pca = pca_fit(m, variance);
  {
    nlohmann::json j;
    j["requested_variance"] = variance;
    j["n_components"] = pca.n_components;
    j["explained_ratio"] = pca.explained_ratio;
    double cumulative = 0;
    for (double r : pca.explained_ratio) cumulative += r;
    j["cumulative_ratio"] = cumulative;
    write_text_file((fs::path(outdir) / "pca.json").string(), j.dump(2) + "\n");
  }

  std::cerr << "active features=" << corr.size()
            << " correlated pairs=" << pruned.pairs.size()
            << " pca components=" << pca.n_components << "\n";
  return 0;
}

int run_train(const std::string& input, const std::string& output,
              const ModelFlags& flags, double split_ratio,
              std::uint64_t split_seed) {
  FeatureMatrix m = prune_static(load_labeled_csv(input));
  SplitResult parts = split(m, split_ratio, split_seed);
  for (const auto& warning : parts.warnings) std::cerr << warning << "\n";

  TrainedModel model = train(flags.to_spec(), parts.train);
  save_model(model, output);
  std::cerr << "trained " << to_string(model.spec.kind) << " on "
            << parts.train.n_rows() << " rows; ";
  if (parts.test.n_rows() > 0) {
    std::cerr << "test ";
    print_macro_summary(metrics_for(model, parts.test), std::cerr);
  } else {
    std::cerr << "no test rows\n";
  }
  return 0;
}

int run_eval(const std::string& input, const std::string& model_path,
             const std::string& output) {
  TrainedModel model = load_model(model_path);
  FeatureMatrix m = project_to_model(model, load_labeled_csv(input));
  nlohmann::json metrics = metrics_for(model, m);
  if (output.empty()) {
    std::cout << metrics.dump(2) << "\n";
  } else {
    write_text_file(output, metrics.dump(2) + "\n");
    print_macro_summary(metrics, std::cerr);
  }
  return 0;
}

int run_explain(const std::string& input, const std::string& model_path,
                const std::string& method_name, const std::string& class_name,
                std::size_t background_rows, std::size_t topk, std::size_t rows_limit,
                std::size_t samples, std::uint64_t seed, const std::string& outdir) {
  TrainedModel model = load_model(model_path);
  FeatureMatrix m = project_to_model(model, read_feature_csv(input));

  fs::create_directories(outdir);
  Background bg = sample_background(m, background_rows, seed);
  auto rows = active_rows(m);
  if (rows.size() > rows_limit) rows.resize(rows_limit);

  std::optional<std::size_t> fixed_class;
  if (!class_name.empty() && class_name != "predicted") {
    auto it = std::find(model.labels.begin(), model.labels.end(), class_name);
    if (it == model.labels.end())
      throw ValidationError("--class '" + class_name +
                            "' is not in the model's alphabet");
    fixed_class = static_cast<std::size_t>(it - model.labels.begin());
  }

  if (method_name == "lime") {
    QuartileDiscretizer disc = QuartileDiscretizer::fit(m);
    LimeOptions options;
    options.top_k = topk;
    options.seed = seed;
    nlohmann::json instances = nlohmann::json::array();
    std::map<std::string, std::pair<double, std::size_t>> aggregate;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::size_t c = fixed_class.value_or(
          argmax_lowest(predict_scores_row(model, rows[i].data())));
      LimeOptions per_instance = options;
      per_instance.seed = derive_seed(seed, i);
      LimeExplanation e =
          lime_explain(model, rows[i].data(), c, disc, per_instance);
      nlohmann::json conditions = nlohmann::json::array();
      for (const auto& cond : e.conditions) {
        conditions.push_back({{"condition", cond.render()},
                              {"feature", cond.feature},
                              {"weight", cond.weight}});
        auto& slot = aggregate[cond.render()];
        slot.first += std::abs(cond.weight);
        slot.second += 1;
      }
      instances.push_back({{"instance", i},
                           {"class", model.labels[c]},
                           {"intercept", e.intercept},
                           {"r2", e.r2},
                           {"conditions", conditions}});
    }
    write_text_file((fs::path(outdir) / "lime_instances.json").string(),
                    instances.dump(2) + "\n");
    std::ostringstream csv;
    csv << "condition,mean_abs_weight,count\n";
    for (const auto& [condition, slot] : aggregate)
      csv << '"' << condition << "\"," << format_double(slot.first / slot.second)
          << ',' << slot.second << '\n';
    write_text_file((fs::path(outdir) / "lime_aggregate.csv").string(), csv.str());
    std::cerr << "explained " << rows.size() << " instances with lime\n";
    return 0;
  }

  ExplainOptions options;
  options.method = attribution_method_from_string(method_name);
  options.kernel_samples = samples;
  options.seed = seed;

  nlohmann::json instances = nlohmann::json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::size_t c = fixed_class.value_or(
        argmax_lowest(predict_scores_row(model, rows[i].data())));
    ExplainOptions per_instance = options;
    per_instance.seed = derive_seed(seed, i);
    Attribution attribution =
        explain_instance(model, rows[i].data(), c, bg, per_instance);
    attribution.instance_index = i;
    attribution.class_label = model.labels[c];
    nlohmann::json j = attribution_json(attribution, model.features, rows[i]);
    if (j["features"].size() > topk) {
      nlohmann::json trimmed = nlohmann::json::array();
      for (std::size_t k = 0; k < topk; ++k) trimmed.push_back(j["features"][k]);
      j["features"] = std::move(trimmed);
    }
    instances.push_back(std::move(j));
  }
  write_text_file((fs::path(outdir) / "attributions.json").string(),
                  instances.dump(2) + "\n");

  FeatureMatrix eval;
  eval.names = m.names;
  eval.active_mask = m.active_mask;
  for (std::size_t r = 0; r < rows.size(); ++r)
    eval.add_row(m.row(r), m.labels.empty() ? "" : m.labels[r]);

  std::ostringstream csv;
  csv << "feature";
  for (const std::string& label : model.labels) csv << ',' << label;
  csv << '\n';
  std::vector<MeanAbsAttributions> per_class;
  for (std::size_t c = 0; c < model.n_classes(); ++c)
    per_class.push_back(mean_abs_attributions(model, eval, c, bg, options));
  for (std::size_t j = 0; j < model.n_features(); ++j) {
    csv << model.features[j];
    for (const auto& agg : per_class) csv << ',' << format_double(agg.scores[j]);
    csv << '\n';
  }
  write_text_file((fs::path(outdir) / "mean_abs_phi.csv").string(), csv.str());
  std::cerr << "explained " << rows.size() << " instances with " << method_name
            << "\n";
  return 0;
}

int run_faithful(const std::string& input, const std::string& model_path,
                 const std::string& explainer_name, double noise_frac,
                 std::size_t runs, std::size_t k, std::size_t rows_limit,
                 std::size_t background_rows, std::size_t samples,
                 std::uint64_t seed, const std::string& output) {
  TrainedModel model = load_model(model_path);
  FeatureMatrix m = project_to_model(model, load_labeled_csv(input));

  Background bg = sample_background(m, background_rows, seed);
  auto rows = active_rows(m);
  if (rows.size() > rows_limit) rows.resize(rows_limit);

  InstanceExplainer explainer;
  QuartileDiscretizer disc;
  if (explainer_name == "tree") {
    explainer = tree_explainer(model, bg);
  } else if (explainer_name == "kernel") {
    explainer = kernel_explainer(model, bg, samples, seed);
  } else if (explainer_name == "lime") {
    disc = QuartileDiscretizer::fit(m);
    LimeOptions options;
    options.seed = seed;
    explainer = lime_explainer(model, disc, options);
  } else {
    throw ValidationError("--explainer must be tree|kernel|lime");
  }

  FaithfulnessConfig config;
  config.noise_frac = noise_frac;
  config.runs = runs;
  config.top_k = k;
  config.seed = seed;
  FaithfulnessReport report =
      faithfulness_report(model, rows, explainer, column_means(bg), config);

  nlohmann::json j;
  j["explainer"] = explainer_name;
  j["overall_consistency"] = report.overall_consistency;
  j["sufficiency"] = report.sufficiency_score;
  j["config"] = {{"noise_frac", config.noise_frac},
                 {"runs", config.runs},
                 {"k", config.top_k},
                 {"seed", config.seed},
                 {"rows", rows.size()}};
  nlohmann::json per_feature;
  for (std::size_t f = 0; f < report.feature_names.size(); ++f)
    per_feature[report.feature_names[f]] = report.per_feature_consistency[f];
  j["per_feature_consistency"] = per_feature;

  if (output.empty())
    std::cout << j.dump(2) << "\n";
  else
    write_text_file(output, j.dump(2) + "\n");
  std::cerr << "consistency=" << report.overall_consistency
            << " sufficiency=" << report.sufficiency_score << "\n";
  return 0;
}

int run_synth(const std::string& preset, std::size_t n, std::uint64_t seed,
              double separation, const std::string& output) {
  SynthSpec spec;
  if (preset == "synth4")
    spec = synth4(n, seed, separation);
  else if (preset == "synth6")
    spec = synth6(n, seed, separation);
  else if (preset == "two-stage")
    spec = synth_two_stage(n, seed, separation);
  else
    throw ValidationError("--spec must be synth4|synth6|two-stage");
  FeatureMatrix m = synth_generate(spec);
  write_feature_csv(output, m);
  std::cerr << "wrote " << m.n_rows() << " rows to " << output << "\n";
  return 0;
}

int run_pipeline_train(const std::string& input, const ModelFlags& stage1,
                       const ModelFlags& stage2, double split_ratio,
                       std::uint64_t split_seed, const std::string& output) {
  FeatureMatrix m = prune_static(load_labeled_csv(input));
  SplitResult parts = split(m, split_ratio, split_seed);
  PipelineModel pipeline =
      train_pipeline(stage1.to_spec(), stage2.to_spec(), parts.train);
  save_pipeline(pipeline, output);

  if (parts.test.n_rows() > 0) {
    FeatureMatrix stage1_test = parts.test;
    for (auto& label : stage1_test.labels) label = LabelSchema::to_stage1(label);
    std::cerr << "stage1 test ";
    print_macro_summary(metrics_for(pipeline.stage1, stage1_test), std::cerr);
  }
  return 0;
}

int run_pipeline_classify(const std::string& input, const std::string& pipeline_path,
                          bool explain, std::size_t background_rows,
                          std::uint64_t seed, const std::string& output) {
  PipelineModel pipeline = load_pipeline(pipeline_path);
  FeatureMatrix m = project_to_model(pipeline.stage1, read_feature_csv(input));

  auto rows = active_rows(m);
  std::optional<Background> bg;
  TwoStageExplainContext context;
  if (explain) {
    bg = sample_background(m, background_rows, seed);
    context.stage1_background = &*bg;
    context.stage2_background = &*bg;
    context.options.seed = seed;
  }

  nlohmann::json results = nlohmann::json::array();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    TwoStageResult result = two_stage_classify(
        pipeline, rows[r].data(), rows[r].size(), explain ? &context : nullptr);
    nlohmann::json j;
    j["instance"] = r;
    j["stage1"] = result.stage1_label;
    if (result.stage2_label) j["stage2"] = *result.stage2_label;
    if (result.stage1_attribution)
      j["stage1_attribution"] = attribution_json(
          *result.stage1_attribution, pipeline.stage1.features, rows[r]);
    if (result.stage2_attribution)
      j["stage2_attribution"] = attribution_json(
          *result.stage2_attribution, pipeline.stage2.features, rows[r]);
    results.push_back(std::move(j));
  }
  if (output.empty())
    std::cout << results.dump(2) << "\n";
  else
    write_text_file(output, results.dump(2) + "\n");
  return 0;
}

int run_report_cmd(const std::string& config_path, const std::string& manifest_path,
                   const std::string& output_dir) {
  if (config_path.empty() == manifest_path.empty())
    throw ValidationError("report needs exactly one of --config or --manifest");
  ReportResult result;
  if (!manifest_path.empty()) {
    result = run_report_from_manifest(manifest_path, output_dir);
  } else {
    std::ifstream in(config_path);
    if (!in) throw DataError("cannot open config: " + config_path);
    nlohmann::json raw;
    try {
      in >> raw;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("config is not valid JSON: " + std::string(e.what()));
    }
    if (!output_dir.empty()) raw["output_dir"] = output_dir;
    result = run_report(resolve_report_config(raw));
  }
  std::cerr << "report written to " << result.output_dir.string()
            << " (config hash " << result.manifest["config_hash"].get<std::string>()
            << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowsight: offline IoT camera detection from packet captures, "
               "with explained two-stage flow classification"};
  app.require_subcommand(1);

  // extract
  auto* extract = app.add_subcommand(
      "extract", "Parse a pcap file into the 77-column flow feature CSV");
  std::string extract_in, extract_out = "features.csv", extract_label;
  double flow_timeout = 600.0, activity_timeout = 5.0;
  extract->add_option("input", extract_in, "Capture file (classic pcap)")
      ->required();
  extract->add_option("-o,--output", extract_out, "Output CSV path")
      ->capture_default_str();
  extract->add_option("--flow-timeout", flow_timeout,
                      "Flow timeout in seconds")->capture_default_str();
  extract->add_option("--activity-timeout", activity_timeout,
                      "Active/idle split threshold in seconds")
      ->capture_default_str();
  extract->add_option("--label", extract_label, "Label value for every row");

  // analyze
  auto* analyze = app.add_subcommand(
      "analyze", "Correlation matrix, mutual information ranking and PCA");
  std::string analyze_in, analyze_out = "analysis";
  std::size_t mi_bins = 20;
  double corr_threshold = 0.9, pca_variance = 0.95;
  analyze->add_option("input", analyze_in, "Feature CSV")->required();
  analyze->add_option("-o,--output", analyze_out, "Output directory")
      ->capture_default_str();
  analyze->add_option("--bins", mi_bins, "Mutual information bin count")
      ->capture_default_str();
  analyze->add_option("--corr-threshold", corr_threshold,
                      "|r| threshold for correlated pairs")
      ->capture_default_str();
  analyze->add_option("--variance", pca_variance, "PCA variance to retain")
      ->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one model on a labeled CSV");
  std::string train_in, train_out = "model.json";
  double train_split = 0.8;
  std::uint64_t train_split_seed = default_seed();
  ModelFlags train_flags;
  train_cmd->add_option("input", train_in, "Labeled feature CSV")->required();
  train_cmd->add_option("-o,--output", train_out, "Model file")
      ->capture_default_str();
  train_cmd->add_option("--split", train_split, "Train fraction")
      ->capture_default_str();
  train_cmd->add_option("--split-seed", train_split_seed, "Split shuffle seed");
  train_flags.attach(train_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model file on a labeled CSV");
  std::string eval_in, eval_model, eval_out;
  eval_cmd->add_option("input", eval_in, "Labeled feature CSV")->required();
  eval_cmd->add_option("--model-file", eval_model, "Trained model JSON")
      ->required();
  eval_cmd->add_option("-o,--output", eval_out,
                       "Metrics JSON path (stdout when omitted)");

  // explain
  auto* explain_cmd =
      app.add_subcommand("explain", "Per-instance attributions for a model");
  std::string explain_in, explain_model, explain_method = "tree";
  std::string explain_class, explain_out = "explanations";
  std::size_t explain_background = 100, explain_topk = 10, explain_rows = 100;
  std::size_t kernel_samples = 2048;
  std::uint64_t explain_seed = default_seed();
  explain_cmd->add_option("input", explain_in, "Feature CSV")->required();
  explain_cmd->add_option("--model-file", explain_model, "Trained model JSON")
      ->required();
  explain_cmd->add_option("--method", explain_method,
                          "exact|tree|kernel|lime")->capture_default_str();
  explain_cmd->add_option("--class", explain_class,
                          "Class to explain (default: each row's prediction)");
  explain_cmd->add_option("--background", explain_background,
                          "Background sample size")->capture_default_str();
  explain_cmd->add_option("--topk", explain_topk, "Features per instance")
      ->capture_default_str();
  explain_cmd->add_option("--rows", explain_rows, "Instances to explain")
      ->capture_default_str();
  explain_cmd->add_option("--samples", kernel_samples,
                          "Kernel SHAP coalition budget")->capture_default_str();
  explain_cmd->add_option("--seed", explain_seed, "Sampling seed");
  explain_cmd->add_option("-o,--output", explain_out, "Output directory")
      ->capture_default_str();

  // faithful
  auto* faithful_cmd = app.add_subcommand(
      "faithful", "Consistency and sufficiency of an explainer on a model");
  std::string faithful_in, faithful_model, faithful_explainer = "tree";
  std::string faithful_out;
  double noise_frac = 0.05;
  std::size_t faithful_runs = 5, faithful_k = 10, faithful_rows = 100;
  std::size_t faithful_background = 100, faithful_samples = 2048;
  std::uint64_t faithful_seed = default_seed();
  faithful_cmd->add_option("input", faithful_in, "Labeled feature CSV")
      ->required();
  faithful_cmd->add_option("--model-file", faithful_model, "Trained model JSON")
      ->required();
  faithful_cmd->add_option("--explainer", faithful_explainer,
                           "tree|kernel|lime")->capture_default_str();
  faithful_cmd->add_option("--noise-frac", noise_frac,
                           "Perturbation scale as a fraction of feature std")
      ->capture_default_str();
  faithful_cmd->add_option("--runs", faithful_runs, "Perturbation runs")
      ->capture_default_str();
  faithful_cmd->add_option("--k", faithful_k, "Top-k for sufficiency")
      ->capture_default_str();
  faithful_cmd->add_option("--rows", faithful_rows, "Evaluation rows")
      ->capture_default_str();
  faithful_cmd->add_option("--background", faithful_background,
                           "Background sample size")->capture_default_str();
  faithful_cmd->add_option("--samples", faithful_samples,
                           "Kernel SHAP coalition budget")
      ->capture_default_str();
  faithful_cmd->add_option("--seed", faithful_seed, "Seed");
  faithful_cmd->add_option("-o,--output", faithful_out,
                           "Report JSON path (stdout when omitted)");

  // synth
  auto* synth_cmd =
      app.add_subcommand("synth", "Generate a synthetic labeled feature CSV");
  std::string synth_preset = "synth4", synth_out = "synth.csv";
  std::size_t synth_n = 500;
  double synth_separation = 6.0;
  std::uint64_t synth_seed = default_seed();
  synth_cmd->add_option("--spec", synth_preset, "synth4|synth6|two-stage")
      ->capture_default_str();
  synth_cmd->add_option("--n", synth_n, "Rows per class")->capture_default_str();
  synth_cmd->add_option("--seed", synth_seed, "Generator seed");
  synth_cmd->add_option("--separation", synth_separation,
                        "Cluster separation scale")->capture_default_str();
  synth_cmd->add_option("-o,--output", synth_out, "Output CSV")
      ->capture_default_str();

  // pipeline
  auto* pipeline_cmd =
      app.add_subcommand("pipeline", "Two-stage classifier operations");
  pipeline_cmd->require_subcommand(1);
  auto* pipeline_train_cmd = pipeline_cmd->add_subcommand(
      "train", "Train the two-stage pipeline from a labeled CSV");
  std::string ptrain_in, ptrain_out = "pipeline.json";
  double ptrain_split = 0.8;
  std::uint64_t ptrain_split_seed = default_seed();
  std::string stage1_kind = "XGB", stage2_kind = "XGB";
  std::uint64_t stage1_seed = default_seed(), stage2_seed = default_seed();
  pipeline_train_cmd->add_option("input", ptrain_in, "Labeled feature CSV")
      ->required();
  pipeline_train_cmd->add_option("-o,--output", ptrain_out, "Pipeline file")
      ->capture_default_str();
  pipeline_train_cmd->add_option("--split", ptrain_split, "Train fraction")
      ->capture_default_str();
  pipeline_train_cmd->add_option("--split-seed", ptrain_split_seed,
                                 "Split shuffle seed");
  pipeline_train_cmd->add_option("--stage1", stage1_kind, "Stage-1 model kind")
      ->capture_default_str();
  pipeline_train_cmd->add_option("--stage2", stage2_kind, "Stage-2 model kind")
      ->capture_default_str();
  pipeline_train_cmd->add_option("--stage1-seed", stage1_seed, "Stage-1 seed");
  pipeline_train_cmd->add_option("--stage2-seed", stage2_seed, "Stage-2 seed");

  auto* pipeline_classify_cmd = pipeline_cmd->add_subcommand(
      "classify", "Run rows through both stages");
  std::string pclass_in, pclass_pipeline, pclass_out;
  bool pclass_explain = false;
  std::size_t pclass_background = 100;
  std::uint64_t pclass_seed = default_seed();
  pipeline_classify_cmd->add_option("input", pclass_in, "Feature CSV")
      ->required();
  pipeline_classify_cmd
      ->add_option("--pipeline-file", pclass_pipeline, "Trained pipeline JSON")
      ->required();
  pipeline_classify_cmd->add_flag("--explain", pclass_explain,
                                  "Attach per-stage attributions");
  pipeline_classify_cmd->add_option("--background", pclass_background,
                                    "Background sample size")
      ->capture_default_str();
  pipeline_classify_cmd->add_option("--seed", pclass_seed, "Seed");
  pipeline_classify_cmd->add_option("-o,--output", pclass_out,
                                    "Results JSON path (stdout when omitted)");

  // report
  auto* report_cmd = app.add_subcommand(
      "report", "Run a full configured experiment and write a report bundle");
  std::string report_config, report_manifest, report_outdir;
  report_cmd->add_option("--config", report_config, "Report config JSON");
  report_cmd->add_option("--manifest", report_manifest,
                         "Re-run a previously written manifest");
  report_cmd->add_option("--output-dir", report_outdir,
                         "Override the output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage problems are validation errors
  }

  try {
    if (extract->parsed())
      return run_extract(extract_in, extract_out, flow_timeout,
                         activity_timeout, extract_label);
    if (analyze->parsed())
      return run_analyze(analyze_in, analyze_out, mi_bins, corr_threshold,
                         pca_variance);
    if (train_cmd->parsed())
      return run_train(train_in, train_out, train_flags, train_split,
                       train_split_seed);
    if (eval_cmd->parsed()) return run_eval(eval_in, eval_model, eval_out);
    if (explain_cmd->parsed())
      return run_explain(explain_in, explain_model, explain_method,
                         explain_class, explain_background, explain_topk,
                         explain_rows, kernel_samples, explain_seed, explain_out);
    if (faithful_cmd->parsed())
      return run_faithful(faithful_in, faithful_model, faithful_explainer,
                          noise_frac, faithful_runs, faithful_k, faithful_rows,
                          faithful_background, faithful_samples, faithful_seed,
                          faithful_out);
    if (synth_cmd->parsed())
      return run_synth(synth_preset, synth_n, synth_seed, synth_separation,
                       synth_out);
    if (pipeline_cmd->parsed()) {
      if (pipeline_train_cmd->parsed()) {
        ModelFlags stage1, stage2;
        stage1.kind = stage1_kind;
        stage1.seed = stage1_seed;
        stage2.kind = stage2_kind;
        stage2.seed = stage2_seed;
        return run_pipeline_train(ptrain_in, stage1, stage2, ptrain_split,
                                  ptrain_split_seed, ptrain_out);
      }
      if (pipeline_classify_cmd->parsed())
        return run_pipeline_classify(pclass_in, pclass_pipeline, pclass_explain,
                                     pclass_background, pclass_seed, pclass_out);
    }
    if (report_cmd->parsed())
      return run_report_cmd(report_config, report_manifest, report_outdir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
