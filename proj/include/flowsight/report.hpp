#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowsight/ensemble.hpp"
#include "flowsight/faithfulness.hpp"
#include "flowsight/feature_csv.hpp"
#include "flowsight/lime.hpp"
#include "flowsight/metrics.hpp"
#include "flowsight/pipeline.hpp"
#include "flowsight/shap.hpp"
#include "flowsight/synth.hpp"
#include "flowsight/version.hpp"

namespace flowsight {

namespace detail {

inline std::uint64_t env_default_seed() {
  const char* raw = std::getenv("FLOWSIGHT_SEED");
  if (!raw) return 0;
  char* end = nullptr;
  unsigned long long v = std::strtoull(raw, &end, 10);
  if (end == raw || *end != '\0')
    throw ValidationError("FLOWSIGHT_SEED must be an unsigned integer");
  return static_cast<std::uint64_t>(v);
}

class ConfigReader {
 public:
  explicit ConfigReader(const nlohmann::json& root) : root_(root) {}

  const nlohmann::json* find(const std::string& path) const {
    const nlohmann::json* node = &root_;
    std::istringstream segments(path);
    std::string segment;
    while (std::getline(segments, segment, '.')) {
      std::string key = segment;
      int index = -1;
      auto bracket = segment.find('[');
      if (bracket != std::string::npos) {
        key = segment.substr(0, bracket);
        index = std::stoi(segment.substr(bracket + 1));
      }
      if (!key.empty()) {
        if (!node->is_object() || !node->contains(key)) return nullptr;
        node = &(*node)[key];
      }
      if (index >= 0) {
        if (!node->is_array() || index >= static_cast<int>(node->size()))
          return nullptr;
        node = &(*node)[static_cast<std::size_t>(index)];
      }
    }
    return node;
  }

  template <typename T>
  T get(const std::string& path, const T& fallback) const {
    const nlohmann::json* node = find(path);
    if (!node || node->is_null()) return fallback;
    try {
      return node->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("config: bad value type at " + path);
    }
  }

  template <typename T>
  T require(const std::string& path) const {
    const nlohmann::json* node = find(path);
    if (!node || node->is_null())
      throw ValidationError("config: missing required field " + path);
    try {
      return node->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("config: bad value type at " + path);
    }
  }

 private:
  const nlohmann::json& root_;
};

inline nlohmann::json spec_to_json(const ModelSpec& spec) {
  return {{"kind", to_string(spec.kind)},
          {"seed", spec.seed},
          {"max_depth", spec.max_depth},
          {"n_estimators", spec.n_estimators},
          {"k_neighbors", spec.k_neighbors},
          {"max_iterations", spec.max_iterations},
          {"learning_rate", spec.learning_rate}};
}

inline ModelSpec spec_from_config(const ConfigReader& config,
                                  const std::string& prefix,
                                  std::uint64_t default_seed) {
  std::string kind_string = config.require<std::string>(prefix + ".kind");
  ModelKind kind;
  try {
    kind = model_kind_from_string(kind_string);
  } catch (const ValidationError&) {
    throw ValidationError("config: unknown model kind at " + prefix + ".kind");
  }
  ModelSpec spec = ModelSpec::defaults(
      kind, config.get<std::uint64_t>(prefix + ".seed", default_seed));
  spec.max_depth = config.get<int>(prefix + ".max_depth", spec.max_depth);
  spec.n_estimators =
      config.get<int>(prefix + ".n_estimators", spec.n_estimators);
  spec.k_neighbors = config.get<int>(prefix + ".k_neighbors", spec.k_neighbors);
  spec.max_iterations =
      config.get<int>(prefix + ".max_iterations", spec.max_iterations);
  spec.learning_rate =
      config.get<double>(prefix + ".learning_rate", spec.learning_rate);
  if (spec.max_depth <= 0)
    throw ValidationError("config: max_depth must be positive at " + prefix);
  return spec;
}

inline std::string hash_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out << text;
}

inline nlohmann::json class_metrics_json(const ClassMetrics& m,
                                         std::uint64_t fn_count) {
  nlohmann::json j = {{"accuracy", m.accuracy}, {"precision", m.precision},
                      {"recall", m.recall},     {"f1", m.f1},
                      {"fn_rate", m.fn_rate},   {"fn_count", fn_count}};
  if (m.precision_undefined) j["precision_undefined"] = true;
  if (m.recall_undefined) j["recall_undefined"] = true;
  if (m.f1_undefined) j["f1_undefined"] = true;
  return j;
}

inline nlohmann::json confusion_json(const ConfusionMatrix& c) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t t = 0; t < c.size(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < c.size(); ++p) row.push_back(c.at(t, p));
    rows.push_back(std::move(row));
  }
  return {{"alphabet", c.alphabet}, {"rows_true_cols_predicted", rows}};
}

inline nlohmann::json evaluate_model(const TrainedModel& model,
                                     const FeatureMatrix& test) {
  auto rows = active_rows(test);
  auto predictions = predict(model, rows);
  ConfusionMatrix c = confusion(test.labels, predictions, model.labels);
  nlohmann::json per_class;
  for (std::size_t i = 0; i < c.size(); ++i) {
    std::uint64_t fn = 0;
    for (std::size_t p = 0; p < c.size(); ++p)
      if (p != i) fn += c.at(i, p);
    per_class[c.alphabet[i]] = class_metrics_json(class_metrics(c, i), fn);
  }
  MacroMetrics macro = macro_metrics(c);
  return {{"confusion", confusion_json(c)},
          {"per_class", per_class},
          {"macro",
           {{"accuracy", macro.accuracy},
            {"precision", macro.precision},
            {"recall", macro.recall},
            {"f1", macro.f1},
            {"fn_rate", macro.fn_rate}}},
          {"test_rows", test.n_rows()}};
}

}  // namespace detail

// Fills defaults and validates a report configuration. The result is fully
// resolved (every seed and knob explicit) so a manifest re-run reproduces the
// exact computation regardless of environment changes.
inline nlohmann::json resolve_report_config(const nlohmann::json& raw) {
  if (!raw.is_object()) throw ValidationError("config: root must be an object");
  detail::ConfigReader config(raw);
  std::uint64_t env_seed = detail::env_default_seed();

  nlohmann::json resolved;
  std::string source = config.require<std::string>("data.source");
  if (source != "synth4" && source != "synth6" && source != "two-stage" &&
      source != "csv" && source != "pcap")
    throw ValidationError(
        "config: data.source must be one of synth4|synth6|two-stage|csv|pcap");
  resolved["data"]["source"] = source;
  if (source == "csv" || source == "pcap")
    resolved["data"]["path"] = config.require<std::string>("data.path");
  if (source == "pcap") {
    resolved["data"]["label"] = config.get<std::string>("data.label", "");
    resolved["data"]["flow_timeout"] =
        config.get<double>("data.flow_timeout", 600.0);
    resolved["data"]["activity_timeout"] =
        config.get<double>("data.activity_timeout", 5.0);
  }
  if (source == "synth4" || source == "synth6" || source == "two-stage") {
    resolved["data"]["n_per_class"] =
        config.get<std::size_t>("data.n_per_class", 500);
    resolved["data"]["separation"] = config.get<double>("data.separation", 6.0);
    resolved["data"]["seed"] = config.get<std::uint64_t>("data.seed", env_seed);
  }

  resolved["split"]["ratio"] = config.get<double>("split.ratio", 0.8);
  resolved["split"]["seed"] = config.get<std::uint64_t>("split.seed", env_seed);
  double ratio = resolved["split"]["ratio"].get<double>();
  if (ratio <= 0.0 || ratio > 1.0)
    throw ValidationError("config: split.ratio must be in (0, 1]");

  resolved["models"] = nlohmann::json::array();
  const nlohmann::json* models = config.find("models");
  if (models) {
    if (!models->is_array())
      throw ValidationError("config: models must be an array");
    for (std::size_t i = 0; i < models->size(); ++i) {
      ModelSpec spec = detail::spec_from_config(
          config, "models[" + std::to_string(i) + "]", env_seed);
      resolved["models"].push_back(detail::spec_to_json(spec));
    }
  }

  resolved["explain"]["enabled"] = config.get<bool>("explain.enabled", false);
  resolved["explain"]["method"] =
      config.get<std::string>("explain.method", "tree");
  attribution_method_from_string(
      resolved["explain"]["method"].get<std::string>());
  resolved["explain"]["background"] =
      config.get<std::size_t>("explain.background", 100);
  resolved["explain"]["topk"] = config.get<std::size_t>("explain.topk", 10);
  resolved["explain"]["eval_rows"] =
      config.get<std::size_t>("explain.eval_rows", 100);
  resolved["explain"]["seed"] =
      config.get<std::uint64_t>("explain.seed", env_seed);

  resolved["faithfulness"]["enabled"] =
      config.get<bool>("faithfulness.enabled", false);
  resolved["faithfulness"]["noise_frac"] =
      config.get<double>("faithfulness.noise_frac", 0.05);
  resolved["faithfulness"]["runs"] =
      config.get<std::size_t>("faithfulness.runs", 5);
  resolved["faithfulness"]["k"] = config.get<std::size_t>("faithfulness.k", 10);
  resolved["faithfulness"]["eval_rows"] =
      config.get<std::size_t>("faithfulness.eval_rows", 100);
  resolved["faithfulness"]["seed"] =
      config.get<std::uint64_t>("faithfulness.seed", env_seed);

  resolved["pipeline"]["enabled"] = config.get<bool>("pipeline.enabled", false);
  if (resolved["pipeline"]["enabled"].get<bool>()) {
    if (!config.find("pipeline.stage1"))
      throw ValidationError("config: missing required field pipeline.stage1");
    if (!config.find("pipeline.stage2"))
      throw ValidationError("config: missing required field pipeline.stage2");
    resolved["pipeline"]["stage1"] = detail::spec_to_json(
        detail::spec_from_config(config, "pipeline.stage1", env_seed));
    resolved["pipeline"]["stage2"] = detail::spec_to_json(
        detail::spec_from_config(config, "pipeline.stage2", env_seed));
  }

  resolved["output_dir"] = config.require<std::string>("output_dir");
  return resolved;
}

inline ModelSpec spec_from_resolved(const nlohmann::json& j) {
  ModelSpec spec = ModelSpec::defaults(
      model_kind_from_string(j.at("kind").get<std::string>()),
      j.at("seed").get<std::uint64_t>());
  spec.max_depth = j.at("max_depth").get<int>();
  spec.n_estimators = j.at("n_estimators").get<int>();
  spec.k_neighbors = j.at("k_neighbors").get<int>();
  spec.max_iterations = j.at("max_iterations").get<int>();
  spec.learning_rate = j.at("learning_rate").get<double>();
  return spec;
}

struct ReportResult {
  std::filesystem::path output_dir;
  nlohmann::json manifest;
  nlohmann::json metrics;
};

// Executes one resolved configuration: loads or generates data, trains and
// evaluates the requested models, optionally emits attribution and
// faithfulness reports, and writes a manifest sufficient to reproduce the
// metric JSON byte-for-byte.
inline ReportResult run_report(const nlohmann::json& resolved) {
  const std::string source = resolved.at("data").at("source").get<std::string>();
  std::filesystem::path out_dir(resolved.at("output_dir").get<std::string>());
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> outputs;

  FeatureMatrix data;
  nlohmann::json data_summary;
  if (source == "csv") {
    data = read_feature_csv(resolved.at("data").at("path").get<std::string>());
  } else if (source == "pcap") {
    const auto& cfg = resolved.at("data");
    PcapResult capture = read_pcap(cfg.at("path").get<std::string>());
    AssemblerOptions options;
    options.flow_timeout_s = cfg.at("flow_timeout").get<double>();
    options.activity_timeout_s = cfg.at("activity_timeout").get<double>();
    auto flows = assemble_flows(capture.packets, options);
    data = FeatureMatrix::standard();
    std::string label = cfg.at("label").get<std::string>();
    for (const FlowBuffer& flow : flows)
      data.add_row(compute_features(flow), label);
    data_summary["skipped_frames"] = capture.skipped;
    data_summary["truncated"] = capture.truncated;
    std::string csv_path = (out_dir / "features.csv").string();
    write_feature_csv(csv_path, data);
    outputs.push_back("features.csv");
  } else {
    const auto& cfg = resolved.at("data");
    SynthSpec spec;
    std::size_t n = cfg.at("n_per_class").get<std::size_t>();
    double separation = cfg.at("separation").get<double>();
    std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
    if (source == "synth4")
      spec = synth4(n, seed, separation);
    else if (source == "synth6")
      spec = synth6(n, seed, separation);
    else
      spec = synth_two_stage(n, seed, separation);
    data = synth_generate(spec);
  }
  data_summary["rows"] = data.n_rows();

  if (data.n_rows() >= 2) data = prune_static(data);
  data_summary["active_features"] = data.active_indices().size();

  nlohmann::json metrics;
  metrics["data"] = data_summary;
  metrics["models"] = nlohmann::json::object();

  const bool want_models = !resolved.at("models").empty() ||
                           resolved.at("pipeline").at("enabled").get<bool>();
  SplitResult parts;
  if (want_models) {
    if (!data.has_labels())
      throw DataError("the configured data source has no labels to train on");
    parts = split(data, resolved.at("split").at("ratio").get<double>(),
                  resolved.at("split").at("seed").get<std::uint64_t>());
    metrics["data"]["train_rows"] = parts.train.n_rows();
    metrics["data"]["test_rows"] = parts.test.n_rows();
  }

  const auto& explain_cfg = resolved.at("explain");
  const auto& faith_cfg = resolved.at("faithfulness");

  for (const auto& model_cfg : resolved.at("models")) {
    ModelSpec spec = spec_from_resolved(model_cfg);
    FeatureMatrix train_data = parts.train;
    if (source == "two-stage")
      for (auto& label : train_data.labels) label = LabelSchema::to_stage1(label);
    FeatureMatrix test_data = parts.test;
    if (source == "two-stage")
      for (auto& label : test_data.labels) label = LabelSchema::to_stage1(label);

    TrainedModel model = train(spec, train_data);
    std::string kind = to_string(spec.kind);
    while (metrics["models"].contains(kind)) kind += "+";  // repeated kinds
    metrics["models"][kind] = detail::evaluate_model(model, test_data);

    if (model.is_tree_kind() &&
        (explain_cfg.at("enabled").get<bool>() ||
         faith_cfg.at("enabled").get<bool>())) {
      Background bg = sample_background(
          train_data, explain_cfg.at("background").get<std::size_t>(),
          explain_cfg.at("seed").get<std::uint64_t>());

      FeatureMatrix eval = test_data;
      std::size_t eval_rows = explain_cfg.at("eval_rows").get<std::size_t>();
      if (eval.n_rows() > eval_rows) {
        FeatureMatrix trimmed;
        trimmed.names = eval.names;
        trimmed.active_mask = eval.active_mask;
        for (std::size_t r = 0; r < eval_rows; ++r)
          trimmed.add_row(eval.row(r), eval.labels[r]);
        eval = std::move(trimmed);
      }

      if (explain_cfg.at("enabled").get<bool>()) {
        std::ostringstream csv;
        csv << "feature";
        for (const std::string& label : model.labels) csv << ',' << label;
        csv << '\n';
        std::vector<MeanAbsAttributions> per_class;
        for (std::size_t c = 0; c < model.n_classes(); ++c)
          per_class.push_back(mean_abs_attributions(model, eval, c, bg));
        for (std::size_t j = 0; j < model.n_features(); ++j) {
          csv << model.features[j];
          for (const auto& agg : per_class) csv << ',' << format_double(agg.scores[j]);
          csv << '\n';
        }
        std::string name = "attributions_" + kind + ".csv";
        detail::write_text((out_dir / name).string(), csv.str());
        outputs.push_back(name);
      }

      if (faith_cfg.at("enabled").get<bool>()) {
        FaithfulnessConfig config;
        config.noise_frac = faith_cfg.at("noise_frac").get<double>();
        config.runs = faith_cfg.at("runs").get<std::size_t>();
        config.top_k = faith_cfg.at("k").get<std::size_t>();
        config.seed = faith_cfg.at("seed").get<std::uint64_t>();

        auto rows = active_rows(eval);
        std::size_t limit =
            std::min(rows.size(), faith_cfg.at("eval_rows").get<std::size_t>());
        rows.resize(limit);
        InstanceExplainer explainer = tree_explainer(model, bg);
        FaithfulnessReport report = faithfulness_report(
            model, rows, explainer, column_means(bg), config);

        nlohmann::json j;
        j["overall_consistency"] = report.overall_consistency;
        j["sufficiency"] = report.sufficiency_score;
        j["config"] = {{"noise_frac", config.noise_frac},
                       {"runs", config.runs},
                       {"k", config.top_k},
                       {"seed", config.seed}};
        nlohmann::json per_feature;
        for (std::size_t f = 0; f < report.feature_names.size(); ++f)
          per_feature[report.feature_names[f]] =
              report.per_feature_consistency[f];
        j["per_feature_consistency"] = per_feature;
        std::string name = "faithfulness_" + kind + ".json";
        detail::write_text((out_dir / name).string(), j.dump(2) + "\n");
        outputs.push_back(name);
      }
    }
  }

  if (resolved.at("pipeline").at("enabled").get<bool>()) {
    PipelineModel pipeline = train_pipeline(
        spec_from_resolved(resolved.at("pipeline").at("stage1")),
        spec_from_resolved(resolved.at("pipeline").at("stage2")), parts.train);

    FeatureMatrix stage1_test = parts.test;
    for (auto& label : stage1_test.labels) label = LabelSchema::to_stage1(label);
    metrics["pipeline"]["stage1"] =
        detail::evaluate_model(pipeline.stage1, stage1_test);

    // Stage 2, conditioned on stage 1 being correct, and end to end.
    auto rows = active_rows(parts.test);
    std::vector<std::string> cond_true, cond_pred;
    std::size_t e2e_total = 0, e2e_correct = 0, gating_violations = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      TwoStageResult result =
          two_stage_classify(pipeline, rows[r].data(), rows[r].size());
      bool has_stage2 = result.stage2_label.has_value();
      if (has_stage2 != (result.stage1_label == LabelSchema::iotcam))
        ++gating_violations;
      const std::string& truth = parts.test.labels[r];
      if (!LabelSchema::is_stage2(truth)) continue;
      ++e2e_total;
      if (result.stage1_label == LabelSchema::iotcam) {
        cond_true.push_back(truth);
        cond_pred.push_back(*result.stage2_label);
        if (*result.stage2_label == truth) ++e2e_correct;
      }
    }
    metrics["pipeline"]["gating_violations"] = gating_violations;
    if (!cond_true.empty()) {
      ConfusionMatrix c =
          confusion(cond_true, cond_pred, pipeline.stage2.labels);
      MacroMetrics macro = macro_metrics(c);
      metrics["pipeline"]["stage2_conditioned"] = {
          {"confusion", detail::confusion_json(c)},
          {"macro_accuracy", macro.accuracy},
          {"macro_f1", macro.f1}};
    }
    metrics["pipeline"]["end_to_end"] = {
        {"camera_rows", e2e_total},
        {"correct", e2e_correct},
        {"accuracy", e2e_total ? static_cast<double>(e2e_correct) /
                                     static_cast<double>(e2e_total)
                               : 0.0}};
  }

  std::string metrics_text = metrics.dump(2) + "\n";
  detail::write_text((out_dir / "metrics.json").string(), metrics_text);
  outputs.push_back("metrics.json");

  nlohmann::json manifest;
  manifest["config"] = resolved;
  // The hash identifies the computation; where it is written is not part of it.
  nlohmann::json hashed = resolved;
  hashed.erase("output_dir");
  manifest["config_hash"] = detail::hash_hex(hashed.dump());
  manifest["version"] = kVersion;
  manifest["outputs"] = outputs;
  detail::write_text((out_dir / "manifest.json").string(),
                     manifest.dump(2) + "\n");

  ReportResult result;
  result.output_dir = out_dir;
  result.manifest = manifest;
  result.metrics = metrics;
  return result;
}

inline ReportResult run_report_from_manifest(const std::string& manifest_path,
                                             const std::string& output_dir = "") {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest: " + manifest_path);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt manifest " + manifest_path + ": " + e.what());
  }
  if (!manifest.contains("config"))
    throw ValidationError("manifest has no config section: " + manifest_path);
  nlohmann::json config = manifest["config"];
  if (!output_dir.empty()) config["output_dir"] = output_dir;
  return run_report(config);
}

}  // namespace flowsight
