#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flowsight/ensemble.hpp"
#include "flowsight/error.hpp"
#include "flowsight/features.hpp"
#include "flowsight/model.hpp"
#include "flowsight/shap.hpp"

namespace flowsight {

// Two-stage label universe: stage 1 categorizes traffic, stage 2 names the
// camera behind an IoTCam flow.
struct LabelSchema {
  static const std::vector<std::string>& stage1() {
    static const std::vector<std::string> labels = {"Conf", "Share", "IoTCam",
                                                    "Others"};
    return labels;
  }
  static const std::vector<std::string>& stage2() {
    static const std::vector<std::string> labels = {"Netatmo", "SpyClock",
                                                    "Canary", "D3D",
                                                    "Ezviz",   "V380"};
    return labels;
  }
  static constexpr const char* iotcam = "IoTCam";

  static bool is_stage2(const std::string& label) {
    const auto& s2 = stage2();
    return std::find(s2.begin(), s2.end(), label) != s2.end();
  }
  // Camera labels collapse to IoTCam at stage 1; everything else must
  // already be a stage-1 label.
  static std::string to_stage1(const std::string& label) {
    if (is_stage2(label)) return iotcam;
    const auto& s1 = stage1();
    if (std::find(s1.begin(), s1.end(), label) == s1.end())
      throw DataError("label '" + label + "' is in neither stage alphabet");
    return label;
  }
};

struct SplitResult {
  FeatureMatrix train;
  FeatureMatrix test;
  std::vector<std::string> warnings;
};

// Stratified shuffle split: deterministic under the seed, per-class
// proportions preserved to within one row.
inline SplitResult split(const FeatureMatrix& m, double ratio = 0.8,
                         std::uint64_t seed = 0, bool stratified = true) {
  if (!m.has_labels()) throw ValidationError("split needs a labeled matrix");
  if (ratio <= 0.0 || ratio > 1.0)
    throw ValidationError("split ratio must be in (0, 1]");

  SplitResult result;
  result.train.names = m.names;
  result.train.active_mask = m.active_mask;
  result.test.names = m.names;
  result.test.active_mask = m.active_mask;

  std::vector<std::vector<std::size_t>> groups;
  if (stratified) {
    std::map<std::string, std::vector<std::size_t>> by_label;
    for (std::size_t r = 0; r < m.n_rows(); ++r)
      by_label[m.labels[r]].push_back(r);
    for (auto& [label, rows] : by_label) {
      if (rows.size() < 2)
        throw DataError("class '" + label + "' has fewer than 2 rows");
      groups.push_back(std::move(rows));
    }
  } else {
    std::vector<std::size_t> all(m.n_rows());
    std::iota(all.begin(), all.end(), 0);
    groups.push_back(std::move(all));
  }

  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    Rng rng(derive_seed(seed, g));
    auto& rows = groups[g];
    rng.shuffle(rows.data(), rows.size());
    std::size_t n_train = static_cast<std::size_t>(
        std::llround(ratio * static_cast<double>(rows.size())));
    n_train = std::min(n_train, rows.size());
    train_rows.insert(train_rows.end(), rows.begin(), rows.begin() + n_train);
    test_rows.insert(test_rows.end(), rows.begin() + n_train, rows.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(test_rows.begin(), test_rows.end());

  for (std::size_t r : train_rows) result.train.add_row(m.row(r), m.labels[r]);
  for (std::size_t r : test_rows) result.test.add_row(m.row(r), m.labels[r]);
  if (test_rows.empty())
    result.warnings.push_back("split produced an empty test set");
  return result;
}

// Both stages share one feature mask; stage 2 is trained on camera-labeled
// rows only.
struct PipelineModel {
  TrainedModel stage1;
  TrainedModel stage2;
};

// Trains the two-stage pipeline from one matrix whose labels are either
// stage-1 categories or camera names (which imply IoTCam at stage 1).
inline PipelineModel train_pipeline(const ModelSpec& stage1_spec,
                                    const ModelSpec& stage2_spec,
                                    const FeatureMatrix& m) {
  if (!m.has_labels()) throw ValidationError("pipeline training needs labels");

  FeatureMatrix stage1_data = m;
  for (auto& label : stage1_data.labels) label = LabelSchema::to_stage1(label);

  FeatureMatrix stage2_data;
  stage2_data.names = m.names;
  stage2_data.active_mask = m.active_mask;
  for (std::size_t r = 0; r < m.n_rows(); ++r)
    if (LabelSchema::is_stage2(m.labels[r]))
      stage2_data.add_row(m.row(r), m.labels[r]);
  if (stage2_data.n_rows() == 0)
    throw DataError("no camera-labeled rows to train the second stage");

  std::vector<std::string> stage1_alphabet;
  for (const std::string& label : LabelSchema::stage1())
    if (std::find(stage1_data.labels.begin(), stage1_data.labels.end(), label) !=
        stage1_data.labels.end())
      stage1_alphabet.push_back(label);
  std::vector<std::string> stage2_alphabet;
  for (const std::string& label : LabelSchema::stage2())
    if (std::find(stage2_data.labels.begin(), stage2_data.labels.end(), label) !=
        stage2_data.labels.end())
      stage2_alphabet.push_back(label);

  PipelineModel pipeline;
  pipeline.stage1 = train(stage1_spec, stage1_data, stage1_alphabet);
  pipeline.stage2 = train(stage2_spec, stage2_data, stage2_alphabet);
  return pipeline;
}

struct TwoStageResult {
  std::string stage1_label;
  std::vector<double> stage1_scores;
  std::optional<std::string> stage2_label;
  std::vector<double> stage2_scores;  // empty unless stage 2 ran
  std::optional<Attribution> stage1_attribution;
  std::optional<Attribution> stage2_attribution;
};

struct TwoStageExplainContext {
  const Background* stage1_background = nullptr;
  const Background* stage2_background = nullptr;
  ExplainOptions options;
};

// Stage 2 runs iff stage 1 predicts IoTCam. With an explain context, each
// executed stage attaches attributions for its predicted class.
inline TwoStageResult two_stage_classify(
    const PipelineModel& pipeline, const double* row, std::size_t width,
    const TwoStageExplainContext* explain = nullptr) {
  if (pipeline.stage1.features != pipeline.stage2.features)
    throw ValidationError("pipeline stages disagree on the feature mask");
  detail::check_width(pipeline.stage1, width);

  TwoStageResult result;
  result.stage1_scores = predict_scores_row(pipeline.stage1, row);
  std::size_t c1 = argmax_lowest(result.stage1_scores);
  result.stage1_label = pipeline.stage1.labels[c1];

  if (explain && explain->stage1_background) {
    ExplainOptions options = explain->options;
    options.seed = derive_seed(explain->options.seed, 1);
    result.stage1_attribution = explain_instance(
        pipeline.stage1, row, c1, *explain->stage1_background, options);
    result.stage1_attribution->class_label = result.stage1_label;
  }

  if (result.stage1_label == LabelSchema::iotcam) {
    result.stage2_scores = predict_scores_row(pipeline.stage2, row);
    std::size_t c2 = argmax_lowest(result.stage2_scores);
    result.stage2_label = pipeline.stage2.labels[c2];
    if (explain && explain->stage2_background) {
      ExplainOptions options = explain->options;
      options.seed = derive_seed(explain->options.seed, 2);
      result.stage2_attribution = explain_instance(
          pipeline.stage2, row, c2, *explain->stage2_background, options);
      result.stage2_attribution->class_label = *result.stage2_label;
    }
  }
  return result;
}

inline void save_pipeline(const PipelineModel& pipeline, const std::string& path) {
  nlohmann::json j;
  j["format"] = "flowsight-pipeline";
  j["version"] = kModelFormatVersion;
  j["stage1"] = model_to_json(pipeline.stage1);
  j["stage2"] = model_to_json(pipeline.stage2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write pipeline file: " + path);
  out << j.dump(1) << '\n';
}

inline PipelineModel load_pipeline(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open pipeline file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt pipeline file " + path + ": " + e.what());
  }
  if (j.value("format", "") != "flowsight-pipeline")
    throw DataError("not a flowsight pipeline file: " + path);
  if (j.value("version", -1) != kModelFormatVersion)
    throw DataError("unsupported pipeline format version in " + path);
  PipelineModel pipeline;
  pipeline.stage1 = model_from_json(j.at("stage1"));
  pipeline.stage2 = model_from_json(j.at("stage2"));
  return pipeline;
}

}  // namespace flowsight
