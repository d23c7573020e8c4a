#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "flowsight/error.hpp"
#include "flowsight/features.hpp"
#include "flowsight/tree.hpp"
#include "flowsight/version.hpp"

namespace flowsight {

enum class ModelKind { dt, knn, nb, lr, rf, xgb, et, ab };

inline const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::dt: return "DT";
    case ModelKind::knn: return "kNN";
    case ModelKind::nb: return "NB";
    case ModelKind::lr: return "LR";
    case ModelKind::rf: return "RF";
    case ModelKind::xgb: return "XGB";
    case ModelKind::et: return "ET";
    case ModelKind::ab: return "AB";
  }
  return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  static const std::map<std::string, ModelKind> table = {
      {"DT", ModelKind::dt}, {"dt", ModelKind::dt},
      {"kNN", ModelKind::knn}, {"KNN", ModelKind::knn}, {"knn", ModelKind::knn},
      {"NB", ModelKind::nb}, {"nb", ModelKind::nb},
      {"LR", ModelKind::lr}, {"lr", ModelKind::lr},
      {"RF", ModelKind::rf}, {"rf", ModelKind::rf},
      {"XGB", ModelKind::xgb}, {"xgb", ModelKind::xgb},
      {"ET", ModelKind::et}, {"et", ModelKind::et},
      {"AB", ModelKind::ab}, {"ab", ModelKind::ab},
  };
  auto it = table.find(s);
  if (it == table.end()) throw ValidationError("unknown model kind: " + s);
  return it->second;
}

// Hyperparameters. Defaults are the tuned settings: DT depth 30; kNN k=8;
// LR 1000 iterations; RF 30/300; XGB 30/200; ET 50/300; AB 30/100.
struct ModelSpec {
  ModelKind kind = ModelKind::xgb;
  int max_depth = 30;
  int n_estimators = 0;
  int k_neighbors = 8;
  int max_iterations = 1000;
  double learning_rate = 0.3;
  std::uint64_t seed = 0;

  static ModelSpec defaults(ModelKind kind, std::uint64_t seed = 0) {
    ModelSpec spec;
    spec.kind = kind;
    spec.seed = seed;
    switch (kind) {
      case ModelKind::dt: spec.max_depth = 30; break;
      case ModelKind::knn: spec.k_neighbors = 8; break;
      case ModelKind::nb: break;
      case ModelKind::lr: spec.max_iterations = 1000; break;
      case ModelKind::rf: spec.max_depth = 30; spec.n_estimators = 300; break;
      case ModelKind::xgb:
        spec.max_depth = 30;
        spec.n_estimators = 200;
        spec.learning_rate = 0.3;
        break;
      case ModelKind::et: spec.max_depth = 50; spec.n_estimators = 300; break;
      case ModelKind::ab:
        spec.max_depth = 30;
        spec.n_estimators = 100;
        spec.learning_rate = 1.0;
        break;
    }
    return spec;
  }
};

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;  // population std; constant columns get 1

  void apply(double* row) const {
    for (std::size_t j = 0; j < mean.size(); ++j)
      row[j] = (row[j] - mean[j]) / scale[j];
  }
};

// Tree ensembles share one representation: per-tree vector leaf payloads with
// a scalar weight. Probability kinds (DT/RF/ET) store class distributions and
// weights summing to 1; margin kinds (XGB/AB) store additive per-class scores.
struct TreeEnsembleParams {
  std::vector<Tree> trees;
  std::vector<double> tree_weights;
};

struct NaiveBayesParams {
  std::vector<double> means;  // k x d
  std::vector<double> vars;   // k x d, smoothed
  std::vector<double> log_priors;
};

struct LinearParams {
  std::vector<double> weights;  // k x d
  std::vector<double> bias;     // k
};

struct KnnParams {
  std::vector<double> x;  // n x d, standardized
  std::vector<int> y;
  int k = 8;
};

struct TrainedModel {
  ModelSpec spec;
  std::vector<std::string> labels;    // prediction alphabet
  std::vector<std::string> features;  // active feature names, defines row width
  std::optional<Standardizer> standardizer;
  std::variant<TreeEnsembleParams, NaiveBayesParams, LinearParams, KnnParams> params;

  std::size_t n_classes() const { return labels.size(); }
  std::size_t n_features() const { return features.size(); }
  bool is_tree_kind() const {
    return std::holds_alternative<TreeEnsembleParams>(params);
  }
  bool is_margin_kind() const {
    return spec.kind == ModelKind::xgb || spec.kind == ModelKind::ab;
  }
};

namespace detail {

inline void check_width(const TrainedModel& model, std::size_t width) {
  if (width != model.n_features())
    throw ValidationError("row width " + std::to_string(width) +
                          " does not match the model's " +
                          std::to_string(model.n_features()) + " features");
}

inline void softmax_inplace(std::vector<double>& z) {
  double mx = *std::max_element(z.begin(), z.end());
  double sum = 0;
  for (double& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

}  // namespace detail

// Raw additive per-class scores of a margin-kind ensemble (XGB: boosted
// margins, AB: weighted votes). Probability kinds have no margin space.
inline std::vector<double> predict_margins_row(const TrainedModel& model,
                                               const double* row) {
  if (!model.is_margin_kind())
    throw ValidationError("margins are only defined for boosted models");
  const auto& ensemble = std::get<TreeEnsembleParams>(model.params);
  std::vector<double> margins(model.n_classes(), 0.0);
  for (std::size_t t = 0; t < ensemble.trees.size(); ++t) {
    const std::vector<double>& values = ensemble.trees[t].descend(row);
    for (std::size_t c = 0; c < margins.size(); ++c)
      margins[c] += ensemble.tree_weights[t] * values[c];
  }
  return margins;
}

inline std::vector<double> predict_scores_row(const TrainedModel& model,
                                              const double* row) {
  const std::size_t k = model.n_classes();
  std::vector<double> scores(k, 0.0);

  if (const auto* ensemble = std::get_if<TreeEnsembleParams>(&model.params)) {
    if (model.spec.kind == ModelKind::xgb) {
      scores = predict_margins_row(model, row);
      detail::softmax_inplace(scores);
      return scores;
    }
    if (model.spec.kind == ModelKind::ab) {
      scores = predict_margins_row(model, row);
      double total = 0;
      for (double w : ensemble->tree_weights) total += w;
      for (double& s : scores) s /= total;
      return scores;
    }
    for (std::size_t t = 0; t < ensemble->trees.size(); ++t) {
      const std::vector<double>& values = ensemble->trees[t].descend(row);
      for (std::size_t c = 0; c < k; ++c)
        scores[c] += ensemble->tree_weights[t] * values[c];
    }
    return scores;
  }

  if (const auto* nb = std::get_if<NaiveBayesParams>(&model.params)) {
    const std::size_t d = model.n_features();
    std::vector<double> log_post(k);
    for (std::size_t c = 0; c < k; ++c) {
      double acc = nb->log_priors[c];
      for (std::size_t j = 0; j < d; ++j) {
        double var = nb->vars[c * d + j];
        double diff = row[j] - nb->means[c * d + j];
        acc += -0.5 * (std::log(2.0 * M_PI * var) + diff * diff / var);
      }
      log_post[c] = acc;
    }
    detail::softmax_inplace(log_post);
    return log_post;
  }

  std::vector<double> std_row(row, row + model.n_features());
  if (model.standardizer) model.standardizer->apply(std_row.data());

  if (const auto* lr = std::get_if<LinearParams>(&model.params)) {
    const std::size_t d = model.n_features();
    std::vector<double> z(k);
    for (std::size_t c = 0; c < k; ++c) {
      double acc = lr->bias[c];
      for (std::size_t j = 0; j < d; ++j) acc += lr->weights[c * d + j] * std_row[j];
      z[c] = acc;
    }
    detail::softmax_inplace(z);
    return z;
  }

  const auto& knn = std::get<KnnParams>(model.params);
  const std::size_t d = model.n_features();
  const std::size_t n = knn.y.size();
  std::size_t use_k = std::min<std::size_t>(static_cast<std::size_t>(knn.k), n);
  // (distance^2, index); ties on distance resolved by the lower index.
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0;
    for (std::size_t j = 0; j < d; ++j) {
      double diff = std_row[j] - knn.x[i * d + j];
      acc += diff * diff;
    }
    dist[i] = {acc, i};
  }
  std::partial_sort(dist.begin(), dist.begin() + use_k, dist.end());
  for (std::size_t i = 0; i < use_k; ++i)
    scores[static_cast<std::size_t>(knn.y[dist[i].second])] += 1.0;
  for (double& s : scores) s /= static_cast<double>(use_k);
  return scores;
}

inline std::size_t argmax_lowest(const std::vector<double>& scores) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < scores.size(); ++c)
    if (scores[c] > scores[best]) best = c;
  return best;
}

inline std::string predict_row(const TrainedModel& model, const double* row) {
  return model.labels[argmax_lowest(predict_scores_row(model, row))];
}

// Rows must already be restricted to the model's active features.
inline std::vector<std::vector<double>> predict_scores(
    const TrainedModel& model, const std::vector<std::vector<double>>& rows) {
  std::vector<std::vector<double>> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    detail::check_width(model, row.size());
    out.push_back(predict_scores_row(model, row.data()));
  }
  return out;
}

inline std::vector<std::string> predict(const TrainedModel& model,
                                        const std::vector<std::vector<double>>& rows) {
  std::vector<std::string> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    detail::check_width(model, row.size());
    out.push_back(predict_row(model, row.data()));
  }
  return out;
}

// ---- serialization ----

namespace detail {

inline nlohmann::json tree_to_json(const Tree& tree) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const Tree::Node& node : tree.nodes) {
    nlohmann::json j;
    j["f"] = node.feature;
    if (node.feature >= 0) {
      j["t"] = node.threshold;
      j["l"] = node.left;
      j["r"] = node.right;
    } else {
      j["v"] = node.values;
    }
    nodes.push_back(std::move(j));
  }
  return nodes;
}

inline Tree tree_from_json(const nlohmann::json& nodes) {
  Tree tree;
  for (const auto& j : nodes) {
    Tree::Node node;
    node.feature = j.at("f").get<int>();
    if (node.feature >= 0) {
      node.threshold = j.at("t").get<double>();
      node.left = j.at("l").get<int>();
      node.right = j.at("r").get<int>();
    } else {
      node.values = j.at("v").get<std::vector<double>>();
    }
    tree.nodes.push_back(std::move(node));
  }
  return tree;
}

}  // namespace detail

inline nlohmann::json model_to_json(const TrainedModel& model) {
  nlohmann::json j;
  j["format"] = "flowsight-model";
  j["version"] = kModelFormatVersion;
  j["kind"] = to_string(model.spec.kind);
  j["seed"] = model.spec.seed;
  j["hyper"] = {{"max_depth", model.spec.max_depth},
                {"n_estimators", model.spec.n_estimators},
                {"k_neighbors", model.spec.k_neighbors},
                {"max_iterations", model.spec.max_iterations},
                {"learning_rate", model.spec.learning_rate}};
  j["labels"] = model.labels;
  j["features"] = model.features;
  if (model.standardizer) {
    j["standardizer"] = {{"mean", model.standardizer->mean},
                         {"scale", model.standardizer->scale}};
  }
  if (const auto* ensemble = std::get_if<TreeEnsembleParams>(&model.params)) {
    nlohmann::json trees = nlohmann::json::array();
    for (const Tree& tree : ensemble->trees)
      trees.push_back(detail::tree_to_json(tree));
    j["params"] = {{"type", "trees"},
                   {"trees", std::move(trees)},
                   {"weights", ensemble->tree_weights}};
  } else if (const auto* nb = std::get_if<NaiveBayesParams>(&model.params)) {
    j["params"] = {{"type", "nb"},
                   {"means", nb->means},
                   {"vars", nb->vars},
                   {"log_priors", nb->log_priors}};
  } else if (const auto* lr = std::get_if<LinearParams>(&model.params)) {
    j["params"] = {{"type", "lr"}, {"weights", lr->weights}, {"bias", lr->bias}};
  } else {
    const auto& knn = std::get<KnnParams>(model.params);
    j["params"] = {{"type", "knn"}, {"x", knn.x}, {"y", knn.y}, {"k", knn.k}};
  }
  return j;
}

inline TrainedModel model_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != "flowsight-model")
    throw DataError("not a flowsight model file");
  int version = j.value("version", -1);
  if (version != kModelFormatVersion)
    throw DataError("unsupported model format version " +
                    std::to_string(version) + " (expected " +
                    std::to_string(kModelFormatVersion) + ")");

  TrainedModel model;
  model.spec.kind = model_kind_from_string(j.at("kind").get<std::string>());
  model.spec.seed = j.at("seed").get<std::uint64_t>();
  const auto& hyper = j.at("hyper");
  model.spec.max_depth = hyper.at("max_depth").get<int>();
  model.spec.n_estimators = hyper.at("n_estimators").get<int>();
  model.spec.k_neighbors = hyper.at("k_neighbors").get<int>();
  model.spec.max_iterations = hyper.at("max_iterations").get<int>();
  model.spec.learning_rate = hyper.at("learning_rate").get<double>();
  model.labels = j.at("labels").get<std::vector<std::string>>();
  model.features = j.at("features").get<std::vector<std::string>>();
  if (j.contains("standardizer")) {
    Standardizer s;
    s.mean = j["standardizer"].at("mean").get<std::vector<double>>();
    s.scale = j["standardizer"].at("scale").get<std::vector<double>>();
    model.standardizer = std::move(s);
  }
  const auto& params = j.at("params");
  std::string type = params.at("type").get<std::string>();
  if (type == "trees") {
    TreeEnsembleParams ensemble;
    for (const auto& tree : params.at("trees"))
      ensemble.trees.push_back(detail::tree_from_json(tree));
    ensemble.tree_weights = params.at("weights").get<std::vector<double>>();
    model.params = std::move(ensemble);
  } else if (type == "nb") {
    NaiveBayesParams nb;
    nb.means = params.at("means").get<std::vector<double>>();
    nb.vars = params.at("vars").get<std::vector<double>>();
    nb.log_priors = params.at("log_priors").get<std::vector<double>>();
    model.params = std::move(nb);
  } else if (type == "lr") {
    LinearParams lr;
    lr.weights = params.at("weights").get<std::vector<double>>();
    lr.bias = params.at("bias").get<std::vector<double>>();
    model.params = std::move(lr);
  } else if (type == "knn") {
    KnnParams knn;
    knn.x = params.at("x").get<std::vector<double>>();
    knn.y = params.at("y").get<std::vector<int>>();
    knn.k = params.at("k").get<int>();
    model.params = std::move(knn);
  } else {
    throw DataError("unknown model parameter type: " + type);
  }
  return model;
}

inline void save_model(const TrainedModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model file: " + path);
  out << model_to_json(model).dump(1) << '\n';
}

inline TrainedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt model file " + path + ": " + e.what());
  }
  try {
    return model_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed model file " + path + ": " + e.what());
  }
}

}  // namespace flowsight
