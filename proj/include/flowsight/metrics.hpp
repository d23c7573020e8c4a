#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowsight/error.hpp"

namespace flowsight {

// Row = true label, column = predicted label.
struct ConfusionMatrix {
  std::vector<std::string> alphabet;
  std::vector<std::uint64_t> counts;  // l x l, row-major

  std::size_t size() const { return alphabet.size(); }
  std::uint64_t at(std::size_t t, std::size_t p) const {
    return counts[t * size() + p];
  }
  std::uint64_t& at(std::size_t t, std::size_t p) {
    return counts[t * size() + p];
  }
  std::uint64_t total() const {
    std::uint64_t sum = 0;
    for (std::uint64_t c : counts) sum += c;
    return sum;
  }

  std::size_t index_of(const std::string& label) const {
    for (std::size_t i = 0; i < alphabet.size(); ++i)
      if (alphabet[i] == label) return i;
    throw DataError("label not in alphabet: " + label);
  }
};

struct ClassMetrics {
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double fn_rate = 0;
  // Set when the defining denominator was zero and the value was pinned to 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

struct MacroMetrics {
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double fn_rate = 0;
};

inline ConfusionMatrix confusion(const std::vector<std::string>& true_labels,
                                 const std::vector<std::string>& predicted,
                                 const std::vector<std::string>& alphabet) {
  if (true_labels.size() != predicted.size())
    throw ValidationError("confusion: label vectors differ in length");
  ConfusionMatrix c;
  c.alphabet = alphabet;
  c.counts.assign(alphabet.size() * alphabet.size(), 0);
  for (std::size_t i = 0; i < true_labels.size(); ++i)
    ++c.at(c.index_of(true_labels[i]), c.index_of(predicted[i]));
  return c;
}

inline ClassMetrics class_metrics(const ConfusionMatrix& c, std::size_t i) {
  if (i >= c.size()) throw ValidationError("class index out of range");
  const double total = static_cast<double>(c.total());
  double tp = static_cast<double>(c.at(i, i));
  double fn = 0, fp = 0;
  for (std::size_t j = 0; j < c.size(); ++j) {
    if (j == i) continue;
    fn += static_cast<double>(c.at(i, j));
    fp += static_cast<double>(c.at(j, i));
  }
  double tn = total - tp - fn - fp;

  ClassMetrics m;
  m.accuracy = total > 0 ? (tp + tn) / total : 0.0;
  if (tp + fp > 0)
    m.precision = tp / (tp + fp);
  else
    m.precision_undefined = true;
  if (tp + fn > 0) {
    m.recall = tp / (tp + fn);
    m.fn_rate = fn / (tp + fn);
  } else {
    m.recall_undefined = true;
  }
  if (m.precision + m.recall > 0)
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  else
    m.f1_undefined = true;
  return m;
}

// Unweighted mean of the per-class values.
inline MacroMetrics macro_metrics(const ConfusionMatrix& c) {
  if (c.size() == 0) throw ValidationError("macro_metrics: empty matrix");
  MacroMetrics macro;
  for (std::size_t i = 0; i < c.size(); ++i) {
    ClassMetrics m = class_metrics(c, i);
    macro.accuracy += m.accuracy;
    macro.precision += m.precision;
    macro.recall += m.recall;
    macro.f1 += m.f1;
    macro.fn_rate += m.fn_rate;
  }
  double l = static_cast<double>(c.size());
  macro.accuracy /= l;
  macro.precision /= l;
  macro.recall /= l;
  macro.f1 /= l;
  macro.fn_rate /= l;
  return macro;
}

}  // namespace flowsight
