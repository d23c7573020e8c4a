#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowsight/error.hpp"
#include "flowsight/features.hpp"
#include "flowsight/pipeline.hpp"
#include "flowsight/rng.hpp"

namespace flowsight {

// Synthetic stand-in data: seeded Gaussian mixtures over the 63 non-red
// feature slots (red-listed columns are constant 0 and fall to the pruner).
// Class means follow a deterministic per-label pattern scaled by
// `separation`, which at the default puts class centroids tens of sigmas
// apart, so the Bayes classifier on these sets is essentially perfect.
struct SynthComponent {
  std::vector<double> mean;      // one entry per non-red slot
  std::vector<double> variance;  // diagonal covariance, all > 0
  double weight = 1.0;
};

struct SynthClass {
  std::string label;
  std::vector<SynthComponent> components;
};

struct SynthSpec {
  std::vector<SynthClass> classes;
  std::size_t n_per_class = 500;
  double separation = 6.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline double label_pattern(const std::string& label, std::size_t slot) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a over the label
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  Rng rng(h ^ (0x9E3779B97F4A7C15ULL * (slot + 1)));
  return static_cast<double>(rng.bounded(3)) - 1.0;
}

inline SynthClass pattern_class(const std::string& label, double separation,
                                std::size_t n_slots) {
  SynthClass cls;
  cls.label = label;
  SynthComponent component;
  component.mean.resize(n_slots);
  component.variance.assign(n_slots, 1.0);
  for (std::size_t s = 0; s < n_slots; ++s)
    component.mean[s] = separation * label_pattern(label, s);
  cls.components.push_back(std::move(component));
  return cls;
}

}  // namespace detail

inline constexpr std::size_t kSynthSlots = kRedListStart;  // 63 usable columns

inline SynthSpec synth4(std::size_t n_per_class = 500, std::uint64_t seed = 0,
                        double separation = 6.0) {
  SynthSpec spec;
  spec.n_per_class = n_per_class;
  spec.seed = seed;
  spec.separation = separation;
  for (const std::string& label : LabelSchema::stage1())
    spec.classes.push_back(detail::pattern_class(label, separation, kSynthSlots));
  return spec;
}

inline SynthSpec synth6(std::size_t n_per_class = 500, std::uint64_t seed = 0,
                        double separation = 6.0) {
  SynthSpec spec;
  spec.n_per_class = n_per_class;
  spec.seed = seed;
  spec.separation = separation;
  for (const std::string& label : LabelSchema::stage2())
    spec.classes.push_back(detail::pattern_class(label, separation, kSynthSlots));
  return spec;
}

// Combined two-stage set: stage-1 categories plus camera-labeled rows that
// collapse to IoTCam at stage 1.
inline SynthSpec synth_two_stage(std::size_t n_per_class = 300,
                                 std::uint64_t seed = 0,
                                 double separation = 6.0) {
  SynthSpec spec;
  spec.n_per_class = n_per_class;
  spec.seed = seed;
  spec.separation = separation;
  for (const std::string& label : {std::string("Conf"), std::string("Share"),
                                   std::string("Others")})
    spec.classes.push_back(detail::pattern_class(label, separation, kSynthSlots));
  for (const std::string& label : LabelSchema::stage2())
    spec.classes.push_back(detail::pattern_class(label, separation, kSynthSlots));
  return spec;
}

inline FeatureMatrix synth_generate(const SynthSpec& spec) {
  FeatureMatrix m = FeatureMatrix::standard();
  if (spec.classes.empty()) throw ValidationError("synth spec has no classes");

  std::vector<std::size_t> slots;
  for (std::size_t j = 0; j < kRedListStart; ++j) slots.push_back(j);

  for (const SynthClass& cls : spec.classes) {
    if (cls.components.empty())
      throw ValidationError("synth class '" + cls.label + "' has no components");
    double weight_total = 0;
    for (const SynthComponent& component : cls.components) {
      if (component.mean.size() != slots.size() ||
          component.variance.size() != slots.size())
        throw ValidationError("synth component width must be " +
                              std::to_string(slots.size()));
      for (double v : component.variance)
        if (!(v > 0))
          throw ValidationError("synth covariance must be positive-definite");
      weight_total += component.weight;
    }
    if (!(weight_total > 0))
      throw ValidationError("synth component weights must be positive");
  }

  Rng rng(spec.seed);
  FeatureVector row{};
  for (const SynthClass& cls : spec.classes) {
    double weight_total = 0;
    for (const SynthComponent& component : cls.components)
      weight_total += component.weight;
    for (std::size_t i = 0; i < spec.n_per_class; ++i) {
      double roll = rng.uniform() * weight_total;
      std::size_t pick = 0;
      double acc = cls.components[0].weight;
      while (pick + 1 < cls.components.size() && roll > acc) {
        ++pick;
        acc += cls.components[pick].weight;
      }
      const SynthComponent& component = cls.components[pick];
      row.fill(0.0);
      for (std::size_t s = 0; s < slots.size(); ++s)
        row[slots[s]] =
            component.mean[s] + std::sqrt(component.variance[s]) * rng.gaussian();
      m.add_row(row, cls.label);
    }
  }
  return m;
}

}  // namespace flowsight
