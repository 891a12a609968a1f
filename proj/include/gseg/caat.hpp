#pragma once

// Class-aware adaptive thresholding: per-class EMA confidence thresholds,
// clipped to a fixed band, gating which pseudo-labelled pixels reach the
// unsupervised losses.

#include "gseg/tensor.hpp"

#include <cstdint>
#include <vector>

namespace gseg::caat {

inline constexpr double kDefaultMomentum = 0.999;
inline constexpr double kDefaultTauMin = 0.6;
inline constexpr double kDefaultTauMax = 0.95;

struct ThresholdState {
  std::vector<double> thresholds;
  // 1.0 freezes the thresholds (static gate); otherwise in (0, 1).
  double momentum = kDefaultMomentum;
  double tau_min = kDefaultTauMin;
  double tau_max = kDefaultTauMax;
  std::vector<std::uint64_t> update_count;

  std::size_t num_classes() const { return thresholds.size(); }
  bool operator==(const ThresholdState &) const = default;
};

// Adaptive state starting every class at tau_min.
ThresholdState make_adaptive(std::size_t num_classes,
                             double momentum = kDefaultMomentum,
                             double tau_min = kDefaultTauMin,
                             double tau_max = kDefaultTauMax);

// Frozen state with every threshold at `tau`; updates leave it unchanged.
// With tau = 0.95 this is the fixed global gate of FixMatch/UniMatch.
ThresholdState make_static(std::size_t num_classes, double tau = 0.95);

struct ClassConfidence {
  std::vector<double> mean;
  std::vector<bool> present;
  std::vector<std::uint64_t> pixel_count;
};

// Mean max-probability over pixels whose argmax is each class.
ClassConfidence batch_class_confidence(const Tensor &p_weak);

// EMA step for present classes. Throws when a present mean leaves [0, 1].
ThresholdState update(const ThresholdState &state,
                      const ClassConfidence &confidence);

double effective_threshold(const ThresholdState &state, std::size_t c);

struct Admission {
  Tensor pseudo_labels; // [N, H, W], argmax of p_weak
  Tensor mask;          // [N, H, W], 1 where max p >= tau of the argmax class
};

Admission admission_mask(const Tensor &p_weak, const ThresholdState &state);

} // namespace gseg::caat
