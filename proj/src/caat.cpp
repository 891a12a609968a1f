#include "gseg/caat.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace gseg::caat {

namespace {

void check_bounds(double momentum, double tau_min, double tau_max) {
  if (!(momentum > 0.0 && momentum <= 1.0))
    throw std::invalid_argument("threshold momentum must lie in (0, 1]");
  if (!(tau_min <= tau_max) || tau_min < 0.0 || tau_max > 1.0)
    throw std::invalid_argument("threshold bounds must satisfy 0 <= min <= max <= 1");
}

void check_probabilities(const Tensor &p) {
  if (p.rank() != 4)
    throw std::invalid_argument("expected [N, C, H, W] probabilities, got " +
                                shape_to_string(p.shape));
  if (p.kind != TensorKind::probabilities)
    throw std::invalid_argument("expected a probabilities-tagged tensor");
}

} // namespace

ThresholdState make_adaptive(std::size_t num_classes, double momentum,
                             double tau_min, double tau_max) {
  check_bounds(momentum, tau_min, tau_max);
  if (num_classes == 0)
    throw std::invalid_argument("need at least one class");
  return ThresholdState{std::vector<double>(num_classes, tau_min), momentum,
                        tau_min, tau_max,
                        std::vector<std::uint64_t>(num_classes, 0)};
}

ThresholdState make_static(std::size_t num_classes, double tau) {
  if (num_classes == 0)
    throw std::invalid_argument("need at least one class");
  return ThresholdState{std::vector<double>(num_classes, tau), 1.0, tau, tau,
                        std::vector<std::uint64_t>(num_classes, 0)};
}

ClassConfidence batch_class_confidence(const Tensor &p_weak) {
  check_probabilities(p_weak);
  const std::size_t n = p_weak.dim(0), classes = p_weak.dim(1);
  const std::size_t plane = p_weak.dim(2) * p_weak.dim(3);
  if (n * plane == 0)
    throw std::invalid_argument("batch_class_confidence: empty batch");

  ClassConfidence out{std::vector<double>(classes, 0.0),
                      std::vector<bool>(classes, false),
                      std::vector<std::uint64_t>(classes, 0)};
  for (std::size_t b = 0; b < n; ++b) {
    const double *base = p_weak.data.data() + b * classes * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      std::size_t best = 0;
      double best_v = base[i];
      for (std::size_t c = 1; c < classes; ++c) {
        if (base[c * plane + i] > best_v) {
          best_v = base[c * plane + i];
          best = c;
        }
      }
      out.mean[best] += best_v;
      ++out.pixel_count[best];
    }
  }
  for (std::size_t c = 0; c < classes; ++c) {
    out.present[c] = out.pixel_count[c] > 0;
    if (out.present[c])
      out.mean[c] /= static_cast<double>(out.pixel_count[c]);
  }
  return out;
}

ThresholdState update(const ThresholdState &state,
                      const ClassConfidence &confidence) {
  const std::size_t classes = state.num_classes();
  if (confidence.mean.size() != classes || confidence.present.size() != classes)
    throw std::invalid_argument("class confidence size mismatch");
  ThresholdState next = state;
  for (std::size_t c = 0; c < classes; ++c) {
    if (!confidence.present[c])
      continue;
    const double mu = confidence.mean[c];
    if (!(mu >= 0.0 && mu <= 1.0))
      throw std::invalid_argument("class " + std::to_string(c) +
                                  " mean confidence " + std::to_string(mu) +
                                  " outside [0, 1]");
    if (state.momentum < 1.0) {
      next.thresholds[c] =
          state.momentum * state.thresholds[c] + (1.0 - state.momentum) * mu;
    }
    ++next.update_count[c];
  }
  return next;
}

double effective_threshold(const ThresholdState &state, std::size_t c) {
  return std::clamp(state.thresholds.at(c), state.tau_min, state.tau_max);
}

Admission admission_mask(const Tensor &p_weak, const ThresholdState &state) {
  check_probabilities(p_weak);
  const std::size_t n = p_weak.dim(0), classes = p_weak.dim(1);
  if (classes != state.num_classes())
    throw std::invalid_argument("admission_mask: class count mismatch");
  const std::size_t plane = p_weak.dim(2) * p_weak.dim(3);

  std::vector<double> tau(classes);
  for (std::size_t c = 0; c < classes; ++c)
    tau[c] = effective_threshold(state, c);

  Admission out{Tensor({n, p_weak.dim(2), p_weak.dim(3)}, TensorKind::labels),
                Tensor({n, p_weak.dim(2), p_weak.dim(3)}, TensorKind::mask)};
  for (std::size_t b = 0; b < n; ++b) {
    const double *base = p_weak.data.data() + b * classes * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      std::size_t best = 0;
      double best_v = base[i];
      for (std::size_t c = 1; c < classes; ++c) {
        if (base[c * plane + i] > best_v) {
          best_v = base[c * plane + i];
          best = c;
        }
      }
      out.pseudo_labels.data[b * plane + i] = static_cast<double>(best);
      out.mask.data[b * plane + i] = best_v >= tau[best] ? 1.0 : 0.0;
    }
  }
  return out;
}

} // namespace gseg::caat
