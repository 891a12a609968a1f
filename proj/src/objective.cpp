#include "gseg/objective.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gseg::objective {

namespace {

void check_label_shape(const Tensor &probs, const Tensor &t, const char *what) {
  if (probs.rank() != 4 || t.rank() != 3 || t.dim(0) != probs.dim(0) ||
      t.dim(1) != probs.dim(2) || t.dim(2) != probs.dim(3)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                shape_to_string(probs.shape) + " vs " +
                                shape_to_string(t.shape));
  }
}

} // namespace

double supervised_loss(const Tensor &probs, const Tensor &labels) {
  check_label_shape(probs, labels, "supervised_loss");
  return mean(cross_entropy(probs, labels));
}

double strong_loss(const Tensor &probs, const Tensor &pseudo_labels,
                   const Tensor &mask, const Tensor &omega) {
  check_label_shape(probs, pseudo_labels, "strong_loss");
  if (mask.shape != pseudo_labels.shape || omega.shape != pseudo_labels.shape)
    throw std::invalid_argument("strong_loss: mask/omega shape mismatch");
  const Tensor ce = cross_entropy(probs, pseudo_labels);
  double acc = 0.0;
  for (std::size_t i = 0; i < ce.size(); ++i)
    acc += omega.data[i] * mask.data[i] * ce.data[i];
  return acc / static_cast<double>(ce.size());
}

double fp_loss(const Tensor &probs, const Tensor &pseudo_labels,
               const Tensor &mask) {
  check_label_shape(probs, pseudo_labels, "fp_loss");
  if (mask.shape != pseudo_labels.shape)
    throw std::invalid_argument("fp_loss: mask shape mismatch");
  const Tensor ce = cross_entropy(probs, pseudo_labels);
  double acc = 0.0;
  for (std::size_t i = 0; i < ce.size(); ++i)
    acc += mask.data[i] * ce.data[i];
  return acc / static_cast<double>(ce.size());
}

StreamScales stream_scales(double unlabeled_weight) {
  return {0.5, 0.25 * unlabeled_weight, 0.125 * unlabeled_weight};
}

LossBreakdown total_loss(const Components &c, double unlabeled_weight) {
  const std::pair<const char *, double> streams[] = {
      {"supervised", c.sup}, {"strong_1", c.s1}, {"strong_2", c.s2},
      {"feature_perturbation", c.fp}};
  for (const auto &[name, value] : streams) {
    if (!std::isfinite(value))
      throw std::invalid_argument(std::string("non-finite loss in stream ") + name);
    if (value < 0.0)
      throw std::invalid_argument(std::string("negative loss in stream ") + name);
  }
  LossBreakdown out;
  out.sup = c.sup;
  out.s1 = c.s1;
  out.s2 = c.s2;
  out.fp = c.fp;
  out.total = 0.5 * (c.sup + unlabeled_weight * (0.5 * (c.s1 + c.s2) + 0.25 * c.fp));
  return out;
}

Tensor ce_logit_gradient(const Tensor &probs, const Tensor &targets,
                         const Tensor &pixel_weights, double scale) {
  check_label_shape(probs, targets, "ce_logit_gradient");
  const bool weighted = !pixel_weights.data.empty();
  if (weighted && pixel_weights.shape != targets.shape)
    throw std::invalid_argument("ce_logit_gradient: weight shape mismatch");
  const std::size_t n = probs.dim(0), classes = probs.dim(1);
  const std::size_t plane = probs.dim(2) * probs.dim(3);
  Tensor grad(probs.shape, TensorKind::generic);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double w = scale * (weighted ? pixel_weights.data[b * plane + i] : 1.0);
      if (w == 0.0)
        continue;
      const auto t = static_cast<std::size_t>(targets.data[b * plane + i]);
      if (t >= classes)
        throw std::invalid_argument("ce_logit_gradient: target out of range");
      // Inside the probability clamp the loss is constant.
      if (probs.data[(b * classes + t) * plane + i] < kProbFloor)
        continue;
      for (std::size_t c = 0; c < classes; ++c) {
        const double p = probs.data[(b * classes + c) * plane + i];
        grad.data[(b * classes + c) * plane + i] = w * (p - (c == t ? 1.0 : 0.0));
      }
    }
  }
  return grad;
}

} // namespace gseg::objective
