#pragma once

// Hand-wired weak-to-strong step with a fixed 0.95 gate and unit reliability
// weights, assembled from model/augment/objective primitives only.

#include "gseg/augment.hpp"
#include "gseg/model.hpp"
#include "gseg/objective.hpp"
#include "gseg/trainer.hpp"

#include <cmath>
#include <vector>

namespace gseg::reference {

struct StepOutput {
  std::vector<double> params;
  std::vector<double> velocity;
  double total = 0.0;
};

inline void accumulate(const ToyModel &m, const ForwardResult &f, const Tensor &targets,
                       const Tensor &weights, double scale, std::vector<double> &grad) {
  const Tensor dz = objective::ce_logit_gradient(f.probs, targets, weights, scale);
  const Tensor dv = m.decode_backward(f.trace.features, dz, grad);
  m.encode_backward(f.trace, dv, grad);
}

inline StepOutput fixed_threshold_step(const ToyModel &model, std::vector<double> velocity,
                                       const TrainConfig &config, std::uint64_t step,
                                       const LabeledBatch &labeled, const Tensor &weak_images,
                                       const StepSeeds &seeds) {
  const double tau = 0.95;
  const ForwardResult weak = model.forward(weak_images);
  const std::size_t n = weak.probs.dim(0), classes = weak.probs.dim(1);
  const std::size_t h = weak.probs.dim(2), w = weak.probs.dim(3), plane = h * w;
  Tensor pseudo({n, h, w}, TensorKind::labels), mask({n, h, w}, TensorKind::mask);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < plane; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c)
        if (weak.probs.data[(b * classes + c) * plane + i] >
            weak.probs.data[(b * classes + best) * plane + i])
          best = c;
      pseudo.data[b * plane + i] = static_cast<double>(best);
      mask.data[b * plane + i] =
          weak.probs.data[(b * classes + best) * plane + i] >= tau ? 1.0 : 0.0;
    }

  const auto pair = augment::strong_augment_pair(weak_images, config.augment, seeds.strong);
  const Tensor p1 = augment::mix_label_space(pseudo, pair.first.mix);
  const Tensor m1 = augment::mix_label_space(mask, pair.first.mix);
  const Tensor p2 = augment::mix_label_space(pseudo, pair.second.mix);
  const Tensor m2 = augment::mix_label_space(mask, pair.second.mix);
  const auto scale = augment::feature_perturb(weak.trace.features,
                                              config.augment.fp_dropout_rate, seeds.perturb)
                         .channel_scale;

  std::vector<double> grad(model.params().size(), 0.0);
  const double nl = static_cast<double>(labeled.labels.size());
  const double nu = static_cast<double>(pseudo.size());

  const ForwardResult sup = model.forward(labeled.images);
  accumulate(model, sup, labeled.labels, Tensor{}, 0.5 / nl, grad);
  const ForwardResult s1 = model.forward(pair.first.image);
  const ForwardResult s2 = model.forward(pair.second.image);
  accumulate(model, s1, p1, m1, 0.25 / nu, grad);
  accumulate(model, s2, p2, m2, 0.25 / nu, grad);

  const std::size_t fplane = weak.trace.features.dim(2) * weak.trace.features.dim(3);
  Tensor v_fp = weak.trace.features;
  for (std::size_t c = 0; c < scale.size(); ++c)
    for (std::size_t i = 0; i < fplane; ++i)
      v_fp.data[c * fplane + i] *= scale[c];
  const Tensor p_fp = softmax(model.decode(v_fp), 1);
  const Tensor dz = objective::ce_logit_gradient(p_fp, pseudo, mask, 0.125 / nu);
  Tensor dv = model.decode_backward(v_fp, dz, grad);
  for (std::size_t c = 0; c < scale.size(); ++c)
    for (std::size_t i = 0; i < fplane; ++i)
      dv.data[c * fplane + i] *= scale[c];
  model.encode_backward(weak.trace, dv, grad);

  const Tensor ones(mask.shape, TensorKind::weights, 1.0);
  const double l_sup = objective::supervised_loss(sup.probs, labeled.labels);
  const double l_s1 = objective::strong_loss(s1.probs, p1, m1, ones);
  const double l_s2 = objective::strong_loss(s2.probs, p2, m2, ones);
  const double l_fp = objective::fp_loss(p_fp, pseudo, mask);

  StepOutput out;
  out.total = 0.5 * (l_sup + 0.5 * (l_s1 + l_s2) + 0.25 * l_fp);
  const auto &opt = config.optimizer;
  const double lr =
      opt.learning_rate *
      std::pow(1.0 - static_cast<double>(step) / static_cast<double>(config.total_steps),
               opt.poly_power);
  out.params = model.params();
  for (std::size_t i = 0; i < out.params.size(); ++i) {
    const double g = grad[i] + opt.weight_decay * out.params[i];
    velocity[i] = opt.momentum * velocity[i] + g;
    out.params[i] -= lr * velocity[i];
  }
  out.velocity = std::move(velocity);
  return out;
}

} // namespace gseg::reference
