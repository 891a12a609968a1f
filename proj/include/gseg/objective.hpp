#pragma once

// Supervised, gated strong-view, and feature-perturbation losses and their
// weighted total. All unlabeled losses are normalised by the full pixel
// count, not by the number of admitted pixels.

#include "gseg/tensor.hpp"

#include <vector>

namespace gseg::objective {

struct LossBreakdown {
  double sup = 0.0;
  double s1 = 0.0;
  double s2 = 0.0;
  double fp = 0.0;
  double total = 0.0;
  std::vector<double> admitted_fraction; // per class, over weak pixels of that class
  double mean_omega = 1.0;               // over admitted pixels
};

struct Components {
  double sup = 0.0;
  double s1 = 0.0;
  double s2 = 0.0;
  double fp = 0.0;
};

// Mean cross-entropy over all labelled pixels.
double supervised_loss(const Tensor &probs, const Tensor &labels);

// (1/|P|) sum omega * M * ce(p_s, pseudo).
double strong_loss(const Tensor &probs, const Tensor &pseudo_labels,
                   const Tensor &mask, const Tensor &omega);

// (1/|P|) sum M * ce(p_fp, pseudo).
double fp_loss(const Tensor &probs, const Tensor &pseudo_labels,
               const Tensor &mask);

// total = 1/2 (sup + u * (1/2 (s1 + s2) + 1/4 fp)), u = unlabeled_weight.
// Throws naming the first non-finite or negative stream.
LossBreakdown total_loss(const Components &c, double unlabeled_weight = 1.0);

// Weight each stream's loss receives in the total.
struct StreamScales {
  double sup;
  double strong; // each of s1, s2
  double fp;
};
StreamScales stream_scales(double unlabeled_weight);

// d/dz of scale * sum_i w_i * ce(softmax(z)_i, t_i) given p = softmax(z).
// `pixel_weights` may be empty (all ones). Returns [N, C, H, W].
Tensor ce_logit_gradient(const Tensor &probs, const Tensor &targets,
                         const Tensor &pixel_weights, double scale);

} // namespace gseg::objective
