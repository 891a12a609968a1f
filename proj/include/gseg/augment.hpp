#pragma once

// Weak (flip + scale) and strong (intensity jitter + CutMix) views, plus
// channel-dropout feature perturbation. Every random choice is returned as a
// record so label-space tensors can follow the exact same geometry.

#include "gseg/tensor.hpp"

#include <cstdint>
#include <vector>

namespace gseg::augment {

struct AugmentSpec {
  double flip_prob = 0.5;
  double scale_lo = 0.8;
  double scale_hi = 1.2;
  double cutmix_area_lo = 0.25; // fraction of image area
  double cutmix_area_hi = 0.5;
  double jitter_strength = 0.2;
  bool jitter_enabled = true;
  double fp_dropout_rate = 0.5;

  void validate() const;
  bool operator==(const AugmentSpec &) const = default;
};

// Output pixel (y, x) reads source (clamp((y + offset_y) * H / scaled_h),
// clamp((x' + offset_x) * W / scaled_w)) with x' = W - 1 - x when flipped.
// Positions outside the scaled image replicate the border.
struct GeomRecord {
  bool flip = false;
  double scale = 1.0;
  std::size_t scaled_h = 0;
  std::size_t scaled_w = 0;
  long offset_y = 0;
  long offset_x = 0;
};

GeomRecord identity_geometry(std::size_t h, std::size_t w);
GeomRecord draw_geometry(const AugmentSpec &spec, std::size_t h, std::size_t w,
                         std::uint64_t seed);

// Applies the record to the two trailing axes of `t` (any rank >= 2).
Tensor apply_geometry(const Tensor &t, const GeomRecord &record);

struct WeakResult {
  Tensor image;
  GeomRecord record;
};

// Single image [C, H, W] (or [1, C, H, W]).
WeakResult weak_augment(const Tensor &image, const AugmentSpec &spec,
                        std::uint64_t seed);

struct Box {
  std::size_t y0 = 0, x0 = 0, h = 0, w = 0;
  std::size_t area() const { return h * w; }
  bool contains(std::size_t y, std::size_t x) const {
    return y >= y0 && y < y0 + h && x >= x0 && x < x0 + w;
  }
  bool operator==(const Box &) const = default;
};

struct MixRecord {
  std::size_t donor = 0;
  Box box;
  bool operator==(const MixRecord &) const = default;
};

Box draw_box(const AugmentSpec &spec, std::size_t h, std::size_t w,
             std::uint64_t seed);

// Per-image affine intensity jitter: (x - mean) * contrast + mean + shift.
struct Jitter {
  double contrast = 1.0;
  double shift = 0.0;
};

Jitter draw_jitter(const AugmentSpec &spec, std::uint64_t seed);
Tensor apply_jitter(const Tensor &image, const Jitter &jitter);

// Pastes box regions of `donors` over `bases` per the records. Both are
// [N, ...] with matching shapes.
Tensor apply_cutmix(const Tensor &bases, const Tensor &donors,
                    const std::vector<MixRecord> &records);

struct StrongView {
  Tensor image;                  // [N, C, H, W]
  std::vector<MixRecord> mix;    // one per batch item
  std::vector<Jitter> jitter;    // one per batch item
};

struct StrongPair {
  StrongView first;
  StrongView second;
  bool cutmix_skipped = false;   // batch of one: jitter only
};

// Two independently drawn strong views of a weak batch [N, C, H, W].
StrongPair strong_augment_pair(const Tensor &weak_batch, const AugmentSpec &spec,
                               std::uint64_t seed);

// Inside each item's box take the donor's values, outside keep the base.
// `t` is [N, ...] at label resolution.
Tensor mix_label_space(const Tensor &t, const std::vector<MixRecord> &records);

struct Perturbed {
  Tensor features;                    // [N, d, h, w]
  std::vector<double> channel_scale;  // [N * d]: 0 or 1 / (1 - rate)
};

// Independent per-(item, channel) dropout, survivors rescaled.
Perturbed feature_perturb(const Tensor &features, double rate,
                          std::uint64_t seed);

} // namespace gseg::augment
