#include "gseg/augment.hpp"
#include "gseg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace gseg::augment {

void AugmentSpec::validate() const {
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0))
    throw std::invalid_argument("flip_prob must lie in [0, 1]");
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi))
    throw std::invalid_argument("scale range must satisfy 0 < lo <= hi");
  if (!(cutmix_area_lo >= 0.0 && cutmix_area_lo <= cutmix_area_hi &&
        cutmix_area_hi <= 1.0))
    throw std::invalid_argument("cutmix area range must satisfy 0 <= lo <= hi <= 1");
  if (!(jitter_strength >= 0.0 && jitter_strength < 1.0))
    throw std::invalid_argument("jitter_strength must lie in [0, 1)");
  if (!(fp_dropout_rate >= 0.0 && fp_dropout_rate < 1.0))
    throw std::invalid_argument("fp_dropout_rate must lie in [0, 1)");
}

GeomRecord identity_geometry(std::size_t h, std::size_t w) {
  return GeomRecord{false, 1.0, h, w, 0, 0};
}

GeomRecord draw_geometry(const AugmentSpec &spec, std::size_t h, std::size_t w,
                         std::uint64_t seed) {
  Rng rng(seed);
  GeomRecord r;
  r.flip = uniform01(rng) < spec.flip_prob;
  r.scale = spec.scale_lo + (spec.scale_hi - spec.scale_lo) * uniform01(rng);
  r.scaled_h = std::max<std::size_t>(1, std::lround(h * r.scale));
  r.scaled_w = std::max<std::size_t>(1, std::lround(w * r.scale));
  auto draw_offset = [&rng](std::size_t scaled, std::size_t extent) {
    const long slack = static_cast<long>(scaled) - static_cast<long>(extent);
    const long lo = std::min(0L, slack), hi = std::max(0L, slack);
    return std::uniform_int_distribution<long>(lo, hi)(rng);
  };
  r.offset_y = draw_offset(r.scaled_h, h);
  r.offset_x = draw_offset(r.scaled_w, w);
  return r;
}

Tensor apply_geometry(const Tensor &t, const GeomRecord &record) {
  if (t.rank() < 2)
    throw std::invalid_argument("apply_geometry: rank must be >= 2");
  const std::size_t h = t.shape[t.rank() - 2], w = t.shape[t.rank() - 1];
  if (record.scaled_h == 0 || record.scaled_w == 0)
    throw std::invalid_argument("apply_geometry: empty scaled extent");
  std::vector<std::size_t> rows(h), cols(w);
  auto source = [](long pos, std::size_t extent, std::size_t scaled) {
    const long raw = static_cast<long>(
        std::floor(static_cast<double>(pos) * static_cast<double>(extent) /
                   static_cast<double>(scaled)));
    return static_cast<std::size_t>(
        std::clamp(raw, 0L, static_cast<long>(extent) - 1));
  };
  for (std::size_t y = 0; y < h; ++y)
    rows[y] = source(static_cast<long>(y) + record.offset_y, h, record.scaled_h);
  for (std::size_t x = 0; x < w; ++x) {
    const std::size_t xs = record.flip ? w - 1 - x : x;
    cols[x] = source(static_cast<long>(xs) + record.offset_x, w, record.scaled_w);
  }
  Tensor out(t.shape, t.kind);
  const std::size_t planes = t.size() / (h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    const double *src = t.data.data() + p * h * w;
    double *dst = out.data.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        dst[y * w + x] = src[rows[y] * w + cols[x]];
  }
  return out;
}

WeakResult weak_augment(const Tensor &image, const AugmentSpec &spec,
                        std::uint64_t seed) {
  if (image.rank() < 2)
    throw std::invalid_argument("weak_augment: image rank must be >= 2");
  const std::size_t h = image.shape[image.rank() - 2];
  const std::size_t w = image.shape[image.rank() - 1];
  auto record = draw_geometry(spec, h, w, seed);
  return {apply_geometry(image, record), record};
}

Box draw_box(const AugmentSpec &spec, std::size_t h, std::size_t w,
             std::uint64_t seed) {
  Rng rng(seed);
  const double ratio = spec.cutmix_area_lo +
                       (spec.cutmix_area_hi - spec.cutmix_area_lo) * uniform01(rng);
  const double aspect = 0.5 + 1.5 * uniform01(rng); // h / w in [0.5, 2]
  const double area = ratio * static_cast<double>(h * w);
  Box box;
  box.h = std::min<std::size_t>(h, std::lround(std::sqrt(area * aspect)));
  box.w = std::min<std::size_t>(w, std::lround(std::sqrt(area / aspect)));
  box.y0 = std::uniform_int_distribution<std::size_t>(0, h - box.h)(rng);
  box.x0 = std::uniform_int_distribution<std::size_t>(0, w - box.w)(rng);
  return box;
}

Jitter draw_jitter(const AugmentSpec &spec, std::uint64_t seed) {
  if (!spec.jitter_enabled || spec.jitter_strength == 0.0)
    return {};
  Rng rng(seed);
  const double s = spec.jitter_strength;
  Jitter j;
  j.contrast = 1.0 + s * (2.0 * uniform01(rng) - 1.0);
  j.shift = 0.1 * s * (2.0 * uniform01(rng) - 1.0);
  return j;
}

Tensor apply_jitter(const Tensor &image, const Jitter &jitter) {
  if (jitter.contrast == 1.0 && jitter.shift == 0.0)
    return image;
  const double m = mean(image);
  Tensor out = image;
  for (double &v : out.data)
    v = (v - m) * jitter.contrast + m + jitter.shift;
  return out;
}

namespace {

void check_records(const Tensor &t, const std::vector<MixRecord> &records) {
  if (t.rank() < 3 || records.size() != t.dim(0))
    throw std::invalid_argument("mix: need one record per batch item");
  const std::size_t h = t.shape[t.rank() - 2], w = t.shape[t.rank() - 1];
  for (const auto &r : records) {
    if (r.donor >= t.dim(0))
      throw std::invalid_argument("mix: donor index out of range");
    if (r.box.y0 + r.box.h > h || r.box.x0 + r.box.w > w)
      throw std::invalid_argument("mix: box out of bounds");
  }
}

} // namespace

Tensor apply_cutmix(const Tensor &bases, const Tensor &donors,
                    const std::vector<MixRecord> &records) {
  if (bases.shape != donors.shape)
    throw std::invalid_argument("apply_cutmix: base/donor shape mismatch");
  check_records(bases, records);
  const std::size_t h = bases.shape[bases.rank() - 2];
  const std::size_t w = bases.shape[bases.rank() - 1];
  const std::size_t item = bases.size() / bases.dim(0);
  const std::size_t planes = item / (h * w);
  Tensor out = bases;
  for (std::size_t n = 0; n < records.size(); ++n) {
    const auto &r = records[n];
    for (std::size_t p = 0; p < planes; ++p) {
      const double *src = donors.data.data() + r.donor * item + p * h * w;
      double *dst = out.data.data() + n * item + p * h * w;
      for (std::size_t y = r.box.y0; y < r.box.y0 + r.box.h; ++y)
        for (std::size_t x = r.box.x0; x < r.box.x0 + r.box.w; ++x)
          dst[y * w + x] = src[y * w + x];
    }
  }
  return out;
}

Tensor mix_label_space(const Tensor &t, const std::vector<MixRecord> &records) {
  return apply_cutmix(t, t, records);
}

namespace {

StrongView draw_strong_view(const Tensor &weak_batch, const AugmentSpec &spec,
                            std::uint64_t seed, bool mix) {
  const std::size_t n = weak_batch.dim(0);
  const std::size_t h = weak_batch.dim(2), w = weak_batch.dim(3);
  StrongView view;
  std::vector<Tensor> jittered;
  jittered.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    view.jitter.push_back(draw_jitter(spec, derive_seed(seed, {1, i})));
    jittered.push_back(apply_jitter(batch_item(weak_batch, i), view.jitter[i]));
  }
  Tensor base = stack_batch(jittered);
  base.kind = TensorKind::image;
  for (std::size_t i = 0; i < n; ++i) {
    MixRecord r{i, Box{}};
    if (mix) {
      Rng rng(derive_seed(seed, {2, i}));
      std::size_t donor =
          std::uniform_int_distribution<std::size_t>(0, n - 2)(rng);
      if (donor >= i)
        ++donor;
      r.donor = donor;
      r.box = draw_box(spec, h, w, derive_seed(seed, {3, i}));
    }
    view.mix.push_back(r);
  }
  view.image = apply_cutmix(base, base, view.mix);
  return view;
}

} // namespace

StrongPair strong_augment_pair(const Tensor &weak_batch, const AugmentSpec &spec,
                               std::uint64_t seed) {
  if (weak_batch.rank() != 4 || weak_batch.dim(0) == 0)
    throw std::invalid_argument("strong_augment_pair: expected non-empty [N, C, H, W]");
  const bool mix = weak_batch.dim(0) >= 2;
  StrongPair pair;
  pair.cutmix_skipped = !mix;
  pair.first = draw_strong_view(weak_batch, spec, derive_seed(seed, {1}), mix);
  pair.second = draw_strong_view(weak_batch, spec, derive_seed(seed, {2}), mix);
  return pair;
}

Perturbed feature_perturb(const Tensor &features, double rate,
                          std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw std::invalid_argument("feature_perturb: dropout rate " +
                                std::to_string(rate) + " outside [0, 1)");
  if (features.rank() != 4)
    throw std::invalid_argument("feature_perturb: expected [N, d, h, w]");
  const std::size_t channels = features.dim(0) * features.dim(1);
  const std::size_t plane = features.dim(2) * features.dim(3);
  Perturbed out{features, std::vector<double>(channels, 1.0)};
  if (rate == 0.0)
    return out;
  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t c = 0; c < channels; ++c) {
    const double s = uniform01(rng) < rate ? 0.0 : keep_scale;
    out.channel_scale[c] = s;
    double *v = out.features.data.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i)
      v[i] *= s;
  }
  return out;
}

} // namespace gseg::augment
