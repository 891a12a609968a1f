#include "gseg/model.hpp"
#include "gseg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gseg {

ParamLayout::ParamLayout(const ModelShape &s) {
  std::size_t at = 0;
  conv1_w = at;
  at += s.hidden * s.in_channels * 9;
  conv1_b = at;
  at += s.hidden;
  conv2_w = at;
  at += s.feature_dim * s.hidden * 9;
  conv2_b = at;
  at += s.feature_dim;
  head_w = at;
  at += s.num_classes * s.feature_dim;
  head_b = at;
  at += s.num_classes;
  total = at;
}

ToyModel::ToyModel(const ModelShape &shape)
    : shape_(shape), layout_(shape), params_(layout_.total, 0.0) {
  if (shape.in_channels == 0 || shape.hidden == 0 || shape.feature_dim == 0 ||
      shape.num_classes < 2)
    throw std::invalid_argument("model shape needs non-zero widths and >= 2 classes");
}

ToyModel ToyModel::initialise(const ModelShape &shape, std::uint64_t seed) {
  ToyModel m(shape);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](std::size_t offset, std::size_t count, double fan_in) {
    const double scale = 1.0 / std::sqrt(fan_in);
    for (std::size_t i = 0; i < count; ++i)
      m.params_[offset + i] = scale * normal(rng);
  };
  fill(m.layout_.conv1_w, shape.hidden * shape.in_channels * 9,
       static_cast<double>(shape.in_channels * 9));
  fill(m.layout_.conv2_w, shape.feature_dim * shape.hidden * 9,
       static_cast<double>(shape.hidden * 9));
  fill(m.layout_.head_w, shape.num_classes * shape.feature_dim,
       static_cast<double>(shape.feature_dim));
  return m;
}

namespace {

// out[o] += sum_i w[o][i] (*) in[i] for one item, zero padding, 3x3 kernel.
void conv3x3_forward(const double *in, std::size_t cin, std::size_t h,
                     std::size_t w, const double *weights, const double *bias,
                     std::size_t cout, double *out) {
  const std::size_t plane = h * w;
  for (std::size_t o = 0; o < cout; ++o) {
    double *dst = out + o * plane;
    std::fill(dst, dst + plane, bias[o]);
    for (std::size_t i = 0; i < cin; ++i) {
      const double *src = in + i * plane;
      const double *k = weights + (o * cin + i) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wk = k[ky * 3 + kx];
          const int dy = ky - 1, dx = kx - 1;
          const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
          const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? w - 1 : w;
          const std::size_t span = x1 - x0;
          for (std::size_t y = y0; y < y1; ++y) {
            double *drow = dst + y * w + x0;
            const double *srow = src + (y + dy) * w + (x0 + dx);
            for (std::size_t x = 0; x < span; ++x)
              drow[x] += wk * srow[x];
          }
        }
      }
    }
  }
}

// Gradients of conv3x3_forward. `din` may be null.
void conv3x3_backward(const double *in, std::size_t cin, std::size_t h,
                      std::size_t w, const double *weights, const double *dout,
                      std::size_t cout, double *dweights, double *dbias,
                      double *din) {
  const std::size_t plane = h * w;
  for (std::size_t o = 0; o < cout; ++o) {
    const double *g = dout + o * plane;
    double gb = 0.0;
    for (std::size_t p = 0; p < plane; ++p)
      gb += g[p];
    dbias[o] += gb;
    for (std::size_t i = 0; i < cin; ++i) {
      const double *src = in + i * plane;
      const double *k = weights + (o * cin + i) * 9;
      double *dk = dweights + (o * cin + i) * 9;
      double *dsrc = din ? din + i * plane : nullptr;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const int dy = ky - 1, dx = kx - 1;
          const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
          const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? w - 1 : w;
          const double wk = k[ky * 3 + kx];
          const std::size_t span = x1 - x0;
          double acc = 0.0;
          for (std::size_t y = y0; y < y1; ++y) {
            const double *grow = g + y * w + x0;
            const double *srow = src + (y + dy) * w + (x0 + dx);
            for (std::size_t x = 0; x < span; ++x)
              acc += grow[x] * srow[x];
            if (dsrc) {
              double *drow = dsrc + (y + dy) * w + (x0 + dx);
              for (std::size_t x = 0; x < span; ++x)
                drow[x] += wk * grow[x];
            }
          }
          dk[ky * 3 + kx] += acc;
        }
      }
    }
  }
}

} // namespace

EncoderTrace ToyModel::encode(const Tensor &x) const {
  if (x.rank() != 4 || x.dim(1) != shape_.in_channels)
    throw std::invalid_argument("encode: expected [N, " +
                                std::to_string(shape_.in_channels) +
                                ", H, W], got " + shape_to_string(x.shape));
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  if (h < 2 || w < 2 || h % 2 || w % 2)
    throw std::invalid_argument("encode: spatial extents must be even and >= 2");
  const std::size_t hh = h / 2, hw = w / 2;
  const std::size_t ci = shape_.in_channels, ch = shape_.hidden,
                    d = shape_.feature_dim;
  EncoderTrace t;
  t.input = x;
  t.hidden = Tensor({n, ch, h, w});
  t.pooled = Tensor({n, ch, hh, hw});
  t.features = Tensor({n, d, hh, hw}, TensorKind::features);
  const double *p = params_.data();
  for (std::size_t b = 0; b < n; ++b) {
    double *hid = t.hidden.data.data() + b * ch * h * w;
    conv3x3_forward(x.data.data() + b * ci * h * w, ci, h, w,
                    p + layout_.conv1_w, p + layout_.conv1_b, ch, hid);
    for (std::size_t i = 0; i < ch * h * w; ++i)
      hid[i] = std::tanh(hid[i]);
    double *pool = t.pooled.data.data() + b * ch * hh * hw;
    for (std::size_t c = 0; c < ch; ++c) {
      const double *src = hid + c * h * w;
      double *dst = pool + c * hh * hw;
      for (std::size_t y = 0; y < hh; ++y)
        for (std::size_t xx = 0; xx < hw; ++xx)
          dst[y * hw + xx] =
              0.25 * (src[2 * y * w + 2 * xx] + src[2 * y * w + 2 * xx + 1] +
                      src[(2 * y + 1) * w + 2 * xx] +
                      src[(2 * y + 1) * w + 2 * xx + 1]);
    }
    double *feat = t.features.data.data() + b * d * hh * hw;
    conv3x3_forward(pool, ch, hh, hw, p + layout_.conv2_w, p + layout_.conv2_b,
                    d, feat);
    for (std::size_t i = 0; i < d * hh * hw; ++i)
      feat[i] = std::tanh(feat[i]);
  }
  return t;
}

Tensor ToyModel::decode(const Tensor &features) const {
  if (features.rank() != 4 || features.dim(1) != shape_.feature_dim)
    throw std::invalid_argument("decode: expected [N, d, h, w] features, got " +
                                shape_to_string(features.shape));
  const std::size_t n = features.dim(0), d = shape_.feature_dim,
                    classes = shape_.num_classes;
  const std::size_t hh = features.dim(2), hw = features.dim(3);
  const std::size_t h = 2 * hh, w = 2 * hw;
  Tensor logits({n, classes, h, w}, TensorKind::logits);
  const double *wt = params_.data() + layout_.head_w;
  const double *bias = params_.data() + layout_.head_b;
  std::vector<double> low(hh * hw);
  for (std::size_t b = 0; b < n; ++b) {
    const double *v = features.data.data() + b * d * hh * hw;
    for (std::size_t c = 0; c < classes; ++c) {
      std::fill(low.begin(), low.end(), bias[c]);
      for (std::size_t k = 0; k < d; ++k) {
        const double wk = wt[c * d + k];
        const double *vk = v + k * hh * hw;
        for (std::size_t i = 0; i < hh * hw; ++i)
          low[i] += wk * vk[i];
      }
      double *dst = logits.data.data() + (b * classes + c) * h * w;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          dst[y * w + x] = low[(y / 2) * hw + x / 2];
    }
  }
  return logits;
}

ForwardResult ToyModel::forward(const Tensor &x) const {
  ForwardResult r;
  r.trace = encode(x);
  r.logits = decode(r.trace.features);
  r.probs = softmax(r.logits, 1);
  return r;
}

Tensor ToyModel::decode_backward(const Tensor &features, const Tensor &d_logits,
                                 std::span<double> grad) const {
  const std::size_t n = features.dim(0), d = shape_.feature_dim,
                    classes = shape_.num_classes;
  const std::size_t hh = features.dim(2), hw = features.dim(3);
  const std::size_t h = 2 * hh, w = 2 * hw;
  if (d_logits.shape != Shape{n, classes, h, w})
    throw std::invalid_argument("decode_backward: gradient shape mismatch");
  if (grad.size() != layout_.total)
    throw std::invalid_argument("decode_backward: gradient buffer size mismatch");
  const double *wt = params_.data() + layout_.head_w;
  double *gw = grad.data() + layout_.head_w;
  double *gb = grad.data() + layout_.head_b;
  Tensor dv({n, d, hh, hw});
  std::vector<double> low(hh * hw);
  for (std::size_t b = 0; b < n; ++b) {
    const double *v = features.data.data() + b * d * hh * hw;
    double *dvb = dv.data.data() + b * d * hh * hw;
    for (std::size_t c = 0; c < classes; ++c) {
      const double *g = d_logits.data.data() + (b * classes + c) * h * w;
      for (std::size_t y = 0; y < hh; ++y)
        for (std::size_t x = 0; x < hw; ++x)
          low[y * hw + x] = g[2 * y * w + 2 * x] + g[2 * y * w + 2 * x + 1] +
                            g[(2 * y + 1) * w + 2 * x] +
                            g[(2 * y + 1) * w + 2 * x + 1];
      double sb = 0.0;
      for (double l : low)
        sb += l;
      gb[c] += sb;
      for (std::size_t k = 0; k < d; ++k) {
        const double *vk = v + k * hh * hw;
        double *dvk = dvb + k * hh * hw;
        const double wk = wt[c * d + k];
        double acc = 0.0;
        for (std::size_t i = 0; i < hh * hw; ++i) {
          acc += low[i] * vk[i];
          dvk[i] += wk * low[i];
        }
        gw[c * d + k] += acc;
      }
    }
  }
  return dv;
}

void ToyModel::encode_backward(const EncoderTrace &trace,
                               const Tensor &d_features,
                               std::span<double> grad) const {
  if (d_features.shape != trace.features.shape)
    throw std::invalid_argument("encode_backward: gradient shape mismatch");
  if (grad.size() != layout_.total)
    throw std::invalid_argument("encode_backward: gradient buffer size mismatch");
  const std::size_t n = trace.input.dim(0), h = trace.input.dim(2),
                    w = trace.input.dim(3);
  const std::size_t hh = h / 2, hw = w / 2;
  const std::size_t ci = shape_.in_channels, ch = shape_.hidden,
                    d = shape_.feature_dim;
  const double *p = params_.data();
  std::vector<double> da2(d * hh * hw), dpool(ch * hh * hw), da1(ch * h * w);
  for (std::size_t b = 0; b < n; ++b) {
    const double *v = trace.features.data.data() + b * d * hh * hw;
    const double *dv = d_features.data.data() + b * d * hh * hw;
    for (std::size_t i = 0; i < da2.size(); ++i)
      da2[i] = dv[i] * (1.0 - v[i] * v[i]);
    std::fill(dpool.begin(), dpool.end(), 0.0);
    conv3x3_backward(trace.pooled.data.data() + b * ch * hh * hw, ch, hh, hw,
                     p + layout_.conv2_w, da2.data(), d,
                     grad.data() + layout_.conv2_w,
                     grad.data() + layout_.conv2_b, dpool.data());
    const double *hid = trace.hidden.data.data() + b * ch * h * w;
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t idx = c * h * w + y * w + x;
          const double up = 0.25 * dpool[c * hh * hw + (y / 2) * hw + x / 2];
          da1[idx] = up * (1.0 - hid[idx] * hid[idx]);
        }
      }
    }
    conv3x3_backward(trace.input.data.data() + b * ci * h * w, ci, h, w,
                     p + layout_.conv1_w, da1.data(), ch,
                     grad.data() + layout_.conv1_w,
                     grad.data() + layout_.conv1_b, nullptr);
  }
}

} // namespace gseg
