#include "gseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace gseg {

const char *to_string(TensorKind kind) {
  switch (kind) {
  case TensorKind::generic:
    return "generic";
  case TensorKind::image:
    return "image";
  case TensorKind::logits:
    return "logits";
  case TensorKind::probabilities:
    return "probabilities";
  case TensorKind::features:
    return "features";
  case TensorKind::mask:
    return "mask";
  case TensorKind::labels:
    return "labels";
  case TensorKind::weights:
    return "weights";
  }
  return "unknown";
}

std::size_t shape_volume(const Shape &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i)
      os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, TensorKind k, double fill)
    : shape(std::move(s)), data(shape_volume(shape), fill), kind(k) {}

Tensor::Tensor(Shape s, std::vector<double> values, TensorKind k)
    : shape(std::move(s)), data(std::move(values)), kind(k) {
  if (data.size() != shape_volume(shape)) {
    throw std::invalid_argument("tensor buffer length " +
                                std::to_string(data.size()) +
                                " does not match shape " +
                                shape_to_string(shape));
  }
}

namespace {

struct AxisSplit {
  std::size_t outer;
  std::size_t extent;
  std::size_t inner;
};

AxisSplit split_axis(const Shape &shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw std::invalid_argument("axis " + std::to_string(axis) +
                                " out of range for shape " +
                                shape_to_string(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i)
    s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i)
    s.inner *= shape[i];
  return s;
}

} // namespace

void validate(const Tensor &t, std::size_t class_axis) {
  if (t.data.size() != shape_volume(t.shape)) {
    throw std::invalid_argument("tensor volume mismatch for shape " +
                                shape_to_string(t.shape));
  }
  switch (t.kind) {
  case TensorKind::probabilities: {
    const auto s = split_axis(t.shape, class_axis);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        double total = 0.0;
        for (std::size_t c = 0; c < s.extent; ++c) {
          const double v = t.data[(o * s.extent + c) * s.inner + i];
          if (!(v >= 0.0))
            throw std::invalid_argument("negative or NaN probability");
          total += v;
        }
        if (std::abs(total - 1.0) > 1e-9)
          throw std::invalid_argument("probabilities do not sum to one");
      }
    }
    break;
  }
  case TensorKind::mask:
    for (double v : t.data) {
      if (v != 0.0 && v != 1.0)
        throw std::invalid_argument("mask tensor holds a non-binary value");
    }
    break;
  case TensorKind::labels:
    for (double v : t.data) {
      if (v < 0.0 || v != std::floor(v))
        throw std::invalid_argument("label tensor holds a non-class value");
    }
    break;
  default:
    break;
  }
}

Tensor softmax(const Tensor &logits, std::size_t axis) {
  const auto s = split_axis(logits.shape, axis);
  for (std::size_t i = 0; i < logits.data.size(); ++i) {
    if (!std::isfinite(logits.data[i])) {
      throw std::invalid_argument("softmax: non-finite logit at index " +
                                  std::to_string(i));
    }
  }
  Tensor out(logits.shape, TensorKind::probabilities);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double peak = logits.data[base];
      for (std::size_t c = 1; c < s.extent; ++c)
        peak = std::max(peak, logits.data[base + c * s.inner]);
      double total = 0.0;
      for (std::size_t c = 0; c < s.extent; ++c) {
        const double e = std::exp(logits.data[base + c * s.inner] - peak);
        out.data[base + c * s.inner] = e;
        total += e;
      }
      const double inv = 1.0 / total;
      for (std::size_t c = 0; c < s.extent; ++c)
        out.data[base + c * s.inner] *= inv;
    }
  }
  return out;
}

Tensor cross_entropy(const Tensor &probs, const Tensor &targets) {
  if (probs.rank() != 4 || targets.rank() != 3 ||
      probs.dim(0) != targets.dim(0) || probs.dim(2) != targets.dim(1) ||
      probs.dim(3) != targets.dim(2)) {
    throw std::invalid_argument("cross_entropy: shape mismatch " +
                                shape_to_string(probs.shape) + " vs " +
                                shape_to_string(targets.shape));
  }
  const std::size_t n = probs.dim(0), classes = probs.dim(1);
  const std::size_t plane = probs.dim(2) * probs.dim(3);
  Tensor out(targets.shape);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double t = targets.data[b * plane + i];
      if (t < 0.0 || t >= static_cast<double>(classes) || t != std::floor(t)) {
        throw std::invalid_argument("cross_entropy: target " +
                                    std::to_string(t) + " out of range [0, " +
                                    std::to_string(classes) + ")");
      }
      const auto c = static_cast<std::size_t>(t);
      const double p = probs.data[(b * classes + c) * plane + i];
      out.data[b * plane + i] = -std::log(std::max(p, kProbFloor));
    }
  }
  return out;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v)
    s += x * x;
  return std::sqrt(s);
}

double cosine_similarity(std::span<const double> a,
                         std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_similarity: length mismatch");
  const double na = l2_norm(a), nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("cosine_similarity: zero vector");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    dot += a[i] * b[i];
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

std::vector<double> l2_normalize(std::span<const double> v) {
  const double norm = l2_norm(v);
  if (!(norm > 1e-12))
    throw std::invalid_argument("l2_normalize: norm below 1e-12");
  std::vector<double> out(v.begin(), v.end());
  for (double &x : out)
    x /= norm;
  return out;
}

Tensor resize_nearest(const Tensor &t, std::size_t out_h, std::size_t out_w) {
  if (t.rank() < 2)
    throw std::invalid_argument("resize_nearest: rank must be >= 2");
  if (out_h == 0 || out_w == 0)
    throw std::invalid_argument("resize_nearest: zero target extent");
  const std::size_t in_h = t.shape[t.rank() - 2];
  const std::size_t in_w = t.shape[t.rank() - 1];
  if (in_h == 0 || in_w == 0)
    throw std::invalid_argument("resize_nearest: zero source extent");
  Shape shape = t.shape;
  shape[shape.size() - 2] = out_h;
  shape[shape.size() - 1] = out_w;
  Tensor out(shape, t.kind);
  const std::size_t planes = t.size() / (in_h * in_w);
  std::vector<std::size_t> col(out_w);
  for (std::size_t x = 0; x < out_w; ++x)
    col[x] = x * in_w / out_w;
  for (std::size_t p = 0; p < planes; ++p) {
    const double *src = t.data.data() + p * in_h * in_w;
    double *dst = out.data.data() + p * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const double *row = src + (y * in_h / out_h) * in_w;
      for (std::size_t x = 0; x < out_w; ++x)
        dst[y * out_w + x] = row[col[x]];
    }
  }
  return out;
}

Tensor argmax_channels(const Tensor &t) {
  if (t.rank() != 4)
    throw std::invalid_argument("argmax_channels: expected [N, C, H, W]");
  const std::size_t n = t.dim(0), classes = t.dim(1);
  const std::size_t plane = t.dim(2) * t.dim(3);
  Tensor out({n, t.dim(2), t.dim(3)}, TensorKind::labels);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < plane; ++i) {
      std::size_t best = 0;
      double best_v = t.data[(b * classes) * plane + i];
      for (std::size_t c = 1; c < classes; ++c) {
        const double v = t.data[(b * classes + c) * plane + i];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out.data[b * plane + i] = static_cast<double>(best);
    }
  }
  return out;
}

Tensor max_channels(const Tensor &t) {
  if (t.rank() != 4)
    throw std::invalid_argument("max_channels: expected [N, C, H, W]");
  const std::size_t n = t.dim(0), classes = t.dim(1);
  const std::size_t plane = t.dim(2) * t.dim(3);
  Tensor out({n, t.dim(2), t.dim(3)});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < plane; ++i) {
      double best = t.data[(b * classes) * plane + i];
      for (std::size_t c = 1; c < classes; ++c)
        best = std::max(best, t.data[(b * classes + c) * plane + i]);
      out.data[b * plane + i] = best;
    }
  }
  return out;
}

double sum(const Tensor &t) {
  return std::accumulate(t.data.begin(), t.data.end(), 0.0);
}

double mean(const Tensor &t) {
  if (t.data.empty())
    throw std::invalid_argument("mean of an empty tensor");
  return sum(t) / static_cast<double>(t.size());
}

Tensor batch_item(const Tensor &t, std::size_t n) {
  if (t.rank() < 1 || n >= t.dim(0))
    throw std::out_of_range("batch_item: index out of range");
  Shape shape = t.shape;
  shape[0] = 1;
  const std::size_t stride = t.size() / t.dim(0);
  std::vector<double> values(t.data.begin() + n * stride,
                             t.data.begin() + (n + 1) * stride);
  return Tensor(shape, std::move(values), t.kind);
}

Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty())
    throw std::invalid_argument("stack_batch: no items");
  Shape shape = items.front().shape;
  std::size_t total = 0;
  for (const auto &item : items) {
    if (item.rank() != shape.size() ||
        !std::equal(item.shape.begin() + 1, item.shape.end(),
                    shape.begin() + 1)) {
      throw std::invalid_argument("stack_batch: inconsistent item shapes");
    }
    total += item.dim(0);
  }
  shape[0] = total;
  Tensor out(shape, items.front().kind);
  std::size_t offset = 0;
  for (const auto &item : items) {
    std::copy(item.data.begin(), item.data.end(), out.data.begin() + offset);
    offset += item.size();
  }
  return out;
}

} // namespace gseg
