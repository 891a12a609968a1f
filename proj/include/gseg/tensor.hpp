#pragma once

// Dense row-major tensors and the handful of numeric kernels the
// segmentation pipeline needs. Everything here is a pure function.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace gseg {

// What the values of a tensor mean. Only `probabilities` and `mask` carry
// checked invariants; the rest are documentation.
enum class TensorKind {
  generic,
  image,
  logits,
  probabilities,
  features,
  mask,
  labels,
  weights,
};

const char *to_string(TensorKind kind);

using Shape = std::vector<std::size_t>;

std::size_t shape_volume(const Shape &shape);
std::string shape_to_string(const Shape &shape);

struct Tensor {
  Shape shape;
  std::vector<double> data;
  TensorKind kind = TensorKind::generic;

  Tensor() = default;
  Tensor(Shape s, TensorKind k = TensorKind::generic, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values,
         TensorKind k = TensorKind::generic);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }

  double &operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // 3-d and 4-d element access for the [N, C, H, W] / [N, H, W] layouts.
  double &at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  double &at(std::size_t n, std::size_t h, std::size_t w) {
    return data[(n * shape[1] + h) * shape[2] + w];
  }
  double at(std::size_t n, std::size_t h, std::size_t w) const {
    return data[(n * shape[1] + h) * shape[2] + w];
  }

  std::span<double> values() { return data; }
  std::span<const double> values() const { return data; }

  bool operator==(const Tensor &other) const = default;
};

// Throws std::invalid_argument when the kind-specific invariants do not hold
// (volume mismatch always; probabilities along `class_axis`; binary masks;
// integral labels).
void validate(const Tensor &t, std::size_t class_axis = 1);

// Numerically stable softmax along `axis`. Throws on non-finite input,
// naming the flat index of the first offending element.
Tensor softmax(const Tensor &logits, std::size_t axis);

// Per-pixel -log p[target], probabilities clamped at kProbFloor. `probs` is
// [N, C, H, W]; `targets` is [N, H, W] holding class indices.
inline constexpr double kProbFloor = 1e-12;
Tensor cross_entropy(const Tensor &probs, const Tensor &targets);

// Cosine similarity of two equal-length non-zero vectors.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

double l2_norm(std::span<const double> v);
std::vector<double> l2_normalize(std::span<const double> v);

// Nearest-neighbour resampling of the two trailing (spatial) axes.
// Source index for output i is floor(i * src / dst), so integer up-scales
// replicate blocks and values are always drawn from the source.
Tensor resize_nearest(const Tensor &t, std::size_t out_h, std::size_t out_w);

// Index of the maximum along axis 1 of an [N, C, H, W] tensor, first index
// on ties. Returns [N, H, W] labels.
Tensor argmax_channels(const Tensor &t);

// Maximum along axis 1 of an [N, C, H, W] tensor. Returns [N, H, W].
Tensor max_channels(const Tensor &t);

double sum(const Tensor &t);
double mean(const Tensor &t);

// Slice a single batch item out of an [N, ...] tensor, keeping a leading 1.
Tensor batch_item(const Tensor &t, std::size_t n);
// Concatenate [1, ...] (or [k, ...]) tensors along axis 0.
Tensor stack_batch(std::span<const Tensor> items);

} // namespace gseg
