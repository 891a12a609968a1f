#pragma once

// Toy encoder-decoder with hand-written reverse-mode gradients.
//
//   encoder g: conv3x3(in -> hidden) -> tanh -> avgpool2
//              -> conv3x3(hidden -> d) -> tanh            = v  [N, d, H/2, W/2]
//   decoder h: conv1x1(d -> C) -> nearest x2 upsample     = z  [N, C, H, W]
//
// tanh and average pooling keep the network smooth so central finite
// differences are a meaningful gradient oracle.

#include "gseg/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace gseg {

struct ModelShape {
  std::size_t in_channels = 3;
  std::size_t hidden = 8;
  std::size_t feature_dim = 16;
  std::size_t num_classes = 2;

  bool operator==(const ModelShape &) const = default;
};

// Offsets of each parameter block inside the flat parameter vector.
struct ParamLayout {
  std::size_t conv1_w, conv1_b, conv2_w, conv2_b, head_w, head_b, total;
  explicit ParamLayout(const ModelShape &s);
  bool operator==(const ParamLayout &) const = default;
};

struct EncoderTrace {
  Tensor input;   // [N, in, H, W]
  Tensor hidden;  // tanh(conv1(x)), [N, hidden, H, W]
  Tensor pooled;  // [N, hidden, H/2, W/2]
  Tensor features; // v = tanh(conv2(pooled)), [N, d, H/2, W/2]
};

struct ForwardResult {
  EncoderTrace trace;
  Tensor logits; // [N, C, H, W]
  Tensor probs;  // softmax(logits, 1)
};

class ToyModel {
public:
  ToyModel() = default;
  // Zero-initialised parameters.
  explicit ToyModel(const ModelShape &shape);

  // Gaussian weights scaled by 1/sqrt(fan_in), zero biases.
  static ToyModel initialise(const ModelShape &shape, std::uint64_t seed);

  const ModelShape &shape() const { return shape_; }
  const ParamLayout &layout() const { return layout_; }
  std::vector<double> &params() { return params_; }
  const std::vector<double> &params() const { return params_; }

  EncoderTrace encode(const Tensor &x) const;
  Tensor decode(const Tensor &features) const;
  ForwardResult forward(const Tensor &x) const;

  // Accumulates parameter gradients into `grad` and returns dL/dv.
  Tensor decode_backward(const Tensor &features, const Tensor &d_logits,
                         std::span<double> grad) const;
  // Accumulates encoder parameter gradients given dL/dv.
  void encode_backward(const EncoderTrace &trace, const Tensor &d_features,
                       std::span<double> grad) const;

  bool operator==(const ToyModel &other) const = default;

private:
  ModelShape shape_;
  ParamLayout layout_{ModelShape{}};
  std::vector<double> params_;
};

} // namespace gseg
