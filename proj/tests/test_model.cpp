#include "gseg/model.hpp"
#include "gseg/objective.hpp"
#include "gseg/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

using namespace gseg;

namespace {

Tensor random_input(Rng &rng, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  Tensor x({n, c, h, w}, TensorKind::image);
  for (auto &v : x.data)
    v = uniform01(rng);
  return x;
}

Tensor random_labels(Rng &rng, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  Tensor t({n, h, w}, TensorKind::labels);
  for (auto &v : t.data)
    v = std::floor(uniform01(rng) * static_cast<double>(c));
  return t;
}

double loss_at(const ToyModel &m, const Tensor &x, const Tensor &t,
               const std::vector<double> &scale) {
  if (scale.empty())
    return objective::supervised_loss(m.forward(x).probs, t);
  auto v = m.encode(x).features;
  const std::size_t plane = v.shape[2] * v.shape[3];
  for (std::size_t i = 0; i < v.size(); ++i)
    v.data[i] *= scale[i / plane];
  return objective::supervised_loss(softmax(m.decode(v), 1), t);
}

std::vector<double> analytic(const ToyModel &m, const Tensor &x, const Tensor &t,
                             const std::vector<double> &scale) {
  std::vector<double> grad(m.params().size(), 0.0);
  const auto trace = m.encode(x);
  auto v = trace.features;
  const std::size_t plane = v.shape[2] * v.shape[3];
  if (!scale.empty())
    for (std::size_t i = 0; i < v.size(); ++i)
      v.data[i] *= scale[i / plane];
  const auto probs = softmax(m.decode(v), 1);
  const double pixels = static_cast<double>(t.size());
  const auto dz = objective::ce_logit_gradient(probs, t, Tensor{}, 1.0 / pixels);
  auto dv = m.decode_backward(v, dz, grad);
  if (!scale.empty())
    for (std::size_t i = 0; i < dv.size(); ++i)
      dv.data[i] *= scale[i / plane];
  m.encode_backward(trace, dv, grad);
  return grad;
}

double relative_error(ToyModel m, const Tensor &x, const Tensor &t,
                      const std::vector<double> &scale) {
  const auto g = analytic(m, x, t, scale);
  const double eps = 1e-5;
  double num2 = 0.0, diff2 = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double keep = m.params()[i];
    m.params()[i] = keep + eps;
    const double up = loss_at(m, x, t, scale);
    m.params()[i] = keep - eps;
    const double dn = loss_at(m, x, t, scale);
    m.params()[i] = keep;
    const double num = (up - dn) / (2 * eps);
    num2 += num * num;
    diff2 += (num - g[i]) * (num - g[i]);
  }
  return std::sqrt(diff2 / num2);
}

} // namespace

TEST_SUITE("model") {

TEST_CASE("forward shapes") {
  const ModelShape s;
  const auto m = ToyModel::initialise(s, 1);
  Rng rng(1);
  const auto f = m.forward(random_input(rng, 2, 3, 8, 6));
  CHECK(f.trace.features.shape == Shape{2, 16, 4, 3});
  CHECK(f.logits.shape == Shape{2, 2, 8, 6});
  CHECK_NOTHROW(validate(f.probs));
  CHECK(ParamLayout(s).total == 8 * 3 * 9 + 8 + 16 * 8 * 9 + 16 + 2 * 16 + 2);
  CHECK(m.params().size() == ParamLayout(s).total);
}

TEST_CASE("odd spatial size is rejected") {
  const auto m = ToyModel::initialise(ModelShape{}, 1);
  Rng rng(2);
  CHECK_THROWS_AS(m.forward(random_input(rng, 1, 3, 7, 8)), std::invalid_argument);
  CHECK_THROWS_AS(m.forward(random_input(rng, 1, 4, 8, 8)), std::invalid_argument);
}

TEST_CASE("initialisation is deterministic and seed dependent") {
  const ModelShape s;
  CHECK(ToyModel::initialise(s, 5) == ToyModel::initialise(s, 5));
  CHECK_FALSE(ToyModel::initialise(s, 5) == ToyModel::initialise(s, 6));
}

TEST_CASE("decoder upsamples a constant feature map to constant logits") {
  auto m = ToyModel::initialise(ModelShape{}, 3);
  Tensor v({1, 16, 2, 2}, TensorKind::features, 0.3);
  const auto z = m.decode(v);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 1; i < 16; ++i)
      CHECK(z.data[c * 16 + i] == z.data[c * 16]);
}

TEST_CASE("gradient check on 24 random instances") {
  Rng rng(77);
  for (int trial = 0; trial < 24; ++trial) {
    ModelShape s;
    s.hidden = 2 + static_cast<std::size_t>(trial % 3);
    s.feature_dim = 3 + static_cast<std::size_t>(trial % 2);
    s.num_classes = 2 + static_cast<std::size_t>(trial % 2);
    const auto m = ToyModel::initialise(s, static_cast<std::uint64_t>(trial));
    const std::size_t n = 1 + trial % 2, h = 4 + 2 * (trial % 2), w = 4;
    const auto x = random_input(rng, n, 3, h, w);
    const auto t = random_labels(rng, n, s.num_classes, h, w);
    const double err = relative_error(m, x, t, {});
    CAPTURE(trial);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("gradient check through a perturbed feature map") {
  Rng rng(78);
  for (int trial = 0; trial < 20; ++trial) {
    ModelShape s;
    s.hidden = 3;
    s.feature_dim = 4;
    const auto m = ToyModel::initialise(s, 100 + static_cast<std::uint64_t>(trial));
    const auto x = random_input(rng, 2, 3, 4, 4);
    const auto t = random_labels(rng, 2, 2, 4, 4);
    std::vector<double> scale(2 * 4);
    for (auto &v : scale)
      v = uniform01(rng) < 0.5 ? 0.0 : 2.0;
    scale[0] = 2.0;
    CAPTURE(trial);
    CHECK(relative_error(m, x, t, scale) < 1e-6);
  }
}

}
