#include "gseg/trainer.hpp"
#include "gseg/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace gseg {

namespace {

constexpr std::uint64_t kStreamLabeledPick = 11;
constexpr std::uint64_t kStreamLabeledAug = 12;
constexpr std::uint64_t kStreamUnlabeledPick = 13;
constexpr std::uint64_t kStreamUnlabeledAug = 14;
constexpr std::uint64_t kStreamStrong = 15;
constexpr std::uint64_t kStreamPerturb = 16;
constexpr std::uint64_t kStreamBank = 17;
constexpr std::uint64_t kStreamInit = 18;

} // namespace

const char *to_string(Method method) {
  switch (method) {
  case Method::supervised:
    return "supervised";
  case Method::static_threshold:
    return "static_threshold";
  case Method::caat_only:
    return "caat_only";
  case Method::bank_only:
    return "bank_only";
  case Method::full:
    return "full";
  }
  return "unknown";
}

std::optional<Method> parse_method(const std::string &text) {
  for (Method m : kAllMethods)
    if (text == to_string(m))
      return m;
  return std::nullopt;
}

MethodSwitches switches_for(Method method) {
  switch (method) {
  case Method::supervised:
    return {false, false, false};
  case Method::static_threshold:
    return {true, false, false};
  case Method::caat_only:
    return {true, true, false};
  case Method::bank_only:
    return {true, false, true};
  case Method::full:
    return {true, true, true};
  }
  return {};
}

void TrainConfig::validate() const {
  if (labeled_batch == 0)
    throw std::invalid_argument("labeled_batch must be >= 1");
  if (switches_for(method).use_unlabeled && unlabeled_batch == 0)
    throw std::invalid_argument("unlabeled_batch must be >= 1");
  if (total_steps == 0)
    throw std::invalid_argument("total_steps must be >= 1");
  if (!(optimizer.learning_rate > 0.0))
    throw std::invalid_argument("learning rate must be positive");
  if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0))
    throw std::invalid_argument("optimizer momentum must lie in [0, 1)");
  if (optimizer.weight_decay < 0.0 || optimizer.poly_power < 0.0)
    throw std::invalid_argument("weight decay and poly power must be non-negative");
  if (!(thresholds.momentum > 0.0 && thresholds.momentum < 1.0))
    throw std::invalid_argument("threshold momentum must lie in (0, 1)");
  if (!(thresholds.tau_min <= thresholds.tau_max && thresholds.tau_min >= 0.0 &&
        thresholds.tau_max <= 1.0))
    throw std::invalid_argument("threshold bounds must satisfy 0 <= min <= max <= 1");
  if (!(thresholds.static_tau >= 0.0 && thresholds.static_tau <= 1.0))
    throw std::invalid_argument("static threshold must lie in [0, 1]");
  if (bank.num_classes != model.num_classes || bank.feature_dim != model.feature_dim)
    throw std::invalid_argument("bank classes/dimension must match the model");
  if (bank.capacity == 0 || bank.per_batch_cap == 0 || !(bank.gamma > 0.0))
    throw std::invalid_argument("bank capacity, per-batch cap and gamma must be positive");
  if (!(unlabeled_weight >= 0.0) || !(minority_oversample > 0.0))
    throw std::invalid_argument("unlabeled weight must be >= 0 and oversampling > 0");
  augment.validate();
}

double OptimizerState::current_lr() const {
  const double progress =
      std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return config.learning_rate * std::pow(1.0 - progress, config.poly_power);
}

void sgd_step(std::vector<double> &params, std::span<const double> grad,
              OptimizerState &state) {
  if (grad.size() != params.size())
    throw std::invalid_argument("sgd_step: gradient size mismatch");
  if (state.velocity.size() != params.size())
    state.velocity.assign(params.size(), 0.0);
  const double lr = state.current_lr();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i] + state.config.weight_decay * params[i];
    state.velocity[i] = state.config.momentum * state.velocity[i] + g;
    params[i] -= lr * state.velocity[i];
  }
  ++state.step;
}

namespace {

Tensor elementwise_product(const Tensor &a, const Tensor &b) {
  Tensor out(a.shape, TensorKind::weights);
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data[i] = a.data[i] * b.data[i];
  return out;
}

void backprop_stream(const ToyModel &model, const ForwardResult &f,
                     const Tensor &targets, const Tensor &weights, double scale,
                     std::span<double> grad) {
  const Tensor dz = objective::ce_logit_gradient(f.probs, targets, weights, scale);
  const Tensor dv = model.decode_backward(f.trace.features, dz, grad);
  model.encode_backward(f.trace, dv, grad);
}

double pixel_count(const Tensor &labels) { return static_cast<double>(labels.size()); }

} // namespace

ObjectiveResult compute_objective(const ToyModel &model,
                                  const ObjectiveInputs &inputs,
                                  bool want_gradient) {
  ObjectiveResult result;
  if (want_gradient)
    result.gradient.assign(model.params().size(), 0.0);
  const auto scales = objective::stream_scales(inputs.unlabeled_weight);
  objective::Components comps;

  const ForwardResult labeled = model.forward(inputs.labeled_image);
  comps.sup = objective::supervised_loss(labeled.probs, inputs.labels);
  if (want_gradient)
    backprop_stream(model, labeled, inputs.labels, Tensor{},
                    scales.sup / pixel_count(inputs.labels), result.gradient);

  if (inputs.unlabeled) {
    const UnlabeledInputs &u = *inputs.unlabeled;
    const bool backprop = want_gradient && inputs.unlabeled_weight != 0.0;

    const ForwardResult s1 = model.forward(u.strong1);
    comps.s1 = objective::strong_loss(s1.probs, u.pseudo1, u.mask1, u.omega1);
    const ForwardResult s2 = model.forward(u.strong2);
    comps.s2 = objective::strong_loss(s2.probs, u.pseudo2, u.mask2, u.omega2);
    if (backprop) {
      backprop_stream(model, s1, u.pseudo1, elementwise_product(u.omega1, u.mask1),
                      scales.strong / pixel_count(u.pseudo1), result.gradient);
      backprop_stream(model, s2, u.pseudo2, elementwise_product(u.omega2, u.mask2),
                      scales.strong / pixel_count(u.pseudo2), result.gradient);
    }

    EncoderTrace own_trace;
    const EncoderTrace *weak = inputs.weak_trace;
    if (!weak) {
      own_trace = model.encode(u.weak_image);
      weak = &own_trace;
    }
    const Tensor &v = weak->features;
    const std::size_t plane = v.dim(2) * v.dim(3);
    if (u.fp_channel_scale.size() != v.dim(0) * v.dim(1))
      throw std::invalid_argument("compute_objective: dropout scale size mismatch");
    Tensor v_fp = v;
    for (std::size_t c = 0; c < u.fp_channel_scale.size(); ++c)
      for (std::size_t i = 0; i < plane; ++i)
        v_fp.data[c * plane + i] *= u.fp_channel_scale[c];
    const Tensor p_fp = softmax(model.decode(v_fp), 1);
    comps.fp = objective::fp_loss(p_fp, u.pseudo_weak, u.mask_weak);
    if (backprop) {
      const Tensor dz = objective::ce_logit_gradient(
          p_fp, u.pseudo_weak, u.mask_weak, scales.fp / pixel_count(u.pseudo_weak));
      Tensor dv = model.decode_backward(v_fp, dz, result.gradient);
      for (std::size_t c = 0; c < u.fp_channel_scale.size(); ++c)
        for (std::size_t i = 0; i < plane; ++i)
          dv.data[c * plane + i] *= u.fp_channel_scale[c];
      model.encode_backward(*weak, dv, result.gradient);
    }
  }
  result.losses = objective::total_loss(comps, inputs.unlabeled_weight);
  return result;
}

TrainingState initial_state(const TrainConfig &config) {
  config.validate();
  TrainingState s;
  s.model = ToyModel::initialise(config.model, derive_seed(config.seed, {kStreamInit}));
  s.optimizer.config = config.optimizer;
  s.optimizer.total_steps = config.total_steps;
  s.optimizer.velocity.assign(s.model.params().size(), 0.0);
  const auto sw = switches_for(config.method);
  s.thresholds = sw.adaptive_thresholds
                     ? caat::make_adaptive(config.model.num_classes,
                                           config.thresholds.momentum,
                                           config.thresholds.tau_min,
                                           config.thresholds.tau_max)
                     : caat::make_static(config.model.num_classes,
                                         config.thresholds.static_tau);
  s.bank = PrototypeBank(config.bank);
  return s;
}

StepSeeds step_seeds(std::uint64_t seed, std::uint64_t step) {
  return {derive_seed(seed, {kStreamStrong, step}),
          derive_seed(seed, {kStreamPerturb, step}),
          derive_seed(seed, {kStreamBank, step})};
}

objective::LossBreakdown train_step(TrainingState &state, const TrainConfig &config,
                                    const LabeledBatch &labeled,
                                    const UnlabeledBatch *unlabeled,
                                    const StepSeeds &seeds) {
  if (labeled.images.rank() != 4 || labeled.images.dim(0) == 0)
    throw std::invalid_argument("train_step: labeled batch is empty");
  const auto sw = switches_for(config.method);
  const std::size_t classes = config.model.num_classes;
  const double u_weight =
      state.optimizer.step < config.warmup_steps ? 0.0 : config.unlabeled_weight;

  ObjectiveInputs inputs;
  inputs.labeled_image = labeled.images;
  inputs.labels = labeled.labels;
  inputs.unlabeled_weight = u_weight;

  const bool unsupervised = sw.use_unlabeled && unlabeled != nullptr;
  ForwardResult weak;
  Tensor pseudo_low, mask_low;
  std::vector<double> admitted(classes, 0.0);
  double mean_omega = 1.0;

  if (unsupervised) {
    const Tensor &x_w = unlabeled->weak_images;
    if (x_w.rank() != 4 || x_w.dim(0) == 0)
      throw std::invalid_argument("train_step: unlabeled batch is empty");
    weak = state.model.forward(x_w);
    if (sw.adaptive_thresholds)
      state.thresholds =
          caat::update(state.thresholds, caat::batch_class_confidence(weak.probs));
    const caat::Admission adm = caat::admission_mask(weak.probs, state.thresholds);

    const std::size_t h = x_w.dim(2), w = x_w.dim(3);
    const std::size_t fh = weak.trace.features.dim(2), fw = weak.trace.features.dim(3);
    pseudo_low = resize_nearest(adm.pseudo_labels, fh, fw);
    mask_low = resize_nearest(adm.mask, fh, fw);
    Tensor omega = sw.use_bank
                       ? weight_map(state.bank, weak.trace.features, pseudo_low, h, w)
                       : Tensor(adm.mask.shape, TensorKind::weights, 1.0);

    std::vector<double> class_pixels(classes, 0.0);
    double admitted_total = 0.0, omega_total = 0.0;
    for (std::size_t i = 0; i < adm.mask.size(); ++i) {
      const auto c = static_cast<std::size_t>(adm.pseudo_labels.data[i]);
      class_pixels[c] += 1.0;
      if (adm.mask.data[i] == 1.0) {
        admitted[c] += 1.0;
        admitted_total += 1.0;
        omega_total += omega.data[i];
      }
    }
    for (std::size_t c = 0; c < classes; ++c)
      admitted[c] = class_pixels[c] > 0 ? admitted[c] / class_pixels[c] : 0.0;
    mean_omega = admitted_total > 0 ? omega_total / admitted_total : 1.0;

    const auto pair = augment::strong_augment_pair(x_w, config.augment, seeds.strong);
    UnlabeledInputs ui;
    ui.weak_image = x_w;
    ui.strong1 = pair.first.image;
    ui.strong2 = pair.second.image;
    ui.pseudo1 = augment::mix_label_space(adm.pseudo_labels, pair.first.mix);
    ui.mask1 = augment::mix_label_space(adm.mask, pair.first.mix);
    ui.omega1 = augment::mix_label_space(omega, pair.first.mix);
    ui.pseudo2 = augment::mix_label_space(adm.pseudo_labels, pair.second.mix);
    ui.mask2 = augment::mix_label_space(adm.mask, pair.second.mix);
    ui.omega2 = augment::mix_label_space(omega, pair.second.mix);
    ui.pseudo_weak = adm.pseudo_labels;
    ui.mask_weak = adm.mask;
    ui.fp_channel_scale = augment::feature_perturb(weak.trace.features,
                                                   config.augment.fp_dropout_rate,
                                                   seeds.perturb)
                              .channel_scale;
    inputs.unlabeled = std::move(ui);
    inputs.weak_trace = &weak.trace;
  }

  ObjectiveResult result = compute_objective(state.model, inputs, true);
  sgd_step(state.model.params(), result.gradient, state.optimizer);

  if (unsupervised && sw.use_bank) {
    const auto valid =
        collect_valid_features(weak.trace.features, pseudo_low, mask_low, classes);
    state.bank.enqueue(valid, seeds.bank);
  }

  result.losses.admitted_fraction = std::move(admitted);
  result.losses.mean_omega = mean_omega;
  return result.losses;
}

BatchSampler::BatchSampler(std::span<const TileRecord> labeled,
                           std::span<const TileRecord> unlabeled,
                           const TrainConfig &config)
    : labeled_(labeled), unlabeled_(unlabeled), config_(config) {
  if (labeled.empty())
    throw std::invalid_argument("BatchSampler: no labeled tiles");
  double acc = 0.0;
  for (const auto &t : labeled) {
    acc += t.category == TileCategory::non_slum ? 1.0 : config.minority_oversample;
    labeled_cdf_.push_back(acc);
  }
}

namespace {

struct Stacked {
  Tensor images;
  Tensor labels;
};

Stacked stack_tiles(std::span<const TileRecord> pool,
                    const std::vector<std::size_t> &picks,
                    const augment::AugmentSpec &spec, std::uint64_t seed,
                    std::uint64_t stream, std::uint64_t step, bool with_labels) {
  const TileRecord &first = pool[picks.front()];
  const std::size_t c = first.image.dim(0), h = first.height(), w = first.width();
  Stacked out{Tensor({picks.size(), c, h, w}, TensorKind::image),
              with_labels ? Tensor({picks.size(), h, w}, TensorKind::labels) : Tensor{}};
  for (std::size_t i = 0; i < picks.size(); ++i) {
    const TileRecord &t = pool[picks[i]];
    if (t.image.dim(0) != c || t.height() != h || t.width() != w)
      throw std::invalid_argument("BatchSampler: tiles differ in shape");
    const auto record = augment::draw_geometry(spec, h, w, derive_seed(seed, {stream, step, i}));
    const Tensor img = augment::apply_geometry(t.image, record);
    std::copy(img.data.begin(), img.data.end(), out.images.data.begin() + i * c * h * w);
    if (with_labels) {
      const Tensor m = augment::apply_geometry(t.mask, record);
      std::copy(m.data.begin(), m.data.end(), out.labels.data.begin() + i * h * w);
    }
  }
  return out;
}

} // namespace

LabeledBatch BatchSampler::labeled_batch(std::uint64_t step) const {
  Rng rng(derive_seed(config_.seed, {kStreamLabeledPick, step}));
  std::vector<std::size_t> picks;
  const double total = labeled_cdf_.back();
  for (std::size_t i = 0; i < config_.labeled_batch; ++i) {
    const double u = uniform01(rng) * total;
    const auto it = std::upper_bound(labeled_cdf_.begin(), labeled_cdf_.end(), u);
    picks.push_back(std::min<std::size_t>(it - labeled_cdf_.begin(), labeled_.size() - 1));
  }
  auto s = stack_tiles(labeled_, picks, config_.augment, config_.seed,
                       kStreamLabeledAug, step, true);
  return {std::move(s.images), std::move(s.labels)};
}

UnlabeledBatch BatchSampler::unlabeled_batch(std::uint64_t step) const {
  if (unlabeled_.empty())
    throw std::logic_error("BatchSampler: no unlabeled tiles");
  Rng rng(derive_seed(config_.seed, {kStreamUnlabeledPick, step}));
  std::uniform_int_distribution<std::size_t> pick(0, unlabeled_.size() - 1);
  std::vector<std::size_t> picks;
  for (std::size_t i = 0; i < config_.unlabeled_batch; ++i)
    picks.push_back(pick(rng));
  auto s = stack_tiles(unlabeled_, picks, config_.augment, config_.seed,
                       kStreamUnlabeledAug, step, false);
  return {std::move(s.images)};
}

SegmentationScore score_predictions(std::span<const Tensor> predictions,
                                    std::span<const Tensor> truths,
                                    std::size_t num_classes) {
  if (predictions.size() != truths.size())
    throw std::invalid_argument("score_predictions: count mismatch");
  SegmentationScore s;
  s.confusion.assign(num_classes * num_classes, 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].size() != truths[i].size())
      throw std::invalid_argument("score_predictions: shape mismatch");
    for (std::size_t p = 0; p < truths[i].size(); ++p) {
      const auto t = static_cast<std::size_t>(truths[i].data[p]);
      const auto q = static_cast<std::size_t>(predictions[i].data[p]);
      if (t >= num_classes || q >= num_classes)
        throw std::invalid_argument("score_predictions: class out of range");
      ++s.confusion[t * num_classes + q];
    }
  }
  double total = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::uint64_t tp = s.confusion[c * num_classes + c], fp = 0, fn = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
      if (k == c)
        continue;
      fp += s.confusion[k * num_classes + c];
      fn += s.confusion[c * num_classes + k];
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) {
      s.per_class_iou.push_back(std::nullopt);
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    s.per_class_iou.push_back(iou);
    total += iou;
    ++defined;
  }
  s.miou = defined ? total / static_cast<double>(defined) : 0.0;
  return s;
}

SegmentationScore evaluate(const ToyModel &model, std::span<const TileRecord> tiles) {
  if (tiles.empty())
    throw std::invalid_argument("evaluate: empty dataset");
  constexpr std::size_t kChunk = 64;
  std::vector<Tensor> predictions, truths;
  for (std::size_t start = 0; start < tiles.size(); start += kChunk) {
    const std::size_t end = std::min(tiles.size(), start + kChunk);
    std::vector<Tensor> images;
    for (std::size_t i = start; i < end; ++i) {
      Tensor img = tiles[i].image;
      img.shape.insert(img.shape.begin(), 1);
      images.push_back(std::move(img));
    }
    const Tensor batch = stack_batch(images);
    const Tensor pred = argmax_channels(model.decode(model.encode(batch).features));
    for (std::size_t i = start; i < end; ++i) {
      predictions.push_back(batch_item(pred, i - start));
      Tensor t = tiles[i].mask;
      t.shape.insert(t.shape.begin(), 1);
      truths.push_back(std::move(t));
    }
  }
  return score_predictions(predictions, truths, model.shape().num_classes);
}

// Checkpoint layout (little-endian):
//   magic[8] "GSEGCKPT", u32 version, u32 block count, then per block:
//   u32 name length, name bytes, u32 rank, u64 extents[rank],
//   f64 values[product of extents].
namespace {

struct Block {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;
};

template <typename T> void write_pod(std::ostream &os, T v) {
  os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T> T read_pod(std::istream &is) {
  T v{};
  is.read(reinterpret_cast<char *>(&v), sizeof(T));
  if (!is)
    throw std::runtime_error("checkpoint truncated");
  return v;
}

const Block &find_block(const std::vector<Block> &blocks, const std::string &name) {
  for (const auto &b : blocks)
    if (b.name == name)
      return b;
  throw std::runtime_error("checkpoint missing block '" + name + "'");
}

} // namespace

void save_checkpoint(const TrainingState &state, const std::filesystem::path &path) {
  std::vector<Block> blocks;
  const auto &ms = state.model.shape();
  blocks.push_back({"model_shape", {4},
                    {double(ms.in_channels), double(ms.hidden), double(ms.feature_dim),
                     double(ms.num_classes)}});
  blocks.push_back({"params", {state.model.params().size()}, state.model.params()});
  blocks.push_back({"velocity", {state.optimizer.velocity.size()}, state.optimizer.velocity});
  const auto &oc = state.optimizer.config;
  blocks.push_back({"optimizer", {6},
                    {oc.learning_rate, oc.momentum, oc.weight_decay, oc.poly_power,
                     double(state.optimizer.step), double(state.optimizer.total_steps)}});
  const auto &th = state.thresholds;
  blocks.push_back({"thresholds", {th.thresholds.size()}, th.thresholds});
  blocks.push_back({"threshold_meta", {3}, {th.momentum, th.tau_min, th.tau_max}});
  std::vector<double> counts(th.update_count.begin(), th.update_count.end());
  blocks.push_back({"threshold_counts", {counts.size()}, counts});
  const auto &bo = state.bank.options();
  blocks.push_back({"bank_meta", {5},
                    {double(bo.num_classes), double(bo.capacity), double(bo.feature_dim),
                     bo.gamma, double(bo.per_batch_cap)}});
  std::vector<double> pushed;
  for (std::size_t c = 0; c < bo.num_classes; ++c) {
    Block vecs{"bank_class" + std::to_string(c), {state.bank.size(c), bo.feature_dim}, {}};
    Block tags{"bank_tags" + std::to_string(c), {state.bank.size(c)}, {}};
    for (std::size_t k = 0; k < state.bank.size(c); ++k) {
      const auto v = state.bank.vector(c, k);
      vecs.values.insert(vecs.values.end(), v.begin(), v.end());
      tags.values.push_back(static_cast<double>(state.bank.tag(c, k)));
    }
    blocks.push_back(std::move(vecs));
    blocks.push_back(std::move(tags));
    pushed.push_back(static_cast<double>(state.bank.fill_count(c)));
  }
  blocks.push_back({"bank_pushed", {pushed.size()}, pushed});

  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_pod<std::uint32_t>(os, kCheckpointVersion);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(blocks.size()));
  for (const auto &b : blocks) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(b.name.size()));
    os.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(b.shape.size()));
    for (auto e : b.shape)
      write_pod<std::uint64_t>(os, e);
    os.write(reinterpret_cast<const char *>(b.values.data()),
             static_cast<std::streamsize>(b.values.size() * sizeof(double)));
  }
  if (!os)
    throw std::runtime_error("failed writing checkpoint " + path.string());
}

TrainingState load_checkpoint(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path.string());
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto count = read_pod<std::uint32_t>(is);
  std::vector<Block> blocks(count);
  for (auto &b : blocks) {
    const auto len = read_pod<std::uint32_t>(is);
    b.name.resize(len);
    is.read(b.name.data(), len);
    const auto rank = read_pod<std::uint32_t>(is);
    std::uint64_t volume = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      b.shape.push_back(read_pod<std::uint64_t>(is));
      volume *= b.shape.back();
    }
    b.values.resize(volume);
    is.read(reinterpret_cast<char *>(b.values.data()),
            static_cast<std::streamsize>(volume * sizeof(double)));
    if (!is)
      throw std::runtime_error("checkpoint truncated in block " + b.name);
  }

  TrainingState s;
  const auto &ms = find_block(blocks, "model_shape").values;
  ModelShape shape{std::size_t(ms.at(0)), std::size_t(ms.at(1)), std::size_t(ms.at(2)),
                   std::size_t(ms.at(3))};
  s.model = ToyModel(shape);
  const auto &params = find_block(blocks, "params").values;
  if (params.size() != s.model.params().size())
    throw std::runtime_error("checkpoint parameter count does not match its shape");
  s.model.params() = params;
  s.optimizer.velocity = find_block(blocks, "velocity").values;
  const auto &opt = find_block(blocks, "optimizer").values;
  s.optimizer.config = {opt.at(0), opt.at(1), opt.at(2), opt.at(3)};
  s.optimizer.step = static_cast<std::uint64_t>(opt.at(4));
  s.optimizer.total_steps = static_cast<std::size_t>(opt.at(5));
  s.thresholds.thresholds = find_block(blocks, "thresholds").values;
  const auto &tm = find_block(blocks, "threshold_meta").values;
  s.thresholds.momentum = tm.at(0);
  s.thresholds.tau_min = tm.at(1);
  s.thresholds.tau_max = tm.at(2);
  for (double c : find_block(blocks, "threshold_counts").values)
    s.thresholds.update_count.push_back(static_cast<std::uint64_t>(c));
  const auto &bm = find_block(blocks, "bank_meta").values;
  BankOptions bo{std::size_t(bm.at(0)), std::size_t(bm.at(1)), std::size_t(bm.at(2)),
                 bm.at(3), std::size_t(bm.at(4))};
  s.bank = PrototypeBank(bo);
  const auto &pushed = find_block(blocks, "bank_pushed").values;
  for (std::size_t c = 0; c < bo.num_classes; ++c) {
    const auto &vecs = find_block(blocks, "bank_class" + std::to_string(c));
    const auto &tags = find_block(blocks, "bank_tags" + std::to_string(c));
    const std::size_t n = tags.values.size();
    for (std::size_t k = 0; k < n; ++k)
      s.bank.restore(c, {vecs.values.data() + k * bo.feature_dim, bo.feature_dim},
                     static_cast<std::uint64_t>(tags.values[k]));
    s.bank.set_fill_count(c, static_cast<std::uint64_t>(pushed.at(c)));
  }
  return s;
}

std::string to_jsonl(const StepRecord &r) {
  nlohmann::json j;
  j["step"] = r.step;
  j["L_sup"] = r.losses.sup;
  j["L_s1"] = r.losses.s1;
  j["L_s2"] = r.losses.s2;
  j["L_fp"] = r.losses.fp;
  j["L_total"] = r.losses.total;
  j["thresholds"] = r.thresholds;
  j["admitted_fraction"] = r.losses.admitted_fraction;
  j["mean_omega"] = r.losses.mean_omega;
  return j.dump();
}

void run_training(TrainingState &state, const TrainConfig &config,
                  const BatchSampler &sampler, const RunOptions &options) {
  config.validate();
  std::ofstream log;
  if (options.runlog) {
    if (options.runlog->has_parent_path())
      std::filesystem::create_directories(options.runlog->parent_path());
    log.open(*options.runlog, std::ios::app);
    if (!log)
      throw std::runtime_error("cannot open run log " + options.runlog->string());
  }
  const auto sw = switches_for(config.method);
  while (state.optimizer.step < config.total_steps) {
    const std::uint64_t step = state.optimizer.step;
    const LabeledBatch labeled = sampler.labeled_batch(step);
    std::optional<UnlabeledBatch> unlabeled;
    if (sw.use_unlabeled && sampler.has_unlabeled())
      unlabeled = sampler.unlabeled_batch(step);
    StepRecord record;
    record.step = step;
    record.losses = train_step(state, config, labeled, unlabeled ? &*unlabeled : nullptr,
                               step_seeds(config.seed, step));
    for (std::size_t c = 0; c < state.thresholds.num_classes(); ++c)
      record.thresholds.push_back(caat::effective_threshold(state.thresholds, c));
    if (log)
      log << to_jsonl(record) << '\n';
    if (options.on_step)
      options.on_step(record);
    const std::uint64_t done = state.optimizer.step;
    if (options.checkpoint_dir && options.checkpoint_every &&
        done % options.checkpoint_every == 0 && done < config.total_steps)
      save_checkpoint(state, *options.checkpoint_dir /
                                 ("checkpoint_step" + std::to_string(done) + ".bin"));
    if (options.bank_export_dir && options.steps_per_epoch &&
        options.bank_export_every_epochs && done % options.steps_per_epoch == 0 &&
        (done / options.steps_per_epoch) % options.bank_export_every_epochs == 0)
      export_bank(state.bank, *options.bank_export_dir, done / options.steps_per_epoch);
  }
  if (options.checkpoint_dir)
    save_checkpoint(state, *options.checkpoint_dir / "checkpoint_final.bin");
}

} // namespace gseg
