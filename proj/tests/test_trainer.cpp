#include "gseg/rng.hpp"
#include "gseg/synth.hpp"
#include "gseg/trainer.hpp"
#include "reference_step.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

using namespace gseg;

namespace {

std::vector<TileRecord> corpus_slice(std::size_t n, std::uint64_t seed) {
  auto spec = synth::medium_contrast_spec();
  spec.seed = seed;
  return synth::generate_corpus(spec, n);
}

TrainConfig small_config(Method method, std::size_t steps = 30) {
  TrainConfig c;
  c.method = method;
  c.total_steps = steps;
  c.labeled_batch = 4;
  c.unlabeled_batch = 4;
  c.seed = 3;
  c.bank.capacity = 32;
  c.bank.per_batch_cap = 16;
  return c;
}

// Pixel intensity gives the class away; edges sit on even coordinates.
std::vector<TileRecord> separable_tiles(std::size_t n) {
  Rng rng(44);
  std::vector<TileRecord> out;
  for (std::size_t k = 0; k < n; ++k) {
    TileRecord t;
    t.id = k;
    t.mask = Tensor({32, 32}, TensorKind::mask);
    const std::size_t y0 = 2 * static_cast<std::size_t>(uniform01(rng) * 6);
    const std::size_t x0 = 2 * static_cast<std::size_t>(uniform01(rng) * 6);
    for (std::size_t y = y0; y < y0 + 16; ++y)
      for (std::size_t x = x0; x < x0 + 16; ++x)
        t.mask.data[y * 32 + x] = 1.0;
    t.image = Tensor({3, 32, 32}, TensorKind::image);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 1024; ++i)
        t.image.data[c * 1024 + i] = t.mask.data[i] == 1.0 ? 0.8 : 0.2;
    t.category = categorize_tile(t.mask);
    out.push_back(std::move(t));
  }
  return out;
}

Tensor square(std::size_t y0, std::size_t x0) {
  Tensor m({4, 4}, TensorKind::labels);
  for (std::size_t y = y0; y < y0 + 2; ++y)
    for (std::size_t x = x0; x < x0 + 2; ++x)
      m.data[y * 4 + x] = 1.0;
  return m;
}

std::filesystem::path scratch_dir(const std::string &name) {
  const auto dir = std::filesystem::temp_directory_path() / ("gseg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace

TEST_SUITE("trainer") {

TEST_CASE("method names and switches") {
  for (Method m : kAllMethods)
    CHECK(parse_method(to_string(m)) == m);
  CHECK_FALSE(parse_method("fixmatch").has_value());
  CHECK_FALSE(switches_for(Method::supervised).use_unlabeled);
  const auto s = switches_for(Method::static_threshold);
  CHECK(s.use_unlabeled);
  CHECK_FALSE(s.adaptive_thresholds);
  CHECK_FALSE(s.use_bank);
  CHECK(switches_for(Method::caat_only).adaptive_thresholds);
  CHECK_FALSE(switches_for(Method::caat_only).use_bank);
  CHECK(switches_for(Method::bank_only).use_bank);
  CHECK_FALSE(switches_for(Method::bank_only).adaptive_thresholds);
  CHECK(switches_for(Method::full).use_bank);
  CHECK(switches_for(Method::full).adaptive_thresholds);
}

TEST_CASE("config validation") {
  auto c = small_config(Method::full);
  CHECK_NOTHROW(c.validate());
  c.optimizer.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config(Method::full);
  c.bank.feature_dim = 8;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config(Method::full);
  c.thresholds.tau_min = 0.97;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("poly learning rate") {
  OptimizerState s;
  s.config.learning_rate = 0.1;
  s.total_steps = 100;
  CHECK(s.current_lr() == 0.1);
  s.step = 50;
  CHECK(std::abs(s.current_lr() - 0.1 * std::pow(0.5, 0.9)) < 1e-15);
  s.step = 100;
  CHECK(s.current_lr() == 0.0);
}

TEST_CASE("sgd step matches the momentum update") {
  OptimizerState s;
  s.config = {0.5, 0.9, 0.1, 0.9};
  s.total_steps = 10;
  std::vector<double> p{1.0, -2.0};
  const std::vector<double> g{0.2, 0.4};
  sgd_step(p, g, s);
  CHECK(std::abs(p[0] - (1.0 - 0.5 * (0.2 + 0.1))) < 1e-15);
  CHECK(std::abs(p[1] - (-2.0 - 0.5 * (0.4 - 0.2))) < 1e-15);
  CHECK(s.step == 1);
  const std::vector<double> v1 = s.velocity;
  const std::vector<double> p1 = p;
  sgd_step(p, g, s);
  const double lr = 0.5 * std::pow(0.9, 0.9);
  for (std::size_t i = 0; i < 2; ++i) {
    const double v = 0.9 * v1[i] + g[i] + 0.1 * p1[i];
    CHECK(std::abs(p[i] - (p1[i] - lr * v)) < 1e-15);
  }
  std::vector<double> wrong{1.0};
  CHECK_THROWS_AS(sgd_step(wrong, g, s), std::invalid_argument);
}

TEST_CASE("IoU examples") {
  const std::vector<Tensor> truth{square(0, 0)};
  const auto same = score_predictions(truth, truth, 2);
  CHECK(same.miou == 1.0);

  Tensor inverse = truth[0];
  for (auto &v : inverse.data)
    v = 1.0 - v;
  const std::vector<Tensor> inv{inverse};
  CHECK(score_predictions(inv, truth, 2).miou == 0.0);

  const std::vector<Tensor> shifted{square(0, 1)};
  const auto half = score_predictions(shifted, truth, 2);
  CHECK(std::abs(*half.per_class_iou[1] - 1.0 / 3.0) < 1e-15);
  CHECK(std::abs(*half.per_class_iou[0] - 10.0 / 14.0) < 1e-15);
  CHECK(std::abs(half.miou - 0.5 * (1.0 / 3.0 + 10.0 / 14.0)) < 1e-15);

  const auto three = score_predictions(shifted, truth, 3);
  CHECK_FALSE(three.per_class_iou[2].has_value());
  CHECK(three.miou == half.miou);
  CHECK(three.confusion.size() == 9);
}

TEST_CASE("supervised ignores unlabeled data") {
  const auto labeled = corpus_slice(12, 1);
  const auto pool_a = corpus_slice(20, 2);
  const auto pool_b = corpus_slice(20, 3);
  const auto config = small_config(Method::supervised, 15);
  const BatchSampler sa(labeled, pool_a, config), sb(labeled, pool_b, config);
  auto a = initial_state(config), b = initial_state(config), none = initial_state(config);
  for (std::uint64_t step = 0; step < 15; ++step) {
    const auto lb = sa.labeled_batch(step);
    const auto ua = sa.unlabeled_batch(step), ub = sb.unlabeled_batch(step);
    const auto seeds = step_seeds(config.seed, step);
    train_step(a, config, lb, &ua, seeds);
    train_step(b, config, lb, &ub, seeds);
    train_step(none, config, lb, nullptr, seeds);
    CHECK(a.model.params() == b.model.params());
    CHECK(a.model.params() == none.model.params());
  }
  auto ra = initial_state(config), rb = initial_state(config);
  run_training(ra, config, sa);
  run_training(rb, config, sb);
  CHECK(ra == rb);
}

TEST_CASE("static threshold step equals the hand-wired reference bit for bit") {
  const auto labeled = corpus_slice(12, 5);
  const auto unlabeled = corpus_slice(24, 6);
  const auto config = small_config(Method::static_threshold, 10);
  const BatchSampler sampler(labeled, unlabeled, config);
  auto state = initial_state(config);
  for (std::uint64_t step = 0; step < 4; ++step) {
    const auto lb = sampler.labeled_batch(step);
    const auto ub = sampler.unlabeled_batch(step);
    const auto seeds = step_seeds(config.seed, step);
    const auto expect = reference::fixed_threshold_step(
        state.model, state.optimizer.velocity, config, step, lb, ub.weak_images, seeds);
    const auto losses = train_step(state, config, lb, &ub, seeds);
    CHECK(state.model.params() == expect.params);
    CHECK(state.optimizer.velocity == expect.velocity);
    CHECK(std::abs(losses.total - expect.total) < 1e-12);
    CHECK(state.thresholds.thresholds == std::vector<double>{0.95, 0.95});
    CHECK(state.bank.empty(0));
    CHECK(losses.mean_omega == 1.0);
  }
}

TEST_CASE("zero unlabeled weight reduces to a supervised step") {
  const auto labeled = corpus_slice(12, 7);
  const auto unlabeled = corpus_slice(20, 8);
  for (Method m : {Method::static_threshold, Method::full}) {
    auto config = small_config(m, 10);
    config.unlabeled_weight = 0.0;
    auto sup_config = small_config(Method::supervised, 10);
    const BatchSampler sampler(labeled, unlabeled, config);
    auto state = initial_state(config), sup = initial_state(sup_config);
    for (std::uint64_t step = 0; step < 5; ++step) {
      const auto lb = sampler.labeled_batch(step);
      const auto ub = sampler.unlabeled_batch(step);
      const auto seeds = step_seeds(config.seed, step);
      const auto l = train_step(state, config, lb, &ub, seeds);
      const auto ls = train_step(sup, sup_config, lb, nullptr, seeds);
      CHECK(state.model.params() == sup.model.params());
      CHECK(l.sup == ls.sup);
      CHECK(l.total == ls.total);
    }
  }
}

TEST_CASE("bank only stores features of admitted pixels with their pseudo-label") {
  const auto labeled = corpus_slice(12, 9);
  const auto unlabeled = corpus_slice(24, 10);
  auto config = small_config(Method::full, 12);
  config.thresholds.tau_min = 0.5;
  const BatchSampler sampler(labeled, unlabeled, config);
  auto state = initial_state(config);
  std::size_t checked = 0;
  for (std::uint64_t step = 0; step < 12; ++step) {
    const auto lb = sampler.labeled_batch(step);
    const auto ub = sampler.unlabeled_batch(step);
    const auto weak = state.model.forward(ub.weak_images);
    const auto thresholds =
        caat::update(state.thresholds, caat::batch_class_confidence(weak.probs));
    const auto adm = caat::admission_mask(weak.probs, thresholds);
    const std::size_t fh = weak.trace.features.dim(2), fw = weak.trace.features.dim(3);
    const auto pseudo_low = resize_nearest(adm.pseudo_labels, fh, fw);
    const auto mask_low = resize_nearest(adm.mask, fh, fw);
    std::vector<std::uint64_t> before;
    for (std::size_t c = 0; c < 2; ++c)
      before.push_back(state.bank.fill_count(c));

    train_step(state, config, lb, &ub, step_seeds(config.seed, step));
    CHECK(state.thresholds == thresholds);
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(state.bank.size(c) <= config.bank.capacity);
      const auto added = state.bank.fill_count(c) - before[c];
      CHECK(added <= config.bank.per_batch_cap);
      const std::size_t fresh = std::min<std::size_t>(added, state.bank.size(c));
      for (std::size_t k = state.bank.size(c) - fresh; k < state.bank.size(c); ++k) {
        const auto tag = state.bank.tag(c, k);
        CHECK(mask_low.data.at(tag) == 1.0);
        CHECK(pseudo_low.data.at(tag) == static_cast<double>(c));
        double norm = 0.0;
        for (double v : state.bank.vector(c, k))
          norm += v * v;
        CHECK(std::abs(norm - 1.0) < 1e-12);
        ++checked;
      }
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("training is deterministic and resumes exactly") {
  const auto labeled = corpus_slice(12, 11);
  const auto unlabeled = corpus_slice(24, 12);
  const auto config = small_config(Method::full, 20);
  const BatchSampler sampler(labeled, unlabeled, config);
  const auto dir = scratch_dir("resume");

  std::vector<double> uninterrupted;
  auto a = initial_state(config);
  RunOptions opts;
  opts.checkpoint_dir = dir;
  opts.checkpoint_every = 10;
  opts.runlog = dir / "runlog.jsonl";
  opts.on_step = [&](const StepRecord &r) { uninterrupted.push_back(r.losses.total); };
  run_training(a, config, sampler, opts);
  REQUIRE(std::filesystem::exists(dir / "checkpoint_step10.bin"));
  REQUIRE(std::filesystem::exists(dir / "checkpoint_final.bin"));
  CHECK(load_checkpoint(dir / "checkpoint_final.bin") == a);

  auto b = initial_state(config);
  run_training(b, config, sampler);
  CHECK(a == b);

  auto resumed = load_checkpoint(dir / "checkpoint_step10.bin");
  CHECK(resumed.optimizer.step == 10);
  std::vector<double> replay;
  RunOptions ropts;
  ropts.on_step = [&](const StepRecord &r) { replay.push_back(r.losses.total); };
  run_training(resumed, config, sampler, ropts);
  REQUIRE(replay.size() == 10);
  for (std::size_t i = 0; i < 10; ++i)
    CHECK(std::abs(replay[i] - uninterrupted[10 + i]) < 1e-10);
  CHECK(resumed == a);

  std::ifstream log(dir / "runlog.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    CHECK(line.find("\"L_total\"") != std::string::npos);
    CHECK(line.find("\"mean_omega\"") != std::string::npos);
    ++lines;
  }
  CHECK(lines == 20);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint rejects foreign files") {
  const auto dir = scratch_dir("badckpt");
  {
    std::ofstream f(dir / "x.bin", std::ios::binary);
    f << "not a checkpoint";
  }
  CHECK_THROWS(load_checkpoint(dir / "x.bin"));
  CHECK_THROWS(load_checkpoint(dir / "missing.bin"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("supervised training fits a separable set") {
  const auto tiles = separable_tiles(16);
  auto config = small_config(Method::supervised, 500);
  config.labeled_batch = 8;
  config.augment.scale_lo = config.augment.scale_hi = 1.0;
  const BatchSampler sampler(tiles, {}, config);
  auto state = initial_state(config);
  std::vector<double> sup;
  RunOptions opts;
  opts.on_step = [&](const StepRecord &r) { sup.push_back(r.losses.sup); };
  run_training(state, config, sampler, opts);
  double tail = 0.0;
  for (std::size_t i = sup.size() - 20; i < sup.size(); ++i)
    tail += sup[i] / 20.0;
  CHECK(tail < 0.05);
  CHECK(tail < sup.front());
  CHECK(evaluate(state.model, tiles).miou > 0.9);
}

}
