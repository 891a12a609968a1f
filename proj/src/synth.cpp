#include "gseg/synth.hpp"
#include "gseg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace gseg {

const char *to_string(TileCategory category) {
  switch (category) {
  case TileCategory::slum:
    return "Slum";
  case TileCategory::non_slum:
    return "NonSlum";
  case TileCategory::mixed:
    return "Mixed";
  }
  return "unknown";
}

std::optional<TileCategory> parse_category(const std::string &text) {
  if (text == "Slum")
    return TileCategory::slum;
  if (text == "NonSlum")
    return TileCategory::non_slum;
  if (text == "Mixed")
    return TileCategory::mixed;
  return std::nullopt;
}

TileCategory categorize_tile(const Tensor &mask) {
  if (mask.data.empty())
    throw std::invalid_argument("categorize_tile: empty mask");
  bool any_one = false, any_zero = false;
  for (double v : mask.data) {
    if (v == 1.0)
      any_one = true;
    else if (v == 0.0)
      any_zero = true;
    else
      throw std::invalid_argument("categorize_tile: mask is not binary");
  }
  if (any_one && any_zero)
    return TileCategory::mixed;
  return any_one ? TileCategory::slum : TileCategory::non_slum;
}

} // namespace gseg

namespace gseg::synth {

namespace {

constexpr std::uint64_t kStreamTile = 1;
constexpr std::uint64_t kStreamSplit = 2;
constexpr std::uint64_t kStreamTrainOrder = 3;
constexpr std::uint64_t kStreamSubset = 4;

// Probability of an all-settlement tile and of a mixed tile, and the mean
// blob area fraction of mixed tiles, chosen so the expected settlement
// pixel share equals the requested fraction.
struct Mixture {
  double p_slum;
  double p_mixed;
  double mean_area;
};

Mixture mixture_for(double fraction) {
  Mixture m;
  m.p_slum = fraction / 8.0;
  const double remaining = fraction - m.p_slum;
  m.p_mixed = std::min(1.0 - m.p_slum, remaining / 0.3);
  m.mean_area = remaining / m.p_mixed;
  return m;
}

double quantise(double v) {
  return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

Tensor blob_mask(const SynthSpec &spec, Rng &rng, double area_fraction) {
  const std::size_t n = spec.tile_size;
  const double r0 =
      std::sqrt(area_fraction * static_cast<double>(n * n) / std::numbers::pi);
  const double side = static_cast<double>(n);
  const double margin = std::min(r0, 0.5 * side);
  const double cy = margin + uniform01(rng) * (side - 2.0 * margin);
  const double cx = margin + uniform01(rng) * (side - 2.0 * margin);
  constexpr int kHarmonics = 16;
  std::normal_distribution<double> normal(0.0, 1.0);
  double amp[kHarmonics + 1] = {}, phase[kHarmonics + 1] = {};
  for (int k = 2; k <= kHarmonics; ++k) {
    amp[k] = 0.5 * normal(rng) / std::pow(static_cast<double>(k), 0.7);
    phase[k] = 2.0 * std::numbers::pi * uniform01(rng);
  }
  Tensor mask({n, n}, TensorKind::mask);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double dy = static_cast<double>(y) + 0.5 - cy;
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double theta = std::atan2(dy, dx);
      double wobble = 0.0;
      for (int k = 2; k <= kHarmonics; ++k)
        wobble += amp[k] * std::cos(k * theta + phase[k]);
      const double radius = r0 * std::max(0.25, 1.0 + spec.roughness * wobble);
      mask.data[y * n + x] = std::hypot(dy, dx) <= radius ? 1.0 : 0.0;
    }
  }
  return mask;
}

Tensor shift_mask(const Tensor &mask, long dy, long dx) {
  const long h = static_cast<long>(mask.dim(0)), w = static_cast<long>(mask.dim(1));
  Tensor out(mask.shape, TensorKind::mask);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const long sy = std::clamp(y - dy, 0L, h - 1);
      const long sx = std::clamp(x - dx, 0L, w - 1);
      out.data[y * w + x] = mask.data[sy * w + sx];
    }
  return out;
}

} // namespace

void SynthSpec::validate() const {
  if (tile_size < 4 || tile_size % 2)
    throw std::invalid_argument("tile_size must be even and >= 4");
  if (!(slum_pixel_fraction > 0.0 && slum_pixel_fraction < 0.5))
    throw std::invalid_argument("slum_pixel_fraction must lie in (0, 0.5)");
  if (!(object_frequency >= 0.0 && background_frequency >= 0.0))
    throw std::invalid_argument("texture frequencies must be non-negative");
  if (!(texture_amplitude >= 0.0 && noise_sigma >= 0.0 && roughness >= 0.0 &&
        label_jitter_px >= 0.0))
    throw std::invalid_argument("amplitudes, noise, roughness and jitter must be non-negative");
  if (!(brightness_spread >= 0.0 && brightness_spread <= 0.5))
    throw std::invalid_argument("brightness_spread must lie in [0, 0.5]");
  if (!(std::abs(contrast_gap) <= 0.5))
    throw std::invalid_argument("contrast_gap must lie in [-0.5, 0.5]");
}

SynthSpec medium_contrast_spec() { return SynthSpec{}; }

SynthSpec low_contrast_spec() {
  SynthSpec s;
  s.contrast_gap = 0.04;
  s.object_frequency = 0.8;
  return s;
}

TileRecord generate_tile(const SynthSpec &spec, std::uint64_t id) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, {kStreamTile, id}));
  const std::size_t n = spec.tile_size;
  const Mixture mix = mixture_for(spec.slum_pixel_fraction);

  Tensor truth({n, n}, TensorKind::mask);
  const double u = uniform01(rng);
  bool mixed = false;
  if (u < mix.p_slum) {
    std::fill(truth.data.begin(), truth.data.end(), 1.0);
  } else if (u < mix.p_slum + mix.p_mixed) {
    mixed = true;
    for (int attempt = 0; attempt < 16; ++attempt) {
      const double area = mix.mean_area * (0.5 + uniform01(rng));
      truth = blob_mask(spec, rng, area);
      if (categorize_tile(truth) == TileCategory::mixed)
        break;
    }
  }

  const double base = 0.35 + spec.brightness_spread * uniform01(rng);
  const double bg_angle = std::numbers::pi * uniform01(rng);
  const double obj_angle = std::numbers::pi * uniform01(rng);
  const double bg_phase = 2.0 * std::numbers::pi * uniform01(rng);
  const double obj_phase = 2.0 * std::numbers::pi * uniform01(rng);
  double tint[3];
  for (double &t : tint)
    t = 0.06 * uniform01(rng) - 0.03;

  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0 ? spec.noise_sigma : 1.0);
  TileRecord tile;
  tile.id = id;
  tile.image = Tensor({3, n, n}, TensorKind::image);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const bool object = truth.data[y * n + x] == 1.0;
      const double angle = object ? obj_angle : bg_angle;
      const double freq = object ? spec.object_frequency : spec.background_frequency;
      const double phase = object ? obj_phase : bg_phase;
      const double coord = static_cast<double>(x) * std::cos(angle) +
                           static_cast<double>(y) * std::sin(angle);
      const double level = base + (object ? spec.contrast_gap : 0.0) +
                           spec.texture_amplitude * std::sin(freq * coord + phase);
      for (std::size_t c = 0; c < 3; ++c) {
        const double eps = spec.noise_sigma > 0 ? noise(rng) : 0.0;
        tile.image.data[(c * n + y) * n + x] = quantise(level + tint[c] + eps);
      }
    }
  }

  tile.mask = truth;
  if (mixed && spec.label_jitter_px > 0.0) {
    const double alpha = 2.0 * std::numbers::pi * uniform01(rng);
    tile.mask = shift_mask(truth, std::lround(spec.label_jitter_px * std::sin(alpha)),
                           std::lround(spec.label_jitter_px * std::cos(alpha)));
  }
  tile.category = categorize_tile(tile.mask);
  return tile;
}

std::vector<TileRecord> generate_corpus(const SynthSpec &spec,
                                        std::size_t n_tiles) {
  if (n_tiles == 0)
    throw std::invalid_argument("generate_corpus: n_tiles must be >= 1");
  spec.validate();
  std::vector<TileRecord> corpus;
  corpus.reserve(n_tiles);
  for (std::size_t i = 0; i < n_tiles; ++i)
    corpus.push_back(generate_tile(spec, i));
  return corpus;
}

void SplitProtocol::validate() const {
  const double total = train_fraction + val_fraction + test_fraction;
  if (std::abs(total - 1.0) > 1e-9 || train_fraction <= 0.0 ||
      val_fraction < 0.0 || test_fraction < 0.0)
    throw std::invalid_argument("train/val/test fractions must be non-negative and sum to 1");
  for (double f : labeled_fractions)
    if (!(f >= 0.0 && f <= 1.0))
      throw std::invalid_argument("labeled fractions must lie in [0, 1]");
  if (nested && !std::is_sorted(labeled_fractions.begin(), labeled_fractions.end()))
    throw std::invalid_argument("nested labeled fractions must be ascending");
}

std::size_t labeled_count(double fraction, std::size_t train_size) {
  return static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(train_size) + 1e-9));
}

std::vector<std::uint64_t>
stratified_order(std::span<const std::uint64_t> ids,
                 std::span<const TileCategory> categories, std::uint64_t seed,
                 std::size_t min_stratum, std::vector<std::string> *warnings) {
  if (ids.size() != categories.size())
    throw std::invalid_argument("stratified_order: ids/categories length mismatch");
  // Strata 0..2 are the categories, 3 collects pooled small strata.
  std::vector<std::vector<std::uint64_t>> strata(4);
  for (std::size_t i = 0; i < ids.size(); ++i)
    strata[static_cast<std::size_t>(categories[i])].push_back(ids[i]);
  for (std::size_t s = 0; s < 3; ++s) {
    if (!strata[s].empty() && strata[s].size() < min_stratum) {
      if (warnings)
        warnings->push_back(std::string("stratum ") +
                            to_string(static_cast<TileCategory>(s)) + " has " +
                            std::to_string(strata[s].size()) +
                            " tiles; sampled globally with other small strata");
      strata[3].insert(strata[3].end(), strata[s].begin(), strata[s].end());
      strata[s].clear();
    }
  }
  std::sort(strata[3].begin(), strata[3].end());

  struct Keyed {
    double key;
    std::size_t stratum;
    std::uint64_t id;
  };
  std::vector<Keyed> keyed;
  keyed.reserve(ids.size());
  for (std::size_t s = 0; s < strata.size(); ++s) {
    auto &members = strata[s];
    if (members.empty())
      continue;
    Rng rng(derive_seed(seed, {s}));
    std::shuffle(members.begin(), members.end(), rng);
    const double offset = uniform01(rng);
    const double n = static_cast<double>(members.size());
    for (std::size_t r = 0; r < members.size(); ++r)
      keyed.push_back({(static_cast<double>(r) + offset) / n, s, members[r]});
  }
  std::sort(keyed.begin(), keyed.end(), [](const Keyed &a, const Keyed &b) {
    return a.key != b.key ? a.key < b.key : a.stratum < b.stratum;
  });
  std::vector<std::uint64_t> order;
  order.reserve(keyed.size());
  for (const auto &k : keyed)
    order.push_back(k.id);
  return order;
}

namespace {

std::vector<std::uint64_t> sorted(std::vector<std::uint64_t> v) {
  std::sort(v.begin(), v.end());
  return v;
}

} // namespace

BudgetSplit Splits::budget(double fraction) const {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw std::invalid_argument("budget fraction must lie in [0, 1]");
  const std::size_t k = labeled_count(fraction, train_order.size());
  BudgetSplit b;
  b.fraction = fraction;
  b.labeled = sorted({train_order.begin(), train_order.begin() + k});
  b.unlabeled = sorted({train_order.begin() + k, train_order.end()});
  return b;
}

Splits make_splits(std::span<const TileRecord> corpus,
                   const SplitProtocol &protocol, std::uint64_t seed) {
  protocol.validate();
  if (corpus.size() < 20)
    throw std::invalid_argument("make_splits: corpus needs at least 20 tiles");
  std::vector<std::uint64_t> ids;
  std::vector<TileCategory> cats;
  for (const auto &t : corpus) {
    ids.push_back(t.id);
    cats.push_back(t.category);
  }
  Splits out;
  const auto order = stratified_order(ids, cats, derive_seed(seed, {kStreamSplit}),
                                      protocol.min_stratum, &out.warnings);
  const double n = static_cast<double>(corpus.size());
  const auto n_test = static_cast<std::size_t>(std::lround(protocol.test_fraction * n));
  const auto n_val = static_cast<std::size_t>(std::lround(protocol.val_fraction * n));
  out.test = sorted({order.begin(), order.begin() + n_test});
  out.val = sorted({order.begin() + n_test, order.begin() + n_test + n_val});
  out.train = sorted({order.begin() + n_test + n_val, order.end()});

  std::vector<TileCategory> train_cats;
  for (auto id : out.train) {
    const auto it = std::find(ids.begin(), ids.end(), id);
    train_cats.push_back(cats[static_cast<std::size_t>(it - ids.begin())]);
  }
  std::vector<std::string> train_warnings;
  out.train_order = stratified_order(out.train, train_cats,
                                     derive_seed(seed, {kStreamTrainOrder}),
                                     protocol.min_stratum, &train_warnings);
  out.warnings.insert(out.warnings.end(), train_warnings.begin(), train_warnings.end());

  for (std::size_t b = 0; b < protocol.labeled_fractions.size(); ++b) {
    const double f = protocol.labeled_fractions[b];
    if (protocol.nested) {
      out.budgets.push_back(out.budget(f));
    } else {
      Splits independent = out;
      independent.train_order =
          stratified_order(out.train, train_cats,
                           derive_seed(seed, {kStreamTrainOrder, b + 1}),
                           protocol.min_stratum, nullptr);
      out.budgets.push_back(independent.budget(f));
    }
  }
  return out;
}

std::vector<std::uint64_t> stratified_subset(std::span<const TileRecord> corpus,
                                             std::size_t k, std::uint64_t seed) {
  if (k > corpus.size())
    throw std::invalid_argument("stratified_subset: k = " + std::to_string(k) +
                                " exceeds corpus size " +
                                std::to_string(corpus.size()));
  std::vector<std::uint64_t> ids;
  std::vector<TileCategory> cats;
  for (const auto &t : corpus) {
    ids.push_back(t.id);
    cats.push_back(t.category);
  }
  const auto order = stratified_order(ids, cats, derive_seed(seed, {kStreamSubset}),
                                      1, nullptr);
  return sorted({order.begin(), order.begin() + k});
}

} // namespace gseg::synth
