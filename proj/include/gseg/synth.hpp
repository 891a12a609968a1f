#pragma once

// Deterministic synthetic "settlement vs background" tiles and the
// train/val/test + nested label-budget protocol built on top of them.

#include "gseg/tile.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gseg::synth {

struct SynthSpec {
  std::size_t tile_size = 32;
  double slum_pixel_fraction = 0.08;
  double object_frequency = 1.1;     // radians per pixel
  double background_frequency = 0.6;
  double texture_amplitude = 0.03;
  double contrast_gap = 0.12;        // object minus background mean intensity
  double brightness_spread = 0.2;    // per-tile base level ~ U(0.35, 0.35 + spread)
  double noise_sigma = 0.03;
  double roughness = 0.35;           // 0 gives circular blobs
  double label_jitter_px = 0.0;      // annotation shift length
  std::uint64_t seed = 7;

  void validate() const;
  bool operator==(const SynthSpec &) const = default;
};

// Named contrast regimes used by experiments.
SynthSpec medium_contrast_spec();
SynthSpec low_contrast_spec();

TileRecord generate_tile(const SynthSpec &spec, std::uint64_t id);
std::vector<TileRecord> generate_corpus(const SynthSpec &spec,
                                        std::size_t n_tiles);

struct SplitProtocol {
  std::vector<double> labeled_fractions{0.10, 0.20, 0.30};
  double train_fraction = 0.72;
  double val_fraction = 0.08;
  double test_fraction = 0.20;
  bool nested = true;
  std::size_t min_stratum = 5; // smaller strata are pooled

  void validate() const;
  bool operator==(const SplitProtocol &) const = default;
};

struct BudgetSplit {
  double fraction = 0.0;
  std::vector<std::uint64_t> labeled;   // sorted ids
  std::vector<std::uint64_t> unlabeled; // sorted ids, train \ labeled
};

struct Splits {
  std::vector<std::uint64_t> train, val, test; // sorted ids
  // Stratified order of the training ids; every budget is a prefix.
  std::vector<std::uint64_t> train_order;
  std::vector<BudgetSplit> budgets;
  std::vector<std::string> warnings;

  // Labeled/unlabeled split for any fraction in [0, 1].
  BudgetSplit budget(double fraction) const;
};

Splits make_splits(std::span<const TileRecord> corpus,
                   const SplitProtocol &protocol, std::uint64_t seed);

// Category-stratified subset of k ids (sorted).
std::vector<std::uint64_t> stratified_subset(std::span<const TileRecord> corpus,
                                             std::size_t k, std::uint64_t seed);

// Stratified ordering of `ids` by their categories: any prefix holds each
// category in proportion within one tile. Strata below `min_stratum` are
// pooled; a message is appended to `warnings` when that happens.
std::vector<std::uint64_t>
stratified_order(std::span<const std::uint64_t> ids,
                 std::span<const TileCategory> categories, std::uint64_t seed,
                 std::size_t min_stratum, std::vector<std::string> *warnings);

std::size_t labeled_count(double fraction, std::size_t train_size);

} // namespace gseg::synth
