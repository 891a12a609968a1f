#pragma once

// Dataset-quality metrics: boundary complexity (box-counting dimension),
// feature contrast (Fisher-style SNR), label-to-signal divergence
// (boundary-to-gradient displacement), edge density, grayscale entropy and
// Jensen-Shannon distances between histogram profiles.

#include "gseg/tile.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gseg::dataq {

// Single-channel image with values in [0, 1].
struct GrayImage {
  std::size_t height = 0, width = 0;
  std::vector<double> values;
};

// Luma (0.299, 0.587, 0.114) of an [3, H, W] image, or the single channel
// of an [H, W] / [1, H, W] image, rounded to 8-bit levels.
GrayImage to_gray(const Tensor &image);
std::vector<std::uint8_t> to_gray8(const Tensor &image);

// Sobel gradient magnitude, border replicated. Maximum for [0, 1] input is
// kMaxSobel.
inline constexpr double kMaxSobel = 5.656854249492381; // 4 * sqrt(2)
std::vector<double> sobel_magnitude(const GrayImage &gray);

inline constexpr double kDefaultEdgeFraction = 0.1;
// Fraction of pixels with Sobel magnitude > threshold_fraction * kMaxSobel.
double edge_density(const Tensor &image,
                    double threshold_fraction = kDefaultEdgeFraction);

// Shannon entropy (bits) of the 256-bin 8-bit intensity histogram.
double grayscale_entropy(const Tensor &image);

// Otsu threshold over a 256-bin histogram spanning [min, max] of `values`.
double otsu_threshold(std::span<const double> values);

// Pixels with value 1 having any 8-neighbour with value 0 (image border is
// not a boundary). Returns a [H, W] mask.
Tensor boundary_pixels(const Tensor &mask);

struct FractalFit {
  double dimension = 0.0;
  double r_squared = 0.0;
  bool poor_fit = false; // r_squared < 0.9
  std::vector<std::size_t> scales;
  std::vector<double> box_counts;
};

inline const std::vector<std::size_t> kBoxScales{2, 4, 8, 16, 32};

// Box counting over the union of boundary pixels of all masks. Each scale
// uses the minimum count over a small set of grid offsets. Scales not smaller
// than the smallest mask side are dropped (one box would cover the mask).
FractalFit fractal_dimension(std::span<const Tensor> masks,
                             std::span<const std::size_t> scales = kBoxScales);

struct Histogram {
  double lo = 0.0, hi = 1.0;
  std::vector<double> mass; // normalised to sum 1 when non-empty
};

Histogram make_histogram(std::span<const double> values, std::size_t bins,
                         double lo, double hi);

inline constexpr double kDisplacementCap = 50.0;
inline constexpr double kDisplacementTolerance = 5.0;

struct Displacement {
  std::vector<double> distances; // one per mask boundary pixel, capped
  bool gradient_empty = false;
  double median() const;
  double fraction_within(double tolerance = kDisplacementTolerance) const;
  // 51 unit bins: [0,1), ..., [49,50), and the cap value.
  std::vector<double> histogram() const;
};

Displacement boundary_displacement(const Tensor &image, const Tensor &mask,
                                   double cap = kDisplacementCap);
// Concatenated displacement over tiles with boundary pixels.
Displacement corpus_displacement(std::span<const TileRecord> tiles,
                                 double cap = kDisplacementCap);

// Empirical CDF of a displacement histogram (cumulative mass per bin).
std::vector<double> cumulative(const std::vector<double> &histogram);

// Region descriptor: mean intensity, intensity std, edge density, entropy.
struct RegionFeatures {
  double mean = 0.0, stddev = 0.0, edge_density = 0.0, entropy = 0.0;
};

double feature_contrast_snr(std::span<const TileRecord> tiles);

// sqrt of base-2 JS divergence. Inputs are normalised internally.
double jensen_shannon_distance(std::span<const double> h1,
                               std::span<const double> h2);

struct TileFeatures {
  std::uint64_t id = 0;
  double entropy = 0.0;
  double edge_density = 0.0;
};

std::vector<TileFeatures> tile_features(std::span<const TileRecord> tiles);

struct Representativeness {
  Histogram edge_full, edge_subset, entropy_full, entropy_subset;
  double jsd_edge = 0.0;
  double jsd_entropy = 0.0;
  std::vector<TileFeatures> features; // full corpus, in corpus order
};

inline constexpr std::size_t kRepresentativenessBins = 64;

// Throws when `subset_ids` is not contained in the corpus.
Representativeness representativeness_report(std::span<const TileRecord> full,
                                             std::span<const std::uint64_t> subset_ids);

struct QualityReport {
  std::size_t tile_count = 0;
  FractalFit fractal;
  bool fractal_defined = false;
  double snr = 0.0;
  bool snr_defined = false;
  std::vector<double> displacement_histogram;
  double displacement_median = 0.0;
  double displacement_within_tolerance = 0.0;
  bool displacement_gradient_empty = false;
  Histogram edge_histogram, entropy_histogram;
  std::vector<std::string> warnings;
};

// Metrics for one corpus; histograms use `bins` uniform bins over the given
// shared ranges.
QualityReport quality_report(std::span<const TileRecord> tiles, double edge_lo,
                             double edge_hi, double entropy_lo,
                             double entropy_hi,
                             std::size_t bins = kRepresentativenessBins);

} // namespace gseg::dataq
