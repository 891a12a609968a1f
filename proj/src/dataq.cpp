#include "gseg/dataq.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace gseg::dataq {

namespace {

std::pair<std::size_t, std::size_t> spatial_extent(const Tensor &t) {
  if (t.rank() < 2)
    throw std::invalid_argument("image rank must be >= 2");
  return {t.shape[t.rank() - 2], t.shape[t.rank() - 1]};
}

} // namespace

std::vector<std::uint8_t> to_gray8(const Tensor &image) {
  const auto [h, w] = spatial_extent(image);
  const std::size_t plane = h * w;
  const std::size_t channels = image.size() / plane;
  std::vector<std::uint8_t> out(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    double v;
    if (channels >= 3) {
      v = 0.299 * image.data[i] + 0.587 * image.data[plane + i] +
          0.114 * image.data[2 * plane + i];
    } else {
      v = image.data[i];
    }
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  }
  return out;
}

GrayImage to_gray(const Tensor &image) {
  const auto [h, w] = spatial_extent(image);
  const auto g8 = to_gray8(image);
  GrayImage g{h, w, std::vector<double>(g8.size())};
  for (std::size_t i = 0; i < g8.size(); ++i)
    g.values[i] = g8[i] / 255.0;
  return g;
}

std::vector<double> sobel_magnitude(const GrayImage &gray) {
  const long h = static_cast<long>(gray.height), w = static_cast<long>(gray.width);
  std::vector<double> mag(gray.values.size());
  auto at = [&](long y, long x) {
    return gray.values[std::clamp(y, 0L, h - 1) * w + std::clamp(x, 0L, w - 1)];
  };
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const double gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
      const double gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
      mag[y * w + x] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return mag;
}

double edge_density(const Tensor &image, double threshold_fraction) {
  const auto mag = sobel_magnitude(to_gray(image));
  if (mag.empty())
    return 0.0;
  const double threshold = threshold_fraction * kMaxSobel;
  const auto strong = std::count_if(mag.begin(), mag.end(),
                                    [threshold](double m) { return m > threshold; });
  return static_cast<double>(strong) / static_cast<double>(mag.size());
}

namespace {

double entropy_bits(std::span<const std::size_t> counts) {
  const double total =
      static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  if (total == 0.0)
    return 0.0;
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0)
      continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log2(p);
  }
  return h;
}

} // namespace

double grayscale_entropy(const Tensor &image) {
  std::vector<std::size_t> counts(256, 0);
  for (auto v : to_gray8(image))
    ++counts[v];
  return entropy_bits(counts);
}

double otsu_threshold(std::span<const double> values) {
  if (values.empty())
    throw std::invalid_argument("otsu_threshold: no values");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn, hi = *mx;
  if (hi <= lo)
    return hi;
  constexpr std::size_t kBins = 256;
  const double width = (hi - lo) / kBins;
  std::vector<double> hist(kBins, 0.0);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    hist[std::min(b, kBins - 1)] += 1.0;
  }
  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (std::size_t b = 0; b < kBins; ++b)
    sum_all += static_cast<double>(b) * hist[b];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  std::size_t best_t = 0;
  for (std::size_t t = 0; t + 1 < kBins; ++t) {
    w0 += hist[t];
    sum0 += static_cast<double>(t) * hist[t];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0)
      continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return lo + static_cast<double>(best_t + 1) * width;
}

Tensor boundary_pixels(const Tensor &mask) {
  const auto [h, w] = spatial_extent(mask);
  Tensor out({h, w}, TensorKind::mask);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (mask.data[y * w + x] != 1.0)
        continue;
      bool edge = false;
      for (int dy = -1; dy <= 1 && !edge; ++dy) {
        for (int dx = -1; dx <= 1 && !edge; ++dx) {
          const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w))
            continue;
          edge = mask.data[yy * static_cast<long>(w) + xx] == 0.0;
        }
      }
      out.data[y * w + x] = edge ? 1.0 : 0.0;
    }
  }
  return out;
}

FractalFit fractal_dimension(std::span<const Tensor> masks,
                             std::span<const std::size_t> scales) {
  if (scales.size() < 4)
    throw std::invalid_argument("fractal_dimension: need at least 4 box scales");
  struct Points {
    std::size_t h, w;
    std::vector<std::pair<std::size_t, std::size_t>> yx;
  };
  std::vector<Points> boundaries;
  std::size_t total_points = 0;
  for (const auto &m : masks) {
    const Tensor b = boundary_pixels(m);
    const auto [h, w] = spatial_extent(m);
    Points p{h, w, {}};
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        if (b.data[y * w + x] == 1.0)
          p.yx.emplace_back(y, x);
    total_points += p.yx.size();
    if (!p.yx.empty())
      boundaries.push_back(std::move(p));
  }
  if (total_points == 0)
    throw std::invalid_argument("fractal_dimension: no boundary pixels");
  std::size_t extent = std::numeric_limits<std::size_t>::max();
  for (const auto &p : boundaries)
    extent = std::min({extent, p.h, p.w});
  std::vector<std::size_t> usable;
  for (std::size_t s : scales) {
    if (s == 0)
      throw std::invalid_argument("fractal_dimension: zero box scale");
    if (s < extent)
      usable.push_back(s);
  }
  if (usable.size() < 4)
    throw std::invalid_argument("fractal_dimension: fewer than 4 box scales below the mask size " +
                                std::to_string(extent));

  FractalFit fit;
  std::vector<char> grid;
  for (std::size_t s : usable) {
    const std::size_t step = std::max<std::size_t>(1, s / 4);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t oy = 0; oy < s; oy += step) {
      for (std::size_t ox = 0; ox < s; ox += step) {
        std::size_t count = 0;
        for (const auto &p : boundaries) {
          const std::size_t gh = (p.h + oy) / s + 1, gw = (p.w + ox) / s + 1;
          grid.assign(gh * gw, 0);
          for (const auto &[y, x] : p.yx) {
            char &cell = grid[((y + oy) / s) * gw + (x + ox) / s];
            count += cell == 0;
            cell = 1;
          }
        }
        best = std::min(best, static_cast<double>(count));
      }
    }
    fit.scales.push_back(s);
    fit.box_counts.push_back(best);
  }

  // Least squares of log N against log s.
  const std::size_t n = fit.scales.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    lx[i] = std::log(static_cast<double>(fit.scales[i]));
    ly[i] = std::log(fit.box_counts[i]);
    sx += lx[i];
    sy += ly[i];
    sxx += lx[i] * lx[i];
    sxy += lx[i] * ly[i];
  }
  const double nn = static_cast<double>(n);
  const double slope = (nn * sxy - sx * sy) / (nn * sxx - sx * sx);
  const double intercept = (sy - slope * sx) / nn;
  double ss_res = 0, ss_tot = 0;
  const double my = sy / nn;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ly[i] - (intercept + slope * lx[i]);
    ss_res += r * r;
    ss_tot += (ly[i] - my) * (ly[i] - my);
  }
  fit.dimension = -slope;
  fit.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  fit.poor_fit = fit.r_squared < 0.9;
  return fit;
}

Histogram make_histogram(std::span<const double> values, std::size_t bins,
                         double lo, double hi) {
  if (bins == 0)
    throw std::invalid_argument("make_histogram: zero bins");
  Histogram h{lo, hi, std::vector<double>(bins, 0.0)};
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double v : values) {
    std::size_t b = 0;
    if (width > 0.0) {
      const double pos = std::floor((v - lo) / width);
      b = pos <= 0.0 ? 0 : std::min(static_cast<std::size_t>(pos), bins - 1);
    }
    h.mass[b] += 1.0;
  }
  if (!values.empty())
    for (double &m : h.mass)
      m /= static_cast<double>(values.size());
  return h;
}

namespace {

// 1-d squared distance transform (Felzenszwalb & Huttenlocher).
void distance_1d(const double *f, std::size_t n, double *d, std::vector<long> &v,
                 std::vector<double> &z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  long k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  for (long q = 1; q < static_cast<long>(n); ++q) {
    if (f[q] == inf)
      continue;
    if (f[v[k]] == inf) {
      v[k] = q;
      continue;
    }
    double s;
    while (true) {
      s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) /
          (2.0 * q - 2.0 * v[k]);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (long q = 0; q < static_cast<long>(n); ++q) {
    while (z[k + 1] < q)
      ++k;
    const double diff = double(q) - v[k];
    d[q] = f[v[k]] == inf ? inf : diff * diff + f[v[k]];
  }
}

// Euclidean distance from every pixel to the nearest `seed` pixel.
std::vector<double> distance_transform(const std::vector<char> &seeds,
                                       std::size_t h, std::size_t w) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(h * w);
  for (std::size_t i = 0; i < h * w; ++i)
    grid[i] = seeds[i] ? 0.0 : inf;
  std::vector<long> v;
  std::vector<double> z, col_in(h), col_out(h), row_out(w);
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y)
      col_in[y] = grid[y * w + x];
    distance_1d(col_in.data(), h, col_out.data(), v, z);
    for (std::size_t y = 0; y < h; ++y)
      grid[y * w + x] = col_out[y];
  }
  for (std::size_t y = 0; y < h; ++y) {
    distance_1d(grid.data() + y * w, w, row_out.data(), v, z);
    for (std::size_t x = 0; x < w; ++x)
      grid[y * w + x] = std::sqrt(row_out[x]);
  }
  return grid;
}

} // namespace

double Displacement::median() const {
  if (distances.empty())
    throw std::logic_error("median of an empty displacement distribution");
  std::vector<double> s = distances;
  const std::size_t mid = s.size() / 2;
  std::nth_element(s.begin(), s.begin() + mid, s.end());
  if (s.size() % 2)
    return s[mid];
  const double upper = s[mid];
  const double lower = *std::max_element(s.begin(), s.begin() + mid);
  return 0.5 * (lower + upper);
}

double Displacement::fraction_within(double tolerance) const {
  if (distances.empty())
    return 0.0;
  const auto n = std::count_if(distances.begin(), distances.end(),
                               [tolerance](double d) { return d <= tolerance; });
  return static_cast<double>(n) / static_cast<double>(distances.size());
}

std::vector<double> Displacement::histogram() const {
  const auto bins = static_cast<std::size_t>(kDisplacementCap) + 1;
  std::vector<double> h(bins, 0.0);
  for (double d : distances)
    h[std::min(static_cast<std::size_t>(std::floor(d)), bins - 1)] += 1.0;
  if (!distances.empty())
    for (double &m : h)
      m /= static_cast<double>(distances.size());
  return h;
}

std::vector<double> cumulative(const std::vector<double> &histogram) {
  std::vector<double> c(histogram.size());
  std::partial_sum(histogram.begin(), histogram.end(), c.begin());
  return c;
}

Displacement boundary_displacement(const Tensor &image, const Tensor &mask,
                                   double cap) {
  const auto [h, w] = spatial_extent(mask);
  const auto [ih, iw] = spatial_extent(image);
  if (ih != h || iw != w)
    throw std::invalid_argument("boundary_displacement: image/mask size mismatch");
  const Tensor boundary = boundary_pixels(mask);
  Displacement out;
  const auto mag = sobel_magnitude(to_gray(image));
  const double threshold = otsu_threshold(mag);
  std::vector<char> strong(h * w, 0);
  bool any = false;
  for (std::size_t i = 0; i < h * w; ++i) {
    strong[i] = mag[i] > 0.0 && mag[i] >= threshold;
    any = any || strong[i];
  }
  out.gradient_empty = !any;
  std::vector<double> dist;
  if (any)
    dist = distance_transform(strong, h, w);
  for (std::size_t i = 0; i < h * w; ++i) {
    if (boundary.data[i] != 1.0)
      continue;
    out.distances.push_back(any ? std::min(dist[i], cap) : cap);
  }
  return out;
}

Displacement corpus_displacement(std::span<const TileRecord> tiles, double cap) {
  Displacement all;
  for (const auto &t : tiles) {
    if (t.category != TileCategory::mixed)
      continue;
    auto d = boundary_displacement(t.image, t.mask, cap);
    all.gradient_empty = all.gradient_empty || d.gradient_empty;
    all.distances.insert(all.distances.end(), d.distances.begin(), d.distances.end());
  }
  return all;
}

namespace {

RegionFeatures region_features(const std::vector<std::uint8_t> &gray,
                               const std::vector<double> &mag,
                               const Tensor &mask, double label,
                               double edge_threshold) {
  RegionFeatures f;
  std::vector<std::size_t> counts(32, 0);
  double n = 0, s = 0, ss = 0, edges = 0;
  for (std::size_t i = 0; i < gray.size(); ++i) {
    if (mask.data[i] != label)
      continue;
    const double v = gray[i] / 255.0;
    n += 1;
    s += v;
    ss += v * v;
    edges += mag[i] > edge_threshold ? 1.0 : 0.0;
    ++counts[gray[i] >> 3];
  }
  f.mean = s / n;
  f.stddev = std::sqrt(std::max(0.0, ss / n - f.mean * f.mean));
  f.edge_density = edges / n;
  f.entropy = entropy_bits(counts);
  return f;
}

} // namespace

double feature_contrast_snr(std::span<const TileRecord> tiles) {
  std::vector<std::array<double, 4>> slum, background;
  for (const auto &t : tiles) {
    if (categorize_tile(t.mask) != TileCategory::mixed)
      continue;
    const auto gray8 = to_gray8(t.image);
    const auto mag = sobel_magnitude(to_gray(t.image));
    const double thr = kDefaultEdgeFraction * kMaxSobel;
    const auto a = region_features(gray8, mag, t.mask, 1.0, thr);
    const auto b = region_features(gray8, mag, t.mask, 0.0, thr);
    slum.push_back({a.mean, a.stddev, a.edge_density, a.entropy});
    background.push_back({b.mean, b.stddev, b.edge_density, b.entropy});
  }
  if (slum.empty())
    throw std::invalid_argument("feature_contrast_snr: no tile contains both classes");

  // z-score each descriptor over the pooled regions.
  for (std::size_t f = 0; f < 4; ++f) {
    double s = 0, ss = 0, n = 0;
    for (const auto *set : {&slum, &background})
      for (const auto &v : *set) {
        s += v[f];
        ss += v[f] * v[f];
        n += 1;
      }
    const double mu = s / n;
    const double sd = std::sqrt(std::max(0.0, ss / n - mu * mu));
    for (auto *set : {&slum, &background})
      for (auto &v : *set)
        v[f] = sd > 1e-12 ? (v[f] - mu) / sd : 0.0;
  }
  auto stats = [](const std::vector<std::array<double, 4>> &set) {
    std::array<double, 4> mu{};
    for (const auto &v : set)
      for (std::size_t f = 0; f < 4; ++f)
        mu[f] += v[f] / static_cast<double>(set.size());
    double trace = 0.0;
    for (const auto &v : set)
      for (std::size_t f = 0; f < 4; ++f)
        trace += (v[f] - mu[f]) * (v[f] - mu[f]) / static_cast<double>(set.size());
    return std::pair{mu, trace};
  };
  const auto [mu_s, tr_s] = stats(slum);
  const auto [mu_b, tr_b] = stats(background);
  double dist2 = 0.0;
  for (std::size_t f = 0; f < 4; ++f)
    dist2 += (mu_s[f] - mu_b[f]) * (mu_s[f] - mu_b[f]);
  const double spread = std::sqrt(0.5 * (tr_s + tr_b));
  if (spread < 1e-12)
    return dist2 > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return std::sqrt(dist2) / spread;
}

double jensen_shannon_distance(std::span<const double> h1,
                               std::span<const double> h2) {
  if (h1.size() != h2.size())
    throw std::invalid_argument("jensen_shannon_distance: bin count mismatch");
  const double m1 = std::accumulate(h1.begin(), h1.end(), 0.0);
  const double m2 = std::accumulate(h2.begin(), h2.end(), 0.0);
  if (!(m1 > 0.0) || !(m2 > 0.0))
    throw std::invalid_argument("jensen_shannon_distance: zero-mass histogram");
  double js = 0.0;
  for (std::size_t i = 0; i < h1.size(); ++i) {
    const double p = h1[i] / m1, q = h2[i] / m2;
    if (p < 0.0 || q < 0.0)
      throw std::invalid_argument("jensen_shannon_distance: negative bin");
    const double m = 0.5 * (p + q);
    const double a = p > 0.0 ? p * std::log2(p / m) : 0.0;
    const double b = q > 0.0 ? q * std::log2(q / m) : 0.0;
    js += 0.5 * (a + b);
  }
  return std::sqrt(std::clamp(js, 0.0, 1.0));
}

std::vector<TileFeatures> tile_features(std::span<const TileRecord> tiles) {
  std::vector<TileFeatures> out;
  out.reserve(tiles.size());
  for (const auto &t : tiles)
    out.push_back({t.id, grayscale_entropy(t.image), edge_density(t.image)});
  return out;
}

Representativeness representativeness_report(std::span<const TileRecord> full,
                                             std::span<const std::uint64_t> subset_ids) {
  if (full.empty())
    throw std::invalid_argument("representativeness_report: empty corpus");
  Representativeness r;
  r.features = tile_features(full);
  std::unordered_map<std::uint64_t, std::size_t> index;
  for (std::size_t i = 0; i < full.size(); ++i)
    index.emplace(full[i].id, i);

  std::vector<double> edge_full, entropy_full, edge_sub, entropy_sub;
  for (const auto &f : r.features) {
    edge_full.push_back(f.edge_density);
    entropy_full.push_back(f.entropy);
  }
  for (auto id : subset_ids) {
    const auto it = index.find(id);
    if (it == index.end())
      throw std::invalid_argument("representativeness_report: subset tile " +
                                  std::to_string(id) + " not in corpus");
    edge_sub.push_back(r.features[it->second].edge_density);
    entropy_sub.push_back(r.features[it->second].entropy);
  }
  if (subset_ids.empty())
    throw std::invalid_argument("representativeness_report: empty subset");
  const auto [emin, emax] = std::minmax_element(edge_full.begin(), edge_full.end());
  const auto [hmin, hmax] = std::minmax_element(entropy_full.begin(), entropy_full.end());
  const std::size_t bins = kRepresentativenessBins;
  r.edge_full = make_histogram(edge_full, bins, *emin, *emax);
  r.edge_subset = make_histogram(edge_sub, bins, *emin, *emax);
  r.entropy_full = make_histogram(entropy_full, bins, *hmin, *hmax);
  r.entropy_subset = make_histogram(entropy_sub, bins, *hmin, *hmax);
  r.jsd_edge = jensen_shannon_distance(r.edge_full.mass, r.edge_subset.mass);
  r.jsd_entropy = jensen_shannon_distance(r.entropy_full.mass, r.entropy_subset.mass);
  return r;
}

QualityReport quality_report(std::span<const TileRecord> tiles, double edge_lo,
                             double edge_hi, double entropy_lo,
                             double entropy_hi, std::size_t bins) {
  QualityReport q;
  q.tile_count = tiles.size();
  std::vector<Tensor> masks;
  for (const auto &t : tiles)
    masks.push_back(t.mask);
  try {
    q.fractal = fractal_dimension(masks);
    q.fractal_defined = true;
    if (q.fractal.poor_fit)
      q.warnings.push_back("fractal fit R^2 below 0.9");
  } catch (const std::invalid_argument &e) {
    q.warnings.push_back(std::string("fractal dimension undefined: ") + e.what());
  }
  try {
    q.snr = feature_contrast_snr(tiles);
    q.snr_defined = true;
  } catch (const std::invalid_argument &e) {
    q.warnings.push_back(std::string("snr undefined: ") + e.what());
  }
  const auto disp = corpus_displacement(tiles);
  q.displacement_histogram = disp.histogram();
  q.displacement_gradient_empty = disp.gradient_empty;
  if (disp.gradient_empty)
    q.warnings.push_back("a tile had no strong image gradient; displacements capped");
  if (!disp.distances.empty()) {
    q.displacement_median = disp.median();
    q.displacement_within_tolerance = disp.fraction_within();
  }
  std::vector<double> edges, entropies;
  for (const auto &f : tile_features(tiles)) {
    edges.push_back(f.edge_density);
    entropies.push_back(f.entropy);
  }
  q.edge_histogram = make_histogram(edges, bins, edge_lo, edge_hi);
  q.entropy_histogram = make_histogram(entropies, bins, entropy_lo, entropy_hi);
  return q;
}

} // namespace gseg::dataq
