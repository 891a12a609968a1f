#include "gseg/prototype_bank.hpp"
#include "gseg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

namespace gseg {

PrototypeBank::PrototypeBank(const BankOptions &options) : options_(options) {
  if (options.num_classes == 0 || options.capacity == 0 ||
      options.feature_dim == 0)
    throw std::invalid_argument("prototype bank needs classes, capacity and dim > 0");
  if (!(options.gamma > 0.0))
    throw std::invalid_argument("prototype bank gamma must be positive");
  queues_.resize(options.num_classes);
  for (auto &q : queues_) {
    q.data.assign(options.capacity * options.feature_dim, 0.0);
    q.tags.assign(options.capacity, 0);
  }
}

std::span<const double> PrototypeBank::vector(std::size_t c,
                                              std::size_t k) const {
  const Ring &q = queues_.at(c);
  if (k >= q.size)
    throw std::out_of_range("prototype index out of range");
  const std::size_t slot = (q.head + k) % options_.capacity;
  return {q.data.data() + slot * options_.feature_dim, options_.feature_dim};
}

std::uint64_t PrototypeBank::tag(std::size_t c, std::size_t k) const {
  const Ring &q = queues_.at(c);
  if (k >= q.size)
    throw std::out_of_range("prototype index out of range");
  return q.tags[(q.head + k) % options_.capacity];
}

void PrototypeBank::push(std::size_t c, std::span<const double> v,
                         std::uint64_t tag) {
  if (v.size() != options_.feature_dim)
    throw std::invalid_argument("prototype push: expected dimension " +
                                std::to_string(options_.feature_dim) +
                                ", got " + std::to_string(v.size()));
  append(c, l2_normalize(v), tag);
}

void PrototypeBank::restore(std::size_t c, std::span<const double> unit,
                            std::uint64_t tag) {
  if (unit.size() != options_.feature_dim)
    throw std::invalid_argument("prototype restore: expected dimension " +
                                std::to_string(options_.feature_dim) +
                                ", got " + std::to_string(unit.size()));
  if (std::abs(l2_norm(unit) - 1.0) > 1e-9)
    throw std::invalid_argument("prototype restore: vector is not unit norm");
  append(c, unit, tag);
}

void PrototypeBank::append(std::size_t c, std::span<const double> unit,
                           std::uint64_t tag) {
  Ring &q = queues_.at(c);
  std::size_t slot;
  if (q.size < options_.capacity) {
    slot = (q.head + q.size) % options_.capacity;
    ++q.size;
  } else {
    slot = q.head; // overwrite the oldest
    q.head = (q.head + 1) % options_.capacity;
  }
  std::copy(unit.begin(), unit.end(),
            q.data.begin() + slot * options_.feature_dim);
  q.tags[slot] = tag;
  ++q.pushed;
}

void PrototypeBank::enqueue(std::span<const FeatureSet> per_class,
                            std::uint64_t seed) {
  if (per_class.size() != options_.num_classes)
    throw std::invalid_argument("enqueue: one feature set per class required");
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const FeatureSet &set = per_class[c];
    if (set.count() == 0)
      continue;
    if (set.dim != options_.feature_dim)
      throw std::invalid_argument("enqueue: feature dimension mismatch for class " +
                                  std::to_string(c));

    std::vector<std::size_t> chosen(set.count());
    std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    if (set.count() > options_.per_batch_cap) {
      // Partial Fisher-Yates: the first m slots become a uniform sample.
      Rng rng(derive_seed(seed, {c}));
      for (std::size_t i = 0; i < options_.per_batch_cap; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, chosen.size() - 1);
        std::swap(chosen[i], chosen[pick(rng)]);
      }
      chosen.resize(options_.per_batch_cap);
      std::sort(chosen.begin(), chosen.end());
    }
    for (std::size_t idx : chosen)
      push(c, set.row(idx), set.source_pixel[idx]);
  }
}

double PrototypeBank::reliability_weight(std::span<const double> v,
                                         std::size_t c) const {
  const Ring &q = queues_.at(c);
  if (v.size() != options_.feature_dim)
    throw std::invalid_argument("reliability_weight: dimension mismatch");
  const double norm = l2_norm(v);
  if (norm == 0.0)
    throw std::invalid_argument("reliability_weight: zero feature vector");
  if (q.size == 0)
    return 1.0;
  const std::size_t d = options_.feature_dim;
  double best = -1.0;
  for (std::size_t k = 0; k < q.size; ++k) {
    const double *proto = q.data.data() + ((q.head + k) % options_.capacity) * d;
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      dot += v[i] * proto[i];
    best = std::max(best, dot);
  }
  const double sim = std::clamp(best / norm, 0.0, 1.0);
  return std::pow(sim, options_.gamma);
}

bool PrototypeBank::operator==(const PrototypeBank &other) const {
  if (options_.num_classes != other.options_.num_classes ||
      options_.capacity != other.options_.capacity ||
      options_.feature_dim != other.options_.feature_dim ||
      options_.gamma != other.options_.gamma ||
      options_.per_batch_cap != other.options_.per_batch_cap)
    return false;
  for (std::size_t c = 0; c < options_.num_classes; ++c) {
    if (size(c) != other.size(c) || fill_count(c) != other.fill_count(c))
      return false;
    for (std::size_t k = 0; k < size(c); ++k) {
      const auto a = vector(c, k), b = other.vector(c, k);
      if (!std::equal(a.begin(), a.end(), b.begin()) || tag(c, k) != other.tag(c, k))
        return false;
    }
  }
  return true;
}

std::vector<FeatureSet> collect_valid_features(const Tensor &features,
                                               const Tensor &pseudo_labels,
                                               const Tensor &mask,
                                               std::size_t num_classes) {
  if (features.rank() != 4 || pseudo_labels.rank() != 3 || mask.rank() != 3 ||
      pseudo_labels.shape != mask.shape ||
      pseudo_labels.dim(0) != features.dim(0) ||
      pseudo_labels.dim(1) != features.dim(2) ||
      pseudo_labels.dim(2) != features.dim(3)) {
    throw std::invalid_argument(
        "collect_valid_features: shape mismatch between features " +
        shape_to_string(features.shape) + ", labels " +
        shape_to_string(pseudo_labels.shape) + " and mask " +
        shape_to_string(mask.shape));
  }
  const std::size_t n = features.dim(0), d = features.dim(1);
  const std::size_t plane = features.dim(2) * features.dim(3);
  std::vector<FeatureSet> out(num_classes);
  for (auto &set : out)
    set.dim = d;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t flat = b * plane + i;
      if (mask.data[flat] != 1.0)
        continue;
      const auto c = static_cast<std::size_t>(pseudo_labels.data[flat]);
      if (c >= num_classes)
        throw std::invalid_argument("collect_valid_features: label out of range");
      FeatureSet &set = out[c];
      for (std::size_t k = 0; k < d; ++k)
        set.values.push_back(features.data[(b * d + k) * plane + i]);
      set.source_pixel.push_back(flat);
    }
  }
  return out;
}

Tensor weight_map(const PrototypeBank &bank, const Tensor &features,
                  const Tensor &pseudo_labels, std::size_t out_h,
                  std::size_t out_w) {
  if (features.rank() != 4 || pseudo_labels.rank() != 3 ||
      pseudo_labels.dim(0) != features.dim(0) ||
      pseudo_labels.dim(1) != features.dim(2) ||
      pseudo_labels.dim(2) != features.dim(3))
    throw std::invalid_argument("weight_map: features/labels shape mismatch");
  const std::size_t n = features.dim(0), d = features.dim(1);
  const std::size_t plane = features.dim(2) * features.dim(3);
  Tensor omega({n, features.dim(2), features.dim(3)}, TensorKind::weights, 1.0);
  std::vector<double> v(d);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < plane; ++i) {
      const auto c = static_cast<std::size_t>(pseudo_labels.data[b * plane + i]);
      if (bank.empty(c))
        continue;
      for (std::size_t k = 0; k < d; ++k)
        v[k] = features.data[(b * d + k) * plane + i];
      omega.data[b * plane + i] = bank.reliability_weight(v, c);
    }
  }
  return resize_nearest(omega, out_h, out_w);
}

std::vector<std::filesystem::path>
export_bank(const PrototypeBank &bank, const std::filesystem::path &dir,
            std::size_t epoch) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  const std::size_t d = bank.options().feature_dim;
  for (std::size_t c = 0; c < bank.num_classes(); ++c) {
    auto path = dir / ("bank_class" + std::to_string(c) + "_epoch" +
                       std::to_string(epoch) + ".csv");
    std::ofstream os(path);
    if (!os)
      throw std::runtime_error("cannot write " + path.string());
    for (std::size_t k = 0; k < d; ++k)
      os << (k ? "," : "") << 'f' << k;
    os << '\n';
    char buf[32];
    for (std::size_t row = 0; row < bank.size(c); ++row) {
      const auto v = bank.vector(c, row);
      for (std::size_t k = 0; k < d; ++k) {
        std::snprintf(buf, sizeof(buf), "%.17g", v[k]);
        os << (k ? "," : "") << buf;
      }
      os << '\n';
    }
    paths.push_back(std::move(path));
  }
  return paths;
}

std::vector<std::vector<double>>
read_bank_csv(const std::filesystem::path &path) {
  std::ifstream is(path);
  if (!is)
    throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(is, line); // header
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty())
      continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
      row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

} // namespace gseg

namespace gseg {

void PrototypeBank::set_fill_count(std::size_t c, std::uint64_t pushed) {
  auto &q = queues_.at(c);
  if (pushed < q.size)
    throw std::invalid_argument("set_fill_count: fewer pushes than stored vectors");
  q.pushed = pushed;
}

} // namespace gseg
