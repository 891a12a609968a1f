#pragma once

// Per-class FIFO memory of unit-norm encoder features and the reliability
// weight omega = max_k <v, Q_c,k>^gamma derived from it.

#include "gseg/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace gseg {

// Candidate features for one class, with the flat pixel index
// (n * h * w + y * w + x) each vector was read from.
struct FeatureSet {
  std::size_t dim = 0;
  std::vector<double> values; // row-major [count, dim]
  std::vector<std::uint64_t> source_pixel;

  std::size_t count() const { return source_pixel.size(); }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * dim, dim};
  }
};

struct BankOptions {
  std::size_t num_classes = 2;
  std::size_t capacity = 256;    // K
  std::size_t feature_dim = 16;  // d
  double gamma = 2.0;
  std::size_t per_batch_cap = 64; // m

  bool operator==(const BankOptions &) const = default;
};

class PrototypeBank {
public:
  PrototypeBank() = default;
  explicit PrototypeBank(const BankOptions &options);

  const BankOptions &options() const { return options_; }
  std::size_t num_classes() const { return options_.num_classes; }
  std::size_t size(std::size_t c) const { return queues_.at(c).size; }
  bool empty(std::size_t c) const { return size(c) == 0; }
  // Total vectors ever pushed into class c, including evicted ones.
  std::uint64_t fill_count(std::size_t c) const { return queues_.at(c).pushed; }
  // Checkpoint restore only; must not be less than size(c).
  void set_fill_count(std::size_t c, std::uint64_t pushed);

  // k-th stored vector of class c in insertion order (0 = oldest).
  std::span<const double> vector(std::size_t c, std::size_t k) const;
  std::uint64_t tag(std::size_t c, std::size_t k) const;

  // Appends one vector (normalised on entry), evicting the oldest at
  // capacity. `tag` is carried alongside for provenance checks.
  void push(std::size_t c, std::span<const double> v, std::uint64_t tag = 0);
  // Appends an already unit-norm vector verbatim (checkpoint restore).
  void restore(std::size_t c, std::span<const double> unit, std::uint64_t tag);

  // Subsamples min(count, m) candidates per class without replacement
  // (kept in candidate order) and pushes them. Tags record source pixels.
  void enqueue(std::span<const FeatureSet> per_class, std::uint64_t seed);

  // omega for a single feature against Q_c; 1 when Q_c is empty.
  double reliability_weight(std::span<const double> v, std::size_t c) const;

  bool operator==(const PrototypeBank &other) const;

private:
  void append(std::size_t c, std::span<const double> unit, std::uint64_t tag);

  struct Ring {
    std::vector<double> data; // capacity * dim
    std::vector<std::uint64_t> tags;
    std::size_t head = 0; // index of the oldest entry
    std::size_t size = 0;
    std::uint64_t pushed = 0;
  };

  BankOptions options_;
  std::vector<Ring> queues_;
};

// V_c = { v[i] : pseudo[i] == c and mask[i] == 1 }. `features` is
// [N, d, h, w]; `pseudo_labels` and `mask` are [N, h, w].
std::vector<FeatureSet> collect_valid_features(const Tensor &features,
                                               const Tensor &pseudo_labels,
                                               const Tensor &mask,
                                               std::size_t num_classes);

// Per-pixel omega at feature resolution, nearest-upsampled to
// [N, out_h, out_w].
Tensor weight_map(const PrototypeBank &bank, const Tensor &features,
                  const Tensor &pseudo_labels, std::size_t out_h,
                  std::size_t out_w);

// Writes <dir>/bank_class{c}_epoch{epoch}.csv for every class, header
// f0..f{d-1}, one row per stored vector oldest first. Returns the paths.
std::vector<std::filesystem::path>
export_bank(const PrototypeBank &bank, const std::filesystem::path &dir,
            std::size_t epoch);

// Reads one exported class file back into row vectors.
std::vector<std::vector<double>> read_bank_csv(const std::filesystem::path &path);

} // namespace gseg
