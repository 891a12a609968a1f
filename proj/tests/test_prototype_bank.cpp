#include "gseg/prototype_bank.hpp"
#include "gseg/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <deque>
#include <filesystem>
#include <set>

using namespace gseg;

namespace {

std::vector<double> random_vec(Rng &rng, std::size_t d) {
  std::normal_distribution<double> n;
  std::vector<double> v(d);
  for (auto &x : v)
    x = n(rng);
  return v;
}

std::vector<double> unit(std::vector<double> v) {
  double s = 0;
  for (double x : v)
    s += x * x;
  for (auto &x : v)
    x /= std::sqrt(s);
  return v;
}

FeatureSet make_set(Rng &rng, std::size_t count, std::size_t d, std::uint64_t first_tag) {
  FeatureSet s;
  s.dim = d;
  for (std::size_t i = 0; i < count; ++i) {
    const auto v = random_vec(rng, d);
    s.values.insert(s.values.end(), v.begin(), v.end());
    s.source_pixel.push_back(first_tag + i);
  }
  return s;
}

struct Entry {
  std::vector<double> v;
  std::uint64_t tag;
};

void check_equal(const PrototypeBank &bank, std::size_t c, const std::deque<Entry> &ref) {
  REQUIRE(bank.size(c) == ref.size());
  for (std::size_t k = 0; k < ref.size(); ++k) {
    const auto v = bank.vector(c, k);
    CHECK(std::equal(v.begin(), v.end(), ref[k].v.begin()));
    CHECK(bank.tag(c, k) == ref[k].tag);
  }
}

} // namespace

TEST_SUITE("prototype_bank") {

TEST_CASE("collect_valid_features examples") {
  Tensor v({1, 2, 2, 4}, TensorKind::features);
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = static_cast<double>(i) + 1.0;
  Tensor y({1, 2, 4}, TensorKind::labels);
  Tensor m({1, 2, 4}, TensorKind::mask);
  auto sets = collect_valid_features(v, y, m, 2);
  CHECK(sets[0].count() == 0);
  CHECK(sets[1].count() == 0);

  std::fill(m.data.begin(), m.data.end(), 1.0);
  sets = collect_valid_features(v, y, m, 2);
  CHECK(sets[0].count() == 8);
  CHECK(sets[1].count() == 0);
  CHECK(sets[0].row(3)[0] == 4.0);
  CHECK(sets[0].row(3)[1] == 12.0);

  y.data = {1, 1, 0, 1, 0, 1, 0, 0};
  m.data = {1, 1, 1, 0, 1, 0, 0, 1};
  sets = collect_valid_features(v, y, m, 2);
  CHECK(sets[1].count() == 2);
  y.data = {1, 1, 0, 0, 1, 0, 0, 0};
  m.data = {1, 1, 0, 0, 1, 0, 0, 0};
  sets = collect_valid_features(v, y, m, 2);
  CHECK(sets[1].count() == 3);
  CHECK(sets[1].source_pixel == std::vector<std::uint64_t>{0, 1, 4});

  Tensor bad({1, 2, 3}, TensorKind::mask);
  CHECK_THROWS_AS(collect_valid_features(v, y, bad, 2), std::invalid_argument);
}

TEST_CASE("enqueue examples") {
  Rng rng(1);
  BankOptions o{2, 8, 4, 2.0, 6};
  PrototypeBank bank(o);
  std::vector<FeatureSet> sets{make_set(rng, 5, 4, 0), FeatureSet{4, {}, {}}};
  bank.enqueue(sets, 7);
  CHECK(bank.size(0) == 5);
  for (std::size_t k = 0; k < 5; ++k)
    CHECK(bank.tag(0, k) == k);

  sets[0] = make_set(rng, 16, 4, 100);
  bank.enqueue(sets, 8);
  CHECK(bank.size(0) == 8);
  CHECK(bank.fill_count(0) == 11);

  PrototypeBank fresh(o);
  sets[0] = make_set(rng, o.per_batch_cap + 10, 4, 0);
  fresh.enqueue(sets, 3);
  CHECK(fresh.size(0) == o.per_batch_cap);

  sets[0].dim = 3;
  CHECK_THROWS_AS(fresh.enqueue(sets, 3), std::invalid_argument);
  CHECK_THROWS_AS(fresh.push(0, std::vector<double>{1, 2, 3}), std::invalid_argument);
}

TEST_CASE("FIFO at capacity drops the oldest") {
  PrototypeBank bank({1, 3, 2, 2.0, 64});
  for (std::uint64_t t = 0; t < 4; ++t)
    bank.push(0, std::vector<double>{1.0 + t, 1.0}, t);
  CHECK(bank.size(0) == 3);
  CHECK(bank.tag(0, 0) == 1);
  CHECK(bank.tag(0, 2) == 3);
}

TEST_CASE("contents match a brute-force FIFO over 10^4 seeded pushes") {
  Rng rng(99);
  BankOptions o{3, 37, 5, 2.0, 64};
  PrototypeBank bank(o);
  std::vector<std::deque<Entry>> ref(3);
  for (std::uint64_t t = 0; t < 10000; ++t) {
    const std::size_t c = static_cast<std::size_t>(uniform01(rng) * 3.0);
    const auto v = random_vec(rng, 5);
    bank.push(c, v, t);
    ref[c].push_back({unit(v), t});
    if (ref[c].size() > o.capacity)
      ref[c].pop_front();
    for (std::size_t k = 0; k < 3; ++k)
      CHECK(bank.size(k) <= o.capacity);
    if (t % 997 == 0)
      for (std::size_t k = 0; k < 3; ++k)
        check_equal(bank, k, ref[k]);
  }
  for (std::size_t k = 0; k < 3; ++k) {
    // Unit normalisation is the only transform applied on the way in.
    REQUIRE(bank.size(k) == ref[k].size());
    for (std::size_t i = 0; i < ref[k].size(); ++i) {
      const auto v = bank.vector(k, i);
      double norm = 0;
      for (std::size_t j = 0; j < 5; ++j) {
        CHECK(std::abs(v[j] - ref[k][i].v[j]) < 1e-15);
        norm += v[j] * v[j];
      }
      CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-9);
      CHECK(bank.tag(k, i) == ref[k][i].tag);
    }
  }
}

TEST_CASE("enqueue equals a FIFO fed by its selected candidates, in candidate order") {
  Rng rng(5);
  BankOptions o{2, 50, 4, 2.0, 8};
  PrototypeBank bank(o);
  std::vector<std::deque<Entry>> ref(2);
  std::uint64_t next_tag = 0;
  for (int round = 0; round < 300; ++round) {
    std::vector<FeatureSet> sets;
    for (std::size_t c = 0; c < 2; ++c) {
      const std::size_t count = static_cast<std::size_t>(uniform01(rng) * 20.0);
      sets.push_back(make_set(rng, count, 4, next_tag));
      next_tag += count;
    }
    std::vector<std::uint64_t> before(2);
    for (std::size_t c = 0; c < 2; ++c)
      before[c] = bank.fill_count(c);
    bank.enqueue(sets, derive_seed(1, {static_cast<std::uint64_t>(round)}));
    for (std::size_t c = 0; c < 2; ++c) {
      const std::size_t added = bank.fill_count(c) - before[c];
      CHECK(added == std::min(sets[c].count(), o.per_batch_cap));
      // Recover the chosen candidates from the tail tags.
      std::vector<std::uint64_t> tags;
      for (std::size_t k = bank.size(c) - added; k < bank.size(c); ++k)
        tags.push_back(bank.tag(c, k));
      CHECK(std::is_sorted(tags.begin(), tags.end()));
      CHECK(std::set<std::uint64_t>(tags.begin(), tags.end()).size() == tags.size());
      for (auto t : tags) {
        const auto it =
            std::find(sets[c].source_pixel.begin(), sets[c].source_pixel.end(), t);
        REQUIRE(it != sets[c].source_pixel.end());
        const auto row = sets[c].row(static_cast<std::size_t>(it - sets[c].source_pixel.begin()));
        ref[c].push_back({unit({row.begin(), row.end()}), t});
        if (ref[c].size() > o.capacity)
          ref[c].pop_front();
      }
      REQUIRE(bank.size(c) == ref[c].size());
      for (std::size_t k = 0; k < ref[c].size(); ++k) {
        CHECK(bank.tag(c, k) == ref[c][k].tag);
        const auto v = bank.vector(c, k);
        for (std::size_t j = 0; j < 4; ++j)
          CHECK(std::abs(v[j] - ref[c][k].v[j]) < 1e-15);
      }
    }
  }
}

TEST_CASE("subsampling is uniform without replacement") {
  BankOptions o{1, 4096, 2, 2.0, 10};
  Rng rng(3);
  const FeatureSet set = make_set(rng, 40, 2, 0);
  std::vector<int> hits(40, 0);
  const int trials = 4000;
  for (int t = 0; t < trials; ++t) {
    PrototypeBank bank(o);
    bank.enqueue(std::vector<FeatureSet>{set}, static_cast<std::uint64_t>(t));
    for (std::size_t k = 0; k < bank.size(0); ++k)
      ++hits[bank.tag(0, k)];
  }
  const double p = 10.0 / 40.0;
  const double expect = trials * p, sigma = std::sqrt(trials * p * (1 - p));
  for (int h : hits)
    CHECK(std::abs(h - expect) < 4.5 * sigma);
}

TEST_CASE("enqueue is deterministic per seed") {
  Rng rng(12);
  const auto set = make_set(rng, 200, 3, 0);
  PrototypeBank a({1, 100, 3, 2.0, 64}), b({1, 100, 3, 2.0, 64});
  a.enqueue(std::vector<FeatureSet>{set}, 42);
  b.enqueue(std::vector<FeatureSet>{set}, 42);
  CHECK(a == b);
  PrototypeBank c({1, 100, 3, 2.0, 64});
  c.enqueue(std::vector<FeatureSet>{set}, 43);
  CHECK_FALSE(a == c);
}

TEST_CASE("reliability weight examples") {
  PrototypeBank bank({2, 16, 2, 2.0, 64});
  const std::vector<double> e0{1, 0};
  CHECK(bank.reliability_weight(e0, 0) == 1.0);
  bank.push(0, e0);
  CHECK(bank.reliability_weight(e0, 0) == 1.0);
  CHECK(bank.reliability_weight(std::vector<double>{3, 0}, 0) == 1.0);
  const std::vector<double> at60{0.5, std::sqrt(3.0) / 2.0};
  CHECK(std::abs(bank.reliability_weight(at60, 0) - 0.25) < 1e-12);
  CHECK(bank.reliability_weight(std::vector<double>{0, 1}, 0) == 0.0);
  CHECK(bank.reliability_weight(std::vector<double>{-1, 0.1}, 0) == 0.0);
  CHECK(bank.reliability_weight(std::vector<double>{-1, 0}, 1) == 1.0);
  CHECK_THROWS_AS(bank.reliability_weight(std::vector<double>{0, 0}, 0), std::invalid_argument);
}

TEST_CASE("omega matches (sim, gamma) hand values") {
  for (double gamma : {1.0, 2.0, 3.0, 0.5}) {
    PrototypeBank bank({1, 4, 2, gamma, 64});
    bank.push(0, std::vector<double>{1, 0});
    for (double angle = 0.0; angle < 3.2; angle += 0.05) {
      const std::vector<double> v{std::cos(angle), std::sin(angle)};
      const double sim = std::cos(angle);
      const double expect = sim <= 0 ? 0.0 : std::pow(sim, gamma);
      CHECK(std::abs(bank.reliability_weight(v, 0) - expect) < 1e-12);
    }
  }
}

TEST_CASE("omega stays in [0, 1] and grows with similarity") {
  Rng rng(31);
  PrototypeBank bank({1, 64, 6, 2.0, 64});
  for (int i = 0; i < 40; ++i)
    bank.push(0, random_vec(rng, 6));
  for (int i = 0; i < 500; ++i) {
    const double w = bank.reliability_weight(random_vec(rng, 6), 0);
    CHECK(w >= 0.0);
    CHECK(w <= 1.0);
  }
  PrototypeBank single({1, 4, 2, 2.0, 64});
  single.push(0, std::vector<double>{1, 0});
  double prev = -1;
  for (double angle = 3.1; angle >= 0.0; angle -= 0.1) {
    const double w = single.reliability_weight(std::vector<double>{std::cos(angle), std::sin(angle)}, 0);
    CHECK(w >= prev);
    prev = w;
  }
}

TEST_CASE("weight_map examples") {
  PrototypeBank bank({2, 8, 2, 2.0, 64});
  Tensor v({1, 2, 2, 2}, TensorKind::features);
  // Feature pixels (x, y) components: sims vs e0 of 1, 0.5, 0, 1.
  const double s = std::sqrt(3.0) / 2.0;
  v.data = {1, 0.5, 0, 2, /* channel 1 */ 0, s, 1, 0};
  Tensor y({1, 2, 2}, TensorKind::labels);
  auto w = weight_map(bank, v, y, 4, 4);
  for (double x : w.data)
    CHECK(x == 1.0);

  bank.push(0, std::vector<double>{1, 0});
  w = weight_map(bank, v, y, 2, 2);
  CHECK(w.data[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(w.data[1] - 0.25) < 1e-12);
  CHECK(w.data[2] == 0.0);
  CHECK(w.data[3] == 1.0);

  const auto up = weight_map(bank, v, y, 4, 4);
  CHECK(up.shape == Shape{1, 4, 4});
  CHECK(std::abs(up.data[2] - 0.25) < 1e-12);
  CHECK(std::abs(up.data[7] - 0.25) < 1e-12);
  CHECK(up.data[8] == 0.0);

  // Features identical to the stored prototype of their class.
  PrototypeBank both({2, 8, 2, 2.0, 64});
  both.push(0, std::vector<double>{1, 0});
  both.push(1, std::vector<double>{0, 1});
  Tensor f({1, 2, 1, 2}, {1, 0, 0, 1}, TensorKind::features);
  Tensor lab({1, 1, 2}, {0, 1}, TensorKind::labels);
  for (double x : weight_map(both, f, lab, 2, 4).data)
    CHECK(x == 1.0);
}

TEST_CASE("export and read back") {
  const auto dir = std::filesystem::temp_directory_path() / "gseg_bank_export";
  std::filesystem::remove_all(dir);
  PrototypeBank bank({2, 8, 3, 2.0, 64});
  auto paths = export_bank(bank, dir, 0);
  REQUIRE(paths.size() == 2);
  CHECK(paths[0].filename() == "bank_class0_epoch0.csv");
  CHECK(read_bank_csv(paths[0]).empty());

  Rng rng(6);
  std::vector<std::vector<double>> stored;
  for (int i = 0; i < 3; ++i) {
    const auto v = random_vec(rng, 3);
    bank.push(1, v);
    stored.push_back(unit(v));
  }
  paths = export_bank(bank, dir, 4);
  CHECK(paths[1].filename() == "bank_class1_epoch4.csv");
  const auto rows = read_bank_csv(paths[1]);
  REQUIRE(rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(std::abs(rows[i][j] - stored[i][j]) < 1e-9);
  std::filesystem::remove_all(dir);
}

TEST_CASE("stored tags come only from admitted pixels") {
  Rng rng(77);
  PrototypeBank bank({2, 32, 3, 2.0, 5});
  for (int round = 0; round < 200; ++round) {
    Tensor v({2, 3, 3, 3}, TensorKind::features);
    for (auto &x : v.data)
      x = 0.1 + uniform01(rng);
    Tensor y({2, 3, 3}, TensorKind::labels), m({2, 3, 3}, TensorKind::mask);
    for (std::size_t i = 0; i < y.size(); ++i) {
      y.data[i] = uniform01(rng) < 0.3 ? 1.0 : 0.0;
      m.data[i] = uniform01(rng) < 0.4 ? 1.0 : 0.0;
    }
    const std::vector<std::uint64_t> before{bank.fill_count(0), bank.fill_count(1)};
    bank.enqueue(collect_valid_features(v, y, m, 2), static_cast<std::uint64_t>(round));
    for (std::size_t c = 0; c < 2; ++c) {
      const std::size_t added = bank.fill_count(c) - before[c];
      for (std::size_t k = bank.size(c) - std::min<std::size_t>(added, bank.size(c));
           k < bank.size(c); ++k) {
        const auto px = bank.tag(c, k);
        CHECK(m.data[px] == 1.0);
        CHECK(y.data[px] == static_cast<double>(c));
      }
    }
  }
}

}
