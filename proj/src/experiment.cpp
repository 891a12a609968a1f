#include "gseg/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <stdexcept>

namespace gseg {

std::vector<TileRecord> Dataset::select(std::span<const std::uint64_t> ids) const {
  std::map<std::uint64_t, const TileRecord *> by_id;
  for (const auto &t : tiles)
    by_id[t.id] = &t;
  std::vector<TileRecord> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end())
      throw std::invalid_argument("dataset has no tile " + std::to_string(id));
    out.push_back(*it->second);
  }
  return out;
}

synth::BudgetSplit Dataset::budget(double fraction) const {
  for (const auto &b : splits.budgets)
    if (std::abs(b.fraction - fraction) < 1e-12)
      return b;
  return splits.budget(fraction);
}

Dataset build_dataset(const ExperimentConfig &config) {
  Dataset d;
  synth::SynthSpec spec = config.corpus;
  spec.seed = config.seed;
  d.tiles = synth::generate_corpus(spec, config.n_tiles);
  d.splits = synth::make_splits(d.tiles, config.splits, config.seed);
  return d;
}

Dataset dataset_from_manifest(io::LoadedCorpus corpus) {
  Dataset d;
  d.tiles = std::move(corpus.tiles);
  std::map<double, std::vector<std::uint64_t>> labeled;
  std::vector<std::pair<double, std::uint64_t>> order;
  for (const auto &r : corpus.rows) {
    if (r.split == "train") {
      d.splits.train.push_back(r.id);
      const double first =
          r.labeled_in.empty() ? 2.0 : *std::min_element(r.labeled_in.begin(), r.labeled_in.end());
      order.emplace_back(first, r.id);
      for (double b : r.labeled_in)
        labeled[b].push_back(r.id);
    } else if (r.split == "val") {
      d.splits.val.push_back(r.id);
    } else if (r.split == "test") {
      d.splits.test.push_back(r.id);
    } else {
      throw std::runtime_error("manifest tile " + std::to_string(r.id) +
                               " has unknown split '" + r.split + "'");
    }
  }
  std::sort(d.splits.train.begin(), d.splits.train.end());
  std::sort(d.splits.val.begin(), d.splits.val.end());
  std::sort(d.splits.test.begin(), d.splits.test.end());
  std::sort(order.begin(), order.end());
  for (const auto &o : order)
    d.splits.train_order.push_back(o.second);
  for (auto &[fraction, ids] : labeled) {
    synth::BudgetSplit b;
    b.fraction = fraction;
    std::sort(ids.begin(), ids.end());
    b.labeled = ids;
    std::set_difference(d.splits.train.begin(), d.splits.train.end(), ids.begin(), ids.end(),
                        std::back_inserter(b.unlabeled));
    d.splits.budgets.push_back(std::move(b));
  }
  return d;
}

CellResult run_cell(const Dataset &data, const ExperimentConfig &config, Method method,
                    double budget, std::uint64_t seed, const RunOptions &options) {
  const auto start = std::chrono::steady_clock::now();
  const TrainConfig train = config.train_config(method, seed);
  const synth::BudgetSplit split = data.budget(budget);
  const auto labeled = data.select(split.labeled);
  const auto unlabeled = switches_for(method).use_unlabeled
                             ? data.select(split.unlabeled)
                             : std::vector<TileRecord>{};
  TrainingState state = initial_state(train);
  BatchSampler sampler(labeled, unlabeled, train);
  run_training(state, train, sampler, options);

  CellResult r;
  r.method = method;
  r.budget = budget;
  r.seed = seed;
  r.test = evaluate(state.model, data.select(data.splits.test));
  if (!data.splits.val.empty())
    r.val = evaluate(state.model, data.select(data.splits.val));
  r.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

double median(std::vector<double> values) {
  if (values.empty())
    throw std::invalid_argument("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

} // namespace gseg
