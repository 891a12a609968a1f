#pragma once

// One seeded experiment cell: corpus + splits + training + held-out scores.

#include "gseg/config.hpp"
#include "gseg/io.hpp"
#include "gseg/synth.hpp"
#include "gseg/trainer.hpp"

#include <cstdint>
#include <vector>

namespace gseg {

struct Dataset {
  std::vector<TileRecord> tiles;
  synth::Splits splits;

  std::vector<TileRecord> select(std::span<const std::uint64_t> ids) const;
  synth::BudgetSplit budget(double fraction) const;
};

Dataset build_dataset(const ExperimentConfig &config);
// Splits recorded in a manifest (split column, labeled budgets) instead of
// recomputed ones.
Dataset dataset_from_manifest(io::LoadedCorpus corpus);

struct CellResult {
  Method method = Method::full;
  double budget = 0.0;
  std::uint64_t seed = 0;
  SegmentationScore test;
  SegmentationScore val;
  double seconds = 0.0;
};

CellResult run_cell(const Dataset &data, const ExperimentConfig &config, Method method,
                    double budget, std::uint64_t seed, const RunOptions &options = {});

double median(std::vector<double> values);

} // namespace gseg
