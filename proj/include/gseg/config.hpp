#pragma once

// Experiment configuration: one YAML document holding the corpus, split
// protocol, method, hyperparameters and the ablation matrix.

#include "gseg/synth.hpp"
#include "gseg/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace gseg {

// Thrown for malformed or out-of-range configuration (CLI exit code 2).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct AblationMatrix {
  std::vector<Method> methods{std::begin(kAllMethods), std::end(kAllMethods)};
  std::vector<double> budgets{0.10, 0.20, 0.30};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  bool operator==(const AblationMatrix &) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0; // corpus, splits and training
  std::size_t n_tiles = 1000;
  synth::SynthSpec corpus = [] {
    auto s = synth::medium_contrast_spec();
    s.seed = 0;
    return s;
  }();
  synth::SplitProtocol splits;
  double budget = 0.10;
  TrainConfig train;
  std::size_t checkpoint_every = 500;
  std::size_t bank_export_every_epochs = 0; // 0: no periodic bank export
  AblationMatrix ablation;
  std::string output_dir = "out";

  // Throws ConfigError.
  void validate() const;
  // Training config with the experiment seed folded in.
  TrainConfig train_config(Method method, std::uint64_t train_seed) const;
  bool operator==(const ExperimentConfig &) const = default;
};

// Budgets accepted besides the protocol fractions.
inline constexpr double kFullBudget = 1.0;

ExperimentConfig parse_config(const std::string &yaml_text);
ExperimentConfig load_config(const std::filesystem::path &path);
std::string dump_config(const ExperimentConfig &config);
void save_config(const ExperimentConfig &config, const std::filesystem::path &path);

} // namespace gseg
