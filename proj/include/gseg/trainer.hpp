#pragma once

// Weak-to-strong consistency training of the toy model: labeled, weak,
// two strong (CutMix) and one feature-perturbed stream, gated by adaptive
// thresholds and weighted by prototype-bank reliability.

#include "gseg/augment.hpp"
#include "gseg/caat.hpp"
#include "gseg/model.hpp"
#include "gseg/objective.hpp"
#include "gseg/prototype_bank.hpp"
#include "gseg/tile.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gseg {

enum class Method { supervised, static_threshold, caat_only, bank_only, full };

const char *to_string(Method method);
std::optional<Method> parse_method(const std::string &text);
inline constexpr Method kAllMethods[] = {Method::supervised, Method::static_threshold,
                                         Method::caat_only, Method::bank_only,
                                         Method::full};

struct MethodSwitches {
  bool use_unlabeled = false;
  bool adaptive_thresholds = false;
  bool use_bank = false;
};
MethodSwitches switches_for(Method method);

struct OptimizerConfig {
  double learning_rate = 0.02;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double poly_power = 0.9;

  bool operator==(const OptimizerConfig &) const = default;
};

struct ThresholdConfig {
  double momentum = caat::kDefaultMomentum;
  double tau_min = caat::kDefaultTauMin;
  double tau_max = caat::kDefaultTauMax;
  double static_tau = 0.95;

  bool operator==(const ThresholdConfig &) const = default;
};

struct TrainConfig {
  Method method = Method::full;
  ModelShape model;
  OptimizerConfig optimizer;
  ThresholdConfig thresholds;
  BankOptions bank;
  augment::AugmentSpec augment;
  std::size_t labeled_batch = 8;
  std::size_t unlabeled_batch = 8;
  std::size_t total_steps = 2000;
  std::size_t warmup_steps = 0;      // unlabeled losses off before this step
  double unlabeled_weight = 1.0;
  double minority_oversample = 2.0;  // sampling weight of Slum/Mixed tiles
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig &) const = default;
};

struct OptimizerState {
  OptimizerConfig config;
  std::size_t total_steps = 1;
  std::uint64_t step = 0;
  std::vector<double> velocity;

  double current_lr() const;
  bool operator==(const OptimizerState &) const = default;
};

// SGD with momentum and L2 weight decay, poly-decayed learning rate.
void sgd_step(std::vector<double> &params, std::span<const double> grad,
              OptimizerState &state);

// Inputs of the unlabeled streams with all pseudo-label quantities fixed.
struct UnlabeledInputs {
  Tensor weak_image;  // [N, 3, H, W]
  Tensor strong1, strong2;
  Tensor pseudo1, mask1, omega1; // co-mixed with strong1
  Tensor pseudo2, mask2, omega2; // co-mixed with strong2
  Tensor pseudo_weak, mask_weak; // FP stream targets
  std::vector<double> fp_channel_scale; // [N * d]
};

struct ObjectiveInputs {
  Tensor labeled_image; // [N, 3, H, W]
  Tensor labels;        // [N, H, W]
  std::optional<UnlabeledInputs> unlabeled;
  double unlabeled_weight = 1.0;
  // Optional cached encoder pass over unlabeled->weak_image.
  const EncoderTrace *weak_trace = nullptr;
};

struct ObjectiveResult {
  objective::LossBreakdown losses;
  std::vector<double> gradient; // empty unless requested
};

// Forward every stream, assemble the total objective and (optionally) its
// exact gradient with respect to the model parameters.
ObjectiveResult compute_objective(const ToyModel &model,
                                  const ObjectiveInputs &inputs,
                                  bool want_gradient);

struct TrainingState {
  ToyModel model;
  OptimizerState optimizer;
  caat::ThresholdState thresholds;
  PrototypeBank bank;

  bool operator==(const TrainingState &) const = default;
};

TrainingState initial_state(const TrainConfig &config);

struct LabeledBatch {
  Tensor images; // [B, 3, H, W]
  Tensor labels; // [B, H, W]
};

struct UnlabeledBatch {
  Tensor weak_images; // [B, 3, H, W], already weakly augmented
};

struct StepSeeds {
  std::uint64_t strong = 0;
  std::uint64_t perturb = 0;
  std::uint64_t bank = 0;
};

StepSeeds step_seeds(std::uint64_t seed, std::uint64_t step);

// Stage names of one training step, in execution order.
inline constexpr const char *kStepOrder[] = {
    "weak_forward", "class_confidence", "threshold_update", "admission_mask",
    "reliability_weights", "strong_and_fp_forward", "total_loss", "backward",
    "sgd_update", "bank_enqueue"};

// One optimisation step. `unlabeled` is ignored by the supervised method.
objective::LossBreakdown train_step(TrainingState &state, const TrainConfig &config,
                                    const LabeledBatch &labeled,
                                    const UnlabeledBatch *unlabeled,
                                    const StepSeeds &seeds);

// Deterministic batch drawing from tile pools.
class BatchSampler {
public:
  BatchSampler(std::span<const TileRecord> labeled,
               std::span<const TileRecord> unlabeled, const TrainConfig &config);

  LabeledBatch labeled_batch(std::uint64_t step) const;
  UnlabeledBatch unlabeled_batch(std::uint64_t step) const;
  bool has_unlabeled() const { return !unlabeled_.empty(); }

private:
  std::span<const TileRecord> labeled_;
  std::span<const TileRecord> unlabeled_;
  TrainConfig config_;
  std::vector<double> labeled_cdf_;
};

struct SegmentationScore {
  std::vector<std::optional<double>> per_class_iou; // nullopt: class absent everywhere
  double miou = 0.0;
  std::vector<std::uint64_t> confusion; // [truth * C + prediction]
};

// Accumulates a confusion matrix; IoU_c = TP / (TP + FP + FN).
SegmentationScore score_predictions(std::span<const Tensor> predictions,
                                    std::span<const Tensor> truths,
                                    std::size_t num_classes);

SegmentationScore evaluate(const ToyModel &model, std::span<const TileRecord> tiles);

// Versioned binary checkpoint of the full training state.
inline constexpr char kCheckpointMagic[8] = {'G', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TrainingState &state, const std::filesystem::path &path);
TrainingState load_checkpoint(const std::filesystem::path &path);

struct StepRecord {
  std::uint64_t step = 0;
  objective::LossBreakdown losses;
  std::vector<double> thresholds; // effective thresholds after the update
};

std::string to_jsonl(const StepRecord &record);

struct RunOptions {
  std::optional<std::filesystem::path> runlog;
  std::optional<std::filesystem::path> checkpoint_dir;
  std::size_t checkpoint_every = 0; // 0: final checkpoint only
  // Bank snapshots at every epoch boundary when both are set.
  std::optional<std::filesystem::path> bank_export_dir;
  std::size_t steps_per_epoch = 0;
  std::size_t bank_export_every_epochs = 1;
  std::function<void(const StepRecord &)> on_step;
};

// Runs steps [state.optimizer.step, config.total_steps).
void run_training(TrainingState &state, const TrainConfig &config,
                  const BatchSampler &sampler, const RunOptions &options = {});

} // namespace gseg
