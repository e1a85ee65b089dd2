#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "yolortho/augment.hpp"
#include "yolortho/dataio.hpp"
#include "yolortho/loss.hpp"
#include "yolortho/network.hpp"

namespace yolortho::train {

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
  int epochs = 100;
  int batch = 8;
  double lr = 0.01;
  double lr_final_ratio = 0.01;  ///< cosine decay ends at lr * lr_final_ratio
  double momentum = 0.937;       ///< SGD momentum, or Adam beta1
  double weight_decay = 5e-4;
  double warmup_epochs = 3.0;
  double grad_clip = 10.0;       ///< global-norm clip; <= 0 disables
  OptimizerKind optimizer = OptimizerKind::Sgd;
  std::uint64_t seed = 0;
  bool use_quadrant_tier = true;
  bool augment = true;
  augment::AugmentConfig augment_cfg;
  LossWeights weights;
  AssignerConfig assigner;
  std::filesystem::path checkpoint_path;  ///< rewritten after every epoch when set
  std::filesystem::path log_path;         ///< one JSON line per step when set
};

struct TrainSample {
  std::int64_t image_id = 0;
  Image image;
  std::vector<ToothRecord> records;
  dataio::AnnotationTier tier = dataio::AnnotationTier::Disease;
};

struct StepLog {
  int epoch = 0;
  int step = 0;
  double lr = 0.0;
  LossBreakdown loss;                       ///< summed over the batch
  std::array<LossBreakdown, 3> per_tier{};  ///< indexed by AnnotationTier
  std::array<int, 3> tier_counts{};
};

struct TrainResult {
  nn::Detector model;
  std::vector<StepLog> steps;
  std::vector<LossBreakdown> epoch_losses;  ///< mean per-sample loss of each epoch
};

using StepCallback = std::function<void(const StepLog&)>;

/// Loss and parameter gradient of one sample; the gradient is added into
/// `param_grad`. The assignment is recomputed from the current predictions.
LossBreakdown sample_loss_and_grad(const nn::Detector& model, const TrainSample& sample,
                                   const LossWeights& weights, const AssignerConfig& assigner,
                                   std::span<double> param_grad);

/// Sum of per-sample losses; each sample is masked by its own tier.
LossBreakdown batch_loss_and_grad(const nn::Detector& model, std::span<const TrainSample> batch,
                                  const LossWeights& weights, const AssignerConfig& assigner,
                                  std::span<double> param_grad);

/// SGD/Adam training with linear warmup and cosine decay. Deterministic for
/// a fixed seed. Throws EmptyDataset and NonFiniteLoss.
TrainResult train(std::span<const TrainSample> samples, const nn::ModelConfig& model_cfg,
                  const TrainConfig& cfg, const StepCallback& on_step = {});

/// Loads and letterboxes every image of `index` to the model input size,
/// scaling boxes to match. Relative image paths resolve against `base_dir`.
std::vector<TrainSample> load_samples(const dataio::DatasetIndex& index,
                                      const std::filesystem::path& base_dir, int input_size);

TrainResult train(const dataio::DatasetIndex& index, const std::filesystem::path& base_dir,
                  const nn::ModelConfig& model_cfg, const TrainConfig& cfg,
                  const StepCallback& on_step = {});

std::string step_log_json(const StepLog& log);

}  // namespace yolortho::train
