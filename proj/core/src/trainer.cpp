#include "yolortho/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "json.hpp"
#include "yolortho/checkpoint.hpp"
#include "yolortho/error.hpp"

namespace yolortho::train {

namespace {

void check_finite(const LossBreakdown& l, std::int64_t image_id) {
  auto fail = [&](const char* term, double v) {
    throw Error(ErrorKind::NonFiniteLoss, std::string("non-finite ") + term + " loss (" + std::to_string(v) +
                                              ") on image " + std::to_string(image_id));
  };
  if (!std::isfinite(l.bbox)) fail("bbox", l.bbox);
  if (!std::isfinite(l.cls)) fail("class", l.cls);
  if (!std::isfinite(l.dfl)) fail("dfl", l.dfl);
  for (std::size_t i = 0; i < l.attr.size(); ++i)
    if (!std::isfinite(l.attr[i])) fail(attribute_name(static_cast<Attribute>(i)).c_str(), l.attr[i]);
  if (!std::isfinite(l.total)) fail("total", l.total);
}

nlohmann::json breakdown_json(const LossBreakdown& l) {
  return {{"total", l.total},
          {"bbox", l.bbox},
          {"class", l.cls},
          {"dfl", l.dfl},
          {"attr", {l.attr[0], l.attr[1], l.attr[2], l.attr[3]}},
          {"attr_masked", l.attr_masked},
          {"class_quadrant_only", l.class_quadrant_only}};
}

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const nn::ParameterStore& params)
      : cfg_(cfg), state_(params.size(), 0.0), second_(params.size(), 0.0), decay_(params.size(), 0.0) {
    for (const auto& slot : params.slots()) {
      const bool is_weight = slot.name.size() > 7 && slot.name.ends_with(".weight");
      std::fill_n(decay_.begin() + static_cast<std::ptrdiff_t>(slot.offset), slot.size,
                  is_weight ? cfg.weight_decay : 0.0);
    }
  }

  void step(std::span<double> values, std::span<const double> grad, double lr) {
    ++t_;
    if (cfg_.optimizer == OptimizerKind::Sgd) {
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = grad[i] + decay_[i] * values[i];
        state_[i] = cfg_.momentum * state_[i] + g;
        values[i] -= lr * state_[i];
      }
      return;
    }
    const double b1 = cfg_.momentum;
    const double b2 = 0.999;
    const double c1 = 1.0 - std::pow(b1, t_);
    const double c2 = 1.0 - std::pow(b2, t_);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      state_[i] = b1 * state_[i] + (1 - b1) * g;
      second_[i] = b2 * second_[i] + (1 - b2) * g * g;
      values[i] -= lr * ((state_[i] / c1) / (std::sqrt(second_[i] / c2) + 1e-8) + decay_[i] * values[i]);
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<double> state_;
  std::vector<double> second_;
  std::vector<double> decay_;
  int t_ = 0;
};

double learning_rate(const TrainConfig& cfg, int epoch, int step_in_epoch, int steps_per_epoch) {
  const double progress = epoch + static_cast<double>(step_in_epoch) / steps_per_epoch;
  const double floor = cfg.lr * cfg.lr_final_ratio;
  double lr = floor + (cfg.lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress / cfg.epochs));
  const double warmup_steps = cfg.warmup_epochs * steps_per_epoch;
  const double global_step = static_cast<double>(epoch) * steps_per_epoch + step_in_epoch;
  if (global_step < warmup_steps) lr *= (global_step + 1.0) / warmup_steps;
  return lr;
}

}  // namespace

LossBreakdown sample_loss_and_grad(const nn::Detector& model, const TrainSample& sample,
                                   const LossWeights& weights, const AssignerConfig& assigner,
                                   std::span<double> param_grad) {
  nn::ForwardTrace trace;
  const nn::RawPredictions raw = model.forward(sample.image, trace);
  const AssignmentResult assignment = assign_targets(raw, sample.records, assigner);
  nn::RawPredictions grad = raw.zeros_like();
  const LossBreakdown loss = composite_loss(raw, assignment, sample.tier, weights, &grad);
  check_finite(loss, sample.image_id);
  if (!param_grad.empty()) model.backward(trace, grad, param_grad);
  return loss;
}

LossBreakdown batch_loss_and_grad(const nn::Detector& model, std::span<const TrainSample> batch,
                                  const LossWeights& weights, const AssignerConfig& assigner,
                                  std::span<double> param_grad) {
  LossBreakdown total;
  total.attr_masked = true;
  total.class_quadrant_only = true;
  for (const TrainSample& s : batch) total += sample_loss_and_grad(model, s, weights, assigner, param_grad);
  return total;
}

TrainResult train(std::span<const TrainSample> samples, const nn::ModelConfig& model_cfg,
                  const TrainConfig& cfg, const StepCallback& on_step) {
  std::vector<const TrainSample*> usable;
  for (const TrainSample& s : samples) {
    if (s.tier == dataio::AnnotationTier::Quadrant && !cfg.use_quadrant_tier) continue;
    usable.push_back(&s);
  }
  if (usable.empty()) throw Error(ErrorKind::EmptyDataset, "no training samples");
  if (cfg.epochs < 1 || cfg.batch < 1) throw Error(ErrorKind::InvalidConfig, "train.epochs and train.batch must be >= 1");

  TrainResult result{nn::Detector(model_cfg), {}, {}};
  nn::Detector& model = result.model;
  model.initialize(cfg.seed);
  Optimizer opt(cfg, model.parameters());

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path);
    if (!log) throw Error(ErrorKind::Io, "cannot write training log " + cfg.log_path.string());
  }

  const int n = static_cast<int>(usable.size());
  const int steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  std::vector<double> grad(model.parameters().size());
  std::vector<int> order(n);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const std::uint64_t augment_base = (cfg.seed + 1) * 1000003ULL + static_cast<std::uint64_t>(epoch) * 7919ULL;

    LossBreakdown epoch_sum;
    for (int step = 0; step < steps_per_epoch; ++step) {
      StepLog entry;
      entry.epoch = epoch;
      entry.step = step;
      entry.lr = learning_rate(cfg, epoch, step, steps_per_epoch);
      entry.loss.attr_masked = entry.loss.class_quadrant_only = true;
      std::fill(grad.begin(), grad.end(), 0.0);

      const int begin = step * cfg.batch;
      const int end = std::min(n, begin + cfg.batch);
      for (int i = begin; i < end; ++i) {
        const TrainSample& src = *usable[order[i]];
        TrainSample s;
        s.image_id = src.image_id;
        s.tier = src.tier;
        if (cfg.augment) {
          augment::Sample aug = augment::apply_augmentations(
              {src.image, src.records, src.tier}, cfg.augment_cfg,
              augment_base + static_cast<std::uint64_t>(src.image_id));
          s.image = std::move(aug.image);
          s.records = std::move(aug.records);
        } else {
          s.image = src.image;
          s.records = src.records;
        }
        const LossBreakdown l = sample_loss_and_grad(model, s, cfg.weights, cfg.assigner, grad);
        entry.loss += l;
        entry.per_tier[static_cast<int>(s.tier)] += l;
        ++entry.tier_counts[static_cast<int>(s.tier)];
      }

      const double inv = 1.0 / (end - begin);
      double norm2 = 0.0;
      for (double& g : grad) {
        g *= inv;
        norm2 += g * g;
      }
      const double norm = std::sqrt(norm2);
      if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) {
        const double scale = cfg.grad_clip / norm;
        for (double& g : grad) g *= scale;
      }
      opt.step(model.parameters().flat(), grad, entry.lr);

      epoch_sum += entry.loss;
      if (log) log << step_log_json(entry) << '\n';
      if (on_step) on_step(entry);
      result.steps.push_back(entry);
    }

    LossBreakdown mean = epoch_sum;
    const double inv_n = 1.0 / n;
    mean.total *= inv_n;
    mean.bbox *= inv_n;
    mean.cls *= inv_n;
    mean.dfl *= inv_n;
    for (double& a : mean.attr) a *= inv_n;
    result.epoch_losses.push_back(mean);
    if (!cfg.checkpoint_path.empty()) nn::save_checkpoint(model, cfg.checkpoint_path);
  }
  return result;
}

std::vector<TrainSample> load_samples(const dataio::DatasetIndex& index, const std::filesystem::path& base_dir,
                                      int input_size) {
  std::vector<TrainSample> out;
  for (const auto& entry : index.images) {
    std::filesystem::path path = entry.file_path;
    if (path.is_relative()) path = base_dir / path;
    const Image raw = read_netpbm(path);
    if (raw.width != entry.width || raw.height != entry.height) {
      throw Error(ErrorKind::ShapeMismatch, "image " + path.string() + " does not match its declared size");
    }
    const Letterbox lb = letterbox(raw, input_size);
    TrainSample s;
    s.image_id = entry.image_id;
    s.image = lb.image;
    s.tier = entry.tier;
    auto it = index.records.find(entry.image_id);
    if (it != index.records.end()) {
      for (ToothRecord r : it->second) {
        r.box = {r.box.x_min * lb.scale, r.box.y_min * lb.scale, r.box.x_max * lb.scale, r.box.y_max * lb.scale};
        s.records.push_back(r);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

TrainResult train(const dataio::DatasetIndex& index, const std::filesystem::path& base_dir,
                  const nn::ModelConfig& model_cfg, const TrainConfig& cfg, const StepCallback& on_step) {
  if (index.images.empty()) throw Error(ErrorKind::EmptyDataset, "dataset has no images");
  const std::vector<TrainSample> samples = load_samples(index, base_dir, model_cfg.input_size);
  return train(samples, model_cfg, cfg, on_step);
}

std::string step_log_json(const StepLog& log) {
  nlohmann::json j = {{"epoch", log.epoch}, {"step", log.step}, {"lr", log.lr}, {"loss", breakdown_json(log.loss)}};
  nlohmann::json tiers = nlohmann::json::object();
  for (int t = 0; t < 3; ++t) {
    if (log.tier_counts[t] == 0) continue;
    auto tj = breakdown_json(log.per_tier[t]);
    tj["samples"] = log.tier_counts[t];
    tiers[std::string(dataio::to_string(static_cast<dataio::AnnotationTier>(t)))] = tj;
  }
  j["per_tier"] = tiers;
  return j.dump();
}

}  // namespace yolortho::train
