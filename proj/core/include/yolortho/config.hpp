#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "yolortho/augment.hpp"
#include "yolortho/evaluation.hpp"
#include "yolortho/loss.hpp"
#include "yolortho/network.hpp"
#include "yolortho/postprocess.hpp"
#include "yolortho/trainer.hpp"

namespace yolortho::config {

using Value = std::variant<bool, std::int64_t, double, std::string, std::vector<double>>;

/// Environment variable naming the default run-config file.
inline constexpr const char* kConfigEnvVar = "YOLORTHO_CONFIG";

/// Flat key -> value view of every tunable. Each key has a typed default;
/// values set later must match that type and unknown keys are rejected
/// (InvalidConfig).
class RunConfig {
 public:
  RunConfig();

  /// Merges a JSON object; nested objects and dotted keys are equivalent
  /// ({"loss": {"w_bbox": 1}} == {"loss.w_bbox": 1}).
  void merge_json(std::string_view json_text);
  void merge_file(const std::filesystem::path& file);

  /// Parses `text` according to the key's type: true/false, integers,
  /// reals, strings, comma-separated reals for lists.
  void set(const std::string& key, std::string_view text);
  /// "key=value" form used on the command line.
  void apply_override(std::string_view assignment);

  bool get_bool(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;
  const std::vector<double>& get_list(const std::string& key) const;

  std::vector<std::string> keys() const;
  const std::string& description(const std::string& key) const;
  std::string to_json() const;

 private:
  struct Entry {
    Value value;
    std::string description;
    std::vector<std::string> choices;  ///< allowed strings; empty = any
  };
  const Entry& entry(const std::string& key) const;
  Entry& entry(const std::string& key);
  void assign(const std::string& key, Value v);

  std::map<std::string, Entry> entries_;
};

/// Defaults, then `file` (or $YOLORTHO_CONFIG when no file is given and
/// the variable is set), then each "key=value" override in order.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          std::span<const std::string> overrides = {});

struct PrepareConfig {
  double merge_iou = 0.9;
  double pseudo_conf = 0.5;
  double pseudo_iou = 0.5;
};

nn::ModelConfig model_config(const RunConfig& rc);
augment::AugmentConfig augment_config(const RunConfig& rc);
train::LossWeights loss_weights(const RunConfig& rc);
train::AssignerConfig assigner_config(const RunConfig& rc);
train::TrainConfig train_config(const RunConfig& rc);
post::PostConfig post_config(const RunConfig& rc);
eval::EvalConfig eval_config(const RunConfig& rc);
PrepareConfig prepare_config(const RunConfig& rc);

}  // namespace yolortho::config
