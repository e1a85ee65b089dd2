#include "yolortho/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "yolortho/error.hpp"

namespace yolortho::config {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); }

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double parse_real(const std::string& key, std::string_view text) {
  const std::string t = trim(text);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || !std::isfinite(v)) bad(key + ": expected a number, got '" + t + "'");
  return v;
}

std::int64_t parse_integer(const std::string& key, std::string_view text) {
  const std::string t = trim(text);
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size()) bad(key + ": expected an integer, got '" + t + "'");
  return v;
}

std::string type_name(const Value& v) {
  switch (v.index()) {
    case 0: return "boolean";
    case 1: return "integer";
    case 2: return "number";
    case 3: return "string";
    default: return "list of numbers";
  }
}

Value value_from_json(const std::string& key, const Value& like, const json& j) {
  switch (like.index()) {
    case 0:
      if (!j.is_boolean()) bad(key + ": expected a boolean");
      return j.get<bool>();
    case 1:
      if (j.is_number_integer()) return j.get<std::int64_t>();
      if (j.is_number_float() && std::floor(j.get<double>()) == j.get<double>()) {
        return static_cast<std::int64_t>(j.get<double>());
      }
      bad(key + ": expected an integer");
    case 2:
      if (!j.is_number()) bad(key + ": expected a number");
      return j.get<double>();
    case 3:
      if (!j.is_string()) bad(key + ": expected a string");
      return j.get<std::string>();
    default: {
      if (!j.is_array()) bad(key + ": expected a list of numbers");
      std::vector<double> out;
      for (const json& e : j) {
        if (!e.is_number()) bad(key + ": expected a list of numbers");
        out.push_back(e.get<double>());
      }
      return out;
    }
  }
}

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      flatten(v, key, out);
    } else {
      out.emplace_back(key, v);
    }
  }
}

}  // namespace

RunConfig::RunConfig() {
  auto add = [&](const std::string& key, Value v, std::string desc, std::vector<std::string> choices = {}) {
    entries_[key] = Entry{std::move(v), std::move(desc), std::move(choices)};
  };
  const train::LossWeights lw;
  add("loss.w_bbox", lw.w_bbox, "weight of the CIoU box loss");
  add("loss.w_class", lw.w_class, "weight of the class BCE loss");
  add("loss.w_dfl", lw.w_dfl, "weight of the distribution focal loss");
  add("loss.w_attr", lw.w_attr, "weight shared by the four attribute BCE losses");

  const train::AssignerConfig ac;
  add("assigner.alpha", ac.alpha, "exponent on the class score in the alignment metric");
  add("assigner.beta", ac.beta, "exponent on IoU in the alignment metric");
  add("assigner.topk", std::int64_t{ac.topk}, "positive cells per ground-truth box");

  const augment::AugmentConfig au;
  add("augment.scale", au.scale, "zoom range +/- fraction");
  add("augment.rotate_deg", au.rotate_deg, "rotation range +/- degrees");
  add("augment.translate", au.translate, "shift range +/- fraction of the image size");
  add("augment.flip_prob", au.flip_prob, "horizontal flip probability");
  add("augment.blur_sigmas", au.blur_sigmas, "Gaussian blur sigmas drawn uniformly (0 = none)");
  add("augment.min_visibility", au.min_visibility, "drop boxes keeping less than this fraction of their area");

  const post::PostConfig pc;
  add("post.iou_thr", pc.iou_thr, "class-agnostic NMS IoU threshold");
  add("post.conf_thr", pc.conf_thr, "confidence threshold before NMS");
  add("post.cost", std::string("one_minus_p"), "assignment cost entry", {"one_minus_p", "neg_log"});
  add("post.enumeration", pc.enumeration, "apply the one-tooth-per-FDI assignment correction");

  add("eval.attr_threshold", 0.5, "attribute probability needed for a diagnosis entry");
  add("eval.diag_score", std::string("product"), "diagnosis entry score", {"product", "confidence", "attribute"});

  const train::TrainConfig tc;
  add("train.epochs", std::int64_t{tc.epochs}, "training epochs");
  add("train.batch", std::int64_t{tc.batch}, "images per optimizer step");
  add("train.lr", tc.lr, "peak learning rate");
  add("train.lr_final_ratio", tc.lr_final_ratio, "final learning rate as a fraction of train.lr");
  add("train.momentum", tc.momentum, "SGD momentum (Adam beta1)");
  add("train.weight_decay", tc.weight_decay, "L2 decay on convolution weights");
  add("train.warmup_epochs", tc.warmup_epochs, "linear warmup length in epochs");
  add("train.grad_clip", tc.grad_clip, "global gradient-norm clip (<= 0 disables)");
  add("train.optimizer", std::string("sgd"), "optimizer", {"sgd", "adam"});
  add("train.seed", std::int64_t{0}, "seed for initialization and augmentation");
  add("train.use_quadrant_tier", tc.use_quadrant_tier, "train on quadrant-tier images");
  add("train.augment", tc.augment, "enable training-time augmentation");

  const nn::ModelConfig mc;
  add("model.input_size", std::int64_t{mc.input_size}, "square network input size in pixels");
  add("model.width_mult", mc.width_mult, "channel width multiplier");
  add("model.depth_mult", mc.depth_mult, "residual block count multiplier");
  add("model.reg_max", std::int64_t{mc.reg_max}, "largest distance bin of the box distribution");
  add("model.coordconv", mc.coordconv_enabled, "append coordinate channels to backbone convolutions");
  add("model.extra_upsample", mc.extra_upsample_enabled, "predict at strides 4/8/16 instead of 8/16/32");

  const PrepareConfig pr;
  add("prepare.merge_iou", pr.merge_iou, "IoU at which duplicate disease boxes merge");
  add("prepare.pseudo_conf", pr.pseudo_conf, "minimum confidence of an accepted pseudo label");
  add("prepare.pseudo_iou", pr.pseudo_iou, "pseudo labels must overlap every annotated box below this IoU");
}

const RunConfig::Entry& RunConfig::entry(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) bad("unknown config key '" + key + "'");
  return it->second;
}

RunConfig::Entry& RunConfig::entry(const std::string& key) {
  return const_cast<Entry&>(static_cast<const RunConfig&>(*this).entry(key));
}

void RunConfig::assign(const std::string& key, Value v) {
  Entry& e = entry(key);
  if (v.index() == 1 && e.value.index() == 2) v = static_cast<double>(std::get<std::int64_t>(v));
  if (v.index() != e.value.index()) bad(key + ": expected " + type_name(e.value));
  if (!e.choices.empty()) {
    const std::string& s = std::get<std::string>(v);
    if (std::find(e.choices.begin(), e.choices.end(), s) == e.choices.end()) bad(key + ": invalid choice '" + s + "'");
  }
  e.value = std::move(v);
}

void RunConfig::merge_json(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    bad(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) bad("config must be a JSON object");
  std::vector<std::pair<std::string, json>> flat;
  flatten(root, "", flat);
  for (const auto& [key, v] : flat) assign(key, value_from_json(key, entry(key).value, v));
}

void RunConfig::merge_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open config " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  merge_json(ss.str());
}

void RunConfig::set(const std::string& key, std::string_view text) {
  const Entry& e = entry(key);
  switch (e.value.index()) {
    case 0: {
      const std::string t = trim(text);
      if (t == "true" || t == "1") {
        assign(key, true);
      } else if (t == "false" || t == "0") {
        assign(key, false);
      } else {
        bad(key + ": expected true or false, got '" + t + "'");
      }
      break;
    }
    case 1: assign(key, parse_integer(key, text)); break;
    case 2: assign(key, parse_real(key, text)); break;
    case 3: assign(key, trim(text)); break;
    default: {
      std::vector<double> list;
      const std::string t = trim(text);
      std::size_t start = 0;
      while (!t.empty() && start <= t.size()) {
        const std::size_t comma = t.find(',', start);
        const std::size_t stop = comma == std::string::npos ? t.size() : comma;
        list.push_back(parse_real(key, std::string_view(t).substr(start, stop - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      assign(key, std::move(list));
    }
  }
}

void RunConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) bad("override '" + std::string(assignment) + "' is not key=value");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

namespace {

template <typename T>
const T& typed(const Value& v, const std::string& key, const char* type) {
  if (const T* p = std::get_if<T>(&v)) return *p;
  bad("config key " + key + " is not " + type);
}

}  // namespace

bool RunConfig::get_bool(const std::string& key) const { return typed<bool>(entry(key).value, key, "a bool"); }
std::int64_t RunConfig::get_int(const std::string& key) const {
  return typed<std::int64_t>(entry(key).value, key, "an integer");
}
double RunConfig::get_double(const std::string& key) const { return typed<double>(entry(key).value, key, "a real"); }
const std::string& RunConfig::get_string(const std::string& key) const {
  return typed<std::string>(entry(key).value, key, "a string");
}
const std::vector<double>& RunConfig::get_list(const std::string& key) const {
  return typed<std::vector<double>>(entry(key).value, key, "a list");
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, e] : entries_) out.push_back(k);
  return out;
}

const std::string& RunConfig::description(const std::string& key) const { return entry(key).description; }

std::string RunConfig::to_json() const {
  json j = json::object();
  for (const auto& [k, e] : entries_) {
    std::visit([&](const auto& v) { j[k] = v; }, e.value);
  }
  return j.dump(2) + "\n";
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          std::span<const std::string> overrides) {
  RunConfig rc;
  if (file) {
    rc.merge_file(*file);
  } else if (const char* env = std::getenv(kConfigEnvVar); env != nullptr && *env != '\0') {
    rc.merge_file(env);
  }
  for (const std::string& o : overrides) rc.apply_override(o);
  return rc;
}

nn::ModelConfig model_config(const RunConfig& rc) {
  nn::ModelConfig m;
  m.input_size = static_cast<int>(rc.get_int("model.input_size"));
  m.width_mult = rc.get_double("model.width_mult");
  m.depth_mult = rc.get_double("model.depth_mult");
  m.reg_max = static_cast<int>(rc.get_int("model.reg_max"));
  m.coordconv_enabled = rc.get_bool("model.coordconv");
  m.extra_upsample_enabled = rc.get_bool("model.extra_upsample");
  try {
    m.validate();
  } catch (const Error& e) {
    bad(e.what());
  }
  return m;
}

augment::AugmentConfig augment_config(const RunConfig& rc) {
  augment::AugmentConfig a;
  a.scale = rc.get_double("augment.scale");
  a.rotate_deg = rc.get_double("augment.rotate_deg");
  a.translate = rc.get_double("augment.translate");
  a.flip_prob = rc.get_double("augment.flip_prob");
  a.blur_sigmas = rc.get_list("augment.blur_sigmas");
  a.min_visibility = rc.get_double("augment.min_visibility");
  if (a.scale < 0.0 || a.scale >= 1.0) bad("augment.scale must lie in [0, 1)");
  if (a.flip_prob < 0.0 || a.flip_prob > 1.0) bad("augment.flip_prob must lie in [0, 1]");
  for (double s : a.blur_sigmas)
    if (s < 0.0) bad("augment.blur_sigmas must be non-negative");
  return a;
}

train::LossWeights loss_weights(const RunConfig& rc) {
  return {rc.get_double("loss.w_bbox"), rc.get_double("loss.w_class"), rc.get_double("loss.w_dfl"),
          rc.get_double("loss.w_attr")};
}

train::AssignerConfig assigner_config(const RunConfig& rc) {
  train::AssignerConfig a{rc.get_double("assigner.alpha"), rc.get_double("assigner.beta"),
                          static_cast<int>(rc.get_int("assigner.topk"))};
  if (a.topk < 1) bad("assigner.topk must be at least 1");
  return a;
}

train::TrainConfig train_config(const RunConfig& rc) {
  train::TrainConfig t;
  t.epochs = static_cast<int>(rc.get_int("train.epochs"));
  t.batch = static_cast<int>(rc.get_int("train.batch"));
  t.lr = rc.get_double("train.lr");
  t.lr_final_ratio = rc.get_double("train.lr_final_ratio");
  t.momentum = rc.get_double("train.momentum");
  t.weight_decay = rc.get_double("train.weight_decay");
  t.warmup_epochs = rc.get_double("train.warmup_epochs");
  t.grad_clip = rc.get_double("train.grad_clip");
  t.optimizer = rc.get_string("train.optimizer") == "adam" ? train::OptimizerKind::Adam : train::OptimizerKind::Sgd;
  t.seed = static_cast<std::uint64_t>(rc.get_int("train.seed"));
  t.use_quadrant_tier = rc.get_bool("train.use_quadrant_tier");
  t.augment = rc.get_bool("train.augment");
  t.augment_cfg = augment_config(rc);
  t.weights = loss_weights(rc);
  t.assigner = assigner_config(rc);
  if (t.epochs < 1) bad("train.epochs must be at least 1");
  if (t.batch < 1) bad("train.batch must be at least 1");
  if (!(t.lr > 0.0)) bad("train.lr must be positive");
  return t;
}

post::PostConfig post_config(const RunConfig& rc) {
  post::PostConfig p;
  p.iou_thr = rc.get_double("post.iou_thr");
  p.conf_thr = rc.get_double("post.conf_thr");
  p.cost = rc.get_string("post.cost") == "neg_log" ? post::CostKind::NegLog : post::CostKind::OneMinusP;
  p.enumeration = rc.get_bool("post.enumeration");
  if (p.iou_thr < 0.0 || p.iou_thr > 1.0 || p.conf_thr < 0.0 || p.conf_thr > 1.0) {
    bad("post.iou_thr and post.conf_thr must lie in [0, 1]");
  }
  return p;
}

eval::EvalConfig eval_config(const RunConfig& rc) {
  eval::EvalConfig e;
  e.attr_threshold = rc.get_double("eval.attr_threshold");
  const std::string& s = rc.get_string("eval.diag_score");
  e.diag_score = s == "confidence" ? eval::DiagScore::Confidence
                 : s == "attribute" ? eval::DiagScore::Attribute
                                    : eval::DiagScore::Product;
  return e;
}

PrepareConfig prepare_config(const RunConfig& rc) {
  return {rc.get_double("prepare.merge_iou"), rc.get_double("prepare.pseudo_conf"),
          rc.get_double("prepare.pseudo_iou")};
}

}  // namespace yolortho::config
