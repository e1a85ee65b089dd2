#include "yolortho/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "yolortho/error.hpp"

namespace yolortho::nn {

namespace {

constexpr std::array<int, 5> kBaseChannels = {16, 32, 64, 128, 256};
constexpr std::array<int, 5> kBaseBlocks = {0, 1, 2, 2, 1};
constexpr double kClassPrior = 0.01;
constexpr double kAttributePrior = 0.1;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

FeatureMap to_feature_map(const Image& image) {
  FeatureMap fm(1, image.height, image.width);
  fm.data = image.pixels;
  return fm;
}

// CHW conv output -> cell-major buffer.
std::vector<double> to_cell_major(const FeatureMap& fm) {
  std::vector<double> out(fm.size());
  const std::size_t plane = fm.plane();
  for (int c = 0; c < fm.channels; ++c)
    for (std::size_t p = 0; p < plane; ++p)
      out[p * fm.channels + c] = fm.data[c * plane + p];
  return out;
}

FeatureMap from_cell_major(const std::vector<double>& buf, int channels, int h, int w) {
  FeatureMap fm(channels, h, w);
  const std::size_t plane = fm.plane();
  for (int c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) fm.data[c * plane + p] = buf[p * channels + c];
  return fm;
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidConfig, m); };
  if (input_size <= 0 || input_size % 32 != 0) fail("model.input_size must be a positive multiple of 32");
  if (reg_max < 1) fail("model.reg_max must be >= 1");
  if (!(width_mult > 0.0) || !(depth_mult >= 0.0)) fail("model width/depth multipliers must be positive");
  if (num_classes != kNumClasses) fail("model.num_classes is fixed at 32");
  if (num_attributes != kNumAttributes) fail("model.num_attributes is fixed at 4");
}

std::array<int, 3> ModelConfig::strides() const noexcept {
  if (extra_upsample_enabled) return {4, 8, 16};
  return {8, 16, 32};
}

int ModelConfig::stage_channels(int stage) const noexcept {
  return std::max(4, static_cast<int>(std::lround(kBaseChannels[stage] * width_mult)));
}

int ModelConfig::stage_blocks(int stage) const noexcept {
  return std::max(0, static_cast<int>(std::lround(kBaseBlocks[stage] * depth_mult)));
}

int ModelConfig::neck_channels() const noexcept {
  return std::max(4, static_cast<int>(std::lround(64 * width_mult)));
}

// ---------------------------------------------------------------------------
// Prediction containers

LevelPredictions LevelPredictions::zeros_like() const {
  LevelPredictions z;
  z.stride = stride;
  z.height = height;
  z.width = width;
  z.reg_max = reg_max;
  z.dfl_logits.assign(dfl_logits.size(), 0.0);
  z.class_logits.assign(class_logits.size(), 0.0);
  z.attribute_logits.assign(attribute_logits.size(), 0.0);
  return z;
}

RawPredictions RawPredictions::zeros_like() const {
  RawPredictions z;
  z.input_size = input_size;
  for (std::size_t l = 0; l < levels.size(); ++l) z.levels[l] = levels[l].zeros_like();
  return z;
}

// ---------------------------------------------------------------------------
// ParameterStore

std::size_t ParameterStore::add(std::string name, std::vector<int> shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  Slot slot{std::move(name), std::move(shape), values_.size(), n};
  values_.resize(values_.size() + n, 0.0);
  slots_.push_back(std::move(slot));
  return slots_.size() - 1;
}

std::size_t ParameterStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < slots_.size(); ++i)
    if (slots_[i].name == name) return i;
  throw Error(ErrorKind::InvalidArgument, "no parameter named " + name);
}

// ---------------------------------------------------------------------------
// Detector

struct ForwardTrace::Unit {
  ConvCache cache;
  std::vector<double> pre_activation;
  int out_channels = 0;
  int out_height = 0;
  int out_width = 0;
};

ForwardTrace::ForwardTrace() = default;
ForwardTrace::~ForwardTrace() = default;
ForwardTrace::ForwardTrace(ForwardTrace&&) noexcept = default;
ForwardTrace& ForwardTrace::operator=(ForwardTrace&&) noexcept = default;

struct Detector::Impl {
  struct ConvUnit {
    ConvShape shape;
    std::size_t weight = 0;
    std::size_t bias = 0;
    bool activation = true;
  };
  struct Block {
    std::size_t first;
    std::size_t second;
  };
  struct Stage {
    std::size_t down;
    std::vector<Block> blocks;
  };
  struct Head {
    std::size_t box_conv, box_pred, cls_conv, cls_pred, attr_conv, attr_pred;
  };

  std::vector<ConvUnit> units;
  std::size_t stem = 0;
  std::array<Stage, 5> stages{};               // index 1..4 used
  std::array<std::size_t, 5> lateral{};        // by backbone stage
  std::array<std::size_t, 3> smooth{};         // by output level
  std::array<Head, 3> heads{};
  int first_stage = 1;                         // shallowest stage fed into the pyramid

  std::size_t add_unit(ParameterStore& params, const std::string& name, ConvShape shape,
                       bool activation) {
    ConvUnit u;
    u.shape = shape;
    u.weight = params.add(name + ".weight", {shape.out_channels, shape.total_in_channels(),
                                             shape.kernel, shape.kernel});
    u.bias = params.add(name + ".bias", {shape.out_channels});
    u.activation = activation;
    units.push_back(u);
    return units.size() - 1;
  }

  FeatureMap apply(const ParameterStore& params, std::size_t id, const FeatureMap& x,
                   ForwardTrace* trace) const {
    const ConvUnit& u = units[id];
    ForwardTrace::Unit* rec = trace ? trace->units[id].get() : nullptr;
    FeatureMap y = conv2d_forward(u.shape, params.values(u.weight), params.values(u.bias), x,
                                  rec ? &rec->cache : nullptr);
    if (u.activation) {
      if (rec) rec->pre_activation = y.data;
      silu_inplace(y.data);
    }
    if (rec) {
      rec->out_channels = y.channels;
      rec->out_height = y.height;
      rec->out_width = y.width;
    }
    return y;
  }

  FeatureMap apply_backward(const ParameterStore& params, std::size_t id, FeatureMap grad,
                            const ForwardTrace& trace, std::span<double> param_grad) const {
    const ConvUnit& u = units[id];
    const ForwardTrace::Unit& rec = *trace.units[id];
    if (u.activation) silu_backward_inplace(rec.pre_activation, grad.data);
    const auto& wslot = params.slots()[u.weight];
    const auto& bslot = params.slots()[u.bias];
    return conv2d_backward(u.shape, params.values(u.weight), rec.cache, grad,
                           param_grad.subspan(wslot.offset, wslot.size),
                           param_grad.subspan(bslot.offset, bslot.size));
  }
};

Detector::Detector(ModelConfig config) : config_(config), impl_(std::make_unique<Impl>()) {
  config_.validate();
  Impl& m = *impl_;
  const bool coord = config_.coordconv_enabled;
  const int neck = config_.neck_channels();
  const int bins = config_.reg_max + 1;

  m.stem = m.add_unit(params_, "backbone.stem", {1, config_.stage_channels(0), 3, 2, coord}, true);
  for (int s = 1; s <= 4; ++s) {
    const int cin = config_.stage_channels(s - 1);
    const int c = config_.stage_channels(s);
    const std::string prefix = "backbone.stage" + std::to_string(s);
    m.stages[s].down = m.add_unit(params_, prefix + ".down", {cin, c, 3, 2, coord}, true);
    for (int b = 0; b < config_.stage_blocks(s); ++b) {
      const std::string bp = prefix + ".block" + std::to_string(b);
      Impl::Block blk{};
      blk.first = m.add_unit(params_, bp + ".conv1", {c, c, 3, 1, coord}, true);
      blk.second = m.add_unit(params_, bp + ".conv2", {c, c, 3, 1, coord}, true);
      m.stages[s].blocks.push_back(blk);
    }
  }

  m.first_stage = config_.extra_upsample_enabled ? 1 : 2;
  for (int s = m.first_stage; s <= 4; ++s) {
    m.lateral[s] = m.add_unit(params_, "neck.lateral" + std::to_string(s),
                              {config_.stage_channels(s), neck, 1, 1, false}, false);
  }
  for (int l = 0; l < 3; ++l) {
    m.smooth[l] = m.add_unit(params_, "neck.smooth" + std::to_string(l), {neck, neck, 3, 1, false}, true);
  }
  for (int l = 0; l < 3; ++l) {
    const std::string hp = "head.level" + std::to_string(l);
    Impl::Head& h = m.heads[l];
    h.box_conv = m.add_unit(params_, hp + ".box.conv", {neck, neck, 3, 1, false}, true);
    h.box_pred = m.add_unit(params_, hp + ".box.pred", {neck, 4 * bins, 1, 1, false}, false);
    h.cls_conv = m.add_unit(params_, hp + ".cls.conv", {neck, neck, 3, 1, false}, true);
    h.cls_pred = m.add_unit(params_, hp + ".cls.pred", {neck, kNumClasses, 1, 1, false}, false);
    h.attr_conv = m.add_unit(params_, hp + ".attr.conv", {neck, neck, 3, 1, false}, true);
    h.attr_pred = m.add_unit(params_, hp + ".attr.pred", {neck, kNumAttributes, 1, 1, false}, false);
  }
}

Detector::~Detector() = default;
Detector::Detector(const Detector& o)
    : config_(o.config_), params_(o.params_), impl_(std::make_unique<Impl>(*o.impl_)) {}
Detector& Detector::operator=(const Detector& o) {
  if (this != &o) {
    config_ = o.config_;
    params_ = o.params_;
    impl_ = std::make_unique<Impl>(*o.impl_);
  }
  return *this;
}
Detector::Detector(Detector&&) noexcept = default;
Detector& Detector::operator=(Detector&&) noexcept = default;

void Detector::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Impl& m = *impl_;
  std::vector<bool> is_pred(m.units.size(), false);
  for (const auto& h : m.heads) is_pred[h.box_pred] = is_pred[h.cls_pred] = is_pred[h.attr_pred] = true;
  std::vector<bool> is_block_tail(m.units.size(), false);
  for (int s = 1; s <= 4; ++s)
    for (const auto& b : m.stages[s].blocks) is_block_tail[b.second] = true;

  for (std::size_t id = 0; id < m.units.size(); ++id) {
    const auto& u = m.units[id];
    const double fan_in = u.shape.total_in_channels() * u.shape.kernel * u.shape.kernel;
    double std_dev = std::sqrt(2.0 / fan_in);
    if (is_pred[id]) std_dev = 0.01;
    if (is_block_tail[id]) std_dev *= 0.5;
    std::normal_distribution<double> dist(0.0, std_dev);
    for (double& w : params_.values(u.weight)) w = dist(rng);
    for (double& b : params_.values(u.bias)) b = 0.0;
  }
  for (const auto& h : m.heads) {
    for (double& b : params_.values(m.units[h.cls_pred].bias)) b = std::log(kClassPrior / (1.0 - kClassPrior));
    for (double& b : params_.values(m.units[h.attr_pred].bias))
      b = std::log(kAttributePrior / (1.0 - kAttributePrior));
  }
}

RawPredictions Detector::forward(const Image& image) const { return run(image, nullptr); }

RawPredictions Detector::forward(const Image& image, ForwardTrace& trace) const {
  return run(image, &trace);
}

RawPredictions Detector::run(const Image& image, ForwardTrace* t) const {
  if (image.width != config_.input_size || image.height != config_.input_size) {
    throw Error(ErrorKind::ShapeMismatch,
                "input is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                    ", model expects " + std::to_string(config_.input_size) + " square");
  }
  const Impl& m = *impl_;
  if (t) {
    t->units.clear();
    t->units.reserve(m.units.size());
    for (std::size_t i = 0; i < m.units.size(); ++i)
      t->units.push_back(std::make_unique<ForwardTrace::Unit>());
  }

  std::array<FeatureMap, 5> stage_out;
  FeatureMap h = m.apply(params_, m.stem, to_feature_map(image), t);
  for (int s = 1; s <= 4; ++s) {
    h = m.apply(params_, m.stages[s].down, h, t);
    for (const auto& blk : m.stages[s].blocks) {
      FeatureMap r = m.apply(params_, blk.first, h, t);
      r = m.apply(params_, blk.second, r, t);
      add_inplace(h, r);
    }
    stage_out[s] = h;
  }

  std::array<FeatureMap, 5> pyramid;
  pyramid[4] = m.apply(params_, m.lateral[4], stage_out[4], t);
  for (int s = 3; s >= m.first_stage; --s) {
    pyramid[s] = m.apply(params_, m.lateral[s], stage_out[s], t);
    add_inplace(pyramid[s], upsample2x(pyramid[s + 1]));
  }

  RawPredictions raw;
  raw.input_size = config_.input_size;
  const auto strides = config_.strides();
  for (int l = 0; l < 3; ++l) {
    const FeatureMap f = m.apply(params_, m.smooth[l], pyramid[m.first_stage + l], t);
    const auto& hd = m.heads[l];
    const FeatureMap box = m.apply(params_, hd.box_pred, m.apply(params_, hd.box_conv, f, t), t);
    const FeatureMap cls = m.apply(params_, hd.cls_pred, m.apply(params_, hd.cls_conv, f, t), t);
    const FeatureMap attr = m.apply(params_, hd.attr_pred, m.apply(params_, hd.attr_conv, f, t), t);
    LevelPredictions& lp = raw.levels[l];
    lp.stride = strides[l];
    lp.height = f.height;
    lp.width = f.width;
    lp.reg_max = config_.reg_max;
    lp.dfl_logits = to_cell_major(box);
    lp.class_logits = to_cell_major(cls);
    lp.attribute_logits = to_cell_major(attr);
  }
  return raw;
}

std::vector<RawPredictions> Detector::forward(std::span<const Image> batch) const {
  std::vector<RawPredictions> out;
  out.reserve(batch.size());
  for (const Image& img : batch) out.push_back(forward(img));
  return out;
}

void Detector::backward(const ForwardTrace& trace, const RawPredictions& grad,
                        std::span<double> param_grad) const {
  if (param_grad.size() != params_.size()) {
    throw Error(ErrorKind::ShapeMismatch, "parameter gradient buffer has the wrong size");
  }
  const Impl& m = *impl_;
  const int bins = config_.reg_max + 1;

  std::array<FeatureMap, 5> pyramid_grad;
  for (int l = 0; l < 3; ++l) {
    const auto& hd = m.heads[l];
    const LevelPredictions& g = grad.levels[l];
    auto branch = [&](std::size_t conv, std::size_t pred, const std::vector<double>& buf, int ch) {
      FeatureMap d = from_cell_major(buf, ch, g.height, g.width);
      d = m.apply_backward(params_, pred, std::move(d), trace, param_grad);
      return m.apply_backward(params_, conv, std::move(d), trace, param_grad);
    };
    FeatureMap df = branch(hd.box_conv, hd.box_pred, g.dfl_logits, 4 * bins);
    add_inplace(df, branch(hd.cls_conv, hd.cls_pred, g.class_logits, kNumClasses));
    add_inplace(df, branch(hd.attr_conv, hd.attr_pred, g.attribute_logits, kNumAttributes));
    pyramid_grad[m.first_stage + l] = m.apply_backward(params_, m.smooth[l], std::move(df), trace, param_grad);
  }

  std::array<FeatureMap, 5> stage_grad;
  for (int s = m.first_stage; s <= 4; ++s) {
    if (s > m.first_stage) {
      const FeatureMap up = upsample2x_backward(pyramid_grad[s - 1]);
      if (pyramid_grad[s].size() == 0) {
        pyramid_grad[s] = up;
      } else {
        add_inplace(pyramid_grad[s], up);
      }
    }
    stage_grad[s] = m.apply_backward(params_, m.lateral[s], pyramid_grad[s], trace, param_grad);
  }

  FeatureMap dh;
  for (int s = 4; s >= 1; --s) {
    if (stage_grad[s].size() != 0) {
      if (dh.size() == 0) {
        dh = stage_grad[s];
      } else {
        add_inplace(dh, stage_grad[s]);
      }
    }
    const auto& blocks = m.stages[s].blocks;
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
      FeatureMap r = m.apply_backward(params_, it->second, dh, trace, param_grad);
      r = m.apply_backward(params_, it->first, std::move(r), trace, param_grad);
      add_inplace(dh, r);
    }
    dh = m.apply_backward(params_, m.stages[s].down, std::move(dh), trace, param_grad);
  }
  m.apply_backward(params_, m.stem, std::move(dh), trace, param_grad);
}

std::vector<std::size_t> Detector::attribute_head_slots() const {
  std::vector<std::size_t> slots;
  for (const auto& h : impl_->heads) {
    for (std::size_t id : {h.attr_conv, h.attr_pred}) {
      slots.push_back(impl_->units[id].weight);
      slots.push_back(impl_->units[id].bias);
    }
  }
  return slots;
}

std::vector<std::size_t> Detector::coord_conv_weight_slots() const {
  std::vector<std::size_t> slots;
  for (const auto& u : impl_->units)
    if (u.shape.coord) slots.push_back(u.weight);
  return slots;
}

const ConvShape& Detector::conv_shape_for_weight_slot(std::size_t slot) const {
  for (const auto& u : impl_->units)
    if (u.weight == slot) return u.shape;
  throw Error(ErrorKind::InvalidArgument, "slot is not a convolution weight");
}

// ---------------------------------------------------------------------------
// Free functions

FeatureMap coord_conv(const FeatureMap& input, std::span<const double> weight,
                      std::span<const double> bias, int out_channels, int kernel, int stride) {
  const ConvShape shape{input.channels, out_channels, kernel, stride, true};
  return conv2d_forward(shape, weight, bias, input);
}

double expected_distance(std::span<const double> logits, int stride) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  double e = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double p = std::exp(logits[i] - mx);
    z += p;
    e += static_cast<double>(i) * p;
  }
  return stride * e / z;
}

std::vector<BoundingBox> decode_boxes(const LevelPredictions& level, double image_width,
                                      double image_height) {
  std::vector<BoundingBox> boxes(level.cells());
  for (std::size_t c = 0; c < level.cells(); ++c) {
    const double cx = level.center_x(c);
    const double cy = level.center_y(c);
    const BoundingBox b{cx - expected_distance(level.dfl(c, 0), level.stride),
                        cy - expected_distance(level.dfl(c, 1), level.stride),
                        cx + expected_distance(level.dfl(c, 2), level.stride),
                        cy + expected_distance(level.dfl(c, 3), level.stride)};
    boxes[c] = clip_box(b, image_width, image_height);
  }
  return boxes;
}

std::vector<Detection> decode_detections(const RawPredictions& raw, double conf_thr) {
  std::vector<Detection> dets;
  const double size = raw.input_size;
  for (const LevelPredictions& level : raw.levels) {
    const std::vector<BoundingBox> boxes = decode_boxes(level, size, size);
    for (std::size_t c = 0; c < level.cells(); ++c) {
      const auto logits = level.classes(c);
      const double best = *std::max_element(logits.begin(), logits.end());
      if (sigmoid(best) < conf_thr || !boxes[c].is_valid()) continue;
      Detection d;
      d.box = boxes[c];
      for (int k = 0; k < kNumClasses; ++k) d.class_probs[k] = sigmoid(logits[k]);
      const auto attrs = level.attributes(c);
      for (int a = 0; a < kNumAttributes; ++a) d.attribute_probs[a] = sigmoid(attrs[a]);
      d.confidence = sigmoid(best);
      dets.push_back(d);
    }
  }
  return dets;
}

}  // namespace yolortho::nn
