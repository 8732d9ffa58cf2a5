#include "robodet/model.hpp"

#include <sstream>

#include "robodet/error.hpp"

namespace robodet {

namespace {

constexpr HeadSpec kHeadLo{HeadTap::head_lo, 0, {kGoalpost, kRobot}};
constexpr HeadSpec kHeadHi{HeadTap::head_hi, 0, {kBall, kCrossing}};

struct ConvRow {
  int kernel;
  int stride;
  int in_ch;
  int out_ch;
};

// 15 backbone convolutions. L9 feeds the ball/crossing head, L15 the robot/goalpost head.
constexpr std::array<ConvRow, 15> kRoboTable{{
    {3, 2, 3, 4},
    {3, 2, 4, 8},
    {3, 2, 8, 16},
    {3, 1, 16, 16},
    {3, 2, 16, 32},
    {3, 1, 32, 32},
    {3, 2, 32, 64},
    {3, 1, 64, 64},
    {3, 1, 64, 64},
    {3, 2, 64, 128},
    {3, 1, 128, 128},
    {1, 1, 128, 256},
    {1, 1, 256, 256},
    {1, 1, 256, 256},
    {1, 1, 256, 256},
}};
constexpr int kRoboHiTap = 9;

void append(ModelSpec& spec, int kernel, int stride, int in_ch, int out_ch, HeadTap tap = HeadTap::none) {
  LayerSpec layer;
  layer.index = spec.backbone_size() + 1;
  layer.kernel = kernel;
  layer.stride = stride;
  layer.in_ch = in_ch;
  layer.out_ch = out_ch;
  layer.tap = tap;
  spec.layers.push_back(layer);
}

void attach_heads(ModelSpec& spec) {
  spec.heads = {kHeadLo, kHeadHi};
  for (const auto& layer : spec.layers) {
    if (layer.tap == HeadTap::head_lo) spec.heads[0].source_layer = layer.index;
    if (layer.tap == HeadTap::head_hi) spec.heads[1].source_layer = layer.index;
  }
}

void require_k(int k) {
  if (k < 1) throw ValidationError("resolution multiplier k must be >= 1, got " + std::to_string(k));
}

}  // namespace

std::string_view class_name(int class_id) {
  switch (class_id) {
    case kBall: return "ball";
    case kCrossing: return "crossing";
    case kGoalpost: return "goalpost";
    case kRobot: return "robot";
    default: return "unknown";
  }
}

std::string_view tap_name(HeadTap tap) {
  switch (tap) {
    case HeadTap::head_lo: return "head_lo";
    case HeadTap::head_hi: return "head_hi";
    default: return "none";
  }
}

int ModelSpec::stride_through(int upto) const {
  int stride = 1;
  for (int i = 0; i < upto && i < backbone_size(); ++i) stride *= layers[i].stride;
  return stride;
}

GridSize ModelSpec::grid(const HeadSpec& head) const {
  const int stride = stride_through(head.source_layer);
  return {height / stride, width / stride};
}

const HeadSpec& ModelSpec::head(HeadTap tap) const {
  for (const auto& h : heads) {
    if (h.label == tap) return h;
  }
  throw ValidationError("model '" + name + "' has no head " + std::string(tap_name(tap)));
}

LayerSpec ModelSpec::head_layer(const HeadSpec& head) const {
  LayerSpec layer;
  layer.index = 0;
  layer.kernel = 1;
  layer.stride = 1;
  layer.in_ch = this->layer(head.source_layer).out_ch;
  layer.out_ch = HeadSpec::channels();
  layer.has_bn = false;
  layer.activation = Activation::linear;
  layer.tap = head.label;
  return layer;
}

ModelSpec build_robo(int k) {
  require_k(k);
  ModelSpec spec;
  spec.name = "robo";
  spec.k = k;
  spec.height = k * 192;
  spec.width = k * 256;
  for (std::size_t i = 0; i < kRoboTable.size(); ++i) {
    const auto& row = kRoboTable[i];
    HeadTap tap = HeadTap::none;
    if (i + 1 == kRoboHiTap) tap = HeadTap::head_hi;
    if (i + 1 == kRoboTable.size()) tap = HeadTap::head_lo;
    append(spec, row.kernel, row.stride, row.in_ch, row.out_ch, tap);
  }
  attach_heads(spec);
  return spec;
}

ModelSpec build_robo_hr() {
  ModelSpec spec;
  spec.name = "robo_hr";
  spec.k = 1;
  spec.height = 192;
  spec.width = 256;
  for (std::size_t i = 1; i < kRoboTable.size(); ++i) {
    const auto& row = kRoboTable[i];
    HeadTap tap = HeadTap::none;
    if (i + 1 == kRoboHiTap) tap = HeadTap::head_hi;
    if (i + 1 == kRoboTable.size()) tap = HeadTap::head_lo;
    append(spec, row.kernel, row.stride, i == 1 ? 3 : row.in_ch, row.out_ch, tap);
  }
  attach_heads(spec);
  return spec;
}

ModelSpec build_robo_bn(int k) {
  require_k(k);
  constexpr int kBottleneckAbove = 64;
  ModelSpec spec;
  spec.name = "robo_bn";
  spec.k = k;
  spec.height = k * 192;
  spec.width = k * 256;
  for (std::size_t i = 0; i < kRoboTable.size(); ++i) {
    const auto& row = kRoboTable[i];
    const int in_ch = i == 0 ? 3 : 2 * row.in_ch;
    const int out_ch = 2 * row.out_ch;
    HeadTap tap = HeadTap::none;
    if (i + 1 == kRoboHiTap) tap = HeadTap::head_hi;
    if (i + 1 == kRoboTable.size()) tap = HeadTap::head_lo;
    if (row.kernel == 3 && in_ch > kBottleneckAbove) {
      append(spec, 1, 1, in_ch, in_ch / 2);
      append(spec, 3, row.stride, in_ch / 2, out_ch, tap);
    } else {
      append(spec, row.kernel, row.stride, in_ch, out_ch, tap);
    }
  }
  attach_heads(spec);
  return spec;
}

ModelSpec build_model(std::string_view name, int k) {
  if (name == "robo") return build_robo(k);
  if (name == "robo_bn") return build_robo_bn(k);
  if (name == "robo_hr") return build_robo_hr();
  throw ValidationError("unknown model '" + std::string(name) + "' (expected robo, robo_bn or robo_hr)");
}

void validate(const ModelSpec& spec) {
  if (spec.layers.empty()) throw ValidationError("model '" + spec.name + "' has no layers");
  int expected_in = spec.in_channels;
  int lo = 0;
  int hi = 0;
  for (const auto& layer : spec.layers) {
    const std::string where = "layer " + std::to_string(layer.index);
    if (layer.kernel != 1 && layer.kernel != 3) throw ValidationError(where + ": kernel must be 1 or 3");
    if (layer.stride != 1 && layer.stride != 2) throw ValidationError(where + ": stride must be 1 or 2");
    if (layer.out_ch <= 0) throw ValidationError(where + ": out_ch must be positive");
    if (layer.in_ch != expected_in) {
      throw ValidationError(where + ": in_ch " + std::to_string(layer.in_ch) + " does not chain from " +
                            std::to_string(expected_in));
    }
    expected_in = layer.out_ch;
    if (layer.tap == HeadTap::head_lo) ++lo;
    if (layer.tap == HeadTap::head_hi) ++hi;
  }
  if (lo != 1 || hi != 1) throw ValidationError("model '" + spec.name + "' needs exactly one head_lo and one head_hi tap");
  for (const auto& head : spec.heads) {
    if (head.source_layer < 1 || head.source_layer > spec.backbone_size()) {
      throw ValidationError("head " + std::string(tap_name(head.label)) + " taps a missing layer");
    }
  }
  const int stride = spec.total_stride();
  if (spec.height % stride != 0 || spec.width % stride != 0) {
    throw ValidationError("input " + std::to_string(spec.height) + "x" + std::to_string(spec.width) +
                          " is not divisible by total stride " + std::to_string(stride));
  }
}

bool strided_layers_widen(const ModelSpec& spec) {
  for (const auto& layer : spec.layers) {
    if (layer.stride == 2 && layer.out_ch <= layer.in_ch) return false;
  }
  return true;
}

ModelSpec parse_model_spec(std::string_view text) {
  ModelSpec spec;
  spec.name = "custom";
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    throw ValidationError("model spec line " + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream tokens(line);
    std::string keyword;
    if (!(tokens >> keyword)) continue;
    if (keyword == "name") {
      if (!(tokens >> spec.name)) fail("expected a name");
    } else if (keyword == "k") {
      if (!(tokens >> spec.k) || spec.k < 1) fail("expected a positive k");
    } else if (keyword == "input") {
      if (!(tokens >> spec.in_channels >> spec.height >> spec.width)) fail("expected `input <c> <h> <w>`");
    } else if (keyword == "conv") {
      LayerSpec layer;
      layer.index = spec.backbone_size() + 1;
      layer.has_bn = false;
      if (!(tokens >> layer.kernel >> layer.stride >> layer.in_ch >> layer.out_ch)) {
        fail("expected `conv <kernel> <stride> <in> <out>`");
      }
      std::string flag;
      while (tokens >> flag) {
        if (flag == "bn") {
          layer.has_bn = true;
        } else if (flag == "linear") {
          layer.activation = Activation::linear;
        } else if (flag == "tap=head_lo") {
          layer.tap = HeadTap::head_lo;
        } else if (flag == "tap=head_hi") {
          layer.tap = HeadTap::head_hi;
        } else {
          fail("unknown flag '" + flag + "'");
        }
      }
      spec.layers.push_back(layer);
    } else {
      fail("unknown keyword '" + keyword + "'");
    }
  }
  attach_heads(spec);
  validate(spec);
  return spec;
}

std::string format_model_spec(const ModelSpec& spec) {
  std::ostringstream out;
  out << "# " << spec.name << ": " << spec.backbone_size() << " backbone convolutions, total stride "
      << spec.total_stride() << "\n";
  out << "name " << spec.name << "\n";
  out << "k " << spec.k << "\n";
  out << "input " << spec.in_channels << " " << spec.height << " " << spec.width << "\n";
  for (const auto& layer : spec.layers) {
    out << "conv " << layer.kernel << " " << layer.stride << " " << layer.in_ch << " " << layer.out_ch;
    if (layer.has_bn) out << " bn";
    if (layer.activation == Activation::linear) out << " linear";
    if (layer.tap != HeadTap::none) out << " tap=" << tap_name(layer.tap);
    out << "\n";
  }
  return out.str();
}

std::int64_t count_params(const ModelSpec& spec, std::optional<int> upto_layer) {
  const int upto = upto_layer.value_or(spec.backbone_size());
  if (upto < 0 || upto > spec.backbone_size()) {
    throw ValidationError("upto_layer " + std::to_string(upto) + " outside 0.." +
                          std::to_string(spec.backbone_size()));
  }
  std::int64_t total = 0;
  for (int i = 0; i < upto; ++i) {
    const auto& l = spec.layers[i];
    total += static_cast<std::int64_t>(l.kernel) * l.kernel * l.in_ch * l.out_ch + l.out_ch;
  }
  return total;
}

std::int64_t count_head_params(const ModelSpec& spec) {
  std::int64_t total = 0;
  for (const auto& head : spec.heads) {
    const auto l = spec.head_layer(head);
    total += static_cast<std::int64_t>(l.in_ch) * l.out_ch + l.out_ch;
  }
  return total;
}

std::int64_t count_bn_params(const ModelSpec& spec) {
  std::int64_t total = 0;
  for (const auto& l : spec.layers) {
    if (l.has_bn) total += 4 * static_cast<std::int64_t>(l.out_ch);
  }
  return total;
}

ClassSlot slot_of(const ModelSpec& spec, int class_id) {
  for (int h = 0; h < 2; ++h) {
    for (int s = 0; s < HeadSpec::slots(); ++s) {
      if (spec.heads[h].classes_owned[s] == class_id) return {h, s};
    }
  }
  throw ValidationError("class id " + std::to_string(class_id) + " is not owned by any head");
}

}  // namespace robodet
