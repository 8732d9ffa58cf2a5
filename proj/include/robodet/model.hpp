#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace robodet {

inline constexpr int kNumClasses = 4;

/// Object classes in their canonical order.
enum ObjectClass : int { kBall = 0, kCrossing = 1, kGoalpost = 2, kRobot = 3 };

std::string_view class_name(int class_id);

enum class Activation { leaky, linear };

enum class HeadTap { none, head_lo, head_hi };

std::string_view tap_name(HeadTap tap);

struct LayerSpec {
  int index = 0;  // 1-based position in the backbone
  int kernel = 3;
  int stride = 1;
  int in_ch = 0;
  int out_ch = 0;
  bool has_bn = true;
  Activation activation = Activation::leaky;
  HeadTap tap = HeadTap::none;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// A 1×1 linear detection head attached to one backbone layer.
struct HeadSpec {
  HeadTap label = HeadTap::none;
  int source_layer = 0;
  std::array<int, 2> classes_owned{};

  [[nodiscard]] static constexpr int slots() { return 2; }
  [[nodiscard]] static constexpr int channels() { return 5 * slots(); }

  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

struct GridSize {
  int rows = 0;
  int cols = 0;
  friend bool operator==(const GridSize&, const GridSize&) = default;
};

struct ModelSpec {
  std::string name;
  int k = 1;
  int in_channels = 3;
  int height = 0;
  int width = 0;
  std::vector<LayerSpec> layers;  // backbone only
  std::array<HeadSpec, 2> heads;  // [head_lo, head_hi]

  [[nodiscard]] int backbone_size() const { return static_cast<int>(layers.size()); }
  [[nodiscard]] const LayerSpec& layer(int index) const { return layers.at(index - 1); }

  /// Product of strides over backbone layers 1..upto.
  [[nodiscard]] int stride_through(int upto) const;
  [[nodiscard]] int total_stride() const { return stride_through(backbone_size()); }

  [[nodiscard]] GridSize grid(const HeadSpec& head) const;
  [[nodiscard]] GridSize grid(HeadTap tap) const { return grid(head(tap)); }
  [[nodiscard]] const HeadSpec& head(HeadTap tap) const;

  /// The head's 1×1 convolution expressed as a layer.
  [[nodiscard]] LayerSpec head_layer(const HeadSpec& head) const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Canonical ROBO: 15 backbone convolutions, total stride 64, input k·192 × k·256.
ModelSpec build_robo(int k);

/// ROBO with layer 1 removed, fixed 192×256 input, total stride 32.
ModelSpec build_robo_hr();

/// ROBO with doubled widths and 1×1 halving bottlenecks before wide 3×3 convs.
ModelSpec build_robo_bn(int k);

/// Looks up one of robo | robo_bn | robo_hr by name.
ModelSpec build_model(std::string_view name, int k);

/// Checks chaining, tap placement and stride divisibility; throws ValidationError.
void validate(const ModelSpec& spec);

/// True when every stride-2 backbone layer widens its input.
bool strided_layers_widen(const ModelSpec& spec);

/// Parses the textual layer table (`conv <kernel> <stride> <in> <out> [bn] [linear] [tap=...]`).
ModelSpec parse_model_spec(std::string_view text);
std::string format_model_spec(const ModelSpec& spec);

/// Weight + bias count over backbone layers 1..upto (all of them when unset).
std::int64_t count_params(const ModelSpec& spec, std::optional<int> upto_layer = std::nullopt);
std::int64_t count_head_params(const ModelSpec& spec);
std::int64_t count_bn_params(const ModelSpec& spec);

/// Owning head and slot of a class.
struct ClassSlot {
  int head = 0;  // 0 = head_lo, 1 = head_hi
  int slot = 0;
};
ClassSlot slot_of(const ModelSpec& spec, int class_id);

}  // namespace robodet
