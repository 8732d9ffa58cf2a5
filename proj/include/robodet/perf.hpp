#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "robodet/model.hpp"
#include "robodet/network.hpp"

namespace robodet {

/// One convolution as far as op counting is concerned.
struct ConvShape {
  std::string label;
  int kernel = 3;
  int stride = 1;
  int in_ch = 0;
  int out_ch = 0;
  int out_h = 0;
  int out_w = 0;

  /// k²·in·out·h_out·w_out.
  [[nodiscard]] std::int64_t macs() const {
    return static_cast<std::int64_t>(kernel) * kernel * in_ch * out_ch * out_h * out_w;
  }
  [[nodiscard]] std::int64_t params() const {
    return static_cast<std::int64_t>(kernel) * kernel * in_ch * out_ch + out_ch;
  }
};

/// Backbone convolutions followed by head_lo and head_hi at the spec's input size.
std::vector<ConvShape> conv_shapes(const ModelSpec& spec);

/// Convolutions of the public Tiny-YOLOv3 config at 416×416 (pooling layers carry no MACs).
std::vector<ConvShape> tiny_yolo_v3_reference();

struct LayerOps {
  ConvShape shape;
  double nonzero_fraction = 1.0;
  std::int64_t macs = 0;
  double effective_macs = 0.0;  // macs × nonzero fraction
};

struct OpReport {
  std::string model;
  std::vector<LayerOps> layers;
  std::int64_t total_macs = 0;
  double effective_macs = 0.0;
  std::int64_t params = 0;
};

/// MACs per layer; `densities` (one per layer, in [0, 1]) scales each layer's effective count.
OpReport count_macs(std::string model, std::span<const ConvShape> shapes,
                    std::optional<std::span<const double>> densities = std::nullopt);
OpReport count_macs(const ModelSpec& spec, std::optional<std::span<const double>> densities = std::nullopt);
/// Effective MACs from the network's actual nonzero weight fractions.
OpReport count_macs(const Network<float>& net);
OpReport tiny_yolo_v3_report();

/// Effective-MAC ratio a / b.
double mac_ratio(const OpReport& a, const OpReport& b);

/// Aligned per-layer table with totals; footer notes that BN and activations are excluded.
void print_op_table(std::ostream& out, const OpReport& report);
void write_op_csv(std::ostream& out, const OpReport& report);
/// Totals and the pairwise ratio matrix for two or more models.
void print_comparison(std::ostream& out, std::span<const OpReport> reports);

struct BenchmarkResult {
  std::vector<double> runs_ms;
  double mean_ms = 0.0;
  double std_ms = 0.0;
  double min_ms = 0.0;

  [[nodiscard]] double fps() const { return mean_ms > 0.0 ? 1000.0 / mean_ms : 0.0; }
};

/// Times `repeats` (≥ 3) calls of `fn` after one untimed warmup.
BenchmarkResult benchmark(const std::function<void()>& fn, int repeats);
BenchmarkResult benchmark(const CompiledNetwork<float>& plan, const Tensor<float>& input, int repeats);

}  // namespace robodet
