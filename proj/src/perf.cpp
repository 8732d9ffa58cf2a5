#include "robodet/perf.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "robodet/error.hpp"
#include "robodet/layers.hpp"

namespace robodet {

std::vector<ConvShape> conv_shapes(const ModelSpec& spec) {
  std::vector<ConvShape> shapes;
  int h = spec.height;
  int w = spec.width;
  std::vector<std::pair<int, int>> extents;  // output extent after each backbone layer
  for (const auto& l : spec.layers) {
    h = conv_output_extent(h, l.stride);
    w = conv_output_extent(w, l.stride);
    extents.emplace_back(h, w);
    shapes.push_back({"L" + std::to_string(l.index), l.kernel, l.stride, l.in_ch, l.out_ch, h, w});
  }
  for (const auto& head : spec.heads) {
    const LayerSpec l = spec.head_layer(head);
    const auto [hh, hw] = extents.at(head.source_layer - 1);
    shapes.push_back({std::string(tap_name(head.label)), l.kernel, l.stride, l.in_ch, l.out_ch, hh, hw});
  }
  return shapes;
}

std::vector<ConvShape> tiny_yolo_v3_reference() {
  return {
      {"conv1", 3, 1, 3, 16, 416, 416},     {"conv2", 3, 1, 16, 32, 208, 208},
      {"conv3", 3, 1, 32, 64, 104, 104},    {"conv4", 3, 1, 64, 128, 52, 52},
      {"conv5", 3, 1, 128, 256, 26, 26},    {"conv6", 3, 1, 256, 512, 13, 13},
      {"conv7", 3, 1, 512, 1024, 13, 13},   {"conv8", 1, 1, 1024, 256, 13, 13},
      {"conv9", 3, 1, 256, 512, 13, 13},    {"yolo13", 1, 1, 512, 255, 13, 13},
      {"conv11", 1, 1, 256, 128, 13, 13},   {"conv12", 3, 1, 384, 256, 26, 26},
      {"yolo26", 1, 1, 256, 255, 26, 26},
  };
}

OpReport count_macs(std::string model, std::span<const ConvShape> shapes,
                    std::optional<std::span<const double>> densities) {
  if (densities && densities->size() != shapes.size()) {
    throw ValidationError("count_macs: " + std::to_string(densities->size()) + " densities for " +
                          std::to_string(shapes.size()) + " layers");
  }
  OpReport report;
  report.model = std::move(model);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    LayerOps ops;
    ops.shape = shapes[i];
    ops.nonzero_fraction = densities ? std::clamp((*densities)[i], 0.0, 1.0) : 1.0;
    ops.macs = shapes[i].macs();
    ops.effective_macs = static_cast<double>(ops.macs) * ops.nonzero_fraction;
    report.total_macs += ops.macs;
    report.effective_macs += ops.effective_macs;
    report.params += shapes[i].params();
    report.layers.push_back(std::move(ops));
  }
  return report;
}

OpReport count_macs(const ModelSpec& spec, std::optional<std::span<const double>> densities) {
  const auto shapes = conv_shapes(spec);
  return count_macs(spec.name, shapes, densities);
}

OpReport count_macs(const Network<float>& net) {
  std::vector<double> densities;
  for (const auto& layer : net.layers) densities.push_back(layer.nonzero_fraction());
  return count_macs(net.spec, std::span<const double>(densities));
}

OpReport tiny_yolo_v3_report() {
  const auto shapes = tiny_yolo_v3_reference();
  return count_macs("tiny_yolov3_416", shapes);
}

double mac_ratio(const OpReport& a, const OpReport& b) { return a.effective_macs / b.effective_macs; }

void print_op_table(std::ostream& out, const OpReport& r) {
  out << "model " << r.model << "\n";
  out << std::left << std::setw(9) << "layer" << std::right << std::setw(4) << "k" << std::setw(4) << "s"
      << std::setw(7) << "in" << std::setw(7) << "out" << std::setw(11) << "output" << std::setw(15) << "MACs"
      << std::setw(9) << "nonzero" << std::setw(15) << "effective" << "\n";
  for (const auto& l : r.layers) {
    const auto& s = l.shape;
    out << std::left << std::setw(9) << s.label << std::right << std::setw(4) << s.kernel << std::setw(4)
        << s.stride << std::setw(7) << s.in_ch << std::setw(7) << s.out_ch << std::setw(11)
        << (std::to_string(s.out_w) + "x" + std::to_string(s.out_h)) << std::setw(15) << l.macs << std::setw(9)
        << std::fixed << std::setprecision(3) << l.nonzero_fraction << std::setw(15) << std::setprecision(0)
        << l.effective_macs << "\n";
  }
  out << std::left << std::setw(46) << "total" << std::right << std::setw(15) << r.total_macs << std::setw(9) << ""
      << std::setw(15) << r.effective_macs << "\n";
  out << "params " << r.params << "\n";
  out << "MACs count convolutions only; batch norm and activations are excluded.\n";
  out.unsetf(std::ios::floatfield);
}

void write_op_csv(std::ostream& out, const OpReport& r) {
  out << "model,layer,kernel,stride,in_ch,out_ch,out_h,out_w,macs,nonzero_fraction,effective_macs\n";
  for (const auto& l : r.layers) {
    const auto& s = l.shape;
    out << r.model << "," << s.label << "," << s.kernel << "," << s.stride << "," << s.in_ch << "," << s.out_ch << ","
        << s.out_h << "," << s.out_w << "," << l.macs << "," << std::setprecision(6) << l.nonzero_fraction << ","
        << std::fixed << std::setprecision(0) << l.effective_macs << "\n";
    out.unsetf(std::ios::floatfield);
  }
}

void print_comparison(std::ostream& out, std::span<const OpReport> reports) {
  if (reports.size() < 2) throw ValidationError("compare needs at least two models");
  std::size_t width = 8;
  for (const auto& r : reports) width = std::max(width, r.model.size() + 2);
  const int w = static_cast<int>(width);
  out << std::left << std::setw(w) << "model" << std::right << std::setw(16) << "MACs" << std::setw(16)
      << "effective" << "\n";
  for (const auto& r : reports) {
    out << std::left << std::setw(w) << r.model << std::right << std::setw(16) << r.total_macs << std::setw(16)
        << std::fixed << std::setprecision(0) << r.effective_macs << "\n";
  }
  out << "\nratio row/column (effective MACs)\n" << std::left << std::setw(w) << "";
  for (const auto& c : reports) out << std::right << std::setw(w) << c.model;
  out << "\n";
  for (const auto& r : reports) {
    out << std::left << std::setw(w) << r.model;
    for (const auto& c : reports) out << std::right << std::setw(w) << std::setprecision(3) << mac_ratio(r, c);
    out << "\n";
  }
  out.unsetf(std::ios::floatfield);
}

BenchmarkResult benchmark(const std::function<void()>& fn, int repeats) {
  if (repeats < 3) throw ValidationError("benchmark needs repeats >= 3, got " + std::to_string(repeats));
  fn();
  BenchmarkResult result;
  for (int i = 0; i < repeats; ++i) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const auto stop = std::chrono::steady_clock::now();
    result.runs_ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
  }
  const double n = static_cast<double>(repeats);
  result.min_ms = *std::min_element(result.runs_ms.begin(), result.runs_ms.end());
  result.mean_ms = std::accumulate(result.runs_ms.begin(), result.runs_ms.end(), 0.0) / n;
  double var = 0.0;
  for (double t : result.runs_ms) var += (t - result.mean_ms) * (t - result.mean_ms);
  result.std_ms = std::sqrt(var / (n - 1.0));
  return result;
}

BenchmarkResult benchmark(const CompiledNetwork<float>& plan, const Tensor<float>& input, int repeats) {
  return benchmark([&] { [[maybe_unused]] volatile auto n = infer(plan, input).lo.size(); }, repeats);
}

}  // namespace robodet
