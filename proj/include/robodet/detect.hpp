#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "robodet/model.hpp"
#include "robodet/tensor.hpp"

namespace robodet {

/// Center-format box, normalized to the full image.
struct BBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  [[nodiscard]] double area() const { return w * h; }
  [[nodiscard]] double left() const { return cx - 0.5 * w; }
  [[nodiscard]] double right() const { return cx + 0.5 * w; }
  [[nodiscard]] double top() const { return cy - 0.5 * h; }
  [[nodiscard]] double bottom() const { return cy + 0.5 * h; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Annotation {
  int class_id = 0;
  BBox box;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct Detection {
  BBox box;
  int class_id = 0;
  double confidence = 0.0;
};

/// Stored in single precision so a network's anchors survive the weight file unchanged.
struct Anchor {
  float w = 0.0f;
  float h = 0.0f;
};

/// One (w, h) prior per class, ordered [ball, crossing, goalpost, robot].
struct AnchorSet {
  std::array<Anchor, kNumClasses> per_class{};

  const Anchor& operator[](int class_id) const { return per_class.at(class_id); }
  Anchor& operator[](int class_id) { return per_class.at(class_id); }
};

/// Anchors with every class set to (w, h); placeholder until real anchors are computed.
AnchorSet uniform_anchors(double w, double h);

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

double iou(const BBox& a, const BBox& b);

/// Per-class arithmetic mean of box widths and heights.
AnchorSet compute_anchors(std::span<const Annotation> annotations);

/// Grid cell and regression targets for one ground-truth box.
struct EncodedTarget {
  int row = 0;
  int col = 0;
  double tx = 0.0;  // target for σ(tx), in [0, 1)
  double ty = 0.0;
  double tw = 0.0;  // target for tw, ln(w / aw)
  double th = 0.0;
};

EncodedTarget encode(const Annotation& gt, const AnchorSet& anchors, GridSize grid);

/// Decodes one sample of a head's raw output into one candidate per (cell, owned class).
template <typename Scalar>
std::vector<Detection> decode(const Tensor<Scalar>& raw, const HeadSpec& head, const AnchorSet& anchors,
                              GridSize grid, int sample = 0) {
  const Shape& s = raw.shape();
  if (s.c != HeadSpec::channels() || s.h != grid.rows || s.w != grid.cols || sample < 0 || sample >= s.n) {
    throw ShapeError("decode expects raw (" + std::to_string(sample + 1) + "+, " +
                     std::to_string(HeadSpec::channels()) + ", " + std::to_string(grid.rows) + ", " +
                     std::to_string(grid.cols) + "), got " + to_string(s));
  }
  std::vector<Detection> out;
  out.reserve(static_cast<std::size_t>(grid.rows) * grid.cols * HeadSpec::slots());
  for (int i = 0; i < grid.rows; ++i) {
    for (int j = 0; j < grid.cols; ++j) {
      for (int slot = 0; slot < HeadSpec::slots(); ++slot) {
        const int base = 5 * slot;
        const int cls = head.classes_owned[slot];
        const double tx = raw(sample, base + 0, i, j);
        const double ty = raw(sample, base + 1, i, j);
        const double tw = raw(sample, base + 2, i, j);
        const double th = raw(sample, base + 3, i, j);
        const double to = raw(sample, base + 4, i, j);
        Detection det;
        det.class_id = cls;
        det.box.cx = (j + sigmoid(tx)) / grid.cols;
        det.box.cy = (i + sigmoid(ty)) / grid.rows;
        det.box.w = anchors[cls].w * std::exp(tw);
        det.box.h = anchors[cls].h * std::exp(th);
        det.confidence = sigmoid(to);
        out.push_back(det);
      }
    }
  }
  return out;
}

/// Merges head candidates, drops those below `conf_threshold` and optionally runs
/// greedy per-class NMS. Output is sorted by descending confidence.
std::vector<Detection> postprocess(std::span<const Detection> dets_lo, std::span<const Detection> dets_hi,
                                   double conf_threshold, std::optional<double> nms_iou = std::nullopt);

/// Greedy per-class non-maximum suppression.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

}  // namespace robodet
