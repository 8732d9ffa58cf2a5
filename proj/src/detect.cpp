#include "robodet/detect.hpp"

#include <algorithm>
#include <string>

#include "robodet/error.hpp"

namespace robodet {

AnchorSet uniform_anchors(double w, double h) {
  AnchorSet set;
  set.per_class.fill(Anchor{static_cast<float>(w), static_cast<float>(h)});
  return set;
}

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

AnchorSet compute_anchors(std::span<const Annotation> annotations) {
  std::array<double, kNumClasses> sum_w{};
  std::array<double, kNumClasses> sum_h{};
  std::array<std::size_t, kNumClasses> count{};
  for (const auto& a : annotations) {
    if (a.class_id < 0 || a.class_id >= kNumClasses) {
      throw ValidationError("annotation class id " + std::to_string(a.class_id) + " out of range");
    }
    sum_w[a.class_id] += a.box.w;
    sum_h[a.class_id] += a.box.h;
    ++count[a.class_id];
  }
  AnchorSet anchors;
  for (int c = 0; c < kNumClasses; ++c) {
    if (count[c] == 0) {
      throw ValidationError("cannot compute anchors: no annotations of class '" + std::string(class_name(c)) + "'");
    }
    anchors[c] = {static_cast<float>(sum_w[c] / count[c]), static_cast<float>(sum_h[c] / count[c])};
  }
  return anchors;
}

EncodedTarget encode(const Annotation& gt, const AnchorSet& anchors, GridSize grid) {
  const BBox& b = gt.box;
  if (b.cx < 0.0 || b.cx > 1.0 || b.cy < 0.0 || b.cy > 1.0) {
    throw ValidationError("box center (" + std::to_string(b.cx) + ", " + std::to_string(b.cy) + ") outside image");
  }
  if (b.w <= 0.0 || b.h <= 0.0) throw ValidationError("box has non-positive size");
  EncodedTarget t;
  // A center exactly on the far edge belongs to the last cell.
  t.row = std::min(static_cast<int>(std::floor(b.cy * grid.rows)), grid.rows - 1);
  t.col = std::min(static_cast<int>(std::floor(b.cx * grid.cols)), grid.cols - 1);
  t.tx = b.cx * grid.cols - t.col;
  t.ty = b.cy * grid.rows - t.row;
  const Anchor& a = anchors[gt.class_id];
  t.tw = std::log(b.w / a.w);
  t.th = std::log(b.h / a.h);
  return t;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == d.class_id && iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> postprocess(std::span<const Detection> dets_lo, std::span<const Detection> dets_hi,
                                   double conf_threshold, std::optional<double> nms_iou) {
  std::vector<Detection> merged;
  merged.reserve(dets_lo.size() + dets_hi.size());
  for (auto list : {dets_lo, dets_hi}) {
    for (const auto& d : list) {
      if (d.confidence >= conf_threshold) merged.push_back(d);
    }
  }
  if (nms_iou) return nms(std::move(merged), *nms_iou);
  std::stable_sort(merged.begin(), merged.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  return merged;
}

}  // namespace robodet
