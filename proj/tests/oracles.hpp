#pragma once

// Independent reference implementations used to check the engine. They favor the
// most literal formulation over speed and share no code with the library beyond
// its plain data types.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "robodet/detect.hpp"
#include "robodet/eval.hpp"
#include "robodet/layers.hpp"

namespace oracle {

using robodet::Annotation;
using robodet::BBox;
using robodet::Detection;

/// Direct six-loop convolution with zero "same" padding.
template <typename Scalar>
robodet::Tensor<double> naive_conv(const robodet::Tensor<Scalar>& input, const robodet::ConvParams<Scalar>& p) {
  const auto& s = input.shape();
  const int pad = p.kernel / 2;
  const int oh = s.h / p.stride;
  const int ow = s.w / p.stride;
  robodet::Tensor<double> out(robodet::Shape{s.n, p.out_ch, oh, ow});
  for (int n = 0; n < s.n; ++n) {
    for (int o = 0; o < p.out_ch; ++o) {
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
          double acc = p.bias[o];
          for (int c = 0; c < s.c; ++c) {
            for (int ky = 0; ky < p.kernel; ++ky) {
              for (int kx = 0; kx < p.kernel; ++kx) {
                const int iy = y * p.stride + ky - pad;
                const int ix = x * p.stride + kx - pad;
                if (iy < 0 || iy >= s.h || ix < 0 || ix >= s.w) continue;
                acc += static_cast<double>(p.weights(o, c, ky, kx)) * static_cast<double>(input(n, c, iy, ix));
              }
            }
          }
          out(n, o, y, x) = acc;
        }
      }
    }
  }
  return out;
}

/// Central differences of `f` with respect to `count` values starting at `x`.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, double* x, std::size_t count,
                                            double eps = 1e-6) {
  std::vector<double> g(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = f();
    x[i] = saved - eps;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

/// ‖a − b‖ / max(‖a‖ + ‖b‖, tiny), so that all-zero gradients compare equal.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nb);
  return denom < 1e-12 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

template <typename Vec>
std::vector<double> to_vector(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

/// Area ratio estimated by counting pixel centers on a res × res raster of the unit square.
inline double raster_iou(const BBox& a, const BBox& b, int res = 1000) {
  long inter = 0;
  long uni = 0;
  for (int y = 0; y < res; ++y) {
    const double py = (y + 0.5) / res;
    for (int x = 0; x < res; ++x) {
      const double px = (x + 0.5) / res;
      const bool ina = px >= a.left() && px < a.right() && py >= a.top() && py < a.bottom();
      const bool inb = px >= b.left() && px < b.right() && py >= b.top() && py < b.bottom();
      inter += ina && inb;
      uni += ina || inb;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Literal IoU from corner coordinates.
inline double corner_iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.cx + a.w / 2, b.cx + b.w / 2) - std::max(a.cx - a.w / 2, b.cx - b.w / 2));
  const double iy = std::max(0.0, std::min(a.cy + a.h / 2, b.cy + b.h / 2) - std::max(a.cy - a.h / 2, b.cy - b.h / 2));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

/// O(n²) greedy NMS: a detection survives when no surviving same-class detection
/// ranked before it (higher confidence, or equal confidence and lower index) overlaps
/// it by more than the threshold.
inline std::vector<Detection> brute_nms(const std::vector<Detection>& dets, double threshold) {
  const std::size_t n = dets.size();
  auto before = [&](std::size_t i, std::size_t j) {
    return dets[i].confidence > dets[j].confidence || (dets[i].confidence == dets[j].confidence && i < j);
  };
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    rank[i] = 0;
    for (std::size_t j = 0; j < n; ++j) rank[i] += before(j, i);
  }
  std::vector<bool> alive(n, false);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      if (rank[i] != r) continue;
      bool keep = true;
      for (std::size_t j = 0; j < n; ++j) {
        if (alive[j] && dets[j].class_id == dets[i].class_id && corner_iou(dets[j].box, dets[i].box) > threshold) {
          keep = false;
        }
      }
      alive[i] = keep;
    }
  }
  std::vector<Detection> out;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      if (rank[i] == r && alive[i]) out.push_back(dets[i]);
    }
  }
  return out;
}

/// Greedy matcher written from the rule: detections in descending confidence (ties by
/// index) each claim the unclaimed same-class ground truth with the highest IoU (or the
/// smallest center distance) among those meeting the threshold; ties go to the lower
/// ground-truth index.
inline std::vector<bool> brute_match(const std::vector<Detection>& dets, const std::vector<Annotation>& gts,
                                     const robodet::MatchCriterion& crit, robodet::ImageSize image) {
  const std::size_t n = dets.size();
  std::vector<bool> used(n, false);
  std::vector<bool> tp(n, false);
  std::vector<bool> claimed(gts.size(), false);
  for (std::size_t step = 0; step < n; ++step) {
    std::size_t d = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      if (d == n || dets[i].confidence > dets[d].confidence) d = i;
    }
    used[d] = true;
    std::optional<std::size_t> best;
    double best_value = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (claimed[g] || gts[g].class_id != dets[d].class_id) continue;
      if (crit.kind == robodet::CriterionKind::iou) {
        const double v = corner_iou(dets[d].box, gts[g].box);
        if (v >= crit.threshold && (!best || v > best_value)) {
          best = g;
          best_value = v;
        }
      } else {
        const double dx = (dets[d].box.cx - gts[g].box.cx) * image.width;
        const double dy = (dets[d].box.cy - gts[g].box.cy) * image.height;
        const double v = std::sqrt(dx * dx + dy * dy);
        if (v <= crit.threshold && (!best || v < best_value)) {
          best = g;
          best_value = v;
        }
      }
    }
    if (best) {
      claimed[*best] = true;
      tp[d] = true;
    }
  }
  return tp;
}

/// AP as Σ over true positives of (1/G)·max precision at that rank or later, which is
/// the area under the monotone precision envelope.
inline double brute_ap(std::vector<std::pair<double, bool>> scored, int total_gt) {
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  const std::size_t n = scored.size();
  std::vector<double> precision(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += scored[i].second;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  double ap = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!scored[i].second) continue;
    double best = 0.0;
    for (std::size_t j = i; j < n; ++j) best = std::max(best, precision[j]);
    ap += best / total_gt;
  }
  return ap;
}

/// Dataset mAP from brute_match and brute_ap; classes without ground truth are skipped.
inline double brute_map(const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<Annotation>>& gts,
                        const robodet::MatchCriterion& crit, robodet::ImageSize image) {
  std::array<std::vector<std::pair<double, bool>>, robodet::kNumClasses> scored;
  std::array<int, robodet::kNumClasses> total{};
  for (std::size_t i = 0; i < gts.size(); ++i) {
    for (const auto& g : gts[i]) ++total[g.class_id];
    const auto tp = brute_match(dets[i], gts[i], crit, image);
    for (std::size_t d = 0; d < dets[i].size(); ++d) scored[dets[i][d].class_id].push_back({dets[i][d].confidence, tp[d]});
  }
  double sum = 0.0;
  int classes = 0;
  for (int c = 0; c < robodet::kNumClasses; ++c) {
    if (total[c] == 0) continue;
    sum += brute_ap(scored[c], total[c]);
    ++classes;
  }
  return classes == 0 ? 0.0 : sum / classes;
}

/// BT.601 full-range RGB → YUV, each scaled to [0, 1] with chroma offset 128.
inline std::array<double, 3> yuv(double r, double g, double b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  const double u = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
  const double v = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
  return {y / 255.0, u / 255.0, v / 255.0};
}

/// Indices of weights with |w| < θ·max|w| (everything when the layer is all zero).
template <typename Vec>
std::vector<std::size_t> prune_scan(const Vec& w, double theta) {
  double max_abs = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) max_abs = std::max(max_abs, std::abs(static_cast<double>(w[i])));
  std::vector<std::size_t> out;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const float cut = static_cast<float>(theta) * static_cast<float>(max_abs);
    if (max_abs == 0.0 || std::abs(w[i]) < cut) out.push_back(static_cast<std::size_t>(i));
  }
  return out;
}

inline std::vector<Annotation> size_scan(const std::vector<Annotation>& in, double min_wh) {
  std::vector<Annotation> out;
  for (const auto& a : in) {
    if (!(a.box.w < min_wh) && !(a.box.h < min_wh)) out.push_back(a);
  }
  return out;
}

/// Random boxes fully inside the unit square.
inline BBox random_box(std::mt19937_64& rng, double min_size = 0.02, double max_size = 0.4) {
  std::uniform_real_distribution<double> size(min_size, max_size);
  BBox b;
  b.w = size(rng);
  b.h = size(rng);
  b.cx = std::uniform_real_distribution<double>(b.w / 2, 1.0 - b.w / 2)(rng);
  b.cy = std::uniform_real_distribution<double>(b.h / 2, 1.0 - b.h / 2)(rng);
  return b;
}

}  // namespace oracle
