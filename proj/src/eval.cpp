#include "robodet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace robodet {

std::string MatchCriterion::label() const {
  std::ostringstream out;
  if (kind == CriterionKind::iou) {
    out << "iou@" << threshold;
  } else {
    out << "dist@" << threshold << "px";
  }
  return out.str();
}

namespace {

// Larger is better for both criteria; nullopt when the pair fails the criterion.
std::optional<double> match_score(const Detection& det, const Annotation& gt, const MatchCriterion& crit,
                                  ImageSize image) {
  if (crit.kind == CriterionKind::iou) {
    const double v = iou(det.box, gt.box);
    return v >= crit.threshold ? std::optional(v) : std::nullopt;
  }
  const double dx = (det.box.cx - gt.box.cx) * image.width;
  const double dy = (det.box.cy - gt.box.cy) * image.height;
  const double dist = std::hypot(dx, dy);
  return dist <= crit.threshold ? std::optional(-dist) : std::nullopt;
}

}  // namespace

std::vector<bool> match(std::span<const Detection> dets, std::span<const Annotation> gts, const MatchCriterion& crit,
                        ImageSize image) {
  std::vector<bool> tp(dets.size(), false);
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
  std::vector<bool> claimed(gts.size(), false);
  for (const std::size_t d : order) {
    std::optional<std::size_t> best;
    double best_score = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (claimed[g] || gts[g].class_id != dets[d].class_id) continue;
      const auto score = match_score(dets[d], gts[g], crit, image);
      if (score && (!best || *score > best_score)) {
        best = g;
        best_score = *score;
      }
    }
    if (best) {
      claimed[*best] = true;
      tp[d] = true;
    }
  }
  return tp;
}

std::optional<double> average_precision(std::span<const ScoredFlag> flags, int total_gt) {
  if (total_gt <= 0) return std::nullopt;
  std::vector<ScoredFlag> sorted(flags.begin(), flags.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ScoredFlag& a, const ScoredFlag& b) { return a.confidence > b.confidence; });
  std::vector<double> precision(sorted.size());
  std::vector<double> recall(sorted.size());
  int tp = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    tp += sorted[i].tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / total_gt;
  }
  // monotone non-increasing envelope
  for (std::size_t i = sorted.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

EvalReport evaluate_detections(std::span<const std::vector<Detection>> detections,
                               std::span<const std::vector<Annotation>> ground_truth, const MatchCriterion& crit,
                               ImageSize image) {
  EvalReport report;
  report.criterion = crit;
  std::array<std::vector<ScoredFlag>, kNumClasses> flags;
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    for (const auto& gt : ground_truth[i]) ++report.counts[gt.class_id].gt;
    if (i >= detections.size()) continue;
    const auto& dets = detections[i];
    const auto tp = match(dets, ground_truth[i], crit, image);
    for (std::size_t d = 0; d < dets.size(); ++d) {
      flags[dets[d].class_id].push_back({dets[d].confidence, tp[d]});
      auto& c = report.counts[dets[d].class_id];
      (tp[d] ? c.tp : c.fp) += 1;
    }
  }
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    report.counts[c].fn = report.counts[c].gt - report.counts[c].tp;
    report.ap[c] = average_precision(flags[c], report.counts[c].gt);
    if (report.ap[c]) {
      sum += *report.ap[c];
      ++defined;
    } else {
      report.warnings.push_back("class '" + std::string(class_name(c)) + "' has no ground truth; excluded from mAP");
    }
  }
  report.map = defined > 0 ? sum / defined : 0.0;
  return report;
}

std::vector<MatchCriterion> default_sweep() {
  std::vector<MatchCriterion> sweep;
  for (double t : {0.75, 0.5, 0.25, 0.1, 0.05}) sweep.push_back({CriterionKind::iou, t});
  for (double t : {4.0, 8.0, 16.0, 32.0, 64.0}) sweep.push_back({CriterionKind::center_distance, t});
  return sweep;
}

std::vector<std::vector<Detection>> run_detector(const Network<float>& net, const Dataset& data,
                                                 const EvalOptions& options) {
  std::vector<std::vector<Detection>> out(data.size());
  const int batch = std::max(1, options.batch);
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const std::size_t end = std::min(data.size(), start + batch);
    std::vector<const Image*> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(&data.samples[i].image);
    const auto raw = infer(net, make_batch(images, net.spec.height, net.spec.width));
    for (std::size_t i = start; i < end; ++i) {
      out[i] = detections_from(raw, net.spec, net.anchors, options.conf_threshold, options.nms_iou,
                               static_cast<int>(i - start));
    }
  }
  return out;
}

std::vector<EvalReport> evaluate(const Network<float>& net, const Dataset& data, std::span<const MatchCriterion> sweep,
                                 const EvalOptions& options) {
  const auto detections = run_detector(net, data, options);
  std::vector<std::vector<Annotation>> gts;
  gts.reserve(data.size());
  for (const auto& s : data.samples) gts.push_back(s.annotations);
  std::vector<EvalReport> reports;
  const ImageSize size{data.image_width, data.image_height};
  for (const auto& crit : sweep) reports.push_back(evaluate_detections(detections, gts, crit, size));
  return reports;
}

double map_at_distance(const Network<float>& net, const Dataset& data, double pixels, const EvalOptions& options) {
  const MatchCriterion crit{CriterionKind::center_distance, pixels};
  return evaluate(net, data, std::span(&crit, 1), options).front().map;
}

void write_report_csv(std::ostream& out, std::span<const ModelReports> rows) {
  out << "model";
  if (!rows.empty()) {
    for (const auto& r : rows.front().reports) out << "," << r.criterion.label();
  }
  out << "\n" << std::fixed << std::setprecision(4);
  for (const auto& row : rows) {
    out << row.model;
    for (const auto& r : row.reports) out << "," << r.map;
    out << "\n";
  }
}

void write_per_class_csv(std::ostream& out, std::span<const ModelReports> rows) {
  out << "model,criterion,class,ap,gt,tp,fp,fn\n" << std::fixed << std::setprecision(4);
  for (const auto& row : rows) {
    for (const auto& r : row.reports) {
      for (int c = 0; c < kNumClasses; ++c) {
        out << row.model << "," << r.criterion.label() << "," << class_name(c) << ",";
        if (r.ap[c]) out << *r.ap[c];
        const auto& k = r.counts[c];
        out << "," << k.gt << "," << k.tp << "," << k.fp << "," << k.fn << "\n";
      }
    }
  }
}

}  // namespace robodet
