#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "robodet/data.hpp"
#include "robodet/detect.hpp"
#include "robodet/network.hpp"

namespace robodet {

enum class CriterionKind { iou, center_distance };

/// IoU ≥ threshold, or center distance ≤ threshold pixels of the original image.
struct MatchCriterion {
  CriterionKind kind = CriterionKind::iou;
  double threshold = 0.5;

  [[nodiscard]] std::string label() const;
};

struct ImageSize {
  int width = 640;
  int height = 480;
};

/// Per-detection TP flags (input order). Within each class, detections in descending
/// confidence greedily claim the best unmatched ground truth that passes the criterion;
/// ties go to the lower ground-truth index.
std::vector<bool> match(std::span<const Detection> dets, std::span<const Annotation> gts, const MatchCriterion& crit,
                        ImageSize image);

struct ScoredFlag {
  double confidence = 0.0;
  bool tp = false;
};

/// All-point interpolated AP; nullopt when the class has no ground truth.
std::optional<double> average_precision(std::span<const ScoredFlag> flags, int total_gt);

struct ClassCounts {
  int gt = 0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

struct EvalReport {
  MatchCriterion criterion;
  std::array<std::optional<double>, kNumClasses> ap{};
  double map = 0.0;  // mean over classes with ground truth
  std::array<ClassCounts, kNumClasses> counts{};
  std::vector<std::string> warnings;
};

EvalReport evaluate_detections(std::span<const std::vector<Detection>> detections,
                               std::span<const std::vector<Annotation>> ground_truth, const MatchCriterion& crit,
                               ImageSize image);

/// IoU {0.75, 0.5, 0.25, 0.1, 0.05} then distance {4, 8, 16, 32, 64} px.
std::vector<MatchCriterion> default_sweep();

struct EvalOptions {
  double conf_threshold = 0.01;
  std::optional<double> nms_iou;
  int batch = 8;
};

/// Runs inference over the dataset and returns post-processed detections per image.
std::vector<std::vector<Detection>> run_detector(const Network<float>& net, const Dataset& data,
                                                 const EvalOptions& options = {});

std::vector<EvalReport> evaluate(const Network<float>& net, const Dataset& data,
                                 std::span<const MatchCriterion> sweep, const EvalOptions& options = {});

/// mAP under the center-distance criterion at `pixels`.
double map_at_distance(const Network<float>& net, const Dataset& data, double pixels,
                       const EvalOptions& options = {});

struct ModelReports {
  std::string model;
  std::vector<EvalReport> reports;
};

/// One row per model, one mAP column per criterion.
void write_report_csv(std::ostream& out, std::span<const ModelReports> rows);
/// One row per (model, criterion, class).
void write_per_class_csv(std::ostream& out, std::span<const ModelReports> rows);

}  // namespace robodet
