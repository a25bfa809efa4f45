#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "collabod/box.hpp"

namespace collabod::eval {

inline constexpr int kNumIouThresholds = 10;
inline constexpr int kRecallPoints = 101;
inline constexpr double kSmallArea = 32.0 * 32.0;
inline constexpr double kMediumArea = 96.0 * 96.0;

// 0.50, 0.55, ..., 0.95
std::array<double, kNumIouThresholds> iou_thresholds();

struct GroundTruth {
    std::string image;
    Box box;
    int class_id = 0;

    double area() const { return box.area(); }
};

struct ScoredBox {
    std::string image;
    Box box;
    int class_id = 0;
    double score = 0.0;
};

// Throws Error when either box is degenerate (x1 >= x2 or y1 >= y2).
double iou(const Box& a, const Box& b);

struct MatchResult {
    std::vector<int> det_to_gt;  // gt index or -1
    std::vector<int> gt_to_det;  // det index or -1
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t false_negatives = 0;
};

// Detections must be sorted by descending score. Each detection takes the
// unmatched same-class ground truth of highest IoU (first index on ties)
// provided that IoU >= threshold.
MatchResult match_greedy(std::span<const ScoredBox> dets, std::span<const GroundTruth> gts,
                         double threshold);

struct RankedHit {
    double score = 0.0;
    bool true_positive = false;
};

// Hits in ranking order (descending score). 101-point interpolated AP:
// the precision envelope is made non-increasing, sampled at recall
// 0, 0.01, ..., 1 and averaged. Returns 0 when there are no hits.
double average_precision(std::span<const RankedHit> hits, std::size_t num_gt);

struct AreaRange {
    double lo = 0.0;
    double hi = 1e10;
};

struct EvalOptions {
    // Applied per image and class after sorting by score.
    std::size_t max_dets = 100;
};

struct ApSummary {
    // Per class with at least one ground truth, AP at each IoU threshold.
    std::map<int, std::array<double, kNumIouThresholds>> per_class;
    // Class-mean AP per threshold.
    std::array<double, kNumIouThresholds> per_threshold{};
    double ap50 = 0.0;
    double ap75 = 0.0;
    double ap50_95 = 0.0;
    // Empty when no ground truth falls into the bucket.
    std::optional<double> ap_small;
    std::optional<double> ap_medium;
    std::optional<double> ap_large;
    std::size_t num_images = 0;
    std::size_t num_gt = 0;
    std::size_t num_dets = 0;
};

// Class-mean AP over classes with >= 1 ground truth in `range`, per IoU
// threshold. Ground truths outside the range are removed before matching;
// unmatched detections whose area is outside the range are ignored.
// Detection ties in score keep input order.
std::optional<std::array<double, kNumIouThresholds>> evaluate_range(
    std::span<const ScoredBox> dets, std::span<const GroundTruth> gts, AreaRange range,
    const EvalOptions& options, std::map<int, std::array<double, kNumIouThresholds>>* per_class = nullptr);

ApSummary summarize(std::span<const ScoredBox> dets, std::span<const GroundTruth> gts,
                    const EvalOptions& options = {});

// JSON lines: {"image": str, "box": [x1,y1,x2,y2], "class": int, "score": float}
std::vector<ScoredBox> read_detections(const std::string& path);
// JSON lines: {"image": str, "box": [x1,y1,x2,y2], "class": int}
std::vector<GroundTruth> read_ground_truth(const std::string& path);
std::vector<ScoredBox> parse_detections(const std::string& text);
std::vector<GroundTruth> parse_ground_truth(const std::string& text);

std::string format_detection(const ScoredBox& det);
std::string summary_json(const ApSummary& s);
std::string summary_text(const ApSummary& s);

}  // namespace collabod::eval
