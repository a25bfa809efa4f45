#include "collabod/eval.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "collabod/parallel.hpp"
#include "collabod/tensor.hpp"

namespace collabod::eval {

std::array<double, kNumIouThresholds> iou_thresholds() {
    std::array<double, kNumIouThresholds> t{};
    for (int i = 0; i < kNumIouThresholds; ++i) t[i] = 0.5 + 0.05 * i;
    return t;
}

double iou(const Box& a, const Box& b) {
    if (!(a.x1 < a.x2 && a.y1 < a.y2)) throw Error("iou: degenerate box");
    if (!(b.x1 < b.x2 && b.y1 < b.y2)) throw Error("iou: degenerate box");
    return overlap_iou(a, b);
}

MatchResult match_greedy(std::span<const ScoredBox> dets, std::span<const GroundTruth> gts,
                         double threshold) {
    MatchResult m;
    m.det_to_gt.assign(dets.size(), -1);
    m.gt_to_det.assign(gts.size(), -1);
    for (std::size_t d = 0; d < dets.size(); ++d) {
        const Box& b = dets[d].box;
        // A zero-area detection overlaps nothing and stays a false positive.
        const bool degenerate = !(b.x1 < b.x2 && b.y1 < b.y2);
        int best = -1;
        double best_iou = threshold;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (m.gt_to_det[g] >= 0 || gts[g].class_id != dets[d].class_id) continue;
            const double v = degenerate ? 0.0 : iou(b, gts[g].box);
            if (v < threshold) continue;
            if (best < 0 || v > best_iou) {
                best = static_cast<int>(g);
                best_iou = v;
            }
        }
        if (best >= 0) {
            m.det_to_gt[d] = best;
            m.gt_to_det[best] = static_cast<int>(d);
            ++m.true_positives;
        } else {
            ++m.false_positives;
        }
    }
    m.false_negatives = gts.size() - m.true_positives;
    return m;
}

double average_precision(std::span<const RankedHit> hits, std::size_t num_gt) {
    if (num_gt == 0 || hits.empty()) return 0.0;
    std::vector<double> recall(hits.size()), precision(hits.size());
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < hits.size(); ++i) {
        (hits[i].true_positive ? tp : fp) += 1.0;
        recall[i] = tp / static_cast<double>(num_gt);
        precision[i] = tp / (tp + fp);
    }
    for (std::size_t i = hits.size() - 1; i-- > 0;) precision[i] = std::max(precision[i], precision[i + 1]);
    double sum = 0.0;
    for (int k = 0; k < kRecallPoints; ++k) {
        const double r = static_cast<double>(k) / (kRecallPoints - 1);
        const auto it = std::lower_bound(recall.begin(), recall.end(), r);
        if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    return sum / kRecallPoints;
}

namespace {

bool in_range(double area, AreaRange r) { return area >= r.lo && area < r.hi; }

struct ImageClassCell {
    std::vector<std::size_t> dets;  // indices into the input, score-sorted, truncated
    std::vector<std::size_t> gts;
};

}  // namespace

std::optional<std::array<double, kNumIouThresholds>> evaluate_range(
    std::span<const ScoredBox> dets, std::span<const GroundTruth> gts, AreaRange range,
    const EvalOptions& options, std::map<int, std::array<double, kNumIouThresholds>>* per_class) {
    // Image order is first appearance across ground truth, then detections.
    std::map<std::string, std::size_t> image_ids;
    for (const auto& g : gts) image_ids.emplace(g.image, image_ids.size());
    for (const auto& d : dets) image_ids.emplace(d.image, image_ids.size());

    std::map<int, std::size_t> gt_count;
    std::map<std::pair<int, std::size_t>, ImageClassCell> cells;  // (class, image)
    for (std::size_t i = 0; i < gts.size(); ++i) {
        if (!in_range(gts[i].area(), range)) continue;
        ++gt_count[gts[i].class_id];
        cells[{gts[i].class_id, image_ids.at(gts[i].image)}].gts.push_back(i);
    }
    if (gt_count.empty()) return std::nullopt;
    for (std::size_t i = 0; i < dets.size(); ++i)
        if (gt_count.contains(dets[i].class_id))
            cells[{dets[i].class_id, image_ids.at(dets[i].image)}].dets.push_back(i);
    for (auto& [key, cell] : cells) {
        std::stable_sort(cell.dets.begin(), cell.dets.end(),
                         [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
        if (cell.dets.size() > options.max_dets) cell.dets.resize(options.max_dets);
    }

    const auto thresholds = iou_thresholds();
    std::vector<std::pair<int, std::size_t>> keys;
    for (const auto& [key, cell] : cells) keys.push_back(key);

    // Per cell and threshold: (input index, score, tp) for non-ignored detections.
    struct Scored {
        std::size_t index;
        double score;
        bool tp;
    };
    std::vector<std::array<std::vector<Scored>, kNumIouThresholds>> results(keys.size());
    parallel_for(keys.size(), [&](std::size_t k) {
        const ImageClassCell& cell = cells.at(keys[k]);
        std::vector<ScoredBox> cd;
        std::vector<GroundTruth> cg;
        for (auto i : cell.dets) cd.push_back(dets[i]);
        for (auto i : cell.gts) cg.push_back(gts[i]);
        for (int t = 0; t < kNumIouThresholds; ++t) {
            const MatchResult m = match_greedy(cd, cg, thresholds[t]);
            for (std::size_t d = 0; d < cd.size(); ++d) {
                const bool tp = m.det_to_gt[d] >= 0;
                if (!tp && !in_range(cd[d].box.area(), range)) continue;
                results[k][t].push_back({cell.dets[d], cd[d].score, tp});
            }
        }
    });

    std::map<int, std::array<double, kNumIouThresholds>> ap;
    for (const auto& [cls, count] : gt_count) {
        for (int t = 0; t < kNumIouThresholds; ++t) {
            std::vector<Scored> pooled;
            for (std::size_t k = 0; k < keys.size(); ++k)
                if (keys[k].first == cls)
                    pooled.insert(pooled.end(), results[k][t].begin(), results[k][t].end());
            std::stable_sort(pooled.begin(), pooled.end(), [](const Scored& a, const Scored& b) {
                if (a.score != b.score) return a.score > b.score;
                return a.index < b.index;
            });
            std::vector<RankedHit> hits;
            hits.reserve(pooled.size());
            for (const auto& s : pooled) hits.push_back({s.score, s.tp});
            ap[cls][t] = average_precision(hits, count);
        }
    }
    std::array<double, kNumIouThresholds> mean{};
    for (int t = 0; t < kNumIouThresholds; ++t) {
        double sum = 0.0;
        for (const auto& [cls, v] : ap) sum += v[t];
        mean[t] = sum / static_cast<double>(ap.size());
    }
    if (per_class) *per_class = std::move(ap);
    return mean;
}

ApSummary summarize(std::span<const ScoredBox> dets, std::span<const GroundTruth> gts,
                    const EvalOptions& options) {
    ApSummary s;
    std::set<std::string> images;
    for (const auto& g : gts) images.insert(g.image);
    for (const auto& d : dets) images.insert(d.image);
    s.num_images = images.size();
    s.num_gt = gts.size();
    s.num_dets = dets.size();

    auto mean_of = [](const std::array<double, kNumIouThresholds>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / kNumIouThresholds;
    };
    if (const auto all = evaluate_range(dets, gts, AreaRange{}, options, &s.per_class)) {
        s.per_threshold = *all;
        s.ap50 = (*all)[0];
        s.ap75 = (*all)[5];
        s.ap50_95 = mean_of(*all);
    }
    if (const auto v = evaluate_range(dets, gts, AreaRange{0.0, kSmallArea}, options)) s.ap_small = mean_of(*v);
    if (const auto v = evaluate_range(dets, gts, AreaRange{kSmallArea, kMediumArea}, options)) s.ap_medium = mean_of(*v);
    if (const auto v = evaluate_range(dets, gts, AreaRange{kMediumArea, 1e10}, options)) s.ap_large = mean_of(*v);
    return s;
}

}  // namespace collabod::eval
