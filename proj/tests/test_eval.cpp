#include <doctest.h>

#include <algorithm>
#include <json.hpp>

#include "collabod/eval.hpp"
#include "collabod/tensor.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace collabod;
using namespace collabod::eval;

namespace {

const AreaRange kRanges[4] = {{0.0, 1e10}, {0.0, kSmallArea}, {kSmallArea, kMediumArea}, {kMediumArea, 1e10}};

using Fixture = fixtures::EvalFixture;

Fixture random_fixture(Rng& rng) { return fixtures::random_eval_fixture(rng); }

}  // namespace

TEST_CASE("iou worked examples") {
    CHECK(iou({0, 0, 10, 10}, {0, 0, 10, 10}) == 1.0);
    CHECK(iou({0, 0, 10, 10}, {5, 0, 15, 10}) == doctest::Approx(50.0 / 150.0));
    CHECK(iou({0, 0, 10, 10}, {10, 0, 20, 10}) == 0.0);
    CHECK(iou({0, 0, 10, 10}, {2, 2, 4, 4}) == doctest::Approx(0.04));
    CHECK_THROWS_AS(iou({0, 0, 0, 10}, {0, 0, 10, 10}), Error);
    CHECK_THROWS_AS(iou({0, 0, 10, 10}, {0, 5, 10, 5}), Error);
    const auto t = iou_thresholds();
    CHECK(t.front() == doctest::Approx(0.5));
    CHECK(t.back() == doctest::Approx(0.95));
}

TEST_CASE("greedy matching prefers the highest overlap and the first index on ties") {
    const std::vector<GroundTruth> gts = {{"a", {0, 0, 10, 10}, 0}, {"a", {0, 0, 10, 10}, 0}, {"a", {20, 0, 30, 10}, 0}};
    const std::vector<ScoredBox> dets = {{"a", {0, 0, 10, 10}, 0, 0.9},
                                         {"a", {1, 0, 11, 10}, 0, 0.8},
                                         {"a", {0, 0, 10, 10}, 0, 0.7},
                                         {"a", {20, 0, 30, 10}, 1, 0.6}};
    const MatchResult m = match_greedy(dets, gts, 0.5);
    CHECK(m.det_to_gt == std::vector<int>{0, 1, -1, -1});
    CHECK(m.gt_to_det == std::vector<int>{0, 1, -1});
    CHECK(m.true_positives == 2);
    CHECK(m.false_positives == 2);
    CHECK(m.false_negatives == 1);
}

TEST_CASE("average precision worked examples") {
    const RankedHit perfect[2] = {{0.9, true}, {0.8, true}};
    CHECK(average_precision(perfect, 2) == 1.0);
    const RankedHit half[2] = {{0.9, true}, {0.8, false}};
    CHECK(average_precision(half, 2) == doctest::Approx(51.0 / 101.0));
    // Precision 1/2 at recall 1 after a leading false positive.
    const RankedHit late[2] = {{0.9, false}, {0.8, true}};
    CHECK(average_precision(late, 1) == doctest::Approx(0.5));
    CHECK(average_precision({}, 3) == 0.0);
}

TEST_CASE("perfect and empty detections") {
    std::vector<GroundTruth> gts;
    std::vector<ScoredBox> dets;
    const Box boxes[5] = {{0, 0, 20, 20}, {30, 30, 90, 90}, {0, 0, 150, 120}, {50, 10, 60, 30}, {5, 5, 200, 200}};
    for (int i = 0; i < 5; ++i) {
        gts.push_back({"img" + std::to_string(i % 3), boxes[i], i % 2});
        dets.push_back({"img" + std::to_string(i % 3), boxes[i], i % 2, 0.5 + 0.1 * i});
    }
    const ApSummary p = summarize(dets, gts);
    CHECK(p.ap50_95 == 1.0);
    CHECK(p.ap50 == 1.0);
    CHECK(p.ap75 == 1.0);
    CHECK(p.ap_small == 1.0);
    CHECK(p.ap_medium == 1.0);
    CHECK(p.ap_large == 1.0);
    CHECK(p.num_images == 3);

    const ApSummary e = summarize({}, gts);
    CHECK(e.ap50_95 == 0.0);
    CHECK(e.ap_small == 0.0);

    const std::vector<GroundTruth> only_small = {{"a", {0, 0, 10, 10}, 0}};
    const ApSummary s = summarize({}, only_small);
    CHECK(s.ap_small.has_value());
    CHECK_FALSE(s.ap_medium.has_value());
    CHECK_FALSE(s.ap_large.has_value());
}

TEST_CASE("evaluation matches the brute-force evaluator exactly") {
    Rng rng(51);
    int compared = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const Fixture f = random_fixture(rng);
        for (const AreaRange& r : kRanges) {
            const auto got = evaluate_range(f.dets, f.gts, r, {});
            const auto want = oracle::evaluate(f.dets, f.gts, r.lo, r.hi);
            REQUIRE(got.has_value() == !want.empty());
            if (!got) continue;
            for (int t = 0; t < kNumIouThresholds; ++t) CHECK((*got)[t] == want[t]);
            ++compared;
        }
    }
    CHECK(compared > 200);
}

TEST_CASE("maxDets truncates per image and class") {
    Rng rng(52);
    for (int trial = 0; trial < 100; ++trial) {
        const Fixture f = random_fixture(rng);
        const auto got = evaluate_range(f.dets, f.gts, kRanges[0], {2});
        const auto want = oracle::evaluate(f.dets, f.gts, 0.0, 1e10, 2);
        REQUIRE(got.has_value() == !want.empty());
        if (got)
            for (int t = 0; t < kNumIouThresholds; ++t) CHECK((*got)[t] == want[t]);
    }
}

TEST_CASE("evaluation properties") {
    Rng rng(53);
    for (int trial = 0; trial < 100; ++trial) {
        Fixture f = random_fixture(rng);
        if (f.gts.empty()) continue;
        const double base = summarize(f.dets, f.gts).ap50_95;
        CHECK(base >= 0.0);
        CHECK(base <= 1.0);

        // Ground-truth order is irrelevant.
        auto shuffled = f.gts;
        std::reverse(shuffled.begin(), shuffled.end());
        CHECK(summarize(f.dets, shuffled).ap50_95 == doctest::Approx(base).epsilon(1e-12));

        // Removing detections that overlap nothing of their class never hurts.
        std::vector<ScoredBox> fewer;
        for (const auto& d : f.dets)
            if (std::any_of(f.gts.begin(), f.gts.end(), [&](const GroundTruth& g) {
                    return g.image == d.image && g.class_id == d.class_id && oracle::box_iou(d.box, g.box) > 0.0;
                }))
                fewer.push_back(d);
        CHECK(summarize(fewer, f.gts).ap50_95 >= base - 1e-12);
    }
}

TEST_CASE("detection and ground-truth parsing") {
    const auto dets = parse_detections(
        "{\"image\": \"a\", \"box\": [1, 2, 3, 4], \"class\": 2, \"score\": 0.5}\n\n"
        "{\"image\": \"b\", \"box\": [0, 0, 0, 4], \"class\": 0, \"score\": 1}\n");
    REQUIRE(dets.size() == 2);
    CHECK(dets[0].image == "a");
    CHECK(dets[0].box.y2 == 4.0f);
    CHECK(dets[0].class_id == 2);
    CHECK(dets[1].score == 1.0);
    const auto gts = parse_ground_truth("{\"image\": \"a\", \"box\": [1, 2, 3, 4], \"class\": 2}\n");
    REQUIRE(gts.size() == 1);

    CHECK_THROWS_WITH_AS(parse_detections("{\"image\": \"a\"}\n"), doctest::Contains("line 1"), Error);
    CHECK_THROWS_WITH_AS(parse_detections("\n{\"image\": \"a\", \"box\": [1, 2, 3], \"class\": 0, \"score\": 1}\n"),
                         doctest::Contains("line 2"), Error);
    CHECK_THROWS_AS(parse_detections("not json\n"), Error);
    CHECK_THROWS_AS(parse_detections("{\"image\": \"a\", \"box\": [3, 2, 1, 4], \"class\": 0, \"score\": 1}\n"),
                    Error);
    CHECK_THROWS_AS(parse_ground_truth("{\"image\": \"a\", \"box\": [1, 2, 1, 4], \"class\": 0}\n"), Error);
    CHECK_THROWS_AS(parse_ground_truth("{\"image\": \"a\", \"box\": [1, 2, 3, 4], \"class\": -1}\n"), Error);
    CHECK_THROWS_AS(read_detections("/nonexistent/dets.jsonl"), Error);
}

TEST_CASE("emitted detection lines and summaries parse back") {
    Rng rng(54);
    for (int i = 0; i < 50; ++i) {
        const float x = rng.uniform(0, 500), y = rng.uniform(0, 500);
        const ScoredBox d{"im\"g" + std::to_string(i), {x, y, x + rng.uniform(0, 50), y + rng.uniform(0, 50)},
                          static_cast<int>(rng.below(80)), rng.uniform(0, 1)};
        const std::string line = format_detection(d);
        const auto back = parse_detections(line + "\n");
        REQUIRE(back.size() == 1);
        CHECK(back[0].image == d.image);
        CHECK(back[0].class_id == d.class_id);
        CHECK(std::abs(back[0].box.x1 - d.box.x1) <= 1e-4);
        CHECK(std::abs(back[0].score - d.score) <= 1e-6);
        CHECK(format_detection(back[0]) == line);
    }

    const Fixture f = random_fixture(rng);
    const ApSummary s = summarize(f.dets, f.gts);
    const auto j = nlohmann::json::parse(summary_json(s));
    CHECK(j.at("AP50_95").get<double>() == doctest::Approx(s.ap50_95));
    CHECK(j.at("per_threshold").size() == kNumIouThresholds);
    CHECK(j.at("images").get<std::size_t>() == s.num_images);
    CHECK(summary_text(s).find("AP50:95") != std::string::npos);
}
