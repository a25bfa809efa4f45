#pragma once

// Shared generators and fits for the unit tests and the acceptance run.

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "collabod/eval.hpp"
#include "collabod/head.hpp"
#include "collabod/tensor.hpp"

namespace fixtures {

using namespace collabod;

struct EvalFixture {
    std::vector<eval::ScoredBox> dets;
    std::vector<eval::GroundTruth> gts;
};

// Up to 3 images with up to 5 boxes each; detections are mostly jittered
// copies of ground truth, with score ties and occasional zero-area boxes.
inline EvalFixture random_eval_fixture(Rng& rng) {
    EvalFixture f;
    const int images = 1 + static_cast<int>(rng.below(3));
    for (int img = 0; img < images; ++img) {
        const std::string name = "img" + std::to_string(img);
        const int ngt = static_cast<int>(rng.below(6));
        for (int i = 0; i < ngt; ++i) {
            const float x = rng.uniform(0, 100), y = rng.uniform(0, 100);
            const float side = std::array<float, 3>{10, 50, 150}[rng.below(3)];
            f.gts.push_back({name, {x, y, x + side * rng.uniform(0.5f, 1.5f), y + side * rng.uniform(0.5f, 1.5f)},
                             static_cast<int>(rng.below(2))});
        }
        const int ndet = static_cast<int>(rng.below(6));
        for (int i = 0; i < ndet; ++i) {
            eval::ScoredBox d{name, {}, static_cast<int>(rng.below(2)), static_cast<double>(rng.below(4)) / 4.0 + 0.1};
            if (!f.gts.empty() && rng.below(3) != 0) {
                const Box g = f.gts[rng.below(f.gts.size())].box;
                const float j = rng.uniform(-0.2f, 0.2f) * static_cast<float>(g.width());
                d.box = {g.x1 + j, g.y1 + j, g.x2 + j, g.y2 - j};
            } else {
                const float x = rng.uniform(0, 150), y = rng.uniform(0, 150);
                d.box = {x, y, x + rng.uniform(0, 120), y + rng.uniform(0, 120)};
            }
            if (rng.below(10) == 0) d.box.x2 = d.box.x1;
            f.dets.push_back(d);
        }
    }
    return f;
}

struct MacFit {
    std::array<double, 3> coef{};  // a, b, c
    double max_rel_residual = 0.0;
};

// Least-squares fit of head MACs to a N C^2 + b N C + c N R over a 3x3
// grid of (N, C_h); N grows by scaling every scale extent by 1, 2, 3.
inline MacFit fit_head_macs(std::span<const std::pair<int, int>, kNumScales> base_extents, int bins = 16) {
    const int in[kNumScales] = {3, 4, 5, 6};
    std::vector<std::array<double, 3>> rows;
    std::vector<double> macs;
    for (int k = 1; k <= 3; ++k)
        for (int ch : {8, 16, 32}) {
            Rng rng(38);
            const UdaHeadParams p = UdaHeadParams::random(rng, std::span<const int, kNumScales>(in), ch, 5, bins);
            std::array<std::pair<int, int>, kNumScales> ext;
            for (int s = 0; s < kNumScales; ++s) ext[s] = {base_extents[s].first * k, base_extents[s].second * k};
            const HeadComplexity hc = head_complexity(p, ext);
            const double n = static_cast<double>(hc.locations);
            rows.push_back({n * ch * ch, n * ch, n * bins});
            macs.push_back(static_cast<double>(hc.total_macs()));
        }
    double a[3][4] = {};
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) a[i][j] += rows[r][i] * rows[r][j];
            a[i][3] += rows[r][i] * macs[r];
        }
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) {
            const double f = a[j][i] / a[i][i];
            for (int k = i; k < 4; ++k) a[j][k] -= f * a[i][k];
        }
    MacFit fit;
    for (int i = 2; i >= 0; --i) {
        double s = a[i][3];
        for (int j = i + 1; j < 3; ++j) s -= a[i][j] * fit.coef[j];
        fit.coef[i] = s / a[i][i];
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const double v = fit.coef[0] * rows[r][0] + fit.coef[1] * rows[r][1] + fit.coef[2] * rows[r][2];
        fit.max_rel_residual = std::max(fit.max_rel_residual, std::abs(v - macs[r]) / macs[r]);
    }
    return fit;
}

}  // namespace fixtures
