#include "collabod/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "collabod/parallel.hpp"

namespace collabod {
namespace {

double weighted_sum(const Tensor& y, const Tensor& w) {
    double acc = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) acc += static_cast<double>(y[i]) * w[i];
    return acc;
}

struct Probe {
    double loss;
    std::uint64_t routing;
};

Probe evaluate(const GraphBuilder& build, const std::vector<Tensor>& inputs, const Tensor& w,
               const std::vector<std::vector<std::int64_t>>* routes) {
    GradTape tape;
    if (routes) tape.replay_routes(*routes);
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    const Var out = build(tape, vars);
    return {weighted_sum(tape.value(out), w), tape.routing_signature()};
}

std::vector<std::size_t> pick_coords(std::size_t numel, std::size_t max_coords, Rng& rng) {
    std::vector<std::size_t> idx(numel);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (max_coords == 0 || numel <= max_coords) return idx;
    for (std::size_t i = 0; i < max_coords; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(numel - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(max_coords);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace

double GradCheckReport::max_rel_error() const {
    double m = 0.0;
    for (const auto& in : inputs) m = std::max(m, in.rel_error);
    return m;
}

GradCheckReport check_gradients(const GraphBuilder& build, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options) {
    GradTape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.input(t));
    const Var out = build(tape, vars);
    Rng rng(options.seed * 7919 + 17);
    const Tensor w = rng.uniform_tensor(tape.shape(out), -1.0f, 1.0f);
    const Gradients grads = tape.backward(out, w);
    const std::uint64_t routing = tape.routing_signature();
    const auto* frozen = options.freeze_routing ? &tape.routes() : nullptr;

    GradCheckReport report;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor analytic = grads[vars[k]];
        const auto coords = pick_coords(inputs[k].numel(), options.max_coords, rng);
        std::vector<double> numeric(coords.size());
        std::vector<char> kink(coords.size(), 0);

        parallel_for(coords.size(), [&](std::size_t c) {
            std::vector<Tensor> local = inputs;
            const std::size_t j = coords[c];
            const float x0 = inputs[k][j];
            // Stencil points are symmetric in float so the effective step is exact.
            const float h = static_cast<float>(options.step);
            const float offsets[4] = {-2 * h, -h, h, 2 * h};
            double loss[4];
            bool same = true;
            for (int s = 0; s < 4; ++s) {
                local[k][j] = x0 + offsets[s];
                const Probe p = evaluate(build, local, w, frozen);
                loss[s] = p.loss;
                same = same && p.routing == routing;
            }
            const double h1 = (static_cast<double>(x0 + h) - static_cast<double>(x0 - h)) / 2.0;
            const double h2 = (static_cast<double>(x0 + 2 * h) - static_cast<double>(x0 - 2 * h)) / 4.0;
            const double d1 = (loss[2] - loss[1]) / (2.0 * h1);
            const double d2 = (loss[3] - loss[0]) / (4.0 * h2);
            numeric[c] = (4.0 * d1 - d2) / 3.0;
            if (options.skip_kinks && !frozen && !same) kink[c] = 1;
        });

        InputCheck check;
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::size_t c = 0; c < coords.size(); ++c) {
            if (kink[c]) {
                ++check.skipped;
                continue;
            }
            const double a = analytic[coords[c]];
            const double d = a - numeric[c];
            diff2 += d * d;
            a2 += a * a;
            n2 += numeric[c] * numeric[c];
            check.max_abs_error = std::max(check.max_abs_error, std::abs(d));
            ++check.checked;
        }
        const double denom = std::sqrt(std::max(a2, n2));
        check.rel_error = denom > 1e-12 ? std::sqrt(diff2) / denom : std::sqrt(diff2);
        report.inputs.push_back(check);
    }
    return report;
}

}  // namespace collabod
