#include <cmath>

#include "collabod/model.hpp"

namespace collabod {

ErfMap estimate_erf(const Model& model, std::string_view probe, int samples, std::uint64_t seed,
                    double threshold) {
    if (samples < 1) throw Error("erf: sample count must be positive");
    if (!(threshold > 0.0 && threshold < 1.0)) throw Error("erf: threshold must lie in (0, 1)");
    const int probe_idx = model.layer_index(probe);
    if (probe_idx >= 0 && model.layers()[probe_idx].spec.kind == LayerKind::uda_head)
        throw Error("erf: probe '" + std::string(probe) + "' is the detection head, not a feature map");

    const Shape in = model.config().input;
    std::vector<double> acc(static_cast<std::size_t>(in.h()) * in.w(), 0.0);
    Rng rng(seed);
    for (int s = 0; s < samples; ++s) {
        GradTape tape;
        const Var image = tape.input(rng.uniform_tensor(in, -1.0f, 1.0f));
        Var target = image;
        if (probe_idx >= 0) target = model.trace(tape, image, probe_idx).outputs[probe_idx];
        const Shape& ps = tape.shape(target);
        Tensor seed_grad(ps);
        for (int c = 0; c < ps.c(); ++c) seed_grad.at(0, c, ps.h() / 2, ps.w() / 2) = 1.0f;
        const Gradients grads = tape.backward(target, seed_grad);
        if (!grads.reached(image))
            throw Error("erf: probe '" + std::string(probe) + "' is not differentiable back to the input");
        const Tensor g = grads[image];
        for (int c = 0; c < in.c(); ++c)
            for (int y = 0; y < in.h(); ++y)
                for (int x = 0; x < in.w(); ++x)
                    acc[static_cast<std::size_t>(y) * in.w() + x] += std::abs(g.at(0, c, y, x));
    }

    double peak = 0.0;
    for (double v : acc) peak = std::max(peak, v);
    ErfMap map;
    map.threshold = threshold;
    map.samples = samples;
    map.seed = seed;
    map.magnitude = Tensor(Shape{1, 1, in.h(), in.w()});
    std::size_t above = 0;
    for (std::size_t i = 0; i < acc.size(); ++i) {
        const double v = peak > 0.0 ? acc[i] / peak : 0.0;
        map.magnitude[i] = static_cast<float>(v);
        if (peak > 0.0 && acc[i] > threshold * peak) ++above;
    }
    map.area_fraction = static_cast<double>(above) / static_cast<double>(acc.size());
    return map;
}

}  // namespace collabod
