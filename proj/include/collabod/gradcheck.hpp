#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "collabod/tape.hpp"

namespace collabod {

// Builds a scalar-seeded computation on a fresh tape from the given inputs.
using GraphBuilder = std::function<Var(GradTape&, std::span<const Var>)>;

struct GradCheckOptions {
    double step = 1e-2;
    // 0 checks every coordinate; otherwise a seeded random subset.
    std::size_t max_coords = 0;
    std::uint64_t seed = 0;
    // Drop coordinates where some stencil point lands in a different max-pool
    // routing than the unperturbed input.
    bool skip_kinks = true;
    // Perturbed evaluations replay the unperturbed max-pool routing, so the
    // stencil sees the active linear piece and no coordinate is skipped.
    bool freeze_routing = false;
};

struct InputCheck {
    // ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2) over the
    // checked coordinates.
    double rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;
};

struct GradCheckReport {
    std::vector<InputCheck> inputs;
    double max_rel_error() const;
    bool passed(double tolerance) const { return max_rel_error() <= tolerance; }
};

// The loss is sum(w * y) for a seeded random weight tensor w in [-1, 1];
// the analytic side is one reverse sweep seeded with w, the numeric side is
// the five-point central stencil
//   (8 (L(x+h) - L(x-h)) - (L(x+2h) - L(x-2h))) / 12h
// of the loss (accumulated in double) per coordinate.
GradCheckReport check_gradients(const GraphBuilder& build, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options = {});

}  // namespace collabod
