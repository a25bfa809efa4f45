#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "collabod/ops.hpp"
#include "collabod/tensor.hpp"

namespace collabod {

// Handle to a value recorded on a GradTape.
struct Var {
    std::size_t id = 0;
    friend bool operator==(Var, Var) = default;
};

class Gradients {
public:
    Gradients() = default;
    Gradients(std::vector<std::optional<Tensor>> grads, std::vector<Shape> shapes)
        : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

    // Zero tensor of the variable's shape when no gradient reached it.
    Tensor operator[](Var v) const;
    bool reached(Var v) const { return v.id < grads_.size() && grads_[v.id].has_value(); }

private:
    std::vector<std::optional<Tensor>> grads_;
    std::vector<Shape> shapes_;
};

// Reverse-mode record of a forward computation. Every recorded node keeps
// its output value and whatever its backward closure captured; values are
// never mutated after recording. One tape serves one forward/backward pair
// on one thread.
class GradTape {
public:
    // Receives the output gradient and a per-input mask of which input
    // gradients are needed; returns one tensor per input (empty tensors are
    // allowed for inputs that are not needed).
    using BackwardFn =
        std::function<std::vector<Tensor>(const Tensor& grad_out, const std::vector<bool>& needed)>;

    // Leaf that gradients are accumulated into.
    Var input(Tensor value);
    // Leaf excluded from differentiation.
    Var constant(Tensor value);

    Var record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    Shape shape(Var v) const { return nodes_.at(v.id).value.shape(); }
    const std::vector<Var>& inputs(Var v) const { return nodes_.at(v.id).inputs; }
    const std::string& op_name(Var v) const { return nodes_.at(v.id).op; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    std::size_t size() const { return nodes_.size(); }
    // Number of non-leaf nodes.
    std::size_t recorded_ops() const;

    // Single reverse sweep from `output` seeded with `seed`.
    Gradients backward(Var output, const Tensor& seed) const;

    // Operator set. ConvParams overloads register kernel and bias as
    // constants; the Var overloads differentiate through them.
    Var conv2d(Var x, Var kernel, Var bias, ConvGeometry geometry);
    Var conv2d(Var x, const ConvParams& params);
    Var max_pool2d(Var x, ops::PoolWindow window);
    Var sigmoid(Var x);
    Var softmax_channel(Var x, int group);
    Var concat(std::span<const Var> xs);
    Var slice_channels(Var x, int begin, int count);
    std::vector<Var> split(Var x, std::span<const int> sizes);
    Var upsample_nearest(Var x, int factor);
    Var add(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var x, float s);
    // `scales` has shape (1, C, 1, 1).
    Var scale_channels(Var x, Var scales);
    // `s` has shape (1, 1, 1, 1).
    Var scale_by(Var x, Var s);
    Var bin_expectation(Var probs, int bins);
    // (N, C, H, W) -> (N, 1, H*W, C): one row per spatial site, row-major.
    Var to_rows(Var x);
    // Concatenate (N, 1, R_i, C) row blocks along the row axis.
    Var concat_rows(std::span<const Var> xs);

    // Hash of every discrete routing decision recorded so far (max-pool
    // argmax positions). Equal signatures mean the same piecewise-linear
    // region.
    std::uint64_t routing_signature() const { return routing_; }
    // Argmax positions of every max-pool recorded so far, in order.
    const std::vector<std::vector<std::int64_t>>& routes() const { return routes_; }
    // Subsequent max-pools take their routing from `routes` (in order)
    // instead of their input, which makes the recorded function linear in
    // the pooled values.
    void replay_routes(std::vector<std::vector<std::int64_t>> routes);

private:
    struct Node {
        std::string op;
        Tensor value;
        std::vector<Var> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        bool is_leaf = false;
    };
    std::vector<Node> nodes_;
    std::uint64_t routing_ = 1469598103934665603ull;
    std::vector<std::vector<std::int64_t>> routes_;
    std::optional<std::vector<std::vector<std::int64_t>>> replay_;
};

}  // namespace collabod
