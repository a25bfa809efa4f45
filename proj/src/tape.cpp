#include "collabod/tape.hpp"

#include <algorithm>
#include <memory>

namespace collabod {

Tensor Gradients::operator[](Var v) const {
    if (v.id >= shapes_.size()) throw Error("gradient requested for unknown variable");
    if (grads_[v.id]) return *grads_[v.id];
    return Tensor(shapes_[v.id]);
}

Var GradTape::input(Tensor value) {
    nodes_.push_back(Node{"input", std::move(value), {}, nullptr, true, true});
    return Var{nodes_.size() - 1};
}

Var GradTape::constant(Tensor value) {
    nodes_.push_back(Node{"constant", std::move(value), {}, nullptr, false, true});
    return Var{nodes_.size() - 1};
}

Var GradTape::record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
    nodes_.push_back(Node{std::move(op), std::move(value), std::move(inputs),
                          needs ? std::move(backward) : nullptr, needs, false});
    return Var{nodes_.size() - 1};
}

std::size_t GradTape::recorded_ops() const {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return !n.is_leaf; }));
}

Gradients GradTape::backward(Var output, const Tensor& seed) const {
    if (output.id >= nodes_.size()) throw Error("backward: unknown output variable");
    const Shape& out_shape = nodes_[output.id].value.shape();
    if (seed.shape() != out_shape)
        throw Error("backward: seed shape " + seed.shape().str() + " != output shape " +
                    out_shape.str());

    std::vector<std::optional<Tensor>> grads(nodes_.size());
    grads[output.id] = seed;
    for (std::size_t i = output.id + 1; i-- > 0;) {
        const Node& node = nodes_[i];
        if (!grads[i] || !node.backward) continue;
        std::vector<bool> needed(node.inputs.size());
        for (std::size_t k = 0; k < node.inputs.size(); ++k)
            needed[k] = nodes_[node.inputs[k].id].requires_grad;
        std::vector<Tensor> in_grads = node.backward(*grads[i], needed);
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            if (!needed[k]) continue;
            const std::size_t target = node.inputs[k].id;
            Tensor& g = in_grads[k];
            if (g.shape() != nodes_[target].value.shape())
                throw Error("backward: op '" + node.op + "' produced gradient of shape " +
                            g.shape().str() + " for input of shape " +
                            nodes_[target].value.shape().str());
            if (!grads[target]) {
                grads[target] = std::move(g);
            } else {
                Tensor& acc = *grads[target];
                for (std::size_t j = 0; j < acc.numel(); ++j) acc[j] += g[j];
            }
        }
    }
    std::vector<Shape> shapes;
    shapes.reserve(nodes_.size());
    for (const auto& n : nodes_) shapes.push_back(n.value.shape());
    return Gradients(std::move(grads), std::move(shapes));
}

Var GradTape::conv2d(Var x, Var kernel, Var bias, ConvGeometry geometry) {
    const Tensor& xv = value(x);
    const Tensor& kv = value(kernel);
    const Tensor& bv = value(bias);
    Tensor out = ops::conv2d(xv, kv, bv.data(), geometry);
    return record("conv2d", std::move(out), {x, kernel, bias},
                  [xv, kv, geometry](const Tensor& g, const std::vector<bool>& need) {
                      auto grads = ops::conv2d_backward(xv, kv, geometry, g, need[0], need[1]);
                      return std::vector<Tensor>{std::move(grads.input), std::move(grads.kernel),
                                                 std::move(grads.bias)};
                  });
}

Var GradTape::conv2d(Var x, const ConvParams& params) {
    params.validate();
    Var k = constant(params.kernel);
    Var b = constant(params.bias_tensor());
    return conv2d(x, k, b, params.geometry());
}

void GradTape::replay_routes(std::vector<std::vector<std::int64_t>> routes) { replay_ = std::move(routes); }

Var GradTape::max_pool2d(Var x, ops::PoolWindow window) {
    const Tensor& xv = value(x);
    Tensor y = ops::max_pool2d(xv, window);
    std::vector<std::int64_t> arg;
    if (replay_) {
        const std::size_t k = routes_.size();
        if (k >= replay_->size() || (*replay_)[k].size() != y.numel())
            throw Error("max_pool2d: replayed routing does not match pool " + std::to_string(k));
        arg = (*replay_)[k];
        for (std::size_t i = 0; i < arg.size(); ++i) y[i] = xv[static_cast<std::size_t>(arg[i])];
    } else {
        arg = ops::max_pool2d_argmax(xv, window);
    }
    for (const std::int64_t a : arg) {
        routing_ ^= static_cast<std::uint64_t>(a);
        routing_ *= 1099511628211ull;
    }
    routes_.push_back(arg);
    auto shared = std::make_shared<const std::vector<std::int64_t>>(std::move(arg));
    return record("max_pool2d", std::move(y), {x},
                  [shape = xv.shape(), shared](const Tensor& g, const std::vector<bool>&) {
                      return std::vector<Tensor>{ops::max_pool2d_backward(shape, *shared, g)};
                  });
}

Var GradTape::sigmoid(Var x) {
    Tensor y = ops::sigmoid(value(x));
    Tensor saved = y;
    return record("sigmoid", std::move(y), {x},
                  [saved](const Tensor& g, const std::vector<bool>&) {
                      return std::vector<Tensor>{ops::sigmoid_backward(saved, g)};
                  });
}

Var GradTape::softmax_channel(Var x, int group) {
    Tensor y = ops::softmax_channel(value(x), group);
    Tensor saved = y;
    return record("softmax_channel", std::move(y), {x},
                  [saved, group](const Tensor& g, const std::vector<bool>&) {
                      return std::vector<Tensor>{ops::softmax_channel_backward(saved, group, g)};
                  });
}

Var GradTape::concat(std::span<const Var> xs) {
    std::vector<Tensor> values;
    std::vector<int> sizes;
    values.reserve(xs.size());
    for (Var v : xs) {
        values.push_back(value(v));
        sizes.push_back(value(v).shape().c());
    }
    Tensor out = ops::concat(values);
    return record("concat", std::move(out), std::vector<Var>(xs.begin(), xs.end()),
                  [sizes](const Tensor& g, const std::vector<bool>&) {
                      return ops::split(g, sizes);
                  });
}

Var GradTape::slice_channels(Var x, int begin, int count) {
    const Shape in_shape = shape(x);
    return record("slice_channels", ops::slice_channels(value(x), begin, count), {x},
                  [in_shape, begin, count](const Tensor& g, const std::vector<bool>&) {
                      Tensor full(in_shape);
                      const std::size_t len = static_cast<std::size_t>(count) * in_shape.h() * in_shape.w();
                      for (int n = 0; n < in_shape.n(); ++n)
                          std::copy_n(g.data().data() + g.index(n, 0, 0, 0), len,
                                      full.mutable_data().data() + full.index(n, begin, 0, 0));
                      return std::vector<Tensor>{std::move(full)};
                  });
}

std::vector<Var> GradTape::split(Var x, std::span<const int> sizes) {
    int total = 0;
    for (int s : sizes) total += s;
    if (total != shape(x).c())
        throw Error("split: sizes sum to " + std::to_string(total) + " but channel extent is " +
                    std::to_string(shape(x).c()));
    std::vector<Var> parts;
    int begin = 0;
    for (int s : sizes) {
        parts.push_back(slice_channels(x, begin, s));
        begin += s;
    }
    return parts;
}

Var GradTape::upsample_nearest(Var x, int factor) {
    return record("upsample_nearest", ops::upsample_nearest(value(x), factor), {x},
                  [factor](const Tensor& g, const std::vector<bool>&) {
                      return std::vector<Tensor>{ops::upsample_nearest_backward(g, factor)};
                  });
}

Var GradTape::add(Var a, Var b) {
    return record("add", ops::add(value(a), value(b)), {a, b},
                  [](const Tensor& g, const std::vector<bool>&) {
                      return std::vector<Tensor>{g, g};
                  });
}

Var GradTape::mul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    return record("mul", ops::mul(av, bv), {a, b},
                  [av, bv](const Tensor& g, const std::vector<bool>& need) {
                      return std::vector<Tensor>{need[0] ? ops::mul(g, bv) : Tensor{},
                                                 need[1] ? ops::mul(g, av) : Tensor{}};
                  });
}

Var GradTape::scale(Var x, float s) {
    return record("scale", ops::scale(value(x), s), {x},
                  [s](const Tensor& g, const std::vector<bool>&) {
                      return std::vector<Tensor>{ops::scale(g, s)};
                  });
}

Var GradTape::scale_channels(Var x, Var scales) {
    const Tensor& xv = value(x);
    const Tensor& sv = value(scales);
    return record("scale_channels", ops::scale_channels(xv, sv), {x, scales},
                  [xv, sv](const Tensor& g, const std::vector<bool>& need) {
                      return std::vector<Tensor>{
                          need[0] ? ops::scale_channels(g, sv) : Tensor{},
                          need[1] ? ops::sum_to_channels(ops::mul(g, xv)) : Tensor{}};
                  });
}

Var GradTape::scale_by(Var x, Var s) {
    const Tensor& xv = value(x);
    const Tensor& sv = value(s);
    if (sv.shape() != Shape{1, 1, 1, 1})
        throw Error("scale_by: scalar must have shape (1,1,1,1), got " + sv.shape().str());
    return record("scale_by", ops::scale(xv, sv[0]), {x, s},
                  [xv, sv](const Tensor& g, const std::vector<bool>& need) {
                      Tensor gs;
                      if (need[1]) {
                          double acc = 0.0;
                          for (std::size_t i = 0; i < g.numel(); ++i)
                              acc += static_cast<double>(g[i]) * xv[i];
                          gs = Tensor(Shape{1, 1, 1, 1}, static_cast<float>(acc));
                      }
                      return std::vector<Tensor>{need[0] ? ops::scale(g, sv[0]) : Tensor{},
                                                 std::move(gs)};
                  });
}

Var GradTape::bin_expectation(Var probs, int bins) {
    return record("bin_expectation", ops::bin_expectation(value(probs), bins), {probs},
                  [bins](const Tensor& g, const std::vector<bool>&) {
                      return std::vector<Tensor>{ops::bin_expectation_backward(g, bins)};
                  });
}

Var GradTape::to_rows(Var x) {
    const Tensor& xv = value(x);
    const Shape s = xv.shape();
    const int rows = s.h() * s.w();
    Tensor out(Shape{s.n(), 1, rows, s.c()});
    for (int n = 0; n < s.n(); ++n)
        for (int c = 0; c < s.c(); ++c)
            for (int y = 0; y < s.h(); ++y)
                for (int xx = 0; xx < s.w(); ++xx)
                    out.at(n, 0, y * s.w() + xx, c) = xv.at(n, c, y, xx);
    return record("to_rows", std::move(out), {x},
                  [s](const Tensor& g, const std::vector<bool>&) {
                      Tensor back(s);
                      for (int n = 0; n < s.n(); ++n)
                          for (int c = 0; c < s.c(); ++c)
                              for (int y = 0; y < s.h(); ++y)
                                  for (int xx = 0; xx < s.w(); ++xx)
                                      back.at(n, c, y, xx) = g.at(n, 0, y * s.w() + xx, c);
                      return std::vector<Tensor>{std::move(back)};
                  });
}

Var GradTape::concat_rows(std::span<const Var> xs) {
    if (xs.empty()) throw Error("concat_rows: no inputs");
    const Shape first = shape(xs.front());
    int rows = 0;
    std::vector<int> counts;
    for (Var v : xs) {
        const Shape& s = shape(v);
        if (s.n() != first.n() || s.c() != 1 || s.w() != first.w())
            throw Error("concat_rows: block shape " + s.str() + " incompatible with " + first.str());
        counts.push_back(s.h());
        rows += s.h();
    }
    Tensor out(Shape{first.n(), 1, rows, first.w()});
    for (int n = 0; n < first.n(); ++n) {
        int r0 = 0;
        for (Var v : xs) {
            const Tensor& t = value(v);
            const std::size_t len = static_cast<std::size_t>(t.shape().h()) * first.w();
            std::copy_n(t.data().data() + t.index(n, 0, 0, 0), len,
                        out.mutable_data().data() + out.index(n, 0, r0, 0));
            r0 += t.shape().h();
        }
    }
    return record("concat_rows", std::move(out), std::vector<Var>(xs.begin(), xs.end()),
                  [counts, first](const Tensor& g, const std::vector<bool>&) {
                      std::vector<Tensor> parts;
                      int r0 = 0;
                      for (int count : counts) {
                          Tensor part(Shape{first.n(), 1, count, first.w()});
                          const std::size_t len = static_cast<std::size_t>(count) * first.w();
                          for (int n = 0; n < first.n(); ++n)
                              std::copy_n(g.data().data() + g.index(n, 0, r0, 0), len,
                                          part.mutable_data().data() + part.index(n, 0, 0, 0));
                          parts.push_back(std::move(part));
                          r0 += count;
                      }
                      return parts;
                  });
}

}  // namespace collabod
