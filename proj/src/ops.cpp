#include "collabod/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace collabod::ops {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw Error(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                    b.shape().str());
}

// Keeps sigmoid outputs inside the open unit interval in float32.
constexpr float kSigmoidLo = std::numeric_limits<float>::min();
constexpr float kSigmoidHi = 1.0f - 5.9604645e-8f;  // 1 - 2^-24

}  // namespace

int conv_out_extent(int in, int kernel, int stride, int padding) {
    const int span = in + 2 * padding - kernel;
    if (span < 0) return 0;
    return span / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::span<const float> bias,
              ConvGeometry g) {
    const Shape& is = input.shape();
    const Shape& ks = kernel.shape();
    if (g.groups < 1 || g.stride < 1 || g.padding < 0)
        throw Error("conv2d: invalid geometry (stride " + std::to_string(g.stride) + ", padding " +
                    std::to_string(g.padding) + ", groups " + std::to_string(g.groups) + ")");
    if (is.c() % g.groups != 0)
        throw Error("conv2d: input channel extent " + std::to_string(is.c()) +
                    " not divisible by groups " + std::to_string(g.groups));
    if (ks.c() * g.groups != is.c())
        throw Error("conv2d: channel dimension mismatch, input has " + std::to_string(is.c()) +
                    " channels but kernel expects " + std::to_string(ks.c() * g.groups));
    if (ks.n() % g.groups != 0)
        throw Error("conv2d: output channel extent " + std::to_string(ks.n()) +
                    " not divisible by groups " + std::to_string(g.groups));
    if (!bias.empty() && static_cast<int>(bias.size()) != ks.n())
        throw Error("conv2d: bias length " + std::to_string(bias.size()) +
                    " != output channels " + std::to_string(ks.n()));
    const int oh = conv_out_extent(is.h(), ks.h(), g.stride, g.padding);
    const int ow = conv_out_extent(is.w(), ks.w(), g.stride, g.padding);
    if (oh <= 0) throw Error("conv2d: height dimension produces empty output (H=" +
                             std::to_string(is.h()) + ", kH=" + std::to_string(ks.h()) + ")");
    if (ow <= 0) throw Error("conv2d: width dimension produces empty output (W=" +
                             std::to_string(is.w()) + ", kW=" + std::to_string(ks.w()) + ")");

    const int cout = ks.n();
    const int cin_g = ks.c();
    const int cout_g = cout / g.groups;
    Tensor out(Shape{is.n(), cout, oh, ow});
    auto o = out.mutable_data();
    auto x = input.data();
    auto w = kernel.data();

    // Each output plane accumulates in double and is rounded once.
    std::vector<double> acc(static_cast<std::size_t>(oh) * ow);
    for (int n = 0; n < is.n(); ++n) {
        for (int oc = 0; oc < cout; ++oc) {
            std::fill(acc.begin(), acc.end(), bias.empty() ? 0.0 : static_cast<double>(bias[oc]));
            const int group = oc / cout_g;
            for (int icg = 0; icg < cin_g; ++icg) {
                const int ic = group * cin_g + icg;
                const float* xp = x.data() + input.index(n, ic, 0, 0);
                for (int ky = 0; ky < ks.h(); ++ky) {
                    for (int kx = 0; kx < ks.w(); ++kx) {
                        const double wv = w[kernel.index(oc, icg, ky, kx)];
                        for (int y = 0; y < oh; ++y) {
                            const int iy = y * g.stride + ky - g.padding;
                            if (iy < 0 || iy >= is.h()) continue;
                            double* arow = acc.data() + static_cast<std::size_t>(y) * ow;
                            const float* xrow = xp + static_cast<std::size_t>(iy) * is.w();
                            for (int xo = 0; xo < ow; ++xo) {
                                const int ix = xo * g.stride + kx - g.padding;
                                if (ix < 0 || ix >= is.w()) continue;
                                arow[xo] += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
            float* op = o.data() + out.index(n, oc, 0, 0);
            for (std::size_t i = 0; i < acc.size(); ++i) op[i] = static_cast<float>(acc[i]);
        }
    }
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernel, ConvGeometry g,
                            const Tensor& grad_output, bool need_input, bool need_kernel) {
    const Shape& is = input.shape();
    const Shape& ks = kernel.shape();
    const Shape& gs = grad_output.shape();
    const int cout = ks.n();
    const int cin_g = ks.c();
    const int cout_g = cout / g.groups;

    Conv2dGrads grads;
    grads.bias = Tensor(Shape{1, cout, 1, 1});
    if (need_input) grads.input = Tensor(is);
    if (need_kernel) grads.kernel = Tensor(ks);

    for (int n = 0; n < is.n(); ++n) {
        for (int oc = 0; oc < cout; ++oc) {
            const float* gp = grad_output.data().data() + grad_output.index(n, oc, 0, 0);
            double bsum = 0.0;
            for (std::size_t i = 0; i < static_cast<std::size_t>(gs.h()) * gs.w(); ++i) bsum += gp[i];
            grads.bias[oc] += static_cast<float>(bsum);
            const int group = oc / cout_g;
            for (int icg = 0; icg < cin_g; ++icg) {
                const int ic = group * cin_g + icg;
                for (int ky = 0; ky < ks.h(); ++ky) {
                    for (int kx = 0; kx < ks.w(); ++kx) {
                        const float wv = kernel.at(oc, icg, ky, kx);
                        float kacc = 0.0f;
                        for (int y = 0; y < gs.h(); ++y) {
                            const int iy = y * g.stride + ky - g.padding;
                            if (iy < 0 || iy >= is.h()) continue;
                            for (int xo = 0; xo < gs.w(); ++xo) {
                                const int ix = xo * g.stride + kx - g.padding;
                                if (ix < 0 || ix >= is.w()) continue;
                                const float gv = gp[static_cast<std::size_t>(y) * gs.w() + xo];
                                if (need_input) grads.input.at(n, ic, iy, ix) += wv * gv;
                                if (need_kernel) kacc += input.at(n, ic, iy, ix) * gv;
                            }
                        }
                        if (need_kernel) grads.kernel.at(oc, icg, ky, kx) += kacc;
                    }
                }
            }
        }
    }
    return grads;
}

Tensor max_pool2d(const Tensor& input, PoolWindow win) {
    const Shape& is = input.shape();
    if (win.kernel_h < 1 || win.kernel_w < 1 || win.stride < 1 || win.padding < 0)
        throw Error("max_pool2d: invalid window");
    if (win.padding >= win.kernel_h || win.padding >= win.kernel_w)
        throw Error("max_pool2d: padding " + std::to_string(win.padding) +
                    " must be smaller than the window");
    if (win.kernel_h > is.h() + 2 * win.padding)
        throw Error("max_pool2d: window height " + std::to_string(win.kernel_h) +
                    " exceeds padded height " + std::to_string(is.h() + 2 * win.padding));
    if (win.kernel_w > is.w() + 2 * win.padding)
        throw Error("max_pool2d: window width " + std::to_string(win.kernel_w) +
                    " exceeds padded width " + std::to_string(is.w() + 2 * win.padding));
    const int oh = conv_out_extent(is.h(), win.kernel_h, win.stride, win.padding);
    const int ow = conv_out_extent(is.w(), win.kernel_w, win.stride, win.padding);
    Tensor out(Shape{is.n(), is.c(), oh, ow});
    for (int n = 0; n < is.n(); ++n)
        for (int c = 0; c < is.c(); ++c)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    float m = -std::numeric_limits<float>::infinity();
                    for (int ky = 0; ky < win.kernel_h; ++ky) {
                        const int iy = y * win.stride + ky - win.padding;
                        if (iy < 0 || iy >= is.h()) continue;
                        for (int kx = 0; kx < win.kernel_w; ++kx) {
                            const int ix = x * win.stride + kx - win.padding;
                            if (ix < 0 || ix >= is.w()) continue;
                            m = std::max(m, input.at(n, c, iy, ix));
                        }
                    }
                    out.at(n, c, y, x) = m;
                }
    return out;
}

std::vector<std::int64_t> max_pool2d_argmax(const Tensor& input, PoolWindow win) {
    const Shape& is = input.shape();
    const int oh = conv_out_extent(is.h(), win.kernel_h, win.stride, win.padding);
    const int ow = conv_out_extent(is.w(), win.kernel_w, win.stride, win.padding);
    std::vector<std::int64_t> arg;
    arg.reserve(static_cast<std::size_t>(is.n()) * is.c() * oh * ow);
    for (int n = 0; n < is.n(); ++n)
        for (int c = 0; c < is.c(); ++c)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    float m = 0.0f;
                    std::int64_t best = -1;
                    for (int ky = 0; ky < win.kernel_h; ++ky) {
                        const int iy = y * win.stride + ky - win.padding;
                        if (iy < 0 || iy >= is.h()) continue;
                        for (int kx = 0; kx < win.kernel_w; ++kx) {
                            const int ix = x * win.stride + kx - win.padding;
                            if (ix < 0 || ix >= is.w()) continue;
                            const float v = input.at(n, c, iy, ix);
                            if (best < 0 || v > m) {
                                m = v;
                                best = static_cast<std::int64_t>(input.index(n, c, iy, ix));
                            }
                        }
                    }
                    arg.push_back(best);
                }
    return arg;
}

Tensor max_pool2d_backward(const Tensor& input, PoolWindow win, const Tensor& grad_output) {
    return max_pool2d_backward(input.shape(), max_pool2d_argmax(input, win), grad_output);
}

Tensor max_pool2d_backward(const Shape& input_shape, std::span<const std::int64_t> argmax,
                           const Tensor& grad_output) {
    if (argmax.size() != grad_output.numel())
        throw Error("max_pool2d_backward: gradient shape " + grad_output.shape().str() +
                    " does not match the pooled output");
    Tensor grad(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i)
        if (argmax[i] >= 0) grad[static_cast<std::size_t>(argmax[i])] += grad_output[i];
    return grad;
}

Tensor sigmoid(const Tensor& input) {
    Tensor out(input.shape());
    auto o = out.mutable_data();
    auto x = input.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        float y;
        if (x[i] >= 0.0f) {
            y = 1.0f / (1.0f + std::exp(-x[i]));
        } else {
            const float e = std::exp(x[i]);
            y = e / (1.0f + e);
        }
        o[i] = std::clamp(y, kSigmoidLo, kSigmoidHi);
    }
    return out;
}

Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_output) {
    require_same_shape(output, grad_output, "sigmoid_backward");
    Tensor g(output.shape());
    for (std::size_t i = 0; i < g.numel(); ++i)
        g[i] = grad_output[i] * output[i] * (1.0f - output[i]);
    return g;
}

Tensor softmax_channel(const Tensor& input, int group) {
    const Shape& s = input.shape();
    if (group < 1 || s.c() % group != 0)
        throw Error("softmax_channel: channel extent " + std::to_string(s.c()) +
                    " not divisible by group " + std::to_string(group));
    Tensor out(s);
    const std::size_t plane = static_cast<std::size_t>(s.h()) * s.w();
    for (int n = 0; n < s.n(); ++n)
        for (int g0 = 0; g0 < s.c(); g0 += group)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t base = input.index(n, g0, 0, 0) + p;
                float m = -std::numeric_limits<float>::infinity();
                for (int j = 0; j < group; ++j) m = std::max(m, input[base + j * plane]);
                double sum = 0.0;
                for (int j = 0; j < group; ++j) sum += std::exp(static_cast<double>(input[base + j * plane]) - m);
                for (int j = 0; j < group; ++j)
                    out[base + j * plane] = static_cast<float>(std::exp(static_cast<double>(input[base + j * plane]) - m) / sum);
            }
    return out;
}

Tensor softmax_channel_backward(const Tensor& output, int group, const Tensor& grad_output) {
    require_same_shape(output, grad_output, "softmax_channel_backward");
    const Shape& s = output.shape();
    Tensor g(s);
    const std::size_t plane = static_cast<std::size_t>(s.h()) * s.w();
    for (int n = 0; n < s.n(); ++n)
        for (int g0 = 0; g0 < s.c(); g0 += group)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t base = output.index(n, g0, 0, 0) + p;
                float dot = 0.0f;
                for (int j = 0; j < group; ++j)
                    dot += output[base + j * plane] * grad_output[base + j * plane];
                for (int j = 0; j < group; ++j) {
                    const std::size_t k = base + j * plane;
                    g[k] = output[k] * (grad_output[k] - dot);
                }
            }
    return g;
}

Tensor concat(std::span<const Tensor> inputs) {
    if (inputs.empty()) throw Error("concat: no inputs");
    const Shape& first = inputs.front().shape();
    int channels = 0;
    for (const auto& t : inputs) {
        const Shape& s = t.shape();
        if (s.n() != first.n()) throw Error("concat: batch extent mismatch " + s.str() + " vs " + first.str());
        if (s.h() != first.h()) throw Error("concat: height extent mismatch " + s.str() + " vs " + first.str());
        if (s.w() != first.w()) throw Error("concat: width extent mismatch " + s.str() + " vs " + first.str());
        channels += s.c();
    }
    Tensor out(Shape{first.n(), channels, first.h(), first.w()});
    const std::size_t plane = static_cast<std::size_t>(first.h()) * first.w();
    for (int n = 0; n < first.n(); ++n) {
        int c0 = 0;
        for (const auto& t : inputs) {
            const std::size_t count = static_cast<std::size_t>(t.shape().c()) * plane;
            std::copy_n(t.data().data() + t.index(n, 0, 0, 0), count,
                        out.mutable_data().data() + out.index(n, c0, 0, 0));
            c0 += t.shape().c();
        }
    }
    return out;
}

Tensor slice_channels(const Tensor& input, int begin, int count) {
    const Shape& s = input.shape();
    if (begin < 0 || count < 1 || begin + count > s.c())
        throw Error("slice_channels: range [" + std::to_string(begin) + ", " +
                    std::to_string(begin + count) + ") outside channel extent " +
                    std::to_string(s.c()));
    Tensor out(Shape{s.n(), count, s.h(), s.w()});
    const std::size_t len = static_cast<std::size_t>(count) * s.h() * s.w();
    for (int n = 0; n < s.n(); ++n)
        std::copy_n(input.data().data() + input.index(n, begin, 0, 0), len,
                    out.mutable_data().data() + out.index(n, 0, 0, 0));
    return out;
}

std::vector<Tensor> split(const Tensor& input, std::span<const int> sizes) {
    int total = 0;
    for (int s : sizes) {
        if (s < 1) throw Error("split: sizes must be positive");
        total += s;
    }
    if (total != input.shape().c())
        throw Error("split: sizes sum to " + std::to_string(total) + " but channel extent is " +
                    std::to_string(input.shape().c()));
    std::vector<Tensor> parts;
    parts.reserve(sizes.size());
    int begin = 0;
    for (int s : sizes) {
        parts.push_back(slice_channels(input, begin, s));
        begin += s;
    }
    return parts;
}

Tensor upsample_nearest(const Tensor& input, int factor) {
    if (factor < 1) throw Error("upsample_nearest: factor must be >= 1");
    const Shape& s = input.shape();
    Tensor out(Shape{s.n(), s.c(), s.h() * factor, s.w() * factor});
    for (int n = 0; n < s.n(); ++n)
        for (int c = 0; c < s.c(); ++c)
            for (int y = 0; y < s.h() * factor; ++y)
                for (int x = 0; x < s.w() * factor; ++x)
                    out.at(n, c, y, x) = input.at(n, c, y / factor, x / factor);
    return out;
}

Tensor upsample_nearest_backward(const Tensor& grad_output, int factor) {
    const Shape& s = grad_output.shape();
    Tensor g(Shape{s.n(), s.c(), s.h() / factor, s.w() / factor});
    for (int n = 0; n < s.n(); ++n)
        for (int c = 0; c < s.c(); ++c)
            for (int y = 0; y < s.h(); ++y)
                for (int x = 0; x < s.w(); ++x)
                    g.at(n, c, y / factor, x / factor) += grad_output.at(n, c, y, x);
    return g;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
    return out;
}

Tensor scale(const Tensor& a, float s) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * s;
    return out;
}

Tensor scale_channels(const Tensor& input, const Tensor& scales) {
    const Shape& s = input.shape();
    if (scales.shape() != Shape{1, s.c(), 1, 1})
        throw Error("scale_channels: scales shape " + scales.shape().str() +
                    " does not match channel extent " + std::to_string(s.c()));
    Tensor out(s);
    const std::size_t plane = static_cast<std::size_t>(s.h()) * s.w();
    for (int n = 0; n < s.n(); ++n)
        for (int c = 0; c < s.c(); ++c) {
            const std::size_t base = input.index(n, c, 0, 0);
            for (std::size_t p = 0; p < plane; ++p) out[base + p] = input[base + p] * scales[c];
        }
    return out;
}

Tensor sum_to_channels(const Tensor& input) {
    const Shape& s = input.shape();
    Tensor out(Shape{1, s.c(), 1, 1});
    const std::size_t plane = static_cast<std::size_t>(s.h()) * s.w();
    for (int c = 0; c < s.c(); ++c) {
        double acc = 0.0;
        for (int n = 0; n < s.n(); ++n) {
            const std::size_t base = input.index(n, c, 0, 0);
            for (std::size_t p = 0; p < plane; ++p) acc += input[base + p];
        }
        out[c] = static_cast<float>(acc);
    }
    return out;
}

Tensor bin_expectation(const Tensor& probs, int bins) {
    const Shape& s = probs.shape();
    if (bins < 1 || s.c() % bins != 0)
        throw Error("bin_expectation: channel extent " + std::to_string(s.c()) +
                    " not divisible by bins " + std::to_string(bins));
    const int groups = s.c() / bins;
    Tensor out(Shape{s.n(), groups, s.h(), s.w()});
    for (int n = 0; n < s.n(); ++n)
        for (int g = 0; g < groups; ++g)
            for (int y = 0; y < s.h(); ++y)
                for (int x = 0; x < s.w(); ++x) {
                    double acc = 0.0;
                    for (int j = 0; j < bins; ++j) acc += static_cast<double>(j) * probs.at(n, g * bins + j, y, x);
                    out.at(n, g, y, x) = static_cast<float>(acc);
                }
    return out;
}

Tensor bin_expectation_backward(const Tensor& grad_output, int bins) {
    const Shape& s = grad_output.shape();
    Tensor g(Shape{s.n(), s.c() * bins, s.h(), s.w()});
    for (int n = 0; n < s.n(); ++n)
        for (int c = 0; c < s.c(); ++c)
            for (int y = 0; y < s.h(); ++y)
                for (int x = 0; x < s.w(); ++x)
                    for (int j = 0; j < bins; ++j)
                        g.at(n, c * bins + j, y, x) = static_cast<float>(j) * grad_output.at(n, c, y, x);
    return g;
}

}  // namespace collabod::ops
