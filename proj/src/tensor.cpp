#include "collabod/tensor.hpp"

#include <cmath>
#include <cstring>

namespace collabod {

std::string Shape::str() const {
    return "(" + std::to_string(dims[0]) + "," + std::to_string(dims[1]) + "," +
           std::to_string(dims[2]) + "," + std::to_string(dims[3]) + ")";
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape) {
    if (!shape.valid()) throw Error("tensor shape must have positive extents, got " + shape.str());
    data_.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
    if (!shape.valid()) throw Error("tensor shape must have positive extents, got " + shape.str());
    if (data_.size() != shape.numel())
        throw Error("tensor payload has " + std::to_string(data_.size()) + " values but shape " +
                    shape.str() + " needs " + std::to_string(shape.numel()));
}

bool Tensor::all_finite() const {
    for (float v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

bool Tensor::identical(const Tensor& other) const {
    return shape_ == other.shape_ && data_.size() == other.data_.size() &&
           (data_.empty() ||
            std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw Error("max_abs_diff: shape " + a.shape().str() + " vs " + b.shape().str());
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

Tensor Rng::uniform_tensor(Shape shape, float lo, float hi) {
    Tensor t(shape);
    for (auto& v : t.mutable_data()) v = uniform(lo, hi);
    return t;
}

Tensor ConvParams::bias_tensor() const {
    if (bias.empty()) return Tensor(Shape{1, out_channels(), 1, 1}, 0.0f);
    return Tensor(Shape{1, out_channels(), 1, 1}, bias);
}

void ConvParams::validate() const {
    if (!kernel.shape().valid()) throw Error("conv kernel is empty");
    if (groups < 1) throw Error("conv groups must be >= 1");
    if (stride < 1) throw Error("conv stride must be >= 1");
    if (padding < 0) throw Error("conv padding must be >= 0");
    if (out_channels() % groups != 0)
        throw Error("conv output channels " + std::to_string(out_channels()) +
                    " not divisible by groups " + std::to_string(groups));
    if (!bias.empty() && static_cast<int>(bias.size()) != out_channels())
        throw Error("conv bias length " + std::to_string(bias.size()) + " != output channels " +
                    std::to_string(out_channels()));
}

ConvParams ConvParams::random(Rng& rng, int in_channels, int out_channels, int kernel_size,
                              int stride, int padding, int groups, bool with_bias) {
    if (in_channels % groups != 0)
        throw Error("conv input channels " + std::to_string(in_channels) +
                    " not divisible by groups " + std::to_string(groups));
    ConvParams p;
    const int cin_g = in_channels / groups;
    const float k = 1.0f / std::sqrt(static_cast<float>(cin_g * kernel_size * kernel_size));
    p.kernel = rng.uniform_tensor(Shape{out_channels, cin_g, kernel_size, kernel_size}, -k, k);
    p.bias.resize(out_channels, 0.0f);
    if (with_bias)
        for (auto& b : p.bias) b = rng.uniform(-k, k);
    p.stride = stride;
    p.padding = padding < 0 ? kernel_size / 2 : padding;
    p.groups = groups;
    return p;
}

ConvParams ConvParams::zeros(int in_channels, int out_channels, int kernel_size, int stride,
                             int padding, int groups) {
    ConvParams p;
    p.kernel = Tensor(Shape{out_channels, in_channels / groups, kernel_size, kernel_size});
    p.bias.assign(out_channels, 0.0f);
    p.stride = stride;
    p.padding = padding < 0 ? kernel_size / 2 : padding;
    p.groups = groups;
    return p;
}

ConvParams ConvParams::identity(int channels) {
    ConvParams p = zeros(channels, channels, 1);
    for (int c = 0; c < channels; ++c) p.kernel.at(c, c, 0, 0) = 1.0f;
    return p;
}

}  // namespace collabod
