#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "collabod/tensor.hpp"

// Forward and backward kernels. All functions are pure: inputs are never
// modified and a fresh tensor is returned.
namespace collabod::ops {

struct PoolWindow {
    int kernel_h = 3;
    int kernel_w = 3;
    int stride = 1;
    int padding = 0;
};

int conv_out_extent(int in, int kernel, int stride, int padding);

// Cross-correlation (no kernel flip). `bias` may be empty.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::span<const float> bias,
              ConvGeometry geometry);
inline Tensor conv2d(const Tensor& input, const ConvParams& params) {
    params.validate();
    return conv2d(input, params.kernel, params.bias, params.geometry());
}

struct Conv2dGrads {
    Tensor input;
    Tensor kernel;
    Tensor bias;  // (1, C_out, 1, 1)
};
Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernel, ConvGeometry geometry,
                            const Tensor& grad_output, bool need_input = true,
                            bool need_kernel = true);

// Padding sites act as -infinity.
Tensor max_pool2d(const Tensor& input, PoolWindow window);
// Gradient is routed to the first maximal element of each window in scan order.
Tensor max_pool2d_backward(const Tensor& input, PoolWindow window, const Tensor& grad_output);
// Flat input index of the routed element for every output element.
std::vector<std::int64_t> max_pool2d_argmax(const Tensor& input, PoolWindow window);
Tensor max_pool2d_backward(const Shape& input_shape, std::span<const std::int64_t> argmax,
                           const Tensor& grad_output);

Tensor sigmoid(const Tensor& input);
Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_output);

// Softmax over each run of `group` contiguous channels at every spatial site.
Tensor softmax_channel(const Tensor& input, int group);
Tensor softmax_channel_backward(const Tensor& output, int group, const Tensor& grad_output);

Tensor concat(std::span<const Tensor> inputs);
std::vector<Tensor> split(const Tensor& input, std::span<const int> sizes);
Tensor slice_channels(const Tensor& input, int begin, int count);

Tensor upsample_nearest(const Tensor& input, int factor);
Tensor upsample_nearest_backward(const Tensor& grad_output, int factor);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
// `scales` has shape (1, C, 1, 1).
Tensor scale_channels(const Tensor& input, const Tensor& scales);
// Reduce (N, C, H, W) to (1, C, 1, 1) by summation.
Tensor sum_to_channels(const Tensor& input);

// (N, G*R, H, W) probabilities -> (N, G, H, W) expectations sum_j j * p_j.
Tensor bin_expectation(const Tensor& probs, int bins);
Tensor bin_expectation_backward(const Tensor& grad_output, int bins);

}  // namespace collabod::ops
