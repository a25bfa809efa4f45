#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace collabod {

// All contract violations surface as this exception; the message names the
// offending dimension, layer or file.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// (batch, channel, height, width)
struct Shape {
    std::array<int, 4> dims{0, 0, 0, 0};

    constexpr Shape() = default;
    constexpr Shape(int n, int c, int h, int w) : dims{n, c, h, w} {}

    int n() const { return dims[0]; }
    int c() const { return dims[1]; }
    int h() const { return dims[2]; }
    int w() const { return dims[3]; }

    std::size_t numel() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2] * dims[3];
    }
    bool valid() const { return dims[0] > 0 && dims[1] > 0 && dims[2] > 0 && dims[3] > 0; }

    std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;
};

// Dense row-major NCHW float32 array with value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor zeros(Shape shape) { return Tensor(shape, 0.0f); }

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<const float> data() const { return data_; }
    std::span<float> mutable_data() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    std::size_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_.c() + c) * shape_.h() + h) * shape_.w() + w;
    }
    float at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }
    float& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }

    float operator[](std::size_t i) const { return data_[i]; }
    float& operator[](std::size_t i) { return data_[i]; }

    bool all_finite() const;

    // Bitwise equality of shape and payload.
    bool identical(const Tensor& other) const;

private:
    Shape shape_{};
    std::vector<float> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

// Seeded generator whose output sequence does not depend on the standard
// library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    // Uniform in [lo, hi).
    float uniform(float lo, float hi) {
        const std::uint64_t bits = engine_() >> 40;  // 24 bits
        return lo + (hi - lo) * (static_cast<float>(bits) * (1.0f / 16777216.0f));
    }
    std::uint64_t next() { return engine_(); }
    // Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound) { return engine_() % bound; }

    Tensor uniform_tensor(Shape shape, float lo, float hi);

private:
    std::mt19937_64 engine_;
};

struct ConvGeometry {
    int stride = 1;
    int padding = 0;
    int groups = 1;
};

// Kernel is (C_out, C_in / groups, kH, kW); bias has C_out entries.
struct ConvParams {
    Tensor kernel;
    std::vector<float> bias;
    int stride = 1;
    int padding = 0;
    int groups = 1;

    int out_channels() const { return kernel.shape().n(); }
    int in_channels() const { return kernel.shape().c() * groups; }
    int kernel_h() const { return kernel.shape().h(); }
    int kernel_w() const { return kernel.shape().w(); }
    ConvGeometry geometry() const { return {stride, padding, groups}; }
    std::size_t param_count() const { return kernel.numel() + bias.size(); }

    Tensor bias_tensor() const;

    // Throws Error when the record is internally inconsistent.
    void validate() const;

    // Uniform in [-k, k] with k = 1 / sqrt(fan_in) for both kernel and bias.
    static ConvParams random(Rng& rng, int in_channels, int out_channels, int kernel_size,
                             int stride = 1, int padding = -1, int groups = 1,
                             bool with_bias = true);
    static ConvParams zeros(int in_channels, int out_channels, int kernel_size, int stride = 1,
                            int padding = -1, int groups = 1);
    // 1x1 channel identity.
    static ConvParams identity(int channels);
};

}  // namespace collabod
