#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "collabod/box.hpp"
#include "collabod/tape.hpp"
#include "collabod/tensor.hpp"

namespace collabod {

inline constexpr int kNumScales = 4;
// Finest to coarsest; also the row order of the merged prediction matrix.
inline constexpr std::array<std::string_view, kNumScales> kScaleNames{"xs", "s", "m", "l"};

struct DflConfig {
    int bins = 16;
    void validate() const;
};

enum class BranchKind { standard, central_difference };

// One parallel branch of the detail-aware convolution. A central-difference
// branch stores raw weights; its effective kernel replaces each center tap
// with center - sum(all taps), so every 3x3 slice sums to zero and the
// branch responds to local differences only.
struct DetailBranch {
    BranchKind kind = BranchKind::standard;
    ConvParams conv;

    ConvParams effective() const;
};

struct DetailConv {
    std::vector<DetailBranch> branches;
    std::optional<ConvParams> merged;

    bool is_merged() const { return merged.has_value(); }
    int channels() const;
    std::size_t param_count() const;
    void validate() const;

    // One standard 3x3 branch plus one central-difference 3x3 branch.
    static DetailConv random(Rng& rng, int channels, bool with_bias = true);
};

// Lift every branch to the common 3x3 support and sum kernels and biases.
// Returns a new record; the input is not modified.
DetailConv reparameterize(const DetailConv& d);

Tensor detail_forward(const Tensor& x, const DetailConv& d);
Var detail_forward(GradTape& tape, Var x, const DetailConv& d);

struct UdaHeadParams {
    std::array<ConvParams, kNumScales> shared_proj;
    DetailConv detail;
    std::vector<ConvParams> box_head;
    std::vector<ConvParams> cls_head;
    std::array<float, kNumScales> box_scales{1.0f, 1.0f, 1.0f, 1.0f};
    DflConfig dfl;

    int hidden() const { return detail.channels(); }
    int num_classes() const { return cls_head.back().out_channels(); }
    int bins() const { return dfl.bins; }
    std::size_t param_count() const;
    // Parameters shared by all scales (detail block and both heads).
    std::size_t shared_param_count() const;
    void validate() const;

    // box/cls stacks: 3x3 hidden->hidden then 1x1 to 4R / N_c.
    static UdaHeadParams random(Rng& rng, std::span<const int, kNumScales> in_channels, int hidden,
                                int num_classes, int bins, bool with_bias = true);
};

struct AnchorGrid {
    std::vector<std::pair<int, int>> extents;  // (H, W) per scale
    std::vector<int> strides;
    // Per scale, (x + 0.5, y + 0.5) in cell units, row-major.
    std::vector<std::vector<std::array<float, 2>>> centers;

    std::size_t total() const;
};

AnchorGrid make_anchors(std::span<const std::pair<int, int>> extents, std::span<const int> strides);

// (B, 4R, H, W) logits -> (B, 4, H, W) softmax expectations over R bins.
Tensor dfl_decode(const Tensor& box_logits, const DflConfig& cfg);
Var dfl_decode(GradTape& tape, Var box_logits, const DflConfig& cfg);

// (B, 1, N, 4) ltrb distances in cell units -> (B, 1, N, 4) pixel boxes.
Tensor dist2bbox(const Tensor& distances, const AnchorGrid& anchors);
Var dist2bbox(GradTape& tape, Var distances, const AnchorGrid& anchors);

struct HeadOutput {
    Tensor boxes;      // (B, 1, N, 4)
    Tensor scores;     // (B, 1, N, N_c), sigmoid applied
    Tensor distances;  // (B, 1, N, 4)
    Tensor merged;     // (B, 1, N, 4R + N_c) raw predictions Q
};

struct HeadVars {
    Var boxes;
    Var scores;
    Var distances;
    Var merged;
};

using ScaleFeatures = std::array<Tensor, kNumScales>;

HeadOutput uda_forward(const ScaleFeatures& features, const UdaHeadParams& p,
                       const AnchorGrid& anchors);
HeadVars uda_forward(GradTape& tape, std::span<const Var, kNumScales> features,
                     const UdaHeadParams& p, const AnchorGrid& anchors);

struct Detection {
    Box box;
    int class_id = 0;
    float score = 0.0f;
    std::size_t row = 0;  // tie-break key
};

// Best class per row for one batch element; rows at or below the score
// threshold are dropped.
std::vector<Detection> extract_detections(const HeadOutput& out, int batch_index,
                                          float score_threshold);

// Class-wise greedy suppression. Ordering is (score desc, row asc).
std::vector<Detection> nms(std::vector<Detection> detections, float iou_threshold,
                           float score_threshold);

struct HeadComplexity {
    std::size_t locations = 0;       // N
    std::size_t shared_block_macs = 0;  // detail block and inner head convs, ~ N C_h^2
    std::size_t projection_macs = 0;    // scale projections and output convs, ~ N C_h
    std::size_t dfl_macs = 0;           // softmax expectation, ~ N R
    std::size_t hidden_activations = 0; // N C_h
    std::size_t logits = 0;             // N (4R + N_c)
    std::size_t params = 0;

    std::size_t total_macs() const { return shared_block_macs + projection_macs + dfl_macs; }
};

HeadComplexity head_complexity(const UdaHeadParams& p,
                               std::span<const std::pair<int, int>> extents, int batch = 1);

}  // namespace collabod
