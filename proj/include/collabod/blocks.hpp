#pragma once

#include <array>
#include <span>
#include <vector>

#include "collabod/ops.hpp"
#include "collabod/tape.hpp"
#include "collabod/tensor.hpp"

namespace collabod {

// Dual-path input stage. The embedding is split channel-wise into a
// structure stream (max-pooled, scale preserving) and a detail stream
// (depthwise 3x3 then pointwise 1x1); the streams are concatenated and
// fused by a stride-2 convolution that halves the spatial extents.
struct DpfStemParams {
    ConvParams embed;
    ConvParams detail_dw;
    ConvParams detail_pw;
    ops::PoolWindow pool{3, 3, 1, 1};
    ConvParams fuse;
    int structure_channels = 0;
    int detail_channels = 0;

    void validate() const;
    int in_channels() const { return embed.in_channels(); }
    int out_channels() const { return fuse.out_channels(); }
    std::size_t param_count() const;

    // split < 0 selects an even partition of embed_channels.
    static DpfStemParams random(Rng& rng, int in_channels, int embed_channels, int out_channels,
                                int split = -1, bool with_bias = true);
};

Tensor dpf_stem_forward(const Tensor& x, const DpfStemParams& p);
Var dpf_stem_forward(GradTape& tape, Var x, const DpfStemParams& p);

// Brings one predecessor feature map to the current stage: a 1x1
// projection (which may carry a stride for finer sources) followed by
// nearest upsampling for coarser ones.
struct SourceAlign {
    ConvParams proj;
    int upsample = 1;
};

// Dense aggregation: concat of aligned sources, two stacked convolutions,
// and an optional identity residual on the current-stage input.
struct DaBlockParams {
    std::vector<SourceAlign> align;
    std::array<ConvParams, 2> refine;
    bool residual = true;

    void validate() const;
    int out_channels() const { return refine[1].out_channels(); }
    std::size_t param_count() const;

    static DaBlockParams random(Rng& rng, std::span<const int> source_channels,
                                std::span<const int> source_strides,
                                std::span<const int> source_upsample, int align_channels,
                                int out_channels, int refine_kernel, bool residual,
                                bool with_bias = true);
};

Tensor dablock_forward(std::span<const Tensor> sources, const Tensor& x, const DaBlockParams& p);
Var dablock_forward(GradTape& tape, std::span<const Var> sources, Var x, const DaBlockParams& p);

// Bilateral reweighting of two same-scale paths.
struct BrmParams {
    ConvParams proj1;
    ConvParams proj2;
    ConvParams interact;  // 3x3, 2C -> 2C
    std::vector<float> lambda1;
    std::vector<float> lambda2;
    ConvParams out;

    void validate() const;
    int embed_channels() const { return proj1.out_channels(); }
    std::size_t param_count() const;

    static BrmParams random(Rng& rng, int in_channels, int embed_channels, int out_channels,
                            bool with_bias = true);
};

struct BrmGates {
    Tensor gate1;
    Tensor gate2;
};

BrmGates brm_gates(const Tensor& x1, const Tensor& x2, const BrmParams& p);
Tensor brm_forward(const Tensor& x1, const Tensor& x2, const BrmParams& p);
Var brm_forward(GradTape& tape, Var x1, Var x2, const BrmParams& p);

}  // namespace collabod
