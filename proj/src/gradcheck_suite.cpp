#include "collabod/gradcheck_suite.hpp"

#include <functional>

#include "collabod/blocks.hpp"
#include "collabod/head.hpp"

namespace collabod {
namespace {

struct Case {
    std::vector<Tensor> inputs;
    GraphBuilder build;
    double step = 1e-2;
};

using Factory = std::function<Case(Rng&)>;

Tensor rand(Rng& rng, Shape s, float lo = -1.0f, float hi = 1.0f) { return rng.uniform_tensor(s, lo, hi); }

const std::vector<std::pair<std::string, Factory>>& registry() {
    static const std::vector<std::pair<std::string, Factory>> cases = {
        {"conv2d",
         [](Rng& rng) {
             return Case{{rand(rng, {1, 3, 6, 6}), rand(rng, {4, 3, 3, 3}), rand(rng, {1, 4, 1, 1})},
                         [](GradTape& t, std::span<const Var> v) { return t.conv2d(v[0], v[1], v[2], {1, 1, 1}); }};
         }},
        {"conv2d_strided_grouped",
         [](Rng& rng) {
             return Case{{rand(rng, {2, 4, 7, 7}), rand(rng, {6, 2, 3, 3}), rand(rng, {1, 6, 1, 1})},
                         [](GradTape& t, std::span<const Var> v) { return t.conv2d(v[0], v[1], v[2], {2, 1, 2}); }};
         }},
        {"max_pool2d",
         [](Rng& rng) {
             return Case{{rand(rng, {1, 2, 7, 7})},
                         [](GradTape& t, std::span<const Var> v) { return t.max_pool2d(v[0], {3, 3, 2, 1}); }};
         }},
        {"sigmoid",
         [](Rng& rng) {
             return Case{{rand(rng, {1, 2, 4, 4})},
                         [](GradTape& t, std::span<const Var> v) { return t.sigmoid(v[0]); }};
         }},
        {"softmax_channel",
         [](Rng& rng) {
             return Case{{rand(rng, {1, 8, 3, 3})},
                         [](GradTape& t, std::span<const Var> v) { return t.softmax_channel(v[0], 4); }};
         }},
        {"concat",
         [](Rng& rng) {
             return Case{{rand(rng, {1, 2, 3, 3}), rand(rng, {1, 3, 3, 3})},
                         [](GradTape& t, std::span<const Var> v) { return t.concat(v); }};
         }},
        {"split",
         [](Rng& rng) {
             return Case{{rand(rng, {1, 8, 3, 3})}, [](GradTape& t, std::span<const Var> v) {
                             const int sizes[3] = {2, 5, 1};
                             const auto p = t.split(v[0], sizes);
                             const Var reordered[3] = {p[2], p[0], p[1]};
                             return t.concat(reordered);
                         }};
         }},
        {"upsample_nearest",
         [](Rng& rng) {
             return Case{{rand(rng, {1, 2, 3, 3})},
                         [](GradTape& t, std::span<const Var> v) { return t.upsample_nearest(v[0], 2); }};
         }},
        {"add",
         [](Rng& rng) {
             return Case{{rand(rng, {1, 2, 3, 3}), rand(rng, {1, 2, 3, 3})},
                         [](GradTape& t, std::span<const Var> v) { return t.add(v[0], v[1]); }};
         }},
        {"mul",
         [](Rng& rng) {
             return Case{{rand(rng, {1, 2, 3, 3}), rand(rng, {1, 2, 3, 3})},
                         [](GradTape& t, std::span<const Var> v) { return t.mul(v[0], v[1]); }};
         }},
        {"scale_channels",
         [](Rng& rng) {
             return Case{{rand(rng, {2, 3, 4, 4}), rand(rng, {1, 3, 1, 1})},
                         [](GradTape& t, std::span<const Var> v) { return t.scale_channels(v[0], v[1]); }};
         }},
        {"scale_by",
         [](Rng& rng) {
             return Case{{rand(rng, {1, 3, 4, 4}), rand(rng, {1, 1, 1, 1})},
                         [](GradTape& t, std::span<const Var> v) { return t.scale_by(v[0], v[1]); }};
         }},
        {"bin_expectation",
         [](Rng& rng) {
             return Case{{rand(rng, {1, 8, 3, 3}, 0.0f, 1.0f)},
                         [](GradTape& t, std::span<const Var> v) { return t.bin_expectation(v[0], 4); }};
         }},
        {"to_rows",
         [](Rng& rng) {
             return Case{{rand(rng, {2, 3, 2, 3}), rand(rng, {2, 3, 1, 2})}, [](GradTape& t, std::span<const Var> v) {
                             const Var rows[2] = {t.to_rows(v[0]), t.to_rows(v[1])};
                             return t.concat_rows(rows);
                         }};
         }},
        {"conv_pool_sigmoid",
         [](Rng& rng) {
             return Case{{rand(rng, {1, 3, 8, 8}), rand(rng, {4, 3, 3, 3}), rand(rng, {1, 4, 1, 1})},
                         [](GradTape& t, std::span<const Var> v) {
                             return t.sigmoid(t.max_pool2d(t.conv2d(v[0], v[1], v[2], {1, 1, 1}), {3, 3, 2, 1}));
                         }};
         }},
        {"dfl_decode",
         [](Rng& rng) {
             return Case{{rand(rng, {1, 64, 2, 2}, -3.0f, 3.0f)}, [](GradTape& t, std::span<const Var> v) {
                             return dfl_decode(t, v[0], DflConfig{16});
                         }};
         }},
        {"dist2bbox",
         [](Rng& rng) {
             const std::pair<int, int> ext[2] = {{2, 2}, {1, 1}};
             const int strides[2] = {8, 16};
             const AnchorGrid anchors = make_anchors(ext, strides);
             return Case{{rand(rng, {1, 1, 5, 4}, 0.5f, 3.0f)}, [anchors](GradTape& t, std::span<const Var> v) {
                             return dist2bbox(t, v[0], anchors);
                         }};
         }},
        {"dpf_stem",
         [](Rng& rng) {
             const DpfStemParams p = DpfStemParams::random(rng, 3, 8, 8);
             return Case{{rand(rng, {1, 3, 8, 8})},
                         [p](GradTape& t, std::span<const Var> v) { return dpf_stem_forward(t, v[0], p); }};
         }},
        {"dablock",
         [](Rng& rng) {
             const int ch[3] = {4, 6, 5};
             const int strides[3] = {1, 1, 1};
             const int ups[3] = {1, 2, 4};
             const DaBlockParams p = DaBlockParams::random(rng, ch, strides, ups, 4, 4, 3, true);
             return Case{{rand(rng, {1, 4, 8, 8}), rand(rng, {1, 6, 4, 4}), rand(rng, {1, 5, 2, 2})},
                         [p](GradTape& t, std::span<const Var> v) { return dablock_forward(t, v, v[0], p); }};
         }},
        {"dablock_strided",
         [](Rng& rng) {
             const int ch[3] = {4, 3, 5};
             const int strides[3] = {1, 2, 4};
             const int ups[3] = {1, 1, 1};
             const DaBlockParams p = DaBlockParams::random(rng, ch, strides, ups, 6, 4, 3, true);
             return Case{{rand(rng, {1, 4, 2, 2}), rand(rng, {1, 3, 4, 4}), rand(rng, {1, 5, 8, 8})},
                         [p](GradTape& t, std::span<const Var> v) { return dablock_forward(t, v, v[0], p); }};
         }},
        {"brm",
         [](Rng& rng) {
             const BrmParams p = BrmParams::random(rng, 4, 4, 6);
             return Case{{rand(rng, {1, 4, 6, 6}), rand(rng, {1, 4, 6, 6})},
                         [p](GradTape& t, std::span<const Var> v) { return brm_forward(t, v[0], v[1], p); }};
         }},
        {"detail_conv",
         [](Rng& rng) {
             const DetailConv d = DetailConv::random(rng, 4);
             return Case{{rand(rng, {1, 4, 5, 5})},
                         [d](GradTape& t, std::span<const Var> v) { return detail_forward(t, v[0], d); }};
         }},
        {"uda_head",
         [](Rng& rng) {
             const int in_ch[kNumScales] = {4, 5, 6, 3};
             const UdaHeadParams p = UdaHeadParams::random(rng, std::span<const int, kNumScales>(in_ch), 8, 4, 8);
             const std::pair<int, int> ext[kNumScales] = {{4, 4}, {2, 2}, {1, 1}, {1, 1}};
             const int strides[kNumScales] = {4, 8, 16, 32};
             const AnchorGrid anchors = make_anchors(ext, strides);
             std::vector<Tensor> feats;
             for (int i = 0; i < kNumScales; ++i) feats.push_back(rand(rng, {1, in_ch[i], ext[i].first, ext[i].second}));
             return Case{std::move(feats), [p, anchors](GradTape& t, std::span<const Var> v) {
                             const HeadVars h = uda_forward(t, v.first<kNumScales>(), p, anchors);
                             const Var parts[2] = {h.boxes, h.scores};
                             return t.concat_rows(parts);
                         },
                         // Pool-free; a wide stencil keeps float32 rounding below the tolerance.
                         0.2};
         }},
    };
    return cases;
}

}  // namespace

const std::vector<std::string>& gradcheck_targets() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (const auto& [name, f] : registry()) n.push_back(name);
        return n;
    }();
    return names;
}

GradCheckReport run_gradcheck(std::string_view target, std::uint64_t seed) {
    for (const auto& [name, factory] : registry()) {
        if (name != target) continue;
        Rng rng(seed * 1000003 + 11);
        Case c = factory(rng);
        GradCheckOptions opts;
        opts.seed = seed;
        opts.step = c.step;
        return check_gradients(c.build, c.inputs, opts);
    }
    throw Error("gradcheck: unknown target '" + std::string(target) + "'");
}

}  // namespace collabod
