#include "collabod/blocks.hpp"

#include <string>

namespace collabod {
namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}

Tensor lambda_tensor(const std::vector<float>& lambda) {
    return Tensor(Shape{1, static_cast<int>(lambda.size()), 1, 1}, lambda);
}

}  // namespace

// ---------------------------------------------------------------- DPF-Stem

void DpfStemParams::validate() const {
    embed.validate();
    detail_dw.validate();
    detail_pw.validate();
    fuse.validate();
    require(structure_channels > 0 && detail_channels > 0,
            "dpf_stem: split sizes must be positive");
    require(structure_channels + detail_channels == embed.out_channels(),
            "dpf_stem: split sizes " + std::to_string(structure_channels) + "+" +
                std::to_string(detail_channels) + " != embed channels " +
                std::to_string(embed.out_channels()));
    require(embed.stride == 1, "dpf_stem: embedding must preserve scale");
    require(detail_dw.in_channels() == detail_channels,
            "dpf_stem: detail conv expects " + std::to_string(detail_dw.in_channels()) +
                " channels, detail stream has " + std::to_string(detail_channels));
    require(detail_pw.in_channels() == detail_dw.out_channels(),
            "dpf_stem: pointwise conv channel mismatch");
    require(pool.stride == 1 && pool.kernel_h == 2 * pool.padding + 1 &&
                pool.kernel_w == 2 * pool.padding + 1,
            "dpf_stem: structure pooling must preserve scale");
    require(fuse.in_channels() == structure_channels + detail_pw.out_channels(),
            "dpf_stem: fuse expects " + std::to_string(fuse.in_channels()) + " channels, got " +
                std::to_string(structure_channels + detail_pw.out_channels()));
    require(fuse.stride == 2, "dpf_stem: fuse must downsample with stride 2");
}

std::size_t DpfStemParams::param_count() const {
    return embed.param_count() + detail_dw.param_count() + detail_pw.param_count() +
           fuse.param_count();
}

DpfStemParams DpfStemParams::random(Rng& rng, int in_channels, int embed_channels,
                                    int out_channels, int split, bool with_bias) {
    DpfStemParams p;
    p.structure_channels = split < 0 ? embed_channels / 2 : split;
    p.detail_channels = embed_channels - p.structure_channels;
    p.embed = ConvParams::random(rng, in_channels, embed_channels, 3, 1, 1, 1, with_bias);
    p.detail_dw = ConvParams::random(rng, p.detail_channels, p.detail_channels, 3, 1, 1,
                                     p.detail_channels, with_bias);
    p.detail_pw = ConvParams::random(rng, p.detail_channels, p.detail_channels, 1, 1, 0, 1, with_bias);
    p.fuse = ConvParams::random(rng, embed_channels, out_channels, 3, 2, 1, 1, with_bias);
    return p;
}

Var dpf_stem_forward(GradTape& tape, Var x, const DpfStemParams& p) {
    p.validate();
    const Shape& s = tape.shape(x);
    require(s.c() == p.in_channels(), "dpf_stem: input has " + std::to_string(s.c()) +
                                          " channels, embedding expects " +
                                          std::to_string(p.in_channels()));
    require(s.h() % 2 == 0, "dpf_stem: odd height " + std::to_string(s.h()) +
                                " cannot be downsampled by 2");
    require(s.w() % 2 == 0, "dpf_stem: odd width " + std::to_string(s.w()) +
                                " cannot be downsampled by 2");
    const Var embedded = tape.conv2d(x, p.embed);
    const int sizes[2] = {p.structure_channels, p.detail_channels};
    const auto streams = tape.split(embedded, sizes);
    const Var structure = tape.max_pool2d(streams[0], p.pool);
    const Var detail = tape.conv2d(tape.conv2d(streams[1], p.detail_dw), p.detail_pw);
    const Var both[2] = {structure, detail};
    const Var out = tape.conv2d(tape.concat(both), p.fuse);
    const Shape& os = tape.shape(out);
    require(os.h() * 2 == s.h() && os.w() * 2 == s.w(),
            "dpf_stem: fuse produced " + os.str() + ", expected half of " + s.str());
    return out;
}

Tensor dpf_stem_forward(const Tensor& x, const DpfStemParams& p) {
    GradTape tape;
    return tape.value(dpf_stem_forward(tape, tape.constant(x), p));
}

// ----------------------------------------------------------------- DABlock

void DaBlockParams::validate() const {
    require(!align.empty(), "dablock: at least one source is required");
    const int c = align.front().proj.out_channels();
    int total = 0;
    for (std::size_t i = 0; i < align.size(); ++i) {
        align[i].proj.validate();
        require(align[i].proj.kernel_h() == 1 && align[i].proj.kernel_w() == 1,
                "dablock: align projection " + std::to_string(i) + " must be 1x1");
        require(align[i].upsample >= 1, "dablock: upsample factor must be >= 1");
        require(align[i].proj.out_channels() == c,
                "dablock: aligned source " + std::to_string(i) + " has " +
                    std::to_string(align[i].proj.out_channels()) + " channels, expected " +
                    std::to_string(c));
        total += c;
    }
    refine[0].validate();
    refine[1].validate();
    require(refine[0].in_channels() == total,
            "dablock: first refine conv expects " + std::to_string(refine[0].in_channels()) +
                " channels, aggregation has " + std::to_string(total));
    require(refine[1].in_channels() == refine[0].out_channels(),
            "dablock: refine convs channel mismatch");
}

std::size_t DaBlockParams::param_count() const {
    std::size_t n = refine[0].param_count() + refine[1].param_count();
    for (const auto& a : align) n += a.proj.param_count();
    return n;
}

DaBlockParams DaBlockParams::random(Rng& rng, std::span<const int> source_channels,
                                    std::span<const int> source_strides,
                                    std::span<const int> source_upsample, int align_channels,
                                    int out_channels, int refine_kernel, bool residual,
                                    bool with_bias) {
    require(source_channels.size() == source_strides.size() &&
                source_channels.size() == source_upsample.size(),
            "dablock: per-source specification lengths differ");
    DaBlockParams p;
    for (std::size_t i = 0; i < source_channels.size(); ++i)
        p.align.push_back({ConvParams::random(rng, source_channels[i], align_channels, 1,
                                              source_strides[i], 0, 1, with_bias),
                           source_upsample[i]});
    const int agg = align_channels * static_cast<int>(source_channels.size());
    p.refine[0] = ConvParams::random(rng, agg, out_channels, refine_kernel, 1, -1, 1, with_bias);
    p.refine[1] = ConvParams::random(rng, out_channels, out_channels, refine_kernel, 1, -1, 1, with_bias);
    p.residual = residual;
    return p;
}

Var dablock_forward(GradTape& tape, std::span<const Var> sources, Var x, const DaBlockParams& p) {
    p.validate();
    require(sources.size() == p.align.size(),
            "dablock: got " + std::to_string(sources.size()) + " sources, parameters expect " +
                std::to_string(p.align.size()));
    const Shape& xs = tape.shape(x);
    std::vector<Var> aligned;
    aligned.reserve(sources.size());
    for (std::size_t i = 0; i < sources.size(); ++i) {
        const Shape& ss = tape.shape(sources[i]);
        require(ss.c() == p.align[i].proj.in_channels(),
                "dablock: source " + std::to_string(i) + " has " + std::to_string(ss.c()) +
                    " channels, align expects " + std::to_string(p.align[i].proj.in_channels()));
        Var v = tape.conv2d(sources[i], p.align[i].proj);
        if (p.align[i].upsample > 1) v = tape.upsample_nearest(v, p.align[i].upsample);
        const Shape& as = tape.shape(v);
        require(as.n() == xs.n() && as.h() == xs.h() && as.w() == xs.w(),
                "dablock: source " + std::to_string(i) + " of shape " + ss.str() +
                    " aligns to " + as.str() + ", not to the current scale " + xs.str());
        aligned.push_back(v);
    }
    const Var agg = aligned.size() == 1 ? aligned.front() : tape.concat(aligned);
    const Var refined = tape.conv2d(tape.conv2d(agg, p.refine[0]), p.refine[1]);
    if (!p.residual) return refined;
    require(tape.shape(refined) == xs, "dablock: residual needs refine output " +
                                           tape.shape(refined).str() + " to equal input " +
                                           xs.str());
    return tape.add(refined, x);
}

Tensor dablock_forward(std::span<const Tensor> sources, const Tensor& x, const DaBlockParams& p) {
    GradTape tape;
    std::vector<Var> vars;
    for (const auto& s : sources) vars.push_back(tape.constant(s));
    return tape.value(dablock_forward(tape, vars, tape.constant(x), p));
}

// --------------------------------------------------------------------- BRM

void BrmParams::validate() const {
    proj1.validate();
    proj2.validate();
    interact.validate();
    out.validate();
    const int c = proj1.out_channels();
    require(proj1.kernel_h() == 1 && proj2.kernel_h() == 1 && out.kernel_h() == 1,
            "brm: projections must be 1x1");
    require(proj2.out_channels() == c, "brm: path embeddings differ in channel extent");
    require(interact.in_channels() == 2 * c,
            "brm: interaction expects " + std::to_string(interact.in_channels()) +
                " channels, joint embedding has " + std::to_string(2 * c));
    require(interact.out_channels() == 2 * c,
            "brm: interaction must produce " + std::to_string(2 * c) + " channels, produces " +
                std::to_string(interact.out_channels()));
    require(interact.stride == 1 && interact.padding * 2 + 1 == interact.kernel_h(),
            "brm: interaction must preserve scale");
    require(static_cast<int>(lambda1.size()) == c && static_cast<int>(lambda2.size()) == c,
            "brm: lambda length must equal embedding channels " + std::to_string(c));
    require(out.in_channels() == c, "brm: output projection channel mismatch");
}

std::size_t BrmParams::param_count() const {
    return proj1.param_count() + proj2.param_count() + interact.param_count() + lambda1.size() +
           lambda2.size() + out.param_count();
}

BrmParams BrmParams::random(Rng& rng, int in_channels, int embed_channels, int out_channels,
                            bool with_bias) {
    BrmParams p;
    p.proj1 = ConvParams::random(rng, in_channels, embed_channels, 1, 1, 0, 1, with_bias);
    p.proj2 = ConvParams::random(rng, in_channels, embed_channels, 1, 1, 0, 1, with_bias);
    p.interact = ConvParams::random(rng, 2 * embed_channels, 2 * embed_channels, 3, 1, 1, 1, with_bias);
    p.lambda1.assign(embed_channels, 1.0f);
    p.lambda2.assign(embed_channels, 1.0f);
    p.out = ConvParams::random(rng, embed_channels, out_channels, 1, 1, 0, 1, with_bias);
    return p;
}

namespace {

struct BrmTrace {
    Var e1, e2, gate1, gate2;
};

BrmTrace brm_trace(GradTape& tape, Var x1, Var x2, const BrmParams& p) {
    p.validate();
    require(tape.shape(x1) == tape.shape(x2), "brm: path shapes differ, " +
                                                  tape.shape(x1).str() + " vs " +
                                                  tape.shape(x2).str());
    require(tape.shape(x1).c() == p.proj1.in_channels(),
            "brm: input has " + std::to_string(tape.shape(x1).c()) +
                " channels, projection expects " + std::to_string(p.proj1.in_channels()));
    BrmTrace t;
    t.e1 = tape.conv2d(x1, p.proj1);
    t.e2 = tape.conv2d(x2, p.proj2);
    const Var joint[2] = {t.e1, t.e2};
    const Var gates = tape.sigmoid(tape.conv2d(tape.concat(joint), p.interact));
    const int c = p.embed_channels();
    const int halves[2] = {c, c};
    const auto g = tape.split(gates, halves);
    t.gate1 = g[0];
    t.gate2 = g[1];
    return t;
}

}  // namespace

Var brm_forward(GradTape& tape, Var x1, Var x2, const BrmParams& p) {
    const BrmTrace t = brm_trace(tape, x1, x2, p);
    const Var l1 = tape.constant(lambda_tensor(p.lambda1));
    const Var l2 = tape.constant(lambda_tensor(p.lambda2));
    const Var path1 = tape.scale_channels(tape.mul(t.e1, t.gate1), l1);
    const Var path2 = tape.scale_channels(tape.mul(t.e2, t.gate2), l2);
    return tape.conv2d(tape.add(path1, path2), p.out);
}

Tensor brm_forward(const Tensor& x1, const Tensor& x2, const BrmParams& p) {
    GradTape tape;
    return tape.value(brm_forward(tape, tape.constant(x1), tape.constant(x2), p));
}

BrmGates brm_gates(const Tensor& x1, const Tensor& x2, const BrmParams& p) {
    GradTape tape;
    const BrmTrace t = brm_trace(tape, tape.constant(x1), tape.constant(x2), p);
    return {tape.value(t.gate1), tape.value(t.gate2)};
}

}  // namespace collabod
