#include "collabod/head.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "collabod/ops.hpp"

namespace collabod {
namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}

std::size_t conv_macs(const ConvParams& p, int batch, int out_h, int out_w) {
    return static_cast<std::size_t>(batch) * p.out_channels() * out_h * out_w *
           (p.in_channels() / p.groups) * p.kernel_h() * p.kernel_w();
}

}  // namespace

void DflConfig::validate() const {
    require(bins >= 2, "dfl: bin count must be >= 2, got " + std::to_string(bins));
}

// ------------------------------------------------------------ DetailConv

ConvParams DetailBranch::effective() const {
    if (kind == BranchKind::standard) return conv;
    ConvParams p = conv;
    const Shape& ks = p.kernel.shape();
    const int cy = ks.h() / 2;
    const int cx = ks.w() / 2;
    for (int o = 0; o < ks.n(); ++o)
        for (int i = 0; i < ks.c(); ++i) {
            float sum = 0.0f;
            for (int y = 0; y < ks.h(); ++y)
                for (int x = 0; x < ks.w(); ++x) sum += conv.kernel.at(o, i, y, x);
            p.kernel.at(o, i, cy, cx) = conv.kernel.at(o, i, cy, cx) - sum;
        }
    return p;
}

int DetailConv::channels() const {
    if (merged) return merged->out_channels();
    require(!branches.empty(), "detail conv has no branches");
    return branches.front().conv.out_channels();
}

std::size_t DetailConv::param_count() const {
    if (merged) return merged->param_count();
    std::size_t n = 0;
    for (const auto& b : branches) n += b.conv.param_count();
    return n;
}

void DetailConv::validate() const {
    if (merged) {
        merged->validate();
        return;
    }
    require(!branches.empty(), "detail conv: no branches");
    const ConvParams& ref = branches.front().conv;
    for (std::size_t i = 0; i < branches.size(); ++i) {
        const ConvParams& c = branches[i].conv;
        c.validate();
        const std::string tag = "detail conv branch " + std::to_string(i);
        require(c.kernel_h() % 2 == 1 && c.kernel_w() % 2 == 1, tag + ": kernel extents must be odd");
        require(c.kernel_h() == c.kernel_w(), tag + ": kernel must be square");
        require(c.padding == c.kernel_h() / 2, tag + ": padding must center the kernel");
        require(c.stride == ref.stride, tag + ": stride differs from branch 0");
        require(c.groups == 1 && ref.groups == 1, tag + ": grouped branches are not supported");
        require(c.out_channels() == ref.out_channels(), tag + ": output channels differ from branch 0");
        require(c.in_channels() == ref.in_channels(), tag + ": input channels differ from branch 0");
    }
}

DetailConv DetailConv::random(Rng& rng, int channels, bool with_bias) {
    DetailConv d;
    d.branches.push_back({BranchKind::standard, ConvParams::random(rng, channels, channels, 3, 1, 1, 1, with_bias)});
    d.branches.push_back({BranchKind::central_difference, ConvParams::random(rng, channels, channels, 3, 1, 1, 1, with_bias)});
    return d;
}

DetailConv reparameterize(const DetailConv& d) {
    if (d.merged) return d;
    d.validate();
    int k = 1;
    for (const auto& b : d.branches) k = std::max(k, b.conv.kernel_h());
    const ConvParams& ref = d.branches.front().conv;
    ConvParams m = ConvParams::zeros(ref.in_channels(), ref.out_channels(), k, ref.stride, k / 2);
    for (const auto& b : d.branches) {
        const ConvParams e = b.effective();
        const int off = (k - e.kernel_h()) / 2;
        const Shape& ks = e.kernel.shape();
        for (int o = 0; o < ks.n(); ++o)
            for (int i = 0; i < ks.c(); ++i)
                for (int y = 0; y < ks.h(); ++y)
                    for (int x = 0; x < ks.w(); ++x)
                        m.kernel.at(o, i, y + off, x + off) += e.kernel.at(o, i, y, x);
        for (std::size_t o = 0; o < e.bias.size(); ++o) m.bias[o] += e.bias[o];
    }
    DetailConv out;
    out.merged = std::move(m);
    return out;
}

Var detail_forward(GradTape& tape, Var x, const DetailConv& d) {
    d.validate();
    if (d.merged) return tape.conv2d(x, *d.merged);
    Var acc = tape.conv2d(x, d.branches.front().effective());
    for (std::size_t i = 1; i < d.branches.size(); ++i)
        acc = tape.add(acc, tape.conv2d(x, d.branches[i].effective()));
    return acc;
}

Tensor detail_forward(const Tensor& x, const DetailConv& d) {
    GradTape tape;
    return tape.value(detail_forward(tape, tape.constant(x), d));
}

// ---------------------------------------------------------- head params

std::size_t UdaHeadParams::shared_param_count() const {
    std::size_t n = detail.param_count();
    for (const auto& c : box_head) n += c.param_count();
    for (const auto& c : cls_head) n += c.param_count();
    return n;
}

std::size_t UdaHeadParams::param_count() const {
    std::size_t n = shared_param_count() + box_scales.size();
    for (const auto& c : shared_proj) n += c.param_count();
    return n;
}

void UdaHeadParams::validate() const {
    dfl.validate();
    detail.validate();
    const int ch = hidden();
    for (int i = 0; i < kNumScales; ++i) {
        shared_proj[i].validate();
        require(shared_proj[i].out_channels() == ch,
                "uda head: projection for scale " + std::string(kScaleNames[i]) + " outputs " +
                    std::to_string(shared_proj[i].out_channels()) + " channels, hidden width is " +
                    std::to_string(ch));
        require(shared_proj[i].stride == 1, "uda head: projections must preserve scale");
    }
    auto check_stack = [&](const std::vector<ConvParams>& stack, int final_channels, const char* name) {
        require(!stack.empty(), std::string("uda head: empty ") + name + " head");
        int c = ch;
        for (const auto& conv : stack) {
            conv.validate();
            require(conv.in_channels() == c, std::string("uda head: ") + name + " head channel mismatch");
            require(conv.stride == 1 && conv.padding * 2 + 1 == conv.kernel_h(),
                    std::string("uda head: ") + name + " head must preserve scale");
            c = conv.out_channels();
        }
        require(c == final_channels, std::string("uda head: ") + name + " head produces " +
                                         std::to_string(c) + " channels, expected " +
                                         std::to_string(final_channels));
    };
    check_stack(box_head, 4 * dfl.bins, "box");
    require(!cls_head.empty(), "uda head: empty cls head");
    check_stack(cls_head, cls_head.back().out_channels(), "cls");
}

UdaHeadParams UdaHeadParams::random(Rng& rng, std::span<const int, kNumScales> in_channels,
                                    int hidden, int num_classes, int bins, bool with_bias) {
    UdaHeadParams p;
    p.dfl.bins = bins;
    for (int i = 0; i < kNumScales; ++i)
        p.shared_proj[i] = ConvParams::random(rng, in_channels[i], hidden, 1, 1, 0, 1, with_bias);
    p.detail = DetailConv::random(rng, hidden, with_bias);
    p.box_head.push_back(ConvParams::random(rng, hidden, hidden, 3, 1, 1, 1, with_bias));
    p.box_head.push_back(ConvParams::random(rng, hidden, 4 * bins, 1, 1, 0, 1, with_bias));
    p.cls_head.push_back(ConvParams::random(rng, hidden, hidden, 3, 1, 1, 1, with_bias));
    p.cls_head.push_back(ConvParams::random(rng, hidden, num_classes, 1, 1, 0, 1, with_bias));
    return p;
}

// --------------------------------------------------------------- anchors

std::size_t AnchorGrid::total() const {
    std::size_t n = 0;
    for (const auto& c : centers) n += c.size();
    return n;
}

AnchorGrid make_anchors(std::span<const std::pair<int, int>> extents, std::span<const int> strides) {
    require(extents.size() == strides.size(), "make_anchors: extents and strides differ in length");
    AnchorGrid g;
    for (std::size_t i = 0; i < extents.size(); ++i) {
        const auto [h, w] = extents[i];
        require(h > 0 && w > 0, "make_anchors: non-positive extent at scale " + std::to_string(i));
        require(strides[i] > 0, "make_anchors: non-positive stride at scale " + std::to_string(i));
        if (i > 0)
            require(strides[i] > strides[i - 1], "make_anchors: strides must increase from finest to coarsest");
        g.extents.emplace_back(h, w);
        g.strides.push_back(strides[i]);
        std::vector<std::array<float, 2>> c;
        c.reserve(static_cast<std::size_t>(h) * w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) c.push_back({static_cast<float>(x) + 0.5f, static_cast<float>(y) + 0.5f});
        g.centers.push_back(std::move(c));
    }
    return g;
}

// ------------------------------------------------------------------- DFL

Var dfl_decode(GradTape& tape, Var box_logits, const DflConfig& cfg) {
    cfg.validate();
    const int c = tape.shape(box_logits).c();
    require(c % 4 == 0, "dfl_decode: channel extent " + std::to_string(c) + " not divisible by 4");
    require(c == 4 * cfg.bins, "dfl_decode: channel extent " + std::to_string(c) + " != 4R = " +
                                   std::to_string(4 * cfg.bins));
    return tape.bin_expectation(tape.softmax_channel(box_logits, cfg.bins), cfg.bins);
}

Tensor dfl_decode(const Tensor& box_logits, const DflConfig& cfg) {
    GradTape tape;
    return tape.value(dfl_decode(tape, tape.constant(box_logits), cfg));
}

// ------------------------------------------------------------- Dist2BBox

namespace {

struct RowAnchor {
    float cx, cy, stride;
};

std::vector<RowAnchor> row_anchors(const AnchorGrid& a) {
    std::vector<RowAnchor> rows;
    rows.reserve(a.total());
    for (std::size_t s = 0; s < a.centers.size(); ++s)
        for (const auto& c : a.centers[s]) rows.push_back({c[0], c[1], static_cast<float>(a.strides[s])});
    return rows;
}

}  // namespace

Var dist2bbox(GradTape& tape, Var distances, const AnchorGrid& anchors) {
    const Tensor& d = tape.value(distances);
    const Shape& s = d.shape();
    require(s.c() == 1 && s.w() == 4, "dist2bbox: expected (B,1,N,4) distances, got " + s.str());
    require(static_cast<std::size_t>(s.h()) == anchors.total(),
            "dist2bbox: " + std::to_string(s.h()) + " distance rows for " +
                std::to_string(anchors.total()) + " anchors");
    const auto rows = row_anchors(anchors);
    Tensor out(s);
    for (int n = 0; n < s.n(); ++n)
        for (int r = 0; r < s.h(); ++r) {
            const float l = d.at(n, 0, r, 0), t = d.at(n, 0, r, 1);
            const float rr = d.at(n, 0, r, 2), b = d.at(n, 0, r, 3);
            require(l >= 0.0f && t >= 0.0f && rr >= 0.0f && b >= 0.0f,
                    "dist2bbox: negative distance at row " + std::to_string(r));
            const RowAnchor& a = rows[r];
            out.at(n, 0, r, 0) = (a.cx - l) * a.stride;
            out.at(n, 0, r, 1) = (a.cy - t) * a.stride;
            out.at(n, 0, r, 2) = (a.cx + rr) * a.stride;
            out.at(n, 0, r, 3) = (a.cy + b) * a.stride;
        }
    return tape.record("dist2bbox", std::move(out), {distances},
                       [rows, s](const Tensor& g, const std::vector<bool>&) {
                           Tensor gd(s);
                           for (int n = 0; n < s.n(); ++n)
                               for (int r = 0; r < s.h(); ++r) {
                                   const float st = rows[r].stride;
                                   gd.at(n, 0, r, 0) = -st * g.at(n, 0, r, 0);
                                   gd.at(n, 0, r, 1) = -st * g.at(n, 0, r, 1);
                                   gd.at(n, 0, r, 2) = st * g.at(n, 0, r, 2);
                                   gd.at(n, 0, r, 3) = st * g.at(n, 0, r, 3);
                               }
                           return std::vector<Tensor>{std::move(gd)};
                       });
}

Tensor dist2bbox(const Tensor& distances, const AnchorGrid& anchors) {
    GradTape tape;
    return tape.value(dist2bbox(tape, tape.constant(distances), anchors));
}

// --------------------------------------------------------------- forward

HeadVars uda_forward(GradTape& tape, std::span<const Var, kNumScales> features,
                     const UdaHeadParams& p, const AnchorGrid& anchors) {
    p.validate();
    require(anchors.extents.size() == kNumScales,
            "uda head: anchor grid has " + std::to_string(anchors.extents.size()) +
                " scales, expected 4");
    std::vector<Var> dist_rows, score_rows, merged_rows;
    int batch = -1;
    for (int i = 0; i < kNumScales; ++i) {
        const std::string name(kScaleNames[i]);
        const Shape& fs = tape.shape(features[i]);
        require(fs.c() == p.shared_proj[i].in_channels(),
                "uda head: scale " + name + " has " + std::to_string(fs.c()) +
                    " channels, projection expects " + std::to_string(p.shared_proj[i].in_channels()));
        require(anchors.extents[i] == std::make_pair(fs.h(), fs.w()),
                "uda head: scale " + name + " extent " + fs.str() + " does not match anchor grid");
        require(batch < 0 || fs.n() == batch, "uda head: batch extent differs at scale " + name);
        batch = fs.n();

        const Var g = detail_forward(tape, tape.conv2d(features[i], p.shared_proj[i]), p.detail);
        Var box = g;
        for (const auto& conv : p.box_head) box = tape.conv2d(box, conv);
        box = tape.scale_by(box, tape.constant(Tensor(Shape{1, 1, 1, 1}, p.box_scales[i])));
        Var cls = g;
        for (const auto& conv : p.cls_head) cls = tape.conv2d(cls, conv);

        const Var pair[2] = {box, cls};
        merged_rows.push_back(tape.to_rows(tape.concat(pair)));
        dist_rows.push_back(tape.to_rows(dfl_decode(tape, box, p.dfl)));
        score_rows.push_back(tape.to_rows(tape.sigmoid(cls)));
    }
    HeadVars v;
    v.merged = tape.concat_rows(merged_rows);
    v.distances = tape.concat_rows(dist_rows);
    v.scores = tape.concat_rows(score_rows);
    v.boxes = dist2bbox(tape, v.distances, anchors);
    return v;
}

HeadOutput uda_forward(const ScaleFeatures& features, const UdaHeadParams& p,
                       const AnchorGrid& anchors) {
    GradTape tape;
    std::array<Var, kNumScales> vars;
    for (int i = 0; i < kNumScales; ++i) vars[i] = tape.constant(features[i]);
    const HeadVars v = uda_forward(tape, vars, p, anchors);
    return {tape.value(v.boxes), tape.value(v.scores), tape.value(v.distances), tape.value(v.merged)};
}

// ------------------------------------------------------- postprocessing

std::vector<Detection> extract_detections(const HeadOutput& out, int batch_index,
                                          float score_threshold) {
    const Shape& ss = out.scores.shape();
    require(batch_index >= 0 && batch_index < ss.n(), "extract_detections: batch index out of range");
    std::vector<Detection> dets;
    for (int r = 0; r < ss.h(); ++r) {
        int best = 0;
        float best_score = out.scores.at(batch_index, 0, r, 0);
        for (int c = 1; c < ss.w(); ++c) {
            const float s = out.scores.at(batch_index, 0, r, c);
            if (s > best_score) {
                best = c;
                best_score = s;
            }
        }
        if (best_score <= score_threshold) continue;
        Detection d;
        d.box = {out.boxes.at(batch_index, 0, r, 0), out.boxes.at(batch_index, 0, r, 1),
                 out.boxes.at(batch_index, 0, r, 2), out.boxes.at(batch_index, 0, r, 3)};
        d.class_id = best;
        d.score = best_score;
        d.row = static_cast<std::size_t>(r);
        dets.push_back(d);
    }
    return dets;
}

std::vector<Detection> nms(std::vector<Detection> detections, float iou_threshold,
                           float score_threshold) {
    std::erase_if(detections, [&](const Detection& d) { return !(d.score > score_threshold); });
    std::stable_sort(detections.begin(), detections.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.row < b.row;
    });
    std::vector<Detection> kept;
    for (const auto& d : detections) {
        bool suppressed = false;
        for (const auto& k : kept) {
            if (k.class_id == d.class_id && overlap_iou(k.box, d.box) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

// ------------------------------------------------------------ complexity

HeadComplexity head_complexity(const UdaHeadParams& p, std::span<const std::pair<int, int>> extents,
                               int batch) {
    p.validate();
    require(extents.size() == kNumScales, "head_complexity: expected 4 scale extents");
    const int ch = p.hidden();
    HeadComplexity hc;
    auto macs_of = [&](const ConvParams& conv, int h, int w) {
        const int oh = ops::conv_out_extent(h, conv.kernel_h(), conv.stride, conv.padding);
        const int ow = ops::conv_out_extent(w, conv.kernel_w(), conv.stride, conv.padding);
        return conv_macs(conv, batch, oh, ow);
    };
    // Hidden -> hidden layers (detail block, inner head convs) form the
    // shared block; scale projections and output convs are projections.
    auto account_stack = [&](const std::vector<ConvParams>& stack, int h, int w) {
        for (std::size_t j = 0; j < stack.size(); ++j) {
            const std::size_t m = macs_of(stack[j], h, w);
            (j + 1 < stack.size() ? hc.shared_block_macs : hc.projection_macs) += m;
        }
    };
    for (int i = 0; i < kNumScales; ++i) {
        const auto [h, w] = extents[i];
        const std::size_t loc = static_cast<std::size_t>(batch) * h * w;
        hc.locations += loc;
        hc.projection_macs += macs_of(p.shared_proj[i], h, w);
        if (p.detail.merged) {
            hc.shared_block_macs += macs_of(*p.detail.merged, h, w);
        } else {
            for (const auto& b : p.detail.branches) hc.shared_block_macs += macs_of(b.conv, h, w);
        }
        account_stack(p.box_head, h, w);
        account_stack(p.cls_head, h, w);
        hc.dfl_macs += loc * 4 * static_cast<std::size_t>(p.bins());
    }
    hc.hidden_activations = hc.locations * ch;
    hc.logits = hc.locations * (4 * static_cast<std::size_t>(p.bins()) + p.num_classes());
    hc.params = p.param_count();
    return hc;
}

}  // namespace collabod
