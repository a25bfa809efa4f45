#include "collabod/model.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "collabod/cten.hpp"

namespace collabod {
namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}

Shape conv_output(const Shape& in, const ConvParams& p) {
    require(in.c() == p.in_channels(), "expects " + std::to_string(p.in_channels()) +
                                           " input channels, producer has " + std::to_string(in.c()));
    const int h = ops::conv_out_extent(in.h(), p.kernel_h(), p.stride, p.padding);
    const int w = ops::conv_out_extent(in.w(), p.kernel_w(), p.stride, p.padding);
    require(h > 0 && w > 0, "convolution produces an empty output from " + in.str());
    return Shape{in.n(), p.out_channels(), h, w};
}

std::size_t conv_macs(const ConvParams& p, const Shape& out) {
    return static_cast<std::size_t>(out.n()) * out.c() * out.h() * out.w() *
           (p.in_channels() / p.groups) * p.kernel_h() * p.kernel_w();
}

struct BuildContext {
    const ModelConfig& cfg;
    Rng& rng;
    std::vector<Shape> shapes;  // per built layer
    std::map<std::string, int, std::less<>> index;

    int resolve(const std::string& id) const {
        if (id == kInputId) return -1;
        const auto it = index.find(id);
        require(it != index.end(), "input '" + id + "' is not declared before this layer");
        return it->second;
    }
    const Shape& shape_of(int idx) const { return idx < 0 ? cfg.input : shapes[idx]; }
};

std::set<std::string_view> allowed_options(LayerKind kind) {
    switch (kind) {
    case LayerKind::conv: return {"out", "k", "s", "p", "g"};
    case LayerKind::maxpool: return {"k", "s", "p"};
    case LayerKind::upsample: return {"factor"};
    case LayerKind::dpf_stem: return {"embed", "split", "out"};
    case LayerKind::dablock: return {"x", "align", "out", "k", "residual"};
    case LayerKind::brm: return {"embed", "out"};
    case LayerKind::uda_head: return {"xs", "s", "m", "l", "merged"};
    }
    return {};
}

Layer build_layer(const LayerSpec& spec, BuildContext& ctx) {
    const bool bias = ctx.cfg.bias;
    const auto allowed = allowed_options(spec.kind);
    for (const auto& [key, value] : spec.options)
        require(allowed.contains(key), std::string(to_string(spec.kind)) + " has no option '" + key + "'");
    Layer layer;
    layer.spec = spec;
    for (const auto& in : spec.inputs) layer.inputs.push_back(ctx.resolve(in));
    auto expect_inputs = [&](std::size_t n) {
        require(spec.inputs.size() == n, std::string(to_string(spec.kind)) + " takes " +
                                             std::to_string(n) + " input(s), got " +
                                             std::to_string(spec.inputs.size()));
    };

    switch (spec.kind) {
    case LayerKind::conv: {
        expect_inputs(1);
        const Shape& in = ctx.shape_of(layer.inputs[0]);
        const auto out = spec.get_int("out", -1);
        require(out > 0, "conv requires out=<channels>");
        const int k = spec.get_int("k", 3);
        const int s = spec.get_int("s", 1);
        const int p = spec.get_int("p", k / 2);
        const int g = spec.get_int("g", 1);
        require(k > 0 && s > 0 && p >= 0 && g > 0, "invalid conv geometry");
        ConvParams conv = ConvParams::random(ctx.rng, in.c(), out, k, s, p, g, bias);
        conv.validate();
        layer.output = conv_output(in, conv);
        layer.params = ConvLayer{std::move(conv)};
        break;
    }
    case LayerKind::maxpool: {
        expect_inputs(1);
        const Shape& in = ctx.shape_of(layer.inputs[0]);
        const int k = spec.get_int("k", 3);
        ops::PoolWindow win{k, k, spec.get_int("s", 1), spec.get_int("p", k / 2)};
        require(win.kernel_h > 0 && win.stride > 0 && win.padding >= 0 && win.padding < k,
                "invalid pooling window");
        require(k <= in.h() + 2 * win.padding && k <= in.w() + 2 * win.padding,
                "pooling window exceeds padded input " + in.str());
        layer.output = Shape{in.n(), in.c(), ops::conv_out_extent(in.h(), k, win.stride, win.padding),
                             ops::conv_out_extent(in.w(), k, win.stride, win.padding)};
        layer.params = PoolLayer{win};
        break;
    }
    case LayerKind::upsample: {
        expect_inputs(1);
        const Shape& in = ctx.shape_of(layer.inputs[0]);
        const int f = spec.get_int("factor", 2);
        require(f >= 1, "upsample factor must be >= 1");
        layer.output = Shape{in.n(), in.c(), in.h() * f, in.w() * f};
        layer.params = UpsampleLayer{f};
        break;
    }
    case LayerKind::dpf_stem: {
        expect_inputs(1);
        const Shape& in = ctx.shape_of(layer.inputs[0]);
        require(in.h() % 2 == 0 && in.w() % 2 == 0,
                "dpf_stem needs even spatial extents, producer has " + in.str());
        const int embed = spec.get_int("embed", 16);
        const int split = spec.get_int("split", embed / 2);
        const int out = spec.get_int("out", embed);
        require(embed >= 2 && split > 0 && split < embed && out > 0, "invalid dpf_stem widths");
        DpfStemParams p = DpfStemParams::random(ctx.rng, in.c(), embed, out, split, bias);
        p.validate();
        layer.output = Shape{in.n(), out, in.h() / 2, in.w() / 2};
        layer.params = std::move(p);
        break;
    }
    case LayerKind::dablock: {
        require(!spec.inputs.empty(), "dablock needs at least one source");
        const std::string x_id = spec.get("x").value_or(spec.inputs.front());
        const int x_idx = ctx.resolve(x_id);
        const Shape& xs = ctx.shape_of(x_idx);
        const int align = spec.get_int("align", xs.c());
        const int out = spec.get_int("out", xs.c());
        const int k = spec.get_int("k", 3);
        const bool residual = spec.get_int("residual", 1) != 0;
        require(align > 0 && out > 0 && k > 0 && k % 2 == 1, "invalid dablock widths or kernel");
        std::vector<int> chans, strides, ups;
        for (std::size_t i = 0; i < spec.inputs.size(); ++i) {
            const Shape& ss = ctx.shape_of(layer.inputs[i]);
            const std::string tag = "dablock source '" + spec.inputs[i] + "' " + ss.str();
            require(ss.n() == xs.n(), tag + " differs in batch extent");
            int stride = 1, up = 1;
            if (ss.h() > xs.h()) {
                require(ss.h() % xs.h() == 0 && ss.w() % xs.w() == 0 &&
                            ss.h() / xs.h() == ss.w() / xs.w(),
                        tag + " cannot be aligned to " + xs.str());
                stride = ss.h() / xs.h();
            } else if (ss.h() < xs.h()) {
                require(xs.h() % ss.h() == 0 && xs.w() % ss.w() == 0 &&
                            xs.h() / ss.h() == xs.w() / ss.w(),
                        tag + " cannot be aligned to " + xs.str());
                up = xs.h() / ss.h();
            } else {
                require(ss.w() == xs.w(), tag + " cannot be aligned to " + xs.str());
            }
            chans.push_back(ss.c());
            strides.push_back(stride);
            ups.push_back(up);
        }
        DaBlockParams p = DaBlockParams::random(ctx.rng, chans, strides, ups, align, out, k, residual, bias);
        p.validate();
        require(!residual || out == xs.c(),
                "residual dablock must output the input width " + std::to_string(xs.c()));
        layer.output = Shape{xs.n(), out, xs.h(), xs.w()};
        layer.inputs.push_back(x_idx);
        layer.params = DaBlockLayer{std::move(p), static_cast<int>(spec.inputs.size())};
        break;
    }
    case LayerKind::brm: {
        expect_inputs(2);
        const Shape& a = ctx.shape_of(layer.inputs[0]);
        const Shape& b = ctx.shape_of(layer.inputs[1]);
        require(a == b, "brm paths differ in shape, " + a.str() + " vs " + b.str());
        const int embed = spec.get_int("embed", a.c());
        const int out = spec.get_int("out", a.c());
        require(embed > 0 && out > 0, "invalid brm widths");
        BrmParams p = BrmParams::random(ctx.rng, a.c(), embed, out, bias);
        p.validate();
        layer.output = Shape{a.n(), out, a.h(), a.w()};
        layer.params = std::move(p);
        break;
    }
    case LayerKind::uda_head: {
        require(spec.inputs.empty(), "uda_head binds its inputs with xs=, s=, m=, l=");
        std::array<int, kNumScales> in_ch{};
        std::vector<std::pair<int, int>> extents;
        std::vector<int> strides;
        for (int i = 0; i < kNumScales; ++i) {
            const std::string key(kScaleNames[i]);
            const auto id = spec.get(key);
            require(id.has_value(), "uda_head is missing the '" + key + "' scale binding");
            const int idx = ctx.resolve(*id);
            const Shape& fs = ctx.shape_of(idx);
            const Shape& is = ctx.cfg.input;
            require(is.h() % fs.h() == 0 && is.w() % fs.w() == 0 && is.h() / fs.h() == is.w() / fs.w(),
                    "scale '" + key + "' extent " + fs.str() + " is not an integer stride of the input");
            require(fs.n() == is.n(), "scale '" + key + "' differs in batch extent");
            layer.inputs.push_back(idx);
            in_ch[i] = fs.c();
            extents.emplace_back(fs.h(), fs.w());
            strides.push_back(is.h() / fs.h());
        }
        HeadLayer head;
        head.anchors = make_anchors(extents, strides);
        head.params = UdaHeadParams::random(ctx.rng, in_ch, ctx.cfg.hidden, ctx.cfg.num_classes,
                                            ctx.cfg.bins, bias);
        if (spec.get_int("merged", 0) != 0) head.params.detail = reparameterize(head.params.detail);
        head.params.validate();
        layer.params = std::move(head);
        break;
    }
    }
    return layer;
}

template <class LayerT, class F>
void visit_params(LayerT& layer, F&& f) {
    const std::string& id = layer.spec.id;
    auto conv = [&](const std::string& name, auto& c) {
        f(id + "." + name + ".weight", c.kernel);
        f(id + "." + name + ".bias", c.bias);
    };
    std::visit(
        [&](auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, ConvLayer>) {
                conv("conv", p.conv);
            } else if constexpr (std::is_same_v<T, DpfStemParams>) {
                conv("embed", p.embed);
                conv("detail_dw", p.detail_dw);
                conv("detail_pw", p.detail_pw);
                conv("fuse", p.fuse);
            } else if constexpr (std::is_same_v<T, DaBlockLayer>) {
                for (std::size_t i = 0; i < p.params.align.size(); ++i)
                    conv("align" + std::to_string(i), p.params.align[i].proj);
                conv("refine0", p.params.refine[0]);
                conv("refine1", p.params.refine[1]);
            } else if constexpr (std::is_same_v<T, BrmParams>) {
                conv("proj1", p.proj1);
                conv("proj2", p.proj2);
                conv("interact", p.interact);
                f(id + ".lambda1", p.lambda1);
                f(id + ".lambda2", p.lambda2);
                conv("out", p.out);
            } else if constexpr (std::is_same_v<T, HeadLayer>) {
                auto& h = p.params;
                for (int i = 0; i < kNumScales; ++i) conv("proj." + std::string(kScaleNames[i]), h.shared_proj[i]);
                if (h.detail.merged) {
                    conv("detail.merged", *h.detail.merged);
                } else {
                    for (std::size_t i = 0; i < h.detail.branches.size(); ++i)
                        conv("detail.branch" + std::to_string(i), h.detail.branches[i].conv);
                }
                for (std::size_t i = 0; i < h.box_head.size(); ++i) conv("box" + std::to_string(i), h.box_head[i]);
                for (std::size_t i = 0; i < h.cls_head.size(); ++i) conv("cls" + std::to_string(i), h.cls_head[i]);
                f(id + ".box_scales", h.box_scales);
            }
        },
        layer.params);
}

template <class Seq>
Tensor as_tensor(const Seq& v) {
    return Tensor(Shape{1, static_cast<int>(v.size()), 1, 1}, std::vector<float>(v.begin(), v.end()));
}

}  // namespace

Model Model::build(const ModelConfig& cfg) {
    require(cfg.input.valid(), "model input shape must be positive, got " + cfg.input.str());
    require(cfg.num_classes >= 1, "model needs at least one class");
    require(cfg.bins >= 2, "model needs at least two DFL bins");
    require(cfg.hidden >= 1, "model hidden width must be positive");
    require(!cfg.layers.empty(), "model has no layers");

    Model m;
    m.config_ = cfg;
    Rng rng(cfg.seed);
    BuildContext ctx{cfg, rng, {}, {}};
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
        const LayerSpec& spec = cfg.layers[i];
        try {
            require(spec.id != kInputId, "'input' is reserved");
            require(!ctx.index.contains(spec.id), "duplicate layer id");
            if (spec.kind == LayerKind::uda_head)
                require(i + 1 == cfg.layers.size(), "uda_head must be the last layer");
            Layer layer = build_layer(spec, ctx);
            ctx.index.emplace(spec.id, static_cast<int>(i));
            ctx.shapes.push_back(layer.output);
            m.layers_.push_back(std::move(layer));
        } catch (const Error& e) {
            throw Error("layer '" + spec.id + "' (line " + std::to_string(spec.line) + "): " + e.what());
        }
    }
    return m;
}

bool Model::has_head() const { return layers_.back().spec.kind == LayerKind::uda_head; }

const UdaHeadParams& Model::head() const {
    require(has_head(), "model '" + config_.name + "' has no detection head");
    return std::get<HeadLayer>(layers_.back().params).params;
}

const AnchorGrid& Model::anchors() const {
    require(has_head(), "model '" + config_.name + "' has no detection head");
    return std::get<HeadLayer>(layers_.back().params).anchors;
}

int Model::layer_index(std::string_view id) const {
    if (id == kInputId) return -1;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i].spec.id == id) return static_cast<int>(i);
    throw Error("unknown layer id '" + std::string(id) + "'");
}

std::size_t Model::param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_)
        visit_params(l, [&](const std::string&, const auto& v) {
            if constexpr (std::is_same_v<std::decay_t<decltype(v)>, Tensor>)
                n += v.numel();
            else
                n += v.size();
        });
    return n;
}

Model::Trace Model::trace(GradTape& tape, Var image, std::optional<int> last_layer) const {
    require(tape.shape(image) == config_.input,
            "model input shape " + tape.shape(image).str() + " != configured " + config_.input.str());
    Trace t;
    t.image = image;
    auto var_of = [&](int idx) { return idx < 0 ? image : t.outputs[idx]; };
    const int stop = last_layer.value_or(static_cast<int>(layers_.size()) - 1);
    for (int i = 0; i <= stop; ++i) {
        const Layer& layer = layers_[i];
        try {
            std::visit(
                [&](const auto& p) {
                    using T = std::decay_t<decltype(p)>;
                    if constexpr (std::is_same_v<T, ConvLayer>) {
                        t.outputs.push_back(tape.conv2d(var_of(layer.inputs[0]), p.conv));
                    } else if constexpr (std::is_same_v<T, PoolLayer>) {
                        t.outputs.push_back(tape.max_pool2d(var_of(layer.inputs[0]), p.window));
                    } else if constexpr (std::is_same_v<T, UpsampleLayer>) {
                        t.outputs.push_back(tape.upsample_nearest(var_of(layer.inputs[0]), p.factor));
                    } else if constexpr (std::is_same_v<T, DpfStemParams>) {
                        t.outputs.push_back(dpf_stem_forward(tape, var_of(layer.inputs[0]), p));
                    } else if constexpr (std::is_same_v<T, DaBlockLayer>) {
                        std::vector<Var> sources;
                        for (int k = 0; k < p.residual_input; ++k) sources.push_back(var_of(layer.inputs[k]));
                        t.outputs.push_back(dablock_forward(tape, sources,
                                                            var_of(layer.inputs[p.residual_input]), p.params));
                    } else if constexpr (std::is_same_v<T, BrmParams>) {
                        t.outputs.push_back(brm_forward(tape, var_of(layer.inputs[0]), var_of(layer.inputs[1]), p));
                    } else if constexpr (std::is_same_v<T, HeadLayer>) {
                        std::array<Var, kNumScales> feats;
                        for (int k = 0; k < kNumScales; ++k) feats[k] = var_of(layer.inputs[k]);
                        t.head = uda_forward(tape, feats, p.params, p.anchors);
                        t.outputs.push_back(t.head->scores);
                    }
                },
                layer.params);
        } catch (const Error& e) {
            throw Error("layer '" + layer.spec.id + "': " + e.what());
        }
    }
    return t;
}

HeadOutput Model::forward(const Tensor& image) const {
    require(has_head(), "model '" + config_.name + "' has no detection head; forward needs a uda_head layer");
    GradTape tape;
    const Trace t = trace(tape, tape.constant(image));
    const HeadVars& h = *t.head;
    return {tape.value(h.boxes), tape.value(h.scores), tape.value(h.distances), tape.value(h.merged)};
}

Model Model::reparameterized() const {
    Model m = *this;
    if (!has_head()) return m;
    auto& head = std::get<HeadLayer>(m.layers_.back().params).params;
    head.detail = reparameterize(head.detail);
    return m;
}

std::vector<NamedTensor> Model::parameters() const {
    std::vector<NamedTensor> out;
    for (const auto& l : layers_)
        visit_params(l, [&](const std::string& name, const auto& v) {
            if constexpr (std::is_same_v<std::decay_t<decltype(v)>, Tensor>)
                out.push_back({name, v});
            else
                out.push_back({name, as_tensor(v)});
        });
    return out;
}

void Model::set_parameters(const std::vector<NamedTensor>& params) {
    std::size_t k = 0;
    for (auto& l : layers_) {
        visit_params(l, [&](const std::string& name, auto& v) {
            if (k >= params.size())
                throw Error("load_params: layer '" + l.spec.id + "' parameter " + name + " missing from stream");
            const NamedTensor& src = params[k++];
            if (src.name != name)
                throw Error("load_params: layer '" + l.spec.id + "' expected parameter " + name + ", found " + src.name);
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, Tensor>) {
                if (src.value.shape() != v.shape())
                    throw Error("load_params: layer '" + l.spec.id + "' parameter " + name + " has shape " +
                                src.value.shape().str() + ", model expects " + v.shape().str());
                v = src.value;
            } else {
                if (src.value.shape() != Shape{1, static_cast<int>(v.size()), 1, 1})
                    throw Error("load_params: layer '" + l.spec.id + "' parameter " + name + " has shape " +
                                src.value.shape().str() + ", model expects " + std::to_string(v.size()) + " values");
                std::copy(src.value.data().begin(), src.value.data().end(), v.begin());
            }
        });
    }
    if (k != params.size())
        throw Error("load_params: stream has " + std::to_string(params.size()) + " entries, model has " +
                    std::to_string(k));
}

// --------------------------------------------------------- parameter files

std::vector<std::uint8_t> save_params(const Model& model) {
    const auto params = model.parameters();
    std::ostringstream out(std::ios::binary);
    out.write("CPAR", 4);
    out.put(1);
    auto put_u32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    put_u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        put_u32(static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        cten::write(out, p.value);
    }
    const std::string s = out.str();
    return {s.begin(), s.end()};
}

void load_params(Model& model, const std::vector<std::uint8_t>& bytes) {
    std::istringstream in(std::string(bytes.begin(), bytes.end()), std::ios::binary);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "CPAR", 4) != 0) throw Error("load_params: bad magic");
    char version = 0;
    if (!in.get(version) || version != 1) throw Error("load_params: unsupported version");
    auto get_u32 = [&]() {
        unsigned char b[4];
        if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error("load_params: truncated stream");
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    };
    const std::uint32_t count = get_u32();
    require(count <= bytes.size(), "load_params: implausible entry count");
    std::vector<NamedTensor> params;
    params.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t len = get_u32();
        require(len <= bytes.size(), "load_params: implausible name length");
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw Error("load_params: truncated stream");
        params.push_back({std::move(name), cten::read(in)});
    }
    if (in.peek() != std::char_traits<char>::eof()) throw Error("load_params: trailing bytes");
    model.set_parameters(params);
}

void save_params_file(const Model& model, const std::filesystem::path& path) {
    const auto bytes = save_params(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void load_params_file(Model& model, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    load_params(model, bytes);
}

// ------------------------------------------------------------- complexity

FlopsReport count_complexity(const Model& model) {
    FlopsReport r;
    const auto& layers = model.layers();
    auto shape_of = [&](int idx) { return idx < 0 ? model.config().input : layers[idx].output; };
    for (const auto& layer : layers) {
        LayerCost cost;
        cost.id = layer.spec.id;
        cost.kind = std::string(to_string(layer.spec.kind));
        std::visit(
            [&](const auto& p) {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, ConvLayer>) {
                    cost.params = p.conv.param_count();
                    cost.macs = conv_macs(p.conv, layer.output);
                } else if constexpr (std::is_same_v<T, DpfStemParams>) {
                    const Shape in = shape_of(layer.inputs[0]);
                    const Shape emb = conv_output(in, p.embed);
                    const Shape det_in{in.n(), p.detail_channels, emb.h(), emb.w()};
                    const Shape dw = conv_output(det_in, p.detail_dw);
                    const Shape pw = conv_output(dw, p.detail_pw);
                    cost.params = p.param_count();
                    cost.macs = conv_macs(p.embed, emb) + conv_macs(p.detail_dw, dw) +
                                conv_macs(p.detail_pw, pw) + conv_macs(p.fuse, layer.output);
                } else if constexpr (std::is_same_v<T, DaBlockLayer>) {
                    const Shape xs = shape_of(layer.inputs[p.residual_input]);
                    std::size_t macs = 0;
                    for (int k = 0; k < p.residual_input; ++k) {
                        const auto& proj = p.params.align[k].proj;
                        macs += conv_macs(proj, conv_output(shape_of(layer.inputs[k]), proj));
                    }
                    const Shape agg{xs.n(), p.params.refine[0].in_channels(), xs.h(), xs.w()};
                    const Shape r0 = conv_output(agg, p.params.refine[0]);
                    const Shape r1 = conv_output(r0, p.params.refine[1]);
                    cost.params = p.params.param_count();
                    cost.macs = macs + conv_macs(p.params.refine[0], r0) + conv_macs(p.params.refine[1], r1);
                } else if constexpr (std::is_same_v<T, BrmParams>) {
                    const Shape in = shape_of(layer.inputs[0]);
                    const Shape e = conv_output(in, p.proj1);
                    const Shape joint{e.n(), 2 * e.c(), e.h(), e.w()};
                    cost.params = p.param_count();
                    cost.macs = 2 * conv_macs(p.proj1, e) + conv_macs(p.interact, conv_output(joint, p.interact)) +
                                conv_macs(p.out, layer.output);
                } else if constexpr (std::is_same_v<T, HeadLayer>) {
                    const HeadComplexity hc = head_complexity(p.params, p.anchors.extents, model.config().input.n());
                    cost.params = p.params.param_count();
                    cost.macs = hc.total_macs();
                    r.head = hc;
                }
            },
            layer.params);
        r.total_params += cost.params;
        r.total_macs += cost.macs;
        r.layers.push_back(std::move(cost));
    }
    const auto it = std::max_element(r.layers.begin(), r.layers.end(),
                                     [](const LayerCost& a, const LayerCost& b) { return a.macs < b.macs; });
    if (it != r.layers.end()) r.dominant_layer = it->id;
    return r;
}

}  // namespace collabod
