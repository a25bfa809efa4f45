#include <doctest.h>

#include <algorithm>
#include <variant>

#include "collabod/model.hpp"
#include "oracles.hpp"

using namespace collabod;

namespace {

const std::string kConfigDir = COLLABOD_CONFIG_DIR;

Model load(const std::string& name) { return Model::build(load_config(kConfigDir + "/" + name)); }

std::string error_of(const std::string& text) {
    try {
        Model::build(parse_config(text));
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

// Re-runs the graph one layer at a time through the standalone block
// entry points, independent of Model::trace.
HeadOutput layerwise(const Model& m, const Tensor& image) {
    std::vector<Tensor> out;
    auto src = [&](int i) -> const Tensor& { return i < 0 ? image : out[i]; };
    for (const Layer& l : m.layers()) {
        Tensor y;
        if (const auto* c = std::get_if<ConvLayer>(&l.params)) {
            y = ops::conv2d(src(l.inputs[0]), c->conv);
        } else if (const auto* p = std::get_if<PoolLayer>(&l.params)) {
            y = ops::max_pool2d(src(l.inputs[0]), p->window);
        } else if (const auto* u = std::get_if<UpsampleLayer>(&l.params)) {
            y = ops::upsample_nearest(src(l.inputs[0]), u->factor);
        } else if (const auto* s = std::get_if<DpfStemParams>(&l.params)) {
            y = dpf_stem_forward(src(l.inputs[0]), *s);
        } else if (const auto* d = std::get_if<DaBlockLayer>(&l.params)) {
            std::vector<Tensor> srcs;
            for (int i = 0; i < d->residual_input; ++i) srcs.push_back(src(l.inputs[i]));
            y = dablock_forward(srcs, src(l.inputs[d->residual_input]), d->params);
        } else if (const auto* b = std::get_if<BrmParams>(&l.params)) {
            y = brm_forward(src(l.inputs[0]), src(l.inputs[1]), *b);
        } else {
            const auto& h = std::get<HeadLayer>(l.params);
            ScaleFeatures f;
            for (int s = 0; s < kNumScales; ++s) f[s] = src(l.inputs[s]);
            return uda_forward(f, h.params, h.anchors);
        }
        out.push_back(std::move(y));
    }
    throw Error("no head");
}

}  // namespace

TEST_CASE("config grammar") {
    const ModelConfig cfg = parse_config(
        "# comment\n"
        "name tiny   # trailing comment\n"
        "input 2 3 8 8\n"
        "classes 4\nbins 8\nhidden 6\nseed 9\nbias 0\n"
        "layer a conv in=input out=5 k=3 s=2\n"
        "layer b maxpool in=a k=3 s=1\n");
    CHECK(cfg.name == "tiny");
    CHECK(cfg.input == Shape{2, 3, 8, 8});
    CHECK(cfg.num_classes == 4);
    CHECK(cfg.bins == 8);
    CHECK(cfg.seed == 9);
    CHECK_FALSE(cfg.bias);
    REQUIRE(cfg.layers.size() == 2);
    CHECK(cfg.layers[0].kind == LayerKind::conv);
    CHECK(cfg.layers[0].get_int("s", 1) == 2);
    CHECK(cfg.layers[1].inputs == std::vector<std::string>{"a"});
    CHECK(cfg.layers[1].line == 10);

    CHECK_THROWS_WITH_AS(parse_config("bogus 1\n"), doctest::Contains("line 1"), Error);
    CHECK_THROWS_WITH_AS(parse_config("layer a frob in=input\n"), doctest::Contains("unknown layer kind"), Error);
    CHECK_THROWS_WITH_AS(parse_config("layer a conv in=input out\n"), doctest::Contains("key=value"), Error);
    CHECK_THROWS_WITH_AS(parse_config("layer a conv in=input\nlayer a conv in=a\n"), doctest::Contains("duplicate"),
                         Error);
    CHECK_THROWS_WITH_AS(parse_config("input 1 3 x 8\n"), doctest::Contains("integer"), Error);
    CHECK_THROWS_AS(load_config(kConfigDir + "/missing.cfg"), Error);
}

TEST_CASE("graph construction errors name the layer") {
    CHECK(error_of("input 1 3 8 8\nlayer a conv in=nope out=4\n").find("layer 'a'") != std::string::npos);
    CHECK(error_of("input 1 3 8 8\nlayer a conv in=input out=4 k=9 p=0\n").find("empty") != std::string::npos);
    CHECK(error_of("input 1 3 7 8\nlayer a dpf_stem in=input embed=4 out=4\n").find("layer 'a'") !=
          std::string::npos);
    CHECK(error_of("input 1 3 8 8\nlayer a conv in=input out=4\nlayer b brm in=a,input\n").find("differ") !=
          std::string::npos);
    CHECK_FALSE(error_of("input 1 3 8 8\n").empty());
    CHECK(error_of("input 1 3 8 8\nlayer a conv in=input ou=4\n").find("no option 'ou'") != std::string::npos);
}

TEST_CASE("feature-only models report the missing head") {
    const Model m = load("single_conv.cfg");
    CHECK_FALSE(m.has_head());
    CHECK_THROWS_WITH_AS(m.forward(Tensor(Shape{1, 4, 2, 2})), doctest::Contains("no detection head"), Error);
    CHECK_THROWS_AS(m.head(), Error);
    CHECK(m.param_count() == 40);
    CHECK(m.reparameterized().param_count() == 40);
}

TEST_CASE("toy model forward") {
    const Model m = load("toy.cfg");
    REQUIRE(m.has_head());
    CHECK(m.anchors().total() == 340);
    CHECK(m.layer_index("input") == -1);
    CHECK_THROWS_AS(m.layer_index("nope"), Error);

    Rng rng(41);
    const Tensor image = rng.uniform_tensor(m.config().input, 0, 1);
    const HeadOutput a = m.forward(image);
    CHECK(a.boxes.shape() == Shape{1, 1, 340, 4});
    CHECK(a.scores.shape() == Shape{1, 1, 340, 10});
    CHECK(a.merged.shape() == Shape{1, 1, 340, 74});
    CHECK(a.merged.identical(m.forward(image).merged));
    CHECK(a.merged.identical(Model::build(load_config(kConfigDir + "/toy.cfg")).forward(image).merged));

    const HeadOutput ref = layerwise(m, image);
    CHECK(a.merged.identical(ref.merged));
    CHECK(a.boxes.identical(ref.boxes));

    CHECK_THROWS_WITH_AS(m.forward(Tensor(Shape{1, 3, 32, 32})), doctest::Contains("input"), Error);
}

TEST_CASE("bias-free toy model maps a zero image to neutral scores") {
    ModelConfig cfg = load_config(kConfigDir + "/toy.cfg");
    cfg.bias = false;
    const HeadOutput out = Model::build(cfg).forward(Tensor(cfg.input));
    for (float v : out.scores.data()) CHECK(v == 0.5f);
    for (float v : out.distances.data()) CHECK(v == doctest::Approx(7.5).epsilon(1e-6));
}

TEST_CASE("reparameterized model agrees with the multi-branch model") {
    const Model m = load("toy.cfg");
    const Model r = m.reparameterized();
    CHECK(r.head().detail.is_merged());
    CHECK_FALSE(m.head().detail.is_merged());
    Rng rng(42);
    const Tensor image = rng.uniform_tensor(m.config().input, 0, 1);
    CHECK(max_abs_diff(m.forward(image).merged, r.forward(image).merged) <= 1e-5);
    CHECK(count_complexity(r).total_macs < count_complexity(m).total_macs);
}

TEST_CASE("parameter files round-trip bit for bit") {
    const Model m = load("toy.cfg");
    const auto bytes = save_params(m);
    ModelConfig other = m.config();
    other.seed = 99;
    Model n = Model::build(other);
    Rng rng(43);
    const Tensor image = rng.uniform_tensor(m.config().input, 0, 1);
    CHECK_FALSE(n.forward(image).merged.identical(m.forward(image).merged));
    load_params(n, bytes);
    CHECK(n.forward(image).merged.identical(m.forward(image).merged));
    CHECK(save_params(n) == bytes);

    Model single = load("single_conv.cfg");
    CHECK_THROWS_WITH_AS(load_params(single, bytes), doctest::Contains("layer"), Error);

    auto truncated = bytes;
    truncated.resize(truncated.size() - 3);
    CHECK_THROWS_AS(load_params(n, truncated), Error);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(load_params(n, trailing), Error);
    auto magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_WITH_AS(load_params(n, magic), doctest::Contains("magic"), Error);
}

TEST_CASE("complexity counting") {
    CHECK(count_complexity(load("single_conv.cfg")).total_macs == 128);
    CHECK(count_complexity(load("single_conv.cfg")).total_flops() == 256);
    const FlopsReport pool = count_complexity(Model::build(parse_config("input 1 2 6 6\nlayer p maxpool in=input k=3\n")));
    CHECK(pool.total_macs == 0);

    for (const char* name : {"toy.cfg", "erf_depth3.cfg"}) {
        const Model m = load(name);
        GradTape tape;
        m.trace(tape, tape.constant(Tensor(m.config().input)));
        const FlopsReport r = count_complexity(m);
        CHECK(r.total_macs == oracle::loop_count_macs(tape));
        std::size_t sum = 0, params = 0;
        for (const auto& l : r.layers) {
            sum += l.macs;
            params += l.params;
        }
        CHECK(sum == r.total_macs);
        CHECK(params == m.param_count());
    }

    const FlopsReport toy = count_complexity(load("toy.cfg"));
    REQUIRE(toy.head.has_value());
    CHECK(toy.dominant_layer == "head");
    ModelConfig big = load_config(kConfigDir + "/toy.cfg");
    big.input = Shape{1, 3, 128, 128};
    CHECK(count_complexity(Model::build(big)).total_macs == 4 * toy.total_macs);
}

TEST_CASE("effective receptive field") {
    const Model m = load("erf_depth1.cfg");
    const ErfMap probe = estimate_erf(m, "input");
    std::size_t nonzero = 0;
    for (float v : probe.magnitude.data()) nonzero += v != 0.0f;
    CHECK(nonzero == 1);
    CHECK(probe.magnitude.at(0, 0, 16, 16) == 1.0f);

    const ErfMap stem = estimate_erf(m, "stem");
    nonzero = 0;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const bool inside = std::abs(y - 16) <= 1 && std::abs(x - 16) <= 1;
            if (!inside) CHECK(stem.magnitude.at(0, 0, y, x) == 0.0f);
            nonzero += stem.magnitude.at(0, 0, y, x) != 0.0f;
        }
    CHECK(nonzero == 9);
    CHECK(estimate_erf(m, "stem", 8, 0).magnitude.identical(stem.magnitude));

    double prev = 0.0;
    for (const char* name : {"erf_depth1.cfg", "erf_depth2.cfg", "erf_depth3.cfg"}) {
        const Model d = load(name);
        const double a = estimate_erf(d, d.layers().back().spec.id).area_fraction;
        CHECK(a >= prev);
        prev = a;
    }

    const Model toy = load("toy.cfg");
    CHECK_THROWS_WITH_AS(estimate_erf(toy, "head"), doctest::Contains("detection head"), Error);
    CHECK_THROWS_AS(estimate_erf(toy, "nope"), Error);
    CHECK_THROWS_AS(estimate_erf(m, "stem", 0), Error);
    CHECK_THROWS_AS(estimate_erf(m, "stem", 8, 0, 1.5), Error);
}
