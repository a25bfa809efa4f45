#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "collabod/cten.hpp"
#include "collabod/eval.hpp"
#include "collabod/model.hpp"

using namespace collabod;
using nlohmann::json;

namespace {

const std::string kCli = COLLABOD_CLI;
const std::string kConfigs = COLLABOD_CONFIG_DIR;
const std::string kData = COLLABOD_DATA_DIR;

std::filesystem::path scratch() {
    const auto dir = std::filesystem::path(COLLABOD_SCRATCH_DIR) / "cli";
    std::filesystem::create_directories(dir);
    return dir;
}

struct Run {
    int code = -1;
    std::string out;
};

// Runs the CLI; stderr is merged into the output only when asked.
Run run(const std::string& args, bool merge_stderr = false) {
    const std::string cmd = kCli + " " + args + (merge_stderr ? " 2>&1" : " 2>/dev/null");
    Run r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string make_image(const std::string& name, const std::string& shape, int seed) {
    const auto path = (scratch() / name).string();
    REQUIRE(run("random-tensor --shape " + shape + " --seed " + std::to_string(seed) + " --output " + path).code == 0);
    return path;
}

}  // namespace

TEST_CASE("usage errors exit with status 2 and a diagnostic") {
    CHECK(run("").code == 2);
    CHECK(run("frobnicate").code == 2);
    const Run missing = run("flops --config " + kConfigs + "/missing.cfg", true);
    CHECK(missing.code == 2);
    CHECK(missing.out.find("collabod: error:") != std::string::npos);
    const Run headless = run("forward --config " + kConfigs + "/single_conv.cfg --input " +
                                 make_image("four.cten", "1,4,2,2", 0),
                             true);
    CHECK(headless.code == 2);
    CHECK(headless.out.find("no detection head") != std::string::npos);
    CHECK(run("erf --config " + kConfigs + "/toy.cfg --probe head").code == 2);
}

TEST_CASE("flops on the single convolution reports 128 MACs") {
    const Run text = run("flops --config " + kConfigs + "/single_conv.cfg");
    CHECK(text.code == 0);
    CHECK(text.out.find("total MACs 128") != std::string::npos);
    CHECK(text.out.find("seed=0") != std::string::npos);

    const Run j = run("flops --config " + kConfigs + "/toy.cfg --json");
    REQUIRE(j.code == 0);
    const json r = json::parse(j.out);
    const FlopsReport ref = count_complexity(Model::build(load_config(kConfigs + "/toy.cfg")));
    CHECK(r.at("total_macs").get<std::size_t>() == ref.total_macs);
    CHECK(r.at("total_flops").get<std::size_t>() == 2 * ref.total_macs);
    CHECK(r.at("head").at("shared_block_macs").get<std::size_t>() == ref.head->shared_block_macs);
    CHECK(r.at("layers").size() == ref.layers.size());
}

TEST_CASE("forward is deterministic and survives a parameter round trip") {
    const std::string image = make_image("img.cten", "1,3,64,64", 7);
    const auto dir = scratch();
    const std::string cfg = kConfigs + "/toy.cfg";
    REQUIRE(run("forward --config " + cfg + " --input " + image + " --output " + (dir / "a.jsonl").string() +
                " --save-params " + (dir / "p.cpar").string())
                .code == 0);
    REQUIRE(run("forward --config " + cfg + " --input " + image + " --output " + (dir / "b.jsonl").string()).code == 0);
    REQUIRE(run("forward --config " + cfg + " --seed 5 --params " + (dir / "p.cpar").string() + " --input " + image +
                " --output " + (dir / "c.jsonl").string())
                .code == 0);
    const std::string a = slurp(dir / "a.jsonl");
    CHECK_FALSE(a.empty());
    CHECK(a == slurp(dir / "b.jsonl"));
    CHECK(a == slurp(dir / "c.jsonl"));

    // Emitted detections parse back and re-serialize to the same bytes.
    const auto dets = eval::read_detections((dir / "a.jsonl").string());
    std::string again;
    for (const auto& d : dets) {
        CHECK(d.image == "img");
        CHECK(d.score > 0.25);
        again += eval::format_detection(d) + "\n";
    }
    CHECK(again == a);

    // The parameter file loads into a freshly built model.
    Model m = Model::build(load_config(cfg));
    CHECK_NOTHROW(load_params_file(m, dir / "p.cpar"));
    CHECK(save_params(m).size() == std::filesystem::file_size(dir / "p.cpar"));

    const Run header = run("forward --config " + cfg + " --input " + image + " --output " +
                               (dir / "d.jsonl").string() + " --score-thresh 0.9",
                           true);
    CHECK(header.out.find("seed=0") != std::string::npos);
    CHECK(header.out.find("score_thresh=0.9") != std::string::npos);
    CHECK(slurp(dir / "d.jsonl").empty());
}

TEST_CASE("forward with the merged head matches within tolerance") {
    const std::string image = make_image("img2.cten", "1,3,64,64", 8);
    const Run plain = run("forward --config " + kConfigs + "/toy.cfg --input " + image + " --score-thresh 0");
    const Run merged = run("forward --config " + kConfigs + "/toy.cfg --input " + image + " --score-thresh 0 --reparam");
    REQUIRE(plain.code == 0);
    REQUIRE(merged.code == 0);
    const auto a = eval::parse_detections(plain.out), b = eval::parse_detections(merged.out);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i].score - b[i].score) <= 1e-5);
}

TEST_CASE("reparam-check passes on a fresh head") {
    const Run r = run("reparam-check");
    CHECK(r.code == 0);
    CHECK(r.out.find("PASS") != std::string::npos);
    const Run j = run("reparam-check --config " + kConfigs + "/toy.cfg --samples 3 --json");
    REQUIRE(j.code == 0);
    const json v = json::parse(j.out);
    CHECK(v.at("passed").get<bool>());
    CHECK(v.at("max_abs_diff").get<double>() <= 1e-5);
    CHECK(v.at("merged_macs").get<std::size_t>() < v.at("branch_macs").get<std::size_t>());
}

TEST_CASE("eval on the perfect fixture gives AP50:95 of one") {
    const std::string args = "eval --input " + kData + "/dets_perfect.jsonl --gt " + kData + "/gt.jsonl";
    const Run text = run(args);
    CHECK(text.code == 0);
    CHECK(text.out.find("AP50:95  1.000000") != std::string::npos);
    const auto out = scratch() / "summary.json";
    REQUIRE(run(args + " --json --output " + out.string()).code == 0);
    const json s = json::parse(slurp(out));
    CHECK(s.at("AP50_95").get<double>() == 1.0);
    CHECK(s.at("images").get<int>() == 3);

    const auto empty = scratch() / "empty.jsonl";
    std::ofstream(empty).close();
    const json e = json::parse(run("eval --json --input " + empty.string() + " --gt " + kData + "/gt.jsonl").out);
    CHECK(e.at("AP50_95").get<double>() == 0.0);
    CHECK(run("eval --input " + kData + "/gt.jsonl --gt " + kData + "/gt.jsonl").code == 2);
}

TEST_CASE("erf writes a normalized map") {
    const auto out = scratch() / "erf.cten";
    const Run r = run("erf --config " + kConfigs + "/erf_depth1.cfg --probe stem --json --output " + out.string());
    REQUIRE(r.code == 0);
    const json j = json::parse(r.out);
    const Tensor map = cten::load(out);
    CHECK(map.shape() == Shape{1, 1, 32, 32});
    CHECK(*std::max_element(map.data().begin(), map.data().end()) == 1.0f);
    std::size_t above = 0;
    for (float v : map.data()) above += v > 0.2f;
    CHECK(j.at("area_fraction").get<double>() == doctest::Approx(above / 1024.0));
    CHECK(j.at("seed").get<int>() == 0);
}

TEST_CASE("gradcheck subcommand") {
    const Run list = run("gradcheck --list");
    CHECK(list.code == 0);
    CHECK(list.out.find("dablock") != std::string::npos);
    const Run one = run("gradcheck --op brm --trials 2 --json");
    REQUIRE(one.code == 0);
    const json j = json::parse(one.out);
    CHECK(j.at("passed").get<bool>());
    CHECK(j.at("targets").at(0).at("name") == "brm");
    CHECK(run("gradcheck --op brm --trials 1 --tol 1e-12").code == 1);
    CHECK(run("gradcheck --op nope").code == 2);
}

TEST_CASE("random-tensor honours shape, range and seed") {
    const std::string a = make_image("r1.cten", "2,3,4", 4);
    const std::string b = make_image("r2.cten", "2,3,4", 4);
    CHECK(slurp(a) == slurp(b));
    const Tensor t = cten::load(a);
    CHECK(t.shape() == Shape{1, 2, 3, 4});
    for (float v : t.data()) {
        CHECK(v >= 0.0f);
        CHECK(v < 1.0f);
    }
    CHECK(run("random-tensor --shape 1,0,2 --output " + (scratch() / "bad.cten").string()).code == 2);
}
