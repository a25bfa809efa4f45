#include <doctest.h>

#include <cstring>
#include <sstream>

#include "collabod/cten.hpp"
#include "collabod/tensor.hpp"

using namespace collabod;

TEST_CASE("shape and tensor construction") {
    const Tensor t(Shape{2, 3, 4, 5}, 1.5f);
    CHECK(t.numel() == 120);
    CHECK(t.shape().str() == "(2,3,4,5)");
    CHECK(t.at(1, 2, 3, 4) == 1.5f);
    CHECK(t.index(1, 0, 0, 0) == 60);
    CHECK_THROWS_AS(Tensor(Shape{1, 0, 2, 2}), Error);
    CHECK_THROWS_AS(Tensor(Shape{1, 1, 2, 2}, std::vector<float>(3)), Error);
}

TEST_CASE("identical compares bits") {
    Tensor a(Shape{1, 1, 1, 2}, std::vector<float>{0.0f, 1.0f});
    Tensor b(Shape{1, 1, 1, 2}, std::vector<float>{-0.0f, 1.0f});
    CHECK(max_abs_diff(a, b) == 0.0);
    CHECK_FALSE(a.identical(b));
    b[0] = 0.0f;
    CHECK(a.identical(b));
}

TEST_CASE("rng is reproducible and bounded") {
    Rng a(7), b(7), c(8);
    const Tensor ta = a.uniform_tensor({1, 2, 8, 8}, -1.0f, 1.0f);
    CHECK(ta.identical(b.uniform_tensor({1, 2, 8, 8}, -1.0f, 1.0f)));
    CHECK_FALSE(ta.identical(c.uniform_tensor({1, 2, 8, 8}, -1.0f, 1.0f)));
    for (float v : ta.data()) {
        CHECK(v >= -1.0f);
        CHECK(v < 1.0f);
    }
}

TEST_CASE("conv params factories") {
    Rng rng(1);
    const ConvParams p = ConvParams::random(rng, 4, 6, 3, 2, -1, 2);
    CHECK(p.kernel.shape() == Shape{6, 2, 3, 3});
    CHECK(p.padding == 1);
    CHECK(p.param_count() == 6 * 2 * 9 + 6);
    const float k = 1.0f / std::sqrt(2.0f * 9.0f);
    for (float v : p.kernel.data()) CHECK(std::abs(v) <= k);
    CHECK_NOTHROW(p.validate());

    const ConvParams id = ConvParams::identity(3);
    CHECK(id.kernel.at(1, 1, 0, 0) == 1.0f);
    CHECK(id.kernel.at(1, 2, 0, 0) == 0.0f);

    ConvParams bad = p;
    bad.bias.pop_back();
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("cten round trip is bit exact") {
    Rng rng(3);
    const Tensor t = rng.uniform_tensor({2, 3, 4, 5}, -10.0f, 10.0f);
    const auto bytes = cten::encode(t);
    REQUIRE(bytes.size() == 4 + 3 + 4 * 4 + 120 * 4);
    CHECK(std::memcmp(bytes.data(), "CTEN", 4) == 0);
    CHECK(bytes[4] == cten::kVersion);
    CHECK(bytes[5] == cten::kDtypeF32);
    CHECK(bytes[6] == 4);
    CHECK(bytes[7] == 2);  // little-endian extent
    CHECK(cten::decode(bytes).identical(t));
    CHECK(cten::encode(cten::decode(bytes)) == bytes);
}

TEST_CASE("cten accepts lower ranks and rejects malformed input") {
    std::vector<std::uint8_t> b = {'C', 'T', 'E', 'N', 1, 0, 2, 2, 0, 0, 0, 3, 0, 0, 0};
    for (int i = 0; i < 6; ++i) {
        const float v = static_cast<float>(i);
        std::uint8_t raw[4];
        std::memcpy(raw, &v, 4);
        b.insert(b.end(), raw, raw + 4);
    }
    const Tensor t = cten::decode(b);
    CHECK(t.shape() == Shape{1, 1, 2, 3});
    CHECK(t.at(0, 0, 1, 2) == 5.0f);

    auto corrupt = b;
    corrupt[0] = 'X';
    CHECK_THROWS_AS(cten::decode(corrupt), Error);
    corrupt = b;
    corrupt[5] = 1;  // dtype
    CHECK_THROWS_AS(cten::decode(corrupt), Error);
    corrupt = b;
    corrupt.pop_back();
    CHECK_THROWS_AS(cten::decode(corrupt), Error);
    corrupt = b;
    corrupt.push_back(0);
    CHECK_THROWS_AS(cten::decode(corrupt), Error);
    CHECK_THROWS_AS(cten::load("/nonexistent/x.cten"), Error);
}
