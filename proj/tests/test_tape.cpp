#include <doctest.h>

#include "collabod/gradcheck.hpp"
#include "collabod/gradcheck_suite.hpp"
#include "collabod/tape.hpp"

using namespace collabod;

TEST_CASE("gradients of a reused value accumulate by summation") {
    GradTape t;
    const Var x = t.input(Tensor(Shape{1, 1, 1, 3}, std::vector<float>{1, 2, 3}));
    const Var y = t.add(t.mul(x, x), x);  // x^2 + x
    const Gradients g = t.backward(y, Tensor(Shape{1, 1, 1, 3}, 1.0f));
    CHECK(g[x].vec() == std::vector<float>{3, 5, 7});
}

TEST_CASE("constants receive no gradient and unreachable inputs read as zero") {
    GradTape t;
    const Var x = t.input(Tensor(Shape{1, 1, 2, 2}, 1.0f));
    const Var unused = t.input(Tensor(Shape{1, 2, 1, 1}, 1.0f));
    const Var c = t.constant(Tensor(Shape{1, 1, 2, 2}, 2.0f));
    const Var y = t.mul(x, c);
    CHECK_FALSE(t.requires_grad(c));
    CHECK(t.requires_grad(y));
    const Gradients g = t.backward(y, Tensor(Shape{1, 1, 2, 2}, 1.0f));
    CHECK(g.reached(x));
    CHECK_FALSE(g.reached(unused));
    CHECK(g[unused].shape() == Shape{1, 2, 1, 1});
    CHECK(g[x].vec() == std::vector<float>(4, 2.0f));
}

TEST_CASE("backward rejects a seed of the wrong shape") {
    GradTape t;
    const Var x = t.input(Tensor(Shape{1, 1, 2, 2}));
    const Var y = t.sigmoid(x);
    CHECK_THROWS_AS(t.backward(y, Tensor(Shape{1, 1, 1, 4})), Error);
}

TEST_CASE("recorded nodes keep names, inputs and values") {
    GradTape t;
    const Var x = t.input(Tensor(Shape{1, 2, 4, 4}, 1.0f));
    const Var y = t.max_pool2d(x, {2, 2, 2, 0});
    CHECK(t.op_name(y) == "max_pool2d");
    REQUIRE(t.inputs(y).size() == 1);
    CHECK(t.inputs(y)[0].id == x.id);
    CHECK(t.shape(y) == Shape{1, 2, 2, 2});
    CHECK(t.recorded_ops() == 1);
    CHECK(t.routes().size() == 1);
}

TEST_CASE("replayed routing evaluates the recorded linear piece") {
    const Tensor base(Shape{1, 1, 1, 2}, std::vector<float>{1.0f, 0.0f});
    GradTape first;
    first.max_pool2d(first.constant(base), {1, 2, 1, 0});
    const auto routes = first.routes();

    GradTape replay;
    replay.replay_routes(routes);
    // The second element now wins the window, but the replay keeps reading the first.
    const Var y = replay.max_pool2d(replay.constant(Tensor(Shape{1, 1, 1, 2}, std::vector<float>{1.0f, 3.0f})),
                                    {1, 2, 1, 0});
    CHECK(replay.value(y).at(0, 0, 0, 0) == 1.0f);
    CHECK(replay.routing_signature() == first.routing_signature());
}

TEST_CASE("check_gradients detects a wrong backward") {
    GradTape probe;
    const GraphBuilder broken = [](GradTape& t, std::span<const Var> v) {
        return t.record("double", ops::scale(t.value(v[0]), 2.0f), {v[0]},
                        [](const Tensor& g, const std::vector<bool>&) {
                            return std::vector<Tensor>{ops::scale(g, 3.0f)};
                        });
    };
    Rng rng(1);
    const GradCheckReport r = check_gradients(broken, {rng.uniform_tensor({1, 1, 3, 3}, -1, 1)});
    CHECK(r.max_rel_error() > 0.1);
    CHECK_FALSE(r.passed(1e-3));
}

TEST_CASE("every operator and block passes the finite-difference check") {
    for (const auto& name : gradcheck_targets()) {
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            CAPTURE(name);
            CAPTURE(seed);
            const GradCheckReport r = run_gradcheck(name, seed);
            std::size_t checked = 0;
            for (const auto& in : r.inputs) checked += in.checked;
            CHECK(checked > 0);
            CHECK(r.max_rel_error() <= 1e-3);
        }
    }
    CHECK_THROWS_AS(run_gradcheck("no_such_op", 0), Error);
}
