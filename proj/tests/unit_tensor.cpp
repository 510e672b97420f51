#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/checks.hpp"
#include "vssmseg/ops.hpp"

using namespace vssmseg;
using testsupport::check_gradients;
using testsupport::rand_tensor;

namespace {
Tensor<double> t1(std::vector<double> v) {
    Shape s{static_cast<int64_t>(v.size())};
    return Tensor<double>(std::move(s), std::move(v));
}
}  // namespace

TEST_CASE("linear: identity and hand arithmetic") {
    Tensor<double> x = t1({1, 2});
    Tensor<double> eye(Shape{2, 2}, {1, 0, 0, 1});
    Tensor<double> b0 = t1({0, 0});
    auto y = ops::linear(x, eye, std::optional<Tensor<double>>(b0));
    CHECK(y.vec() == std::vector<double>{1, 2});

    Tensor<double> x2 = t1({1, 1});
    Tensor<double> w(Shape{2, 1}, {2, 3});
    Tensor<double> b = t1({1});
    auto y2 = ops::linear(x2, w, std::optional<Tensor<double>>(b));
    CHECK(y2.vec() == std::vector<double>{6});
}

TEST_CASE("linear: gradient of sum(linear(x,w)) w.r.t. w equals column sums of x") {
    Rng rng(7);
    Tensor<double> x = rand_tensor(rng, {3, 4});
    Tensor<double> w = rand_tensor(rng, {4, 2});
    Tape<double> tape;
    tape.watch(w);
    auto loss = ops::sum(ops::linear(x, w));
    tape.backward(loss);
    auto gw = tape.grad_vec(w);
    for (int64_t i = 0; i < 4; ++i) {
        double colsum = x.vec()[0 * 4 + i] + x.vec()[1 * 4 + i] + x.vec()[2 * 4 + i];
        for (int64_t j = 0; j < 2; ++j) CHECK(gw[static_cast<size_t>(i * 2 + j)] == doctest::Approx(colsum).epsilon(1e-12));
    }
    w.detach();
    // and against the finite-difference oracle
    auto res = check_gradients({&w}, [&] { return ops::sum(ops::linear(x, w)); });
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("linear: shape mismatch names both shapes") {
    Tensor<double> x = t1({1, 2, 3});
    Tensor<double> w(Shape{2, 2}, {1, 0, 0, 1});
    try {
        ops::linear(x, w);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[3]") != std::string::npos);
        CHECK(msg.find("[2,2]") != std::string::npos);
    }
}

TEST_CASE("conv2d: identity 1x1 kernel is exact") {
    Rng rng(3);
    Tensor<double> x = rand_tensor(rng, {1, 1, 5, 7});
    Tensor<double> k(Shape{1, 1, 1, 1}, {1.0});
    auto y = ops::conv2d(x, k);
    CHECK(y.shape() == x.shape());
    CHECK(y.vec() == x.vec());  // bitwise
}

TEST_CASE("conv2d: averaging kernel on constant input, interior pixels") {
    Tensor<double> x = Tensor<double>::full(Shape{1, 1, 6, 6}, 1.0);
    Tensor<double> k = Tensor<double>::full(Shape{1, 1, 3, 3}, 1.0 / 9.0);
    auto y = ops::conv2d(x, k, 1, 1, 1);
    CHECK(y.shape() == Shape{1, 1, 6, 6});
    for (int64_t i = 1; i < 5; ++i)
        for (int64_t j = 1; j < 5; ++j)
            CHECK(y.vec()[static_cast<size_t>(i * 6 + j)] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("conv2d: depthwise 1x1 per-channel scaling") {
    Tensor<double> x = Tensor<double>::full(Shape{1, 2, 3, 3}, 1.0);
    Tensor<double> k(Shape{2, 1, 1, 1}, {2.0, 3.0});
    auto y = ops::conv2d(x, k, 1, 0, 2);
    for (int64_t i = 0; i < 9; ++i) {
        CHECK(y.vec()[static_cast<size_t>(i)] == 2.0);
        CHECK(y.vec()[static_cast<size_t>(9 + i)] == 3.0);
    }
}

TEST_CASE("conv2d: group mismatch raises") {
    Tensor<double> x = Tensor<double>::zeros(Shape{1, 3, 4, 4});
    Tensor<double> k = Tensor<double>::zeros(Shape{2, 1, 1, 1});
    CHECK_THROWS_AS(ops::conv2d(x, k, 1, 0, 2), ShapeError);
}

TEST_CASE("conv2d: output extent formula") {
    Tensor<double> x = Tensor<double>::zeros(Shape{1, 1, 11, 9});
    Tensor<double> k = Tensor<double>::zeros(Shape{1, 1, 3, 3});
    auto y = ops::conv2d(x, k, 2, 1, 1);
    CHECK(y.shape() == Shape{1, 1, (11 + 2 - 3) / 2 + 1, (9 + 2 - 3) / 2 + 1});
}

TEST_CASE("silu: fixed points and derivative at zero") {
    Tensor<double> x = t1({0.0, 1.0});
    auto y = ops::silu(x);
    CHECK(y.vec()[0] == 0.0);
    CHECK(y.vec()[1] == doctest::Approx(0.731059).epsilon(1e-6));

    Tensor<double> z = t1({0.0});
    Tape<double> tape;
    tape.watch(z);
    tape.backward(ops::sum(ops::silu(z)));
    CHECK(tape.grad_vec(z)[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("layer_norm: constant row, exact affine, tiny eps") {
    Tensor<double> g1 = t1({1, 1, 1});
    Tensor<double> b0 = t1({0, 0, 0});
    auto y = ops::layer_norm(Tensor<double>(Shape{1, 3}, {4, 4, 4}), g1, b0);
    for (double v : y.vec()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

    Tensor<double> g2 = t1({1, 1});
    Tensor<double> z2 = t1({0, 0});
    auto y2 = ops::layer_norm(Tensor<double>(Shape{1, 2}, {1, 3}), g2, z2, 1e-14);
    CHECK(y2.vec()[0] == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(y2.vec()[1] == doctest::Approx(1.0).epsilon(1e-6));

    Tensor<double> g0 = t1({0, 0});
    Tensor<double> b5 = t1({5, 5});
    auto y3 = ops::layer_norm(Tensor<double>(Shape{1, 2}, {1, 3}), g0, b5);
    CHECK(y3.vec() == std::vector<double>{5, 5});
}

TEST_CASE("bilinear_resize: identity, constant extension, half-pixel centers") {
    Rng rng(11);
    Tensor<double> x = rand_tensor(rng, {1, 2, 4, 5});
    auto same = ops::bilinear_resize(x, 4, 5);
    CHECK(same.vec() == x.vec());  // bitwise identity

    Tensor<double> one(Shape{1, 1, 1, 1}, {7.0});
    auto up = ops::bilinear_resize(one, 3, 5);
    for (double v : up.vec()) CHECK(v == 7.0);

    Tensor<double> q(Shape{1, 1, 2, 2}, {0, 1, 2, 3});
    auto big = ops::bilinear_resize(q, 4, 4);
    CHECK(big.vec()[static_cast<size_t>(1 * 4 + 1)] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(big.vec()[static_cast<size_t>(1 * 4 + 2)] == doctest::Approx(1.25).epsilon(1e-12));
    CHECK(big.vec()[static_cast<size_t>(2 * 4 + 1)] == doctest::Approx(1.75).epsilon(1e-12));
    CHECK(big.vec()[static_cast<size_t>(2 * 4 + 2)] == doctest::Approx(2.25).epsilon(1e-12));

    CHECK_THROWS_AS(ops::bilinear_resize(q, 0, 4), ShapeError);
}

TEST_CASE("adaptive_avg_pool2d: identity, quadrant means, global mean") {
    Rng rng(13);
    Tensor<double> x = rand_tensor(rng, {1, 1, 3, 4});
    auto same = ops::adaptive_avg_pool2d(x, 3, 4);
    CHECK(same.vec() == x.vec());

    std::vector<double> v(16);
    for (int i = 0; i < 16; ++i) v[static_cast<size_t>(i)] = i + 1;
    Tensor<double> grid(Shape{1, 1, 4, 4}, std::move(v));
    auto q = ops::adaptive_avg_pool2d(grid, 2, 2);
    CHECK(q.vec() == std::vector<double>{3.5, 5.5, 11.5, 13.5});

    auto g = ops::adaptive_avg_pool2d(grid, 1, 1);
    CHECK(g.vec()[0] == doctest::Approx(8.5).epsilon(1e-12));

    CHECK_THROWS_AS(ops::adaptive_avg_pool2d(grid, 5, 5), ShapeError);
}

TEST_CASE("backward: d(sum x^2)/dx = 2x, fan-out accumulation, disconnected leaf") {
    Rng rng(17);
    Tensor<double> x = rand_tensor(rng, {5});
    Tape<double> tape;
    tape.watch(x);
    tape.backward(ops::sum(ops::mul(x, x)));
    auto gx = tape.grad_vec(x);
    for (int64_t i = 0; i < 5; ++i)
        CHECK(gx[static_cast<size_t>(i)] == doctest::Approx(2 * x.vec()[static_cast<size_t>(i)]).epsilon(1e-12));
    x.detach();

    Tensor<double> y = rand_tensor(rng, {3});
    Tape<double> tape2;
    tape2.watch(y);
    tape2.backward(ops::sum(ops::add(y, y)));
    for (double g : tape2.grad_vec(y)) CHECK(g == 2.0);
    y.detach();

    // disconnected leaf gets a zero gradient
    Tensor<double> a = rand_tensor(rng, {2});
    Tensor<double> unused = rand_tensor(rng, {4});
    Tape<double> tape3;
    tape3.watch(a);
    tape3.watch(unused);
    tape3.backward(ops::sum(a));
    for (double g : tape3.grad_vec(unused)) CHECK(g == 0.0);
    a.detach();
    unused.detach();
}

TEST_CASE("backward: non-scalar loss is a contract error") {
    Tensor<double> x = t1({1, 2});
    Tape<double> tape;
    tape.watch(x);
    auto y = ops::silu(x);
    CHECK_THROWS_AS(tape.backward(y), ContractError);
    x.detach();
}

TEST_CASE("forward ops are pure (bitwise repeatable)") {
    Rng rng(19);
    Tensor<double> x = rand_tensor(rng, {2, 3, 4, 4});
    auto a = ops::silu(x);
    auto b = ops::silu(x);
    CHECK(a.vec() == b.vec());
    auto p1 = ops::adaptive_avg_pool2d(x, 2, 2);
    auto p2 = ops::adaptive_avg_pool2d(x, 2, 2);
    CHECK(p1.vec() == p2.vec());
}

TEST_CASE("gradient suite: every elementwise / layout / reduction op") {
    Rng rng(23);
    SUBCASE("silu") {
        Tensor<double> x = rand_tensor(rng, {7});
        auto r = check_gradients({&x}, [&] { return ops::sum(ops::silu(x)); });
        CHECK(r.max_rel_err < 1e-5);
    }
    SUBCASE("relu") {
        Tensor<double> x = rand_tensor(rng, {9});
        auto r = check_gradients({&x}, [&] { return ops::sum(ops::relu(x)); });
        CHECK(r.max_rel_err < 1e-5);
    }
    SUBCASE("sigmoid") {
        Tensor<double> x = rand_tensor(rng, {7});
        auto r = check_gradients({&x}, [&] { return ops::sum(ops::mul(ops::sigmoid(x), ops::sigmoid(x))); });
        CHECK(r.max_rel_err < 1e-5);
    }
    SUBCASE("add broadcast") {
        Tensor<double> a = rand_tensor(rng, {2, 3, 4});
        Tensor<double> b = rand_tensor(rng, {3, 1});
        auto r = check_gradients({&a, &b}, [&] { return ops::sum(ops::mul(ops::add(a, b), ops::add(a, b))); });
        CHECK(r.max_rel_err < 1e-5);
    }
    SUBCASE("mul broadcast") {
        Tensor<double> a = rand_tensor(rng, {2, 3, 4});
        Tensor<double> b = rand_tensor(rng, {2, 1, 4});
        auto r = check_gradients({&a, &b}, [&] { return ops::sum(ops::mul(a, b)); });
        CHECK(r.max_rel_err < 1e-5);
    }
    SUBCASE("scale") {
        Tensor<double> x = rand_tensor(rng, {6});
        auto r = check_gradients({&x}, [&] { return ops::scale(ops::sum(ops::mul(x, x)), 0.37); });
        CHECK(r.max_rel_err < 1e-5);
    }
    SUBCASE("reshape + permute") {
        Tensor<double> x = rand_tensor(rng, {2, 3, 4});
        auto r = check_gradients({&x}, [&] {
            auto p = ops::permute(x, {2, 0, 1});
            auto q = ops::reshape(p, Shape{4, 6});
            return ops::sum(ops::mul(q, q));
        });
        CHECK(r.max_rel_err < 1e-5);
    }
    SUBCASE("concat") {
        Tensor<double> a = rand_tensor(rng, {2, 2, 3});
        Tensor<double> b = rand_tensor(rng, {2, 1, 3});
        auto r = check_gradients({&a, &b}, [&] {
            auto c = ops::concat(a, b, 1);
            return ops::sum(ops::mul(c, c));
        });
        CHECK(r.max_rel_err < 1e-5);
    }
}

TEST_CASE("gradient suite: linear / conv / norm / resample ops") {
    Rng rng(29);
    SUBCASE("linear with bias") {
        Tensor<double> x = rand_tensor(rng, {2, 3, 4});
        Tensor<double> w = rand_tensor(rng, {4, 5});
        Tensor<double> b = rand_tensor(rng, {5});
        auto r = check_gradients({&x, &w, &b}, [&] {
            auto y = ops::linear(x, w, std::optional<Tensor<double>>(b));
            return ops::sum(ops::mul(y, y));
        });
        CHECK(r.max_rel_err < 1e-5);
    }
    SUBCASE("conv2d stride 2 pad 1 groups 2 with bias") {
        Tensor<double> x = rand_tensor(rng, {2, 4, 5, 6});
        Tensor<double> k = rand_tensor(rng, {6, 2, 3, 3});
        Tensor<double> b = rand_tensor(rng, {6});
        auto r = check_gradients({&x, &k, &b}, [&] {
            auto y = ops::conv2d(x, k, std::optional<Tensor<double>>(b), 2, 1, 2);
            return ops::sum(ops::mul(y, y));
        });
        CHECK(r.max_rel_err < 1e-5);
    }
    SUBCASE("layer_norm") {
        Tensor<double> x = rand_tensor(rng, {3, 5});
        Tensor<double> g = rand_tensor(rng, {5}, 0.5, 1.5);
        Tensor<double> b = rand_tensor(rng, {5});
        auto r = check_gradients({&x, &g, &b}, [&] {
            auto y = ops::layer_norm(x, g, b);
            return ops::sum(ops::mul(y, y));
        });
        CHECK(r.max_rel_err < 1e-5);
    }
    SUBCASE("bilinear up and down") {
        Tensor<double> x = rand_tensor(rng, {1, 2, 3, 4});
        auto r = check_gradients({&x}, [&] {
            auto y = ops::bilinear_resize(x, 5, 7);
            return ops::sum(ops::mul(y, y));
        });
        CHECK(r.max_rel_err < 1e-5);
        auto r2 = check_gradients({&x}, [&] {
            auto y = ops::bilinear_resize(x, 2, 2);
            return ops::sum(ops::mul(y, y));
        });
        CHECK(r2.max_rel_err < 1e-5);
    }
    SUBCASE("adaptive_avg_pool2d") {
        Tensor<double> x = rand_tensor(rng, {1, 2, 5, 6});
        auto r = check_gradients({&x}, [&] {
            auto y = ops::adaptive_avg_pool2d(x, 2, 3);
            return ops::sum(ops::mul(y, y));
        });
        CHECK(r.max_rel_err < 1e-5);
    }
    SUBCASE("global_max_pool2d / channel_mean / channel_max") {
        Tensor<double> x = rand_tensor(rng, {2, 3, 3, 3});
        auto r1 = check_gradients({&x}, [&] { return ops::sum(ops::mul(ops::global_max_pool2d(x), ops::global_max_pool2d(x))); });
        CHECK(r1.max_rel_err < 1e-5);
        auto r2 = check_gradients({&x}, [&] { return ops::sum(ops::mul(ops::channel_mean(x), ops::channel_mean(x))); });
        CHECK(r2.max_rel_err < 1e-5);
        auto r3 = check_gradients({&x}, [&] { return ops::sum(ops::mul(ops::channel_max(x), ops::channel_max(x))); });
        CHECK(r3.max_rel_err < 1e-5);
    }
}
