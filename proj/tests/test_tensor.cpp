#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "upr/gradcheck.hpp"
#include "upr/nn_ops.hpp"
#include "upr/tensor.hpp"
#include "upr/threading.hpp"

using namespace upr;

namespace {

ConvSpec spec(std::int64_t ic, std::int64_t oc, std::int64_t k, std::int64_t s, std::int64_t p,
              bool transposed = false) {
    return ConvSpec{ic, oc, k, k, s, s, p, p, transposed};
}

} // namespace

TEST_CASE("conv2d: all-ones 3x3 kernel sums a 3x3 patch") {
    auto in = TensorF::full({1, 1, 3, 3}, 1.0f);
    auto w = TensorF::full({1, 1, 3, 3}, 1.0f);
    auto b = TensorF::zeros({1, 1, 1, 1});
    auto out = conv2d(in, w, b, spec(1, 1, 3, 1, 0));
    CHECK(out.shape() == Shape4{1, 1, 1, 1});
    CHECK(out.at(0, 0, 0, 0) == doctest::Approx(9.0f));
}

TEST_CASE("conv2d: identity kernel preserves the input") {
    std::mt19937 rng(1);
    auto in = uniform_tensor_f({2, 1, 6, 7}, -1.0f, 1.0f, rng);
    auto w = TensorF::zeros({1, 1, 3, 3});
    w.at(0, 0, 1, 1) = 1.0f;
    auto b = TensorF::zeros({1, 1, 1, 1});
    auto out = conv2d(in, w, b, spec(1, 1, 3, 1, 1));
    CHECK(oracle::rel_err(out, in) == 0.0);
}

TEST_CASE("conv2d: matches direct-loop oracle on strided padded case") {
    std::mt19937 rng(7);
    auto in = uniform_tensor_f({2, 4, 9, 9}, -1.0f, 1.0f, rng);
    auto w = uniform_tensor_f({3, 4, 3, 3}, -1.0f, 1.0f, rng);
    auto b = uniform_tensor_f({1, 3, 1, 1}, -0.5f, 0.5f, rng);
    auto out = conv2d(in, w, b, spec(4, 3, 3, 2, 1));
    auto ref = oracle::conv2d(in, w, b, 2, 2, 1, 1);
    CHECK(out.shape() == ref.shape());
    CHECK(oracle::rel_err(out, ref) < 1e-5);
}

TEST_CASE("conv2d: shape errors name the offending dimension") {
    auto in = TensorF::zeros({1, 2, 5, 5});
    auto w = TensorF::zeros({1, 3, 3, 3});
    auto b = TensorF::zeros({1, 1, 1, 1});
    CHECK_THROWS_WITH_AS(conv2d(in, w, b, spec(3, 1, 3, 1, 1)),
                         doctest::Contains("channels"), ShapeError);
    CHECK_THROWS_AS(conv2d(in, w, b, spec(2, 1, 3, 1, 1)), ShapeError);
}

TEST_CASE("transpose_conv2d: zero kernel gives zero 4x4 output from 2x2") {
    auto in = TensorF::full({1, 1, 2, 2}, 3.0f);
    auto w = TensorF::zeros({1, 1, 4, 4});
    auto b = TensorF::zeros({1, 1, 1, 1});
    auto out = transpose_conv2d(in, w, b, spec(1, 1, 4, 2, 1, true));
    CHECK(out.shape() == Shape4{1, 1, 4, 4});
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == 0.0f);
}

TEST_CASE("transpose_conv2d: forward equals conv2d input-gradient (adjoint identity)") {
    std::mt19937 rng(3);
    auto x = uniform_tensor({1, 2, 6, 6}, -1.0, 1.0, rng);
    auto w_conv = uniform_tensor({3, 2, 4, 4}, -1.0, 1.0, rng); // (oc=3, ic=2)
    auto b0 = TensorD::zeros({1, 2, 1, 1});
    auto bc = TensorD::zeros({1, 3, 1, 1});

    // y = conv(x0; w) with x0 zero and requires_grad; seed grad with g:
    // input-gradient is conv^T(g). Compare with transpose_conv2d(g).
    auto x0 = TensorD::zeros({1, 2, 12, 12}).set_requires_grad(true);
    auto y = conv2d(x0, w_conv, bc, spec(2, 3, 4, 2, 1));
    REQUIRE(y.shape() == Shape4{1, 3, 6, 6});
    std::mt19937 rng2(5);
    auto g = uniform_tensor({1, 3, 6, 6}, -1.0, 1.0, rng2);
    y.backward(g);
    auto gx = TensorD::from_vector({1, 2, 12, 12},
                                   std::vector<double>(x0.grad().begin(), x0.grad().end()));

    // transpose conv with weights reinterpreted (ic=3 -> oc=2 swaps roles).
    auto tout = transpose_conv2d(g, w_conv, b0, spec(3, 2, 4, 2, 1, true));
    CHECK(oracle::rel_err(tout, gx) < 1e-12);
}

TEST_CASE("transpose_conv2d: matches scatter oracle, doubles spatial size") {
    std::mt19937 rng(11);
    auto in = uniform_tensor_f({2, 3, 5, 6}, -1.0f, 1.0f, rng);
    auto w = uniform_tensor_f({3, 2, 4, 4}, -1.0f, 1.0f, rng);
    auto b = uniform_tensor_f({1, 2, 1, 1}, -0.2f, 0.2f, rng);
    auto out = transpose_conv2d(in, w, b, spec(3, 2, 4, 2, 1, true));
    CHECK(out.shape() == Shape4{2, 2, 10, 12});
    auto ref = oracle::tconv2d(in, w, b, 2, 2, 1, 1);
    CHECK(oracle::rel_err(out, ref) < 1e-5);
}

TEST_CASE("activations: leaky_relu and sigmoid basics") {
    auto x = TensorF::from_vector({1, 1, 1, 3}, {-1.0f, 0.0f, 2.0f});
    auto y = leaky_relu(x, 0.1f);
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(-0.1f));
    CHECK(y.at(0, 0, 0, 1) == 0.0f);
    CHECK(y.at(0, 0, 0, 2) == 2.0f);

    auto z = sigmoid(TensorF::zeros({1, 1, 1, 1}));
    CHECK(z.at(0, 0, 0, 0) == doctest::Approx(0.5f));

    // strict (0,1) even at saturation
    auto sat = sigmoid(TensorF::from_vector({1, 1, 1, 2}, {-100.0f, 100.0f}));
    CHECK(sat.at(0, 0, 0, 0) > 0.0f);
    CHECK(sat.at(0, 0, 0, 1) < 1.0f);
}

TEST_CASE("sigmoid gradient at 0 is 0.25") {
    auto x = TensorD::zeros({1, 1, 1, 1}).set_requires_grad(true);
    auto y = sigmoid(x);
    y.backward();
    CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("bilinear_resize: constants map to the same constant") {
    auto in = TensorF::full({1, 2, 5, 7}, 0.7f);
    auto up = bilinear_resize(in, 13, 11);
    for (std::int64_t i = 0; i < up.numel(); ++i) CHECK(up.data()[i] == 0.7f);
    auto down = bilinear_resize(up, 5, 7);
    for (std::int64_t i = 0; i < down.numel(); ++i) CHECK(down.data()[i] == 0.7f);
}

TEST_CASE("bilinear_resize: 2x2 to 4x4 matches closed-form oracle") {
    auto in = TensorF::from_vector({1, 1, 2, 2}, {0.0f, 1.0f, 2.0f, 3.0f});
    auto out = bilinear_resize(in, 4, 4);
    for (std::int64_t y = 0; y < 4; ++y)
        for (std::int64_t x = 0; x < 4; ++x) {
            const float expect = oracle::bilinear_at(in, 0, 0, static_cast<double>(y),
                                                     static_cast<double>(x), 4, 4);
            CHECK(out.at(0, 0, y, x) == doctest::Approx(expect).epsilon(1e-6));
        }
}

TEST_CASE("gradcheck: conv2d against finite differences") {
    std::mt19937 rng(21);
    auto in = uniform_tensor({1, 2, 5, 5}, -1.0, 1.0, rng);
    auto w = uniform_tensor({2, 2, 3, 3}, -1.0, 1.0, rng);
    auto b = uniform_tensor({1, 2, 1, 1}, -0.5, 0.5, rng);
    auto report = gradcheck(
        "conv2d",
        [](const std::vector<TensorD>& args) {
            return conv2d(args[0], args[1], args[2], spec(2, 2, 3, 2, 1));
        },
        {in, w, b});
    CHECK(report.worst() < 1e-4);
}

TEST_CASE("gradcheck: transpose_conv2d") {
    std::mt19937 rng(22);
    auto in = uniform_tensor({1, 2, 4, 4}, -1.0, 1.0, rng);
    auto w = uniform_tensor({2, 3, 4, 4}, -1.0, 1.0, rng);
    auto b = uniform_tensor({1, 3, 1, 1}, -0.5, 0.5, rng);
    auto report = gradcheck(
        "transpose_conv2d",
        [](const std::vector<TensorD>& args) {
            return transpose_conv2d(args[0], args[1], args[2], spec(2, 3, 4, 2, 1, true));
        },
        {in, w, b});
    CHECK(report.worst() < 1e-4);
}

TEST_CASE("gradcheck: sigmoid tight tolerance") {
    std::mt19937 rng(23);
    auto in = uniform_tensor({1, 1, 4, 4}, -2.0, 2.0, rng);
    auto report = gradcheck(
        "sigmoid", [](const std::vector<TensorD>& args) { return sigmoid(args[0]); }, {in});
    CHECK(report.worst() < 1e-6);
}

TEST_CASE("gradcheck: bilinear_resize, elementwise and reductions") {
    std::mt19937 rng(24);
    auto in = uniform_tensor({1, 2, 5, 4}, -1.0, 1.0, rng);
    CHECK(gradcheck("bilinear_resize_up",
                    [](const std::vector<TensorD>& a) { return bilinear_resize(a[0], 9, 11); }, {in})
              .worst() < 1e-4);
    CHECK(gradcheck("bilinear_resize_down",
                    [](const std::vector<TensorD>& a) { return bilinear_resize(a[0], 3, 2); }, {in})
              .worst() < 1e-4);

    auto a = uniform_tensor({1, 2, 3, 3}, 0.5, 1.5, rng);
    auto b = uniform_tensor({1, 2, 3, 3}, 0.5, 1.5, rng);
    CHECK(gradcheck("div", [](const std::vector<TensorD>& v) { return div(v[0], v[1]); }, {a, b})
              .worst() < 1e-4);
    CHECK(gradcheck("sqrt", [](const std::vector<TensorD>& v) { return sqrt_elem(v[0]); }, {a})
              .worst() < 1e-4);
    CHECK(gradcheck("mean", [](const std::vector<TensorD>& v) { return mean(v[0]); }, {a}).worst() <
          1e-4);
    CHECK(gradcheck("concat+narrow",
                    [](const std::vector<TensorD>& v) {
                        auto cat = concat_channels<double>({v[0], v[1]});
                        return narrow_channels(cat, 1, 2);
                    },
                    {a, b})
              .worst() < 1e-4);
    CHECK(gradcheck("reflect_pad",
                    [](const std::vector<TensorD>& v) { return reflect_pad(v[0], 2, 1, 1, 2); }, {a})
              .worst() < 1e-4);
    CHECK(gradcheck("avg_pool2", [](const std::vector<TensorD>& v) { return avg_pool2(v[0]); }, {a})
              .worst() < 1e-4);
}

TEST_CASE("adjoint identity: <L(x), y> == <x, L^T(y)> for linear ops") {
    std::mt19937 rng(31);
    auto w = uniform_tensor({3, 2, 3, 3}, -1.0, 1.0, rng);
    auto b = TensorD::zeros({1, 3, 1, 1});
    auto x = uniform_tensor({1, 2, 6, 6}, -1.0, 1.0, rng).set_requires_grad(true);
    auto y = uniform_tensor({1, 3, 3, 3}, -1.0, 1.0, rng);

    auto lx = conv2d(x, w, b, spec(2, 3, 3, 2, 1));
    REQUIRE(lx.shape() == y.shape());
    double lhs = 0.0;
    for (std::int64_t i = 0; i < lx.numel(); ++i) lhs += lx.data()[i] * y.data()[i];
    lx.backward(y);
    double rhs = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) rhs += x.data()[i] * x.grad()[i];
    CHECK(std::abs(lhs - rhs) / std::max({1.0, std::abs(lhs), std::abs(rhs)}) < 1e-6);

    // bilinear resize is linear too
    auto x2 = uniform_tensor({1, 1, 4, 4}, -1.0, 1.0, rng).set_requires_grad(true);
    auto y2 = uniform_tensor({1, 1, 7, 9}, -1.0, 1.0, rng);
    auto rx = bilinear_resize(x2, 7, 9);
    double lhs2 = 0.0;
    for (std::int64_t i = 0; i < rx.numel(); ++i) lhs2 += rx.data()[i] * y2.data()[i];
    rx.backward(y2);
    double rhs2 = 0.0;
    for (std::int64_t i = 0; i < x2.numel(); ++i) rhs2 += x2.data()[i] * x2.grad()[i];
    CHECK(std::abs(lhs2 - rhs2) / std::max({1.0, std::abs(lhs2), std::abs(rhs2)}) < 1e-6);
}

TEST_CASE("determinism: identical inputs give bit-identical conv outputs") {
    std::mt19937 rng(41);
    auto in = uniform_tensor_f({2, 3, 16, 16}, -1.0f, 1.0f, rng);
    auto w = uniform_tensor_f({4, 3, 3, 3}, -1.0f, 1.0f, rng);
    auto b = uniform_tensor_f({1, 4, 1, 1}, -0.1f, 0.1f, rng);

    set_num_threads(1);
    auto a = conv2d(in, w, b, spec(3, 4, 3, 1, 1));
    auto c = conv2d(in, w, b, spec(3, 4, 3, 1, 1));
    for (std::int64_t i = 0; i < a.numel(); ++i) REQUIRE(a.data()[i] == c.data()[i]);

    // Disjoint output partitioning makes conv thread-count invariant.
    set_num_threads(4);
    auto d = conv2d(in, w, b, spec(3, 4, 3, 1, 1));
    for (std::int64_t i = 0; i < a.numel(); ++i) REQUIRE(a.data()[i] == d.data()[i]);
    set_num_threads(1);
}

TEST_CASE("autograd: chained elementwise graph accumulates into shared leaf") {
    auto x = TensorD::full({1, 1, 1, 2}, 3.0).set_requires_grad(true);
    auto y = mul(x, x);            // x^2
    auto z = add(y, mul_scalar(x, 2.0)); // x^2 + 2x
    auto loss = sum(z);
    loss.backward();
    // d/dx = 2x + 2 = 8 at x=3
    CHECK(x.grad()[0] == doctest::Approx(8.0));
    CHECK(x.grad()[1] == doctest::Approx(8.0));
}
