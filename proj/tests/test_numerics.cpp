#include "doctest.h"

#include "msmbd/autodiff.hpp"
#include "msmbd/error.hpp"
#include "msmbd/gradcheck.hpp"
#include "msmbd/params.hpp"
#include "test_util.hpp"

#include <cmath>
#include <numbers>

using namespace msmbd;
using msmbd::testing::max_abs_diff;
using msmbd::testing::random_tensor;

TEST_CASE("matmul: identity, hand case, triple-loop oracle")
{
    const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
    const Tensor b = Tensor::matrix({{1.5, -2}, {3, 4.25}});
    CHECK(matmul(eye, b) == b);

    const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
    const Tensor ones = Tensor::matrix({{1}, {1}});
    CHECK(matmul(a, ones) == Tensor::matrix({{3}, {7}}));

    Pcg32 rng(7);
    const Tensor x = random_tensor({3, 4}, rng);
    const Tensor y = random_tensor({4, 2}, rng);
    CHECK(max_abs_diff(matmul(x, y), msmbd::testing::naive_matmul(x, y)) < 1e-12);

    CHECK_THROWS_AS(matmul(x, x), DimensionError);
}

TEST_CASE("matmul is associative on random conformable triples")
{
    Pcg32 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t m = 1 + rng.below(5), k = 1 + rng.below(5), n = 1 + rng.below(5), p = 1 + rng.below(5);
        const Tensor a = random_tensor({m, k}, rng);
        const Tensor b = random_tensor({k, n}, rng);
        const Tensor c = random_tensor({n, p}, rng);
        const Tensor left = matmul(matmul(a, b), c);
        const Tensor right = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < left.size(); ++i) {
            CHECK(std::abs(left[i] - right[i]) <= 1e-9 * std::max(1.0, std::abs(right[i])));
        }
    }
}

TEST_CASE("non-finite results raise NumericError")
{
    const Tensor big = Tensor::matrix({{1e200, 1e200}});
    const Tensor col = Tensor::matrix({{1e200}, {1e200}});
    CHECK_THROWS_AS(matmul(big, col), NumericError);
    CHECK_THROWS_AS(Tensor({0, 2}), DimensionError);
}

TEST_CASE("softmax_rows: analytic rows")
{
    const Tensor s = softmax_rows(Tensor::matrix({{0, 0}, {std::numbers::ln2, 0}, {1000, 1000}}));
    CHECK(s.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.at(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(std::abs(s.at(1, 0) - 2.0 / 3.0) < 1e-15);
    CHECK(std::abs(s.at(1, 1) - 1.0 / 3.0) < 1e-15);
    CHECK(s.at(2, 0) == 0.5);
    CHECK(s.at(2, 1) == 0.5);
}

TEST_CASE("softmax_rows: masking")
{
    Mask mask(2, 3);
    mask.set(0, 1, false);
    const Tensor s = softmax_rows(Tensor::matrix({{1, 50, 2}, {0, 0, 0}}), &mask);
    CHECK(s.at(0, 1) == 0.0);
    CHECK(std::abs(s.at(0, 0) + s.at(0, 2) - 1.0) < 1e-12);

    Mask dead(1, 2, false);
    CHECK_THROWS_AS(softmax_rows(Tensor::matrix({{1, 2}}), &dead), DegenerateMaskError);
    CHECK_THROWS_AS(softmax_rows(Tensor::matrix({{1, 2}}), &mask), DimensionError);
}

TEST_CASE("softmax_rows: simplex and shift invariance under fuzzing")
{
    Pcg32 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t r = 1 + rng.below(6), c = 1 + rng.below(9);
        const Tensor m = random_tensor({r, c}, rng, -30.0, 30.0);
        const Tensor s = softmax_rows(m);
        Tensor shifted = m;
        for (std::size_t i = 0; i < r; ++i) {
            const double k = rng.uniform(-100.0, 100.0);
            for (std::size_t j = 0; j < c; ++j) {
                shifted.at(i, j) += k;
            }
        }
        const Tensor s2 = softmax_rows(shifted);
        for (std::size_t i = 0; i < r; ++i) {
            double total = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                CHECK(s.at(i, j) >= 0.0);
                total += s.at(i, j);
            }
            CHECK(std::abs(total - 1.0) <= 1e-12);
        }
        CHECK(max_abs_diff(s, s2) <= 1e-12);
    }
}

TEST_CASE("gelu: exact erf form")
{
    CHECK(gelu(0.0) == 0.0);
    const double phi1 = msmbd::testing::phi_by_quadrature(1.0);
    CHECK(std::abs(phi1 - 0.8413447460685429) < 1e-12);
    CHECK(std::abs(gelu(1.0) - phi1) < 1e-12);

    Pcg32 rng(5);
    for (int i = 0; i < 500; ++i) {
        const double x = rng.uniform(-12.0, 12.0);
        // x*Phi(x) - (-x)*Phi(-x) = x(Phi(x) + Phi(-x)) = x
        CHECK(std::abs(gelu(x) - gelu(-x) - x) < 1e-12 * std::max(1.0, std::abs(x)));
        CHECK(gelu(x) >= -0.17);
        CHECK(gelu(x) <= std::max(0.0, x) + 1e-12);
    }
}

TEST_CASE("linear_forward: identity, constant, matmul oracle")
{
    ParamRegistry params;
    LinearLayer layer = LinearLayer::create(params, "lin", 3, 3, 1);
    layer.weight.mutable_value() = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    const Tensor x = Tensor::vector({0.25, -1.5, 2.0});
    CHECK(linear_forward(layer, x) == x);

    layer.weight.mutable_value() = Tensor({3, 3});
    layer.bias.mutable_value() = Tensor::vector({4, 4, 4});
    CHECK(linear_forward(layer, x) == Tensor::vector({4, 4, 4}));

    Pcg32 rng(9);
    ParamRegistry p2;
    LinearLayer l2 = LinearLayer::create(p2, "l2", 4, 2, 3);
    l2.bias.mutable_value() = random_tensor({2}, rng);
    const Tensor batch = random_tensor({5, 4}, rng);
    const Tensor oracle = add_row_bias(msmbd::testing::naive_matmul(batch, transpose(l2.weight.value())),
                                       l2.bias.value());
    CHECK(max_abs_diff(linear_forward(l2, batch), oracle) < 1e-12);

    CHECK_THROWS_AS(linear_forward(l2, random_tensor({5, 3}, rng)), DimensionError);
}

TEST_CASE("xavier init is bounded, seeded, and order independent")
{
    const Tensor a = xavier_uniform(8, 24, 42, "w");
    const Tensor b = xavier_uniform(8, 24, 42, "w");
    const Tensor c = xavier_uniform(8, 24, 42, "other");
    CHECK(a == b);
    CHECK_FALSE(a == c);
    const double bound = std::sqrt(6.0 / 32.0);
    for (double v : a.data()) {
        CHECK(std::abs(v) <= bound);
    }
    ParamRegistry params;
    params.add("x", Tensor({1}));
    CHECK_THROWS_AS(params.add("x", Tensor({1})), std::logic_error);
}

TEST_CASE("grad_check: quadratic loss")
{
    ParamRegistry params;
    Var theta = params.add("theta", Tensor::vector({1.0, 2.0}));
    auto loss = [&] { return scale(sum(hadamard(theta, theta)), 0.5); };
    const GradReport report = grad_check(loss, params, {.eps = 1e-5});
    REQUIRE(report.params.size() == 1);
    const auto& samples = report.params[0].samples;
    REQUIRE(samples.size() == 2);
    CHECK(std::abs(samples[0].numeric - 1.0) < 1e-9);
    CHECK(std::abs(samples[1].numeric - 2.0) < 1e-9);
    CHECK(report.max_rel_error < 1e-9);

    CHECK_THROWS_AS(grad_check(loss, params, {.eps = 0.0}), ValidationError);
    CHECK_THROWS_AS(grad_check(loss, params, {.eps = 1e-2}), ValidationError);
}

TEST_CASE("grad_check: fourth-order stencil is exact on quartics")
{
    // sum x^4 / 4 has gradient x^3; the 5-point stencil has no truncation
    // error up to degree 4, the 3-point one is off by h^2 x.
    ParamRegistry params;
    Var theta = params.add("theta", Tensor::vector({0.5, -1.5}));
    auto loss = [&] {
        const Var sq = hadamard(theta, theta);
        return scale(sum(hadamard(sq, sq)), 0.25);
    };
    const double h = 1e-3;
    const GradReport four = grad_check(loss, params, {.eps = h, .stencil = 4});
    const GradReport two = grad_check(loss, params, {.eps = h, .stencil = 2});
    const auto& s4 = four.params[0].samples;
    const auto& s2 = two.params[0].samples;
    CHECK(std::abs(s4[0].numeric - 0.125) < 1e-11);
    CHECK(std::abs(s4[1].numeric + 3.375) < 1e-11);
    CHECK(std::abs(s2[0].numeric - (0.125 + h * h * 0.5)) < 1e-11);
    CHECK(std::abs(s2[1].numeric - (-3.375 - h * h * 1.5)) < 1e-11);
    CHECK_THROWS_AS(grad_check(loss, params, {.eps = h, .stencil = 3}), ValidationError);
}

TEST_CASE("grad_check: single linear layer with BCE")
{
    ParamRegistry params;
    LinearLayer layer = LinearLayer::create(params, "clf", 6, 1, 17);
    Pcg32 rng(2);
    layer.bias.mutable_value()[0] = 0.3;
    const Var x(random_tensor({6}, rng));
    auto loss = [&] { return bce_with_logits(layer(x), 1.0); };
    const GradReport report = grad_check(loss, params, {.eps = 1e-6});
    CHECK(report.checked == 7);
    CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("grad_check: non-finite loss is reported")
{
    ParamRegistry params;
    Var theta = params.add("theta", Tensor::vector({1.0}));
    auto loss = [&] { return Var(Tensor({1}, std::numeric_limits<double>::quiet_NaN())); };
    CHECK_THROWS_AS(grad_check(loss, params), NumericError);
}

TEST_CASE("grad_check: every differentiable op matches central differences")
{
    Pcg32 rng(21);
    ParamRegistry params;
    Var a = params.add("a", random_tensor({3, 4}, rng));
    Var b = params.add("b", random_tensor({4, 5}, rng));
    Var gamma = params.add("gamma", random_tensor({5}, rng, 0.5, 1.5));
    Var beta = params.add("beta", random_tensor({5}, rng));
    Var w = params.add("w", random_tensor({2, 5}, rng));
    Var bias = params.add("bias", random_tensor({2}, rng));
    Var row = params.add("row", random_tensor({3}, rng));
    Mask mask(3, 5);
    mask.set(0, 4, false);
    mask.set(2, 0, false);

    auto loss = [&] {
        Var m = matmul(a, b);                                   // 3x5
        Var s = softmax_rows(scale(m, 0.7), &mask);             // 3x5
        Var n = layer_norm_rows(add(s, m), gamma, beta);        // 3x5
        Var g = gelu(n);
        Var l = linear(g, w, &bias);                            // 3x2
        Var cat = concat_cols({l, slice_cols(g, 1, 3)});        // 3x5
        Var t = transpose(cat);                                 // 5x3
        Var v = matmul(row, transpose(t));                      // [5]
        Var pooled = mean_rows(stack_rows({v, reshape(mean_cols(t), {5})}));
        Var flat = concat({pooled, sigmoid(row)});
        Var h = hadamard(flat, flat);
        return bce_with_logits(reshape(mean_cols(reshape(add_row_bias(reshape(h, {1, 8}), h), {1, 8})), {1}), 1.0);
    };
    const GradReport report = grad_check(loss, params, {.eps = 1e-6});
    for (const auto& p : report.params) {
        INFO(p.name);
        CHECK(p.max_rel_error < 1e-4);
    }
}

TEST_CASE("NoGradGuard suppresses graph recording")
{
    Var leaf = Var::leaf(Tensor::vector({1.0}));
    {
        NoGradGuard guard;
        CHECK_FALSE(scale(leaf, 2.0).requires_grad());
    }
    CHECK(scale(leaf, 2.0).requires_grad());
}
