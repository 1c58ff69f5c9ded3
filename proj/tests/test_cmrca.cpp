#include "doctest.h"

#include "msmbd/cmrca.hpp"
#include "msmbd/error.hpp"
#include "msmbd/gradcheck.hpp"
#include "test_util.hpp"

#include <cmath>
#include <cstring>

using namespace msmbd;
using msmbd::testing::bitwise_equal;
using msmbd::testing::max_abs_diff;
using msmbd::testing::random_tensor;

namespace {

// Attention written out with explicit exponentials, no shared kernels.
Tensor brute_attention(const Tensor& q, const Tensor& k, const Tensor& v)
{
    const std::size_t t = q.rows(), h = q.cols();
    Tensor out({t, h});
    for (std::size_t i = 0; i < t; ++i) {
        std::vector<double> e(t);
        double z = 0.0;
        for (std::size_t j = 0; j < t; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < h; ++c) {
                s += q.at(i, c) * k.at(j, c);
            }
            e[j] = std::exp(s / std::sqrt(static_cast<double>(h)));
            z += e[j];
        }
        for (std::size_t j = 0; j < t; ++j) {
            for (std::size_t c = 0; c < h; ++c) {
                out.at(i, c) += e[j] / z * v.at(j, c);
            }
        }
    }
    return out;
}

Tensor columns(const Tensor& m, std::size_t start, std::size_t count)
{
    Tensor out({m.rows(), count});
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < count; ++j) {
            out.at(i, j) = m.at(i, start + j);
        }
    }
    return out;
}

Tensor identity(std::size_t n)
{
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        t.at(i, i) = 1.0;
    }
    return t;
}

struct CmrcaFixture {
    CmrcaConfig cfg;
    ParamRegistry params;
    CmrcaParams cmrca;
    Var visual, user, tweets;

    CmrcaFixture(CmrcaConfig c, std::uint64_t seed = 5) : cfg(c)
    {
        cmrca = CmrcaParams::create(params, cfg, 6, 5, 7, seed);
        Pcg32 rng(seed);
        visual = Var(random_tensor({5}, rng));
        user = Var(random_tensor({6}, rng));
        tweets = Var(random_tensor({7}, rng));
    }
};

} // namespace

TEST_CASE("align_and_tokenize: reshape definition")
{
    ParamRegistry params;
    LinearLayer layer = LinearLayer::create(params, "a", 4, 4, 1);
    layer.weight.mutable_value() = identity(4);
    const Var x(Tensor::vector({1, 2, 3, 4}));
    CHECK(align_and_tokenize(x, layer, 2).value() == Tensor::matrix({{1, 2}, {3, 4}}));
    CHECK(align_and_tokenize(x, layer, 1).value() == Tensor::matrix({{1, 2, 3, 4}}));
    CHECK_THROWS_AS(align_and_tokenize(x, layer, 3), DimensionError);

    Pcg32 rng(2);
    ParamRegistry p2;
    LinearLayer l2 = LinearLayer::create(p2, "a", 5, 8, 3);
    l2.bias.mutable_value() = random_tensor({8}, rng);
    const Var in(random_tensor({5}, rng));
    const Var weights(random_tensor({4, 2}, rng));
    auto loss = [&] { return sum(hadamard(align_and_tokenize(in, l2, 4), weights)); };
    CHECK(grad_check(loss, p2, {.eps = 1e-6}).max_rel_error < 1e-6);
}

TEST_CASE("cross_attention_single_head: degenerate and oracle cases")
{
    Pcg32 rng(3);
    const Tensor v1 = random_tensor({1, 3}, rng);
    CHECK(cross_attention_single_head(Var(random_tensor({1, 3}, rng)), Var(random_tensor({1, 3}, rng)), Var(v1))
              .value() == v1);

    const Tensor krow = random_tensor({3}, rng);
    Tensor k({4, 3});
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            k.at(i, c) = krow[c];
        }
    }
    const Tensor v = random_tensor({4, 3}, rng);
    const Tensor out = cross_attention_single_head(Var(random_tensor({4, 3}, rng)), Var(k), Var(v)).value();
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            const double mean = (v.at(0, c) + v.at(1, c) + v.at(2, c) + v.at(3, c)) / 4.0;
            CHECK(std::abs(out.at(i, c) - mean) < 1e-15);
        }
    }

    const Tensor q2 = Tensor::matrix({{0.3, -1.2}, {2.0, 0.5}});
    const Tensor k2 = Tensor::matrix({{1.0, 0.25}, {-0.7, 1.5}});
    const Tensor v2 = Tensor::matrix({{0.1, 0.2}, {-3.0, 4.0}});
    CHECK(max_abs_diff(cross_attention_single_head(Var(q2), Var(k2), Var(v2)).value(), brute_attention(q2, k2, v2)) <
          1e-12);

    CHECK_THROWS_AS(cross_attention_single_head(Var(q2), Var(random_tensor({3, 2}, rng)), Var(v2)), DimensionError);
}

TEST_CASE("multi_head_cross_attention: consistency with single head and slicing oracle")
{
    Pcg32 rng(4);
    const Tensor q = random_tensor({3, 4}, rng);
    const Tensor k = random_tensor({3, 4}, rng);
    const Tensor v = random_tensor({3, 4}, rng);
    const Tensor w = random_tensor({12, 12}, rng);

    const Tensor single = cross_attention_single_head(Var(q), Var(k), Var(v)).value();
    const Tensor m1 = multi_head_cross_attention(Var(q), Var(k), Var(v), Var(w), 1).value();
    CHECK(max_abs_diff(m1, matmul(single.reshaped({1, 12}), w).reshaped({12})) < 1e-15);

    const Tensor eye = identity(12);
    const Tensor stitched = multi_head_cross_attention(Var(q), Var(k), Var(v), Var(eye), 2).value();
    Tensor oracle({3, 4});
    for (std::size_t head = 0; head < 2; ++head) {
        const Tensor part = brute_attention(columns(q, 2 * head, 2), columns(k, 2 * head, 2), columns(v, 2 * head, 2));
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t c = 0; c < 2; ++c) {
                oracle.at(i, 2 * head + c) = part.at(i, c);
            }
        }
    }
    CHECK(max_abs_diff(stitched, oracle.reshaped({12})) < 1e-12);

    const Tensor m2 = multi_head_cross_attention(Var(q), Var(k), Var(v), Var(w), 2).value();
    CHECK(max_abs_diff(m2, msmbd::testing::naive_matmul(oracle.reshaped({1, 12}), w).reshaped({12})) < 1e-12);

    CHECK_THROWS_AS(multi_head_cross_attention(Var(q), Var(k), Var(v), Var(w), 3), DimensionError);
    CHECK_THROWS_AS(multi_head_cross_attention(Var(q), Var(k), Var(v), Var(identity(4)), 2), DimensionError);
}

TEST_CASE("CmrcaConfig validation")
{
    CHECK_NOTHROW(CmrcaConfig{}.validate());
    CHECK_THROWS_AS((CmrcaConfig{.dim = 10, .tokens = 4, .heads = 1}.validate()), ValidationError);
    CHECK_THROWS_AS((CmrcaConfig{.dim = 16, .tokens = 4, .heads = 3}.validate()), ValidationError);
}

TEST_CASE("cmrca_forward: zero alignment propagates zeros")
{
    CmrcaFixture f({.dim = 8, .tokens = 2, .heads = 2});
    for (LinearLayer* l : {&f.cmrca.align_user, &f.cmrca.align_visual, &f.cmrca.align_tweets}) {
        l->weight.mutable_value() = Tensor(l->weight.shape());
    }
    const Tensor out = cmrca_forward(f.visual, f.user, f.tweets, f.cmrca, f.cfg).value();
    CHECK(out == Tensor({16}));
}

TEST_CASE("cmrca: single token, single head degenerates to W x aligned V")
{
    CmrcaFixture f({.dim = 6, .tokens = 1, .heads = 1});
    Pcg32 rng(9);
    const CmrcaTrace t = cmrca_trace(f.visual, f.user, f.tweets, f.cmrca, f.cfg);
    auto expect = [](const Var& tokens, const Var& w) {
        return matmul(tokens.value(), w.value()).reshaped({6});
    };
    CHECK(max_abs_diff(t.fused_user.value(), expect(t.tokens_user, f.cmrca.w_user)) < 1e-15);
    CHECK(max_abs_diff(t.fused_visual.value(), expect(t.tokens_visual, f.cmrca.w_visual)) < 1e-15);
    CHECK(max_abs_diff(t.fused_tweets.value(), expect(t.tokens_tweets, f.cmrca.w_tweets)) < 1e-15);

    f.cmrca.w_user.mutable_value() = identity(6);
    f.cmrca.w_visual.mutable_value() = identity(6);
    f.cmrca.w_tweets.mutable_value() = identity(6);
    const CmrcaTrace id = cmrca_trace(f.visual, f.user, f.tweets, f.cmrca, f.cfg);
    CHECK(id.fused_user.value() == id.tokens_user.value().reshaped({6}));
    CHECK(id.fused_visual.value() == id.tokens_visual.value().reshaped({6}));
    CHECK(id.fused_tweets.value() == id.tokens_tweets.value().reshaped({6}));

    // fused_user only sees the user (V) input
    const CmrcaTrace moved = cmrca_trace(Var(random_tensor({5}, rng)), f.user, Var(random_tensor({7}, rng)), f.cmrca,
                                         f.cfg);
    CHECK(bitwise_equal(moved.fused_user.value(), id.fused_user.value()));
}

TEST_CASE("cmrca: attention rows stay on the simplex under Q/K perturbation")
{
    CmrcaFixture f({.dim = 16, .tokens = 4, .heads = 2});
    Pcg32 rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor q = random_tensor({4, 2}, rng, -5.0, 5.0);
        const Tensor k = random_tensor({4, 2}, rng, -5.0, 5.0);
        const Tensor p = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(2.0)));
        for (std::size_t i = 0; i < 4; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 4; ++j) {
                CHECK(p.at(i, j) >= 0.0);
                s += p.at(i, j);
            }
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
        // Perturbing the Q/K modalities leaves the value set untouched: the
        // fused user vector stays in the convex hull of user value tokens.
        const CmrcaTrace t = cmrca_trace(Var(random_tensor({5}, rng, -3, 3)), f.user,
                                         Var(random_tensor({7}, rng, -3, 3)), f.cmrca, f.cfg);
        const Tensor& vals = t.tokens_user.value();
        f.cmrca.w_user.mutable_value() = identity(16);
        const Tensor fused = cmrca_trace(Var(random_tensor({5}, rng, -3, 3)), f.user,
                                         Var(random_tensor({7}, rng, -3, 3)), f.cmrca, f.cfg)
                                 .fused_user.value();
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t c = 0; c < 4; ++c) {
                double lo = 1e300, hi = -1e300;
                for (std::size_t j = 0; j < 4; ++j) {
                    lo = std::min(lo, vals.at(j, c));
                    hi = std::max(hi, vals.at(j, c));
                }
                CHECK(fused[i * 4 + c] >= lo - 1e-12);
                CHECK(fused[i * 4 + c] <= hi + 1e-12);
            }
        }
    }
}

TEST_CASE("cmrca: residual halves, shape, determinism")
{
    CmrcaFixture f({.dim = 16, .tokens = 4, .heads = 2});
    const CmrcaTrace t = cmrca_trace(f.visual, f.user, f.tweets, f.cmrca, f.cfg);
    for (auto [res, tok] : {std::pair{t.residual_user, t.tokens_user}, std::pair{t.residual_visual, t.tokens_visual},
                            std::pair{t.residual_tweets, t.tokens_tweets}}) {
        REQUIRE(res.value().size() == 32);
        for (std::size_t i = 0; i < 16; ++i) {
            CHECK(std::memcmp(&res.value().data()[16 + i], &tok.value().data()[i], sizeof(double)) == 0);
        }
    }
    CHECK(t.output.shape() == Shape{32});
    CHECK(t.output.value().all_finite());
    CHECK(bitwise_equal(t.output.value(), cmrca_forward(f.visual, f.user, f.tweets, f.cmrca, f.cfg).value()));
}

TEST_CASE("cmrca: gradients at d=16, T=4, M=2")
{
    CmrcaFixture f({.dim = 16, .tokens = 4, .heads = 2}, 8);
    Pcg32 rng(1);
    const Var probe(random_tensor({32}, rng));
    auto loss = [&] { return sum(hadamard(cmrca_forward(f.visual, f.user, f.tweets, f.cmrca, f.cfg), probe)); };
    const GradReport report = grad_check(loss, f.params, {.eps = 1e-6});
    for (const auto& p : report.params) {
        INFO(p.name << " rel " << p.max_rel_error);
        CHECK(p.max_rel_error < 1e-4);
    }
}
