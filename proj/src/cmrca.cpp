#include "msmbd/cmrca.hpp"

#include "msmbd/error.hpp"

#include <cmath>

namespace msmbd {

namespace {

void require_square(const Var& w, std::size_t n, const char* name)
{
    if (w.shape() != Shape{n, n}) {
        throw DimensionError(std::string(name) + " must be " + std::to_string(n) + "x" + std::to_string(n) +
                             ", got " + shape_str(w.shape()));
    }
}

// Projection-free multi-head attention over the rows of q/k/v, returning
// the stitched heads [rows x width] before any output map.
Var sliced_heads(const Var& q, const Var& k, const Var& v, std::size_t heads)
{
    const std::size_t width = q.value().cols();
    if (heads == 0 || width % heads != 0) {
        throw DimensionError("token width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                             " heads");
    }
    if (heads == 1) {
        return cross_attention_single_head(q, k, v);
    }
    const std::size_t h = width / heads;
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t i = 0; i < heads; ++i) {
        outs.push_back(cross_attention_single_head(slice_cols(q, i * h, h), slice_cols(k, i * h, h),
                                                   slice_cols(v, i * h, h)));
    }
    return concat_cols(outs);
}

} // namespace

void CmrcaConfig::validate() const
{
    if (dim == 0 || tokens == 0 || heads == 0) {
        throw ValidationError("CMRCA dim, tokens and heads must be positive");
    }
    if (dim % tokens != 0) {
        throw ValidationError("CMRCA dim " + std::to_string(dim) + " is not divisible by tokens " +
                              std::to_string(tokens));
    }
    if (token_dim() % heads != 0) {
        throw ValidationError("CMRCA token width " + std::to_string(token_dim()) + " is not divisible by heads " +
                              std::to_string(heads));
    }
}

CmrcaParams CmrcaParams::create(ParamRegistry& params, const CmrcaConfig& cfg, std::size_t user_dim,
                                std::size_t visual_dim, std::size_t tweet_dim, std::uint64_t seed)
{
    cfg.validate();
    const std::size_t d = cfg.dim;
    CmrcaParams p;
    p.align_user = LinearLayer::create(params, "cmrca.align_user", user_dim, d, seed);
    p.align_visual = LinearLayer::create(params, "cmrca.align_visual", visual_dim, d, seed);
    p.align_tweets = LinearLayer::create(params, "cmrca.align_tweets", tweet_dim, d, seed);
    p.w_user = params.add("cmrca.w_user", xavier_uniform(d, d, seed, "cmrca.w_user"));
    p.w_visual = params.add("cmrca.w_visual", xavier_uniform(d, d, seed, "cmrca.w_visual"));
    p.w_tweets = params.add("cmrca.w_tweets", xavier_uniform(d, d, seed, "cmrca.w_tweets"));
    p.integrate = params.add("cmrca.integrate", xavier_uniform(2 * d, 2 * d, seed, "cmrca.integrate"));
    return p;
}

Var align_and_tokenize(const Var& features, const LinearLayer& layer, std::size_t tokens)
{
    if (features.value().rank() != 1) {
        throw DimensionError("align_and_tokenize: expected a rank-1 embedding, got " + shape_str(features.shape()));
    }
    const std::size_t d = layer.out_dim();
    if (tokens == 0 || d % tokens != 0) {
        throw DimensionError("align_and_tokenize: width " + std::to_string(d) + " not divisible by " +
                             std::to_string(tokens) + " tokens");
    }
    return reshape(layer(features), {tokens, d / tokens});
}

Var cross_attention_single_head(const Var& q, const Var& k, const Var& v)
{
    if (q.value().rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
        throw DimensionError("cross_attention_single_head: Q/K/V must share one [T x h] shape, got " +
                             shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " + shape_str(v.shape()));
    }
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(q.value().cols()));
    const Var scores = scale(matmul(q, transpose(k)), inv_scale);
    return matmul(softmax_rows(scores), v);
}

Var multi_head_cross_attention(const Var& q, const Var& k, const Var& v, const Var& w, std::size_t heads)
{
    const Var stitched = sliced_heads(q, k, v, heads);
    const std::size_t d = stitched.value().size();
    require_square(w, d, "multi_head_cross_attention: W");
    return matmul(reshape(stitched, {d}), w);
}

CmrcaTrace cmrca_trace(const Var& visual, const Var& user, const Var& tweets, const CmrcaParams& params,
                       const CmrcaConfig& cfg)
{
    cfg.validate();
    const std::size_t d = cfg.dim;
    CmrcaTrace t;
    t.tokens_user = align_and_tokenize(user, params.align_user, cfg.tokens);
    t.tokens_visual = align_and_tokenize(visual, params.align_visual, cfg.tokens);
    t.tokens_tweets = align_and_tokenize(tweets, params.align_tweets, cfg.tokens);

    t.fused_user = multi_head_cross_attention(t.tokens_tweets, t.tokens_visual, t.tokens_user, params.w_user,
                                              cfg.heads);
    t.fused_visual = multi_head_cross_attention(t.tokens_tweets, t.tokens_user, t.tokens_visual, params.w_visual,
                                                cfg.heads);
    t.fused_tweets = multi_head_cross_attention(t.tokens_user, t.tokens_visual, t.tokens_tweets, params.w_tweets,
                                                cfg.heads);

    t.residual_user = concat({t.fused_user, reshape(t.tokens_user, {d})});
    t.residual_visual = concat({t.fused_visual, reshape(t.tokens_visual, {d})});
    t.residual_tweets = concat({t.fused_tweets, reshape(t.tokens_tweets, {d})});

    require_square(params.integrate, 2 * d, "cmrca integrate");
    const Var sequence = stack_rows({t.residual_user, t.residual_visual, t.residual_tweets});
    const Var integrated = matmul(sliced_heads(sequence, sequence, sequence, cfg.heads), params.integrate);
    t.output = mean_rows(integrated);
    return t;
}

Var cmrca_forward(const Var& visual, const Var& user, const Var& tweets, const CmrcaParams& params,
                  const CmrcaConfig& cfg)
{
    return cmrca_trace(visual, user, tweets, params, cfg).output;
}

} // namespace msmbd
