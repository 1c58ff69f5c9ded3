#pragma once

// Cross-Modal Residual Cross-Attention.
//
// Each modality embedding is aligned to a common width d and reshaped into
// T tokens of width d/T. Three cross-attentions then fuse the modalities
// with fixed roles:
//
//   fused_u : V = user,    Q = tweets, K = visual
//   fused_v : V = visual,  Q = tweets, K = user
//   fused_t : V = tweets,  Q = user,   K = visual
//
// Heads are contiguous channel slices of the token width with no per-head
// projections; the only learnable matrices in the attention step are the
// output maps W_u, W_v, W_t applied to the flattened concatenation of
// heads. Each fused vector is concatenated with its aligned input, and
// the three [2d] results are integrated by a multi-head self-attention
// over a 3-token sequence followed by mean pooling.

#include "msmbd/autodiff.hpp"
#include "msmbd/params.hpp"

#include <cstdint>
#include <string>

namespace msmbd {

struct CmrcaConfig {
    std::size_t dim = 64;   // d, aligned width
    std::size_t tokens = 8; // T
    std::size_t heads = 4;  // M

    std::size_t token_dim() const { return dim / tokens; }
    /// d % T == 0 and (d / T) % M == 0; throws ValidationError.
    void validate() const;
    bool operator==(const CmrcaConfig&) const = default;
};

struct CmrcaParams {
    LinearLayer align_user;
    LinearLayer align_visual;
    LinearLayer align_tweets;
    Var w_user;    // [d x d]
    Var w_visual;  // [d x d]
    Var w_tweets;  // [d x d]
    Var integrate; // [2d x 2d]

    static CmrcaParams create(ParamRegistry& params, const CmrcaConfig& cfg, std::size_t user_dim,
                              std::size_t visual_dim, std::size_t tweet_dim, std::uint64_t seed);
};

/// Linear map to d, then row-major reshape to [T x d/T].
Var align_and_tokenize(const Var& features, const LinearLayer& layer, std::size_t tokens);

/// softmax(Q K^T / sqrt(h)) V for [T x h] operands.
Var cross_attention_single_head(const Var& q, const Var& k, const Var& v);

/// Runs single-head attention on M contiguous column slices, stitches the
/// heads back to [T x d/T], flattens to [d] and multiplies by W (row
/// vector times matrix).
Var multi_head_cross_attention(const Var& q, const Var& k, const Var& v, const Var& w, std::size_t heads);

/// Intermediate values of one CMRCA pass, kept for inspection in tests.
struct CmrcaTrace {
    Var tokens_user, tokens_visual, tokens_tweets; // [T x d/T]
    Var fused_user, fused_visual, fused_tweets;    // [d]
    Var residual_user, residual_visual, residual_tweets; // [2d]
    Var output; // [2d]
};

CmrcaTrace cmrca_trace(const Var& visual, const Var& user, const Var& tweets, const CmrcaParams& params,
                       const CmrcaConfig& cfg);

/// Fused representation [2d] fed to the classifier.
Var cmrca_forward(const Var& visual, const Var& user, const Var& tweets, const CmrcaParams& params,
                  const CmrcaConfig& cfg);

} // namespace msmbd
