#pragma once

#include "msmbd/autodiff.hpp"
#include "msmbd/params.hpp"
#include "msmbd/record.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace msmbd {

// ---------------------------------------------------------------------------
// User metadata
// ---------------------------------------------------------------------------

inline constexpr std::size_t kUserFeatureCount = 15;
inline constexpr int kUserFeatureLayoutVersion = 1;

/// Feature order of vectorize_user (layout version 1).
inline constexpr std::array<std::string_view, kUserFeatureCount> kUserFeatureNames{
    "log1p_account_age_days", "log1p_tweet_count",  "log1p_avg_tweets_per_day", "log1p_followers",
    "log1p_friends",          "log1p_hashtags",     "log1p_mentions",           "verified",
    "protected",              "log1p_screen_name_length", "screen_name_digit_fraction", "has_description",
    "default_profile_image",  "has_location",       "url_in_description",
};

/// Account age is measured in fractional days up to `reference_time`;
/// average tweets per day divides by max(age_days, 1).
Tensor vectorize_user(const UserRecord& record, Timestamp reference_time);

/// gelu(W v + b)
Var encode_user_features(const Var& features, const LinearLayer& layer);

// ---------------------------------------------------------------------------
// Tweets: Sentence SE Fusion
// ---------------------------------------------------------------------------

inline constexpr std::size_t kSsefHeads = 2;

/// Squeeze-excitation weighting over N tweet slots times a one-block
/// transformer encoder (post-norm, 2 heads, feed-forward width 2 d_l).
struct SsefLayer {
    std::size_t n_tweets = 0;
    std::size_t dim = 0;
    bool positional_encoding = false;

    LinearLayer excite_down; // N -> ceil(N/2)
    LinearLayer excite_up;   // ceil(N/2) -> N
    LinearLayer query, key, value, attn_out;
    LayerNorm norm1;
    LinearLayer ff_in;  // d_l -> 2 d_l
    LinearLayer ff_out; // 2 d_l -> d_l
    LayerNorm norm2;

    static SsefLayer create(ParamRegistry& params, const std::string& prefix, std::size_t n_tweets, std::size_t dim,
                            std::uint64_t seed, bool positional_encoding = false);
};

/// Standard masked multi-head self-attention block output E [N x d_l].
Var transformer_encode(const Var& tweets, const std::vector<bool>& valid, const SsefLayer& layer);

/// Excitation weights w [N]: sigmoid(MLP(squeeze)) zeroed on padded slots
/// and renormalized to sum to one over the valid slots.
Var ssef_weights(const Var& tweets, const std::vector<bool>& valid, const SsefLayer& layer);

/// F_t = w . E, shape [d_l]. Throws DegenerateMaskError if no slot is valid.
Var ssef_fuse(const Var& tweets, const std::vector<bool>& valid, const SsefLayer& layer);

/// Sinusoidal position table [rows x dim].
Tensor sinusoidal_positions(std::size_t rows, std::size_t dim);

// ---------------------------------------------------------------------------
// Embedding providers
// ---------------------------------------------------------------------------

enum class EmbeddingSource { precomputed, stub };

std::string_view to_string(EmbeddingSource source);
EmbeddingSource parse_embedding_source(std::string_view text);

/// Stand-in boundary for the image backbone: either a precomputed
/// [1 x d_v] file referenced by the record, or a deterministic vector in
/// [-1, 1]^d_v hashed from the record id.
struct VisualAdapter {
    EmbeddingSource mode = EmbeddingSource::stub;
    std::size_t dim = 16;
    std::uint64_t seed = 0;
    std::filesystem::path root; // base for relative embedding refs
};

Tensor visual_encode(const UserRecord& record, const VisualAdapter& adapter);

/// Same contract for the per-tweet sentence embeddings.
struct TweetSource {
    EmbeddingSource mode = EmbeddingSource::stub;
    std::size_t n_tweets = 8;
    std::size_t dim = 16;
    std::uint64_t seed = 0;
    std::filesystem::path root;
};

struct TweetMatrix {
    Tensor rows;             // [N x d_l], zero rows on padded slots
    std::vector<bool> valid; // length N
};

/// Loads up to N rows (the first N of the file) and pads the rest.
TweetMatrix load_tweets(const UserRecord& record, const TweetSource& source);

/// Everything the model consumes for one account.
struct ModalityEmbeddings {
    Tensor visual;   // [d_v]
    Tensor user;     // [15]
    TweetMatrix tweets;
};

ModalityEmbeddings gather_embeddings(const UserRecord& record, const VisualAdapter& visual,
                                     const TweetSource& tweets, Timestamp reference_time);

} // namespace msmbd
