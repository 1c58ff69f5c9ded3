#include "msmbd/encoders.hpp"

#include "msmbd/embedding_io.hpp"
#include "msmbd/error.hpp"
#include "msmbd/rng.hpp"

#include <algorithm>
#include <cmath>

namespace msmbd {

namespace {

std::size_t utf8_length(const std::string& s)
{
    return static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0u) != 0x80u; }));
}

bool present(const std::optional<std::string>& s)
{
    return s.has_value() && !s->empty();
}

std::filesystem::path resolve(const std::filesystem::path& root, const std::string& ref)
{
    const std::filesystem::path p(ref);
    return p.is_absolute() ? p : root / p;
}

Tensor stub_values(std::uint64_t seed, const std::string& id, const char* stream, std::size_t rows, std::size_t cols)
{
    Pcg32 rng(mix_seed(seed, fnv1a64(id)), fnv1a64(stream));
    Tensor t({rows, cols});
    for (double& v : t.data()) {
        v = rng.uniform(-1.0, 1.0);
    }
    return t;
}

} // namespace

Tensor vectorize_user(const UserRecord& r, Timestamp reference_time)
{
    if (reference_time < r.created_at) {
        throw ValidationError("record \"" + r.id + "\": reference time precedes created_at");
    }
    const double age_days = static_cast<double>(reference_time - r.created_at) / 86400.0;
    const double avg_per_day = static_cast<double>(r.tweet_count) / std::max(age_days, 1.0);
    const std::size_t name_len = utf8_length(r.screen_name);
    const auto digits = static_cast<std::size_t>(
        std::count_if(r.screen_name.begin(), r.screen_name.end(), [](char c) { return c >= '0' && c <= '9'; }));
    const double digit_fraction = name_len ? static_cast<double>(digits) / static_cast<double>(name_len) : 0.0;
    auto flag = [](bool b) { return b ? 1.0 : 0.0; };

    Tensor v = Tensor::vector({
        std::log1p(age_days),
        std::log1p(static_cast<double>(r.tweet_count)),
        std::log1p(avg_per_day),
        std::log1p(static_cast<double>(r.followers_count)),
        std::log1p(static_cast<double>(r.friends_count)),
        std::log1p(static_cast<double>(r.hashtag_count)),
        std::log1p(static_cast<double>(r.mention_count)),
        flag(r.verified),
        flag(r.is_protected),
        std::log1p(static_cast<double>(name_len)),
        digit_fraction,
        flag(present(r.description)),
        flag(r.has_default_profile_image),
        flag(present(r.location)),
        flag(r.url_in_description),
    });
    ensure_finite(v, "vectorize_user");
    return v;
}

Var encode_user_features(const Var& features, const LinearLayer& layer)
{
    return gelu(layer(features));
}

SsefLayer SsefLayer::create(ParamRegistry& params, const std::string& prefix, std::size_t n_tweets, std::size_t dim,
                            std::uint64_t seed, bool positional_encoding)
{
    if (n_tweets == 0) {
        throw DimensionError("SSEF needs at least one tweet slot");
    }
    if (dim % kSsefHeads != 0) {
        throw DimensionError("SSEF tweet dim " + std::to_string(dim) + " must be divisible by " +
                             std::to_string(kSsefHeads) + " heads");
    }
    const std::size_t hidden = (n_tweets + 1) / 2;
    SsefLayer l;
    l.n_tweets = n_tweets;
    l.dim = dim;
    l.positional_encoding = positional_encoding;
    l.excite_down = LinearLayer::create(params, prefix + ".excite_down", n_tweets, hidden, seed);
    l.excite_up = LinearLayer::create(params, prefix + ".excite_up", hidden, n_tweets, seed);
    l.query = LinearLayer::create(params, prefix + ".attn.query", dim, dim, seed);
    // no key bias: it shifts every score in a row equally, so softmax ignores it
    l.key = LinearLayer::create(params, prefix + ".attn.key", dim, dim, seed, false);
    l.value = LinearLayer::create(params, prefix + ".attn.value", dim, dim, seed);
    l.attn_out = LinearLayer::create(params, prefix + ".attn.out", dim, dim, seed);
    l.norm1 = LayerNorm::create(params, prefix + ".norm1", dim);
    l.ff_in = LinearLayer::create(params, prefix + ".ff_in", dim, 2 * dim, seed);
    l.ff_out = LinearLayer::create(params, prefix + ".ff_out", 2 * dim, dim, seed);
    l.norm2 = LayerNorm::create(params, prefix + ".norm2", dim);
    return l;
}

Tensor sinusoidal_positions(std::size_t rows, std::size_t dim)
{
    Tensor pe({rows, dim});
    for (std::size_t pos = 0; pos < rows; ++pos) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
            const double angle = static_cast<double>(pos) * freq;
            pe.at(pos, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

Var transformer_encode(const Var& tweets, const std::vector<bool>& valid, const SsefLayer& layer)
{
    const Shape expected{layer.n_tweets, layer.dim};
    if (tweets.shape() != expected) {
        throw DimensionError("transformer_encode: tweets " + shape_str(tweets.shape()) + " vs expected " +
                             shape_str(expected));
    }
    if (valid.size() != layer.n_tweets) {
        throw DimensionError("transformer_encode: mask length differs from tweet slots");
    }
    Var x = tweets;
    if (layer.positional_encoding) {
        x = add(x, Var(sinusoidal_positions(layer.n_tweets, layer.dim)));
    }
    const Var q = layer.query(x);
    const Var k = layer.key(x);
    const Var v = layer.value(x);
    const std::size_t head_dim = layer.dim / kSsefHeads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    const Mask key_mask = Mask::from_keys(layer.n_tweets, valid);
    std::vector<Var> heads;
    for (std::size_t h = 0; h < kSsefHeads; ++h) {
        const Var qh = slice_cols(q, h * head_dim, head_dim);
        const Var kh = slice_cols(k, h * head_dim, head_dim);
        const Var vh = slice_cols(v, h * head_dim, head_dim);
        const Var scores = scale(matmul(qh, transpose(kh)), inv_scale);
        heads.push_back(matmul(softmax_rows(scores, &key_mask), vh));
    }
    const Var attended = layer.attn_out(concat_cols(heads));
    const Var x1 = layer.norm1(add(x, attended));
    const Var ff = layer.ff_out(gelu(layer.ff_in(x1)));
    return layer.norm2(add(x1, ff));
}

Var ssef_weights(const Var& tweets, const std::vector<bool>& valid, const SsefLayer& layer)
{
    const Var squeeze = mask_entries(mean_cols(tweets), valid);
    const Var excite = sigmoid(layer.excite_up(gelu(layer.excite_down(squeeze))));
    return divide_by_sum(mask_entries(excite, valid));
}

Var ssef_fuse(const Var& tweets, const std::vector<bool>& valid, const SsefLayer& layer)
{
    if (std::none_of(valid.begin(), valid.end(), [](bool b) { return b; })) {
        throw DegenerateMaskError("ssef_fuse: every tweet slot is padding");
    }
    const Var encoded = transformer_encode(tweets, valid, layer);
    return matmul(ssef_weights(tweets, valid, layer), encoded);
}

std::string_view to_string(EmbeddingSource source)
{
    return source == EmbeddingSource::precomputed ? "precomputed" : "stub";
}

EmbeddingSource parse_embedding_source(std::string_view text)
{
    if (text == "precomputed") {
        return EmbeddingSource::precomputed;
    }
    if (text == "stub") {
        return EmbeddingSource::stub;
    }
    throw ValidationError("embedding source must be \"precomputed\" or \"stub\", got \"" + std::string(text) + "\"");
}

Tensor visual_encode(const UserRecord& r, const VisualAdapter& adapter)
{
    if (adapter.mode == EmbeddingSource::stub) {
        return stub_values(adapter.seed, r.id, "visual", 1, adapter.dim).reshaped({adapter.dim});
    }
    if (!r.visual_embedding_ref) {
        throw ValidationError("record \"" + r.id + "\" has no visual_embedding_ref (precomputed mode)");
    }
    const auto path = resolve(adapter.root, *r.visual_embedding_ref);
    const Tensor t = load_embedding_file(path);
    if (t.rows() != 1 || t.cols() != adapter.dim) {
        throw FormatError(path.string() + ": visual embedding must be 1x" + std::to_string(adapter.dim) + ", got " +
                          shape_str(t.shape()));
    }
    return t.reshaped({adapter.dim});
}

TweetMatrix load_tweets(const UserRecord& r, const TweetSource& source)
{
    TweetMatrix m{Tensor({source.n_tweets, source.dim}), std::vector<bool>(source.n_tweets, false)};
    Tensor raw;
    if (source.mode == EmbeddingSource::stub) {
        raw = stub_values(source.seed, r.id, "tweets", source.n_tweets, source.dim);
    } else {
        if (!r.tweet_embedding_ref) {
            throw ValidationError("record \"" + r.id + "\" has no tweet_embedding_ref (precomputed mode)");
        }
        const auto path = resolve(source.root, *r.tweet_embedding_ref);
        raw = load_embedding_file(path);
        if (raw.cols() != source.dim) {
            throw FormatError(path.string() + ": tweet embeddings have " + std::to_string(raw.cols()) +
                              " columns, expected " + std::to_string(source.dim));
        }
    }
    const std::size_t n = std::min(raw.rows(), source.n_tweets);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < source.dim; ++k) {
            m.rows.at(i, k) = raw.at(i, k);
        }
        m.valid[i] = true;
    }
    return m;
}

ModalityEmbeddings gather_embeddings(const UserRecord& record, const VisualAdapter& visual,
                                     const TweetSource& tweets, Timestamp reference_time)
{
    return {visual_encode(record, visual), vectorize_user(record, reference_time), load_tweets(record, tweets)};
}

} // namespace msmbd
