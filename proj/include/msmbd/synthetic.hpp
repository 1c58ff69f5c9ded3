#pragma once

// Desk-scale stand-in for a labeled bot corpus.
//
// Every user carries a latent score z ~ N(+-0.25, 1) (class means 0.5 sd
// apart). Each modality sees z through its own small noise: visual
// component 1, tweet component 1 and the log-normal metadata rates. Since
// all three read the same latent, no modality (and no concatenation of
// them) separates classes much better than Phi(0.25) ~ 0.60.
//
// The planted interaction lives in visual component 0 (a) and tweet
// component 0 (b). Both have random sign and magnitude >= 1, so neither
// is informative alone. With probability `cross_modal_strength`,
// sign(b) = sign(a) for bots and -sign(a) for humans; otherwise sign(b)
// is a coin flip. The rule "bot iff sign(a) == sign(mean b)" therefore
// scores strength + (1 - strength) / 2.

#include "msmbd/dataset.hpp"
#include "msmbd/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace msmbd {

struct SynthSpec {
    std::uint64_t seed = 1;
    std::size_t n_users = 512;
    std::size_t n_tweets = 8;
    std::size_t tweet_dim = 16;
    std::size_t visual_dim = 16;
    double cross_modal_strength = 1.0;
    double bot_fraction = 0.5;

    /// Throws ValidationError naming the offending field.
    void validate() const;
};

/// Collection instant used for account ages of generated users.
inline constexpr Timestamp kSynthReferenceTime = 1646092800; // 2022-03-01T00:00:00Z

inline constexpr std::size_t kPlantedComponent = 0;
inline constexpr std::size_t kLatentComponent = 1;

struct SyntheticData {
    Dataset dataset;
    std::map<std::string, Tensor> tweets; // id -> [n_i x tweet_dim], 1 <= n_i <= n_tweets
    std::map<std::string, Tensor> visual; // id -> [1 x visual_dim]
};

SyntheticData generate_synthetic(const SynthSpec& spec);

/// Writes users.jsonl, splits.json, synth.json and emb/<id>.{tweets,visual}.msmb.
void write_synthetic(const std::filesystem::path& dir, const SynthSpec& spec, const SyntheticData& data);

/// The generating rule itself: bot iff sign(visual[0]) == sign(mean tweets[:,0]).
Label planted_rule(const Tensor& tweets, const Tensor& visual);

} // namespace msmbd
