#include "msmbd/synthetic.hpp"

#include "msmbd/embedding_io.hpp"
#include "msmbd/error.hpp"
#include "msmbd/rng.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>

namespace msmbd {

namespace {

constexpr double kClassShift = 0.25;  // half of the 0.5 sd class-mean gap
constexpr double kModalityNoise = 0.3;
constexpr double kTweetNoise = 0.5;
constexpr double kPlantedTweetNoise = 0.2;

std::int64_t lognormal_count(Pcg32& rng, double mu, double sigma)
{
    return static_cast<std::int64_t>(std::llround(std::exp(mu + sigma * rng.normal())));
}

double planted_magnitude(Pcg32& rng)
{
    return 1.0 + 0.5 * std::abs(rng.normal());
}

// Embedding files hold float32; rounding here keeps in-memory data equal
// to what a reload from disk yields.
void round_to_float(Tensor& t)
{
    for (double& v : t.data()) {
        v = static_cast<double>(static_cast<float>(v));
    }
}

std::string make_screen_name(Pcg32& rng)
{
    static constexpr char kLetters[] = "abcdefghijklmnopqrstuvwxyz";
    const std::size_t len = 5 + rng.below(10);
    std::string s;
    for (std::size_t i = 0; i < len; ++i) {
        if (rng.uniform() < 0.2) {
            s.push_back(static_cast<char>('0' + rng.below(10)));
        } else {
            s.push_back(kLetters[rng.below(26)]);
        }
    }
    return s;
}

} // namespace

void SynthSpec::validate() const
{
    if (n_users < 8) {
        throw ValidationError("n_users must be >= 8");
    }
    if (n_tweets < 1) {
        throw ValidationError("n_tweets must be >= 1");
    }
    if (tweet_dim < 4) {
        throw ValidationError("tweet_dim must be >= 4");
    }
    if (visual_dim < 4) {
        throw ValidationError("visual_dim must be >= 4");
    }
    if (!(cross_modal_strength >= 0.0 && cross_modal_strength <= 1.0)) {
        throw ValidationError("cross_modal_strength must lie in [0, 1]");
    }
    if (!(bot_fraction > 0.0 && bot_fraction < 1.0)) {
        throw ValidationError("bot_fraction must lie in (0, 1)");
    }
}

SyntheticData generate_synthetic(const SynthSpec& spec)
{
    spec.validate();
    Pcg32 rng(spec.seed, fnv1a64("synthetic"));
    SyntheticData out;
    out.dataset.records.reserve(spec.n_users);

    const int width = static_cast<int>(std::to_string(spec.n_users - 1).size());
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < spec.n_users; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "u%0*zu", width, i);
        const std::string id = buf;
        ids.push_back(id);

        const bool bot = rng.uniform() < spec.bot_fraction;
        const double z = (bot ? kClassShift : -kClassShift) + rng.normal();

        // planted cross-modal pair
        const double sign_a = rng.uniform() < 0.5 ? -1.0 : 1.0;
        double sign_b = 0.0;
        if (rng.uniform() < spec.cross_modal_strength) {
            sign_b = bot ? sign_a : -sign_a;
        } else {
            sign_b = rng.uniform() < 0.5 ? -1.0 : 1.0;
        }
        const double a = sign_a * planted_magnitude(rng);
        const double b = sign_b * planted_magnitude(rng);

        Tensor visual({1, spec.visual_dim});
        for (std::size_t k = 0; k < spec.visual_dim; ++k) {
            visual[k] = rng.normal();
        }
        visual[kPlantedComponent] = a;
        visual[kLatentComponent] = z + kModalityNoise * rng.normal();

        const std::size_t min_tweets = (spec.n_tweets + 1) / 2;
        const std::size_t n_i = min_tweets + rng.below(static_cast<std::uint32_t>(spec.n_tweets - min_tweets + 1));
        std::vector<double> center(spec.tweet_dim);
        for (double& c : center) {
            c = rng.normal();
        }
        center[kPlantedComponent] = b;
        center[kLatentComponent] = z + kModalityNoise * rng.normal();
        Tensor tweets({n_i, spec.tweet_dim});
        for (std::size_t t = 0; t < n_i; ++t) {
            for (std::size_t k = 0; k < spec.tweet_dim; ++k) {
                const double noise = k == kPlantedComponent ? kPlantedTweetNoise : kTweetNoise;
                tweets.at(t, k) = center[k] + noise * rng.normal();
            }
        }

        const double z_meta = z + kModalityNoise * rng.normal();
        UserRecord r;
        r.id = id;
        const double age_days = std::exp(6.5 - 0.3 * z_meta + 0.5 * rng.normal());
        r.created_at = kSynthReferenceTime - static_cast<Timestamp>(age_days * 86400.0);
        r.tweet_count = lognormal_count(rng, 6.0 + 0.6 * z_meta, 1.0);
        r.followers_count = lognormal_count(rng, 5.0 - 0.5 * z_meta, 1.2);
        r.friends_count = lognormal_count(rng, 5.5, 1.0);
        r.hashtag_count = lognormal_count(rng, 3.0 + 0.4 * z_meta, 1.0);
        r.mention_count = lognormal_count(rng, 3.5, 1.0);
        r.verified = rng.uniform() < 0.08;
        r.is_protected = rng.uniform() < 0.05;
        r.screen_name = make_screen_name(rng);
        if (rng.uniform() < 0.7) {
            r.description = "profile text";
        }
        r.has_default_profile_image = rng.uniform() < 0.1;
        if (rng.uniform() < 0.5) {
            r.location = "somewhere";
        }
        r.url_in_description = rng.uniform() < 0.2;
        r.label = bot ? Label::bot : Label::human;
        r.tweet_embedding_ref = "emb/" + id + ".tweets.msmb";
        r.visual_embedding_ref = "emb/" + id + ".visual.msmb";

        round_to_float(tweets);
        round_to_float(visual);
        out.tweets.emplace(id, std::move(tweets));
        out.visual.emplace(id, std::move(visual));
        out.dataset.records.push_back(std::move(r));
    }
    out.dataset.splits = make_splits(ids, spec.seed);
    return out;
}

void write_synthetic(const std::filesystem::path& dir, const SynthSpec& spec, const SyntheticData& data)
{
    std::filesystem::create_directories(dir / "emb");
    save_dataset(dir, data.dataset);
    for (const auto& r : data.dataset.records) {
        write_embedding_file(dir / *r.tweet_embedding_ref, data.tweets.at(r.id));
        write_embedding_file(dir / *r.visual_embedding_ref, data.visual.at(r.id));
    }
    nlohmann::json j = {
        {"seed", spec.seed},
        {"n_users", spec.n_users},
        {"n_tweets", spec.n_tweets},
        {"tweet_dim", spec.tweet_dim},
        {"visual_dim", spec.visual_dim},
        {"cross_modal_strength", spec.cross_modal_strength},
        {"bot_fraction", spec.bot_fraction},
    };
    std::ofstream out(dir / "synth.json", std::ios::binary);
    out << j.dump(2) << '\n';
}

Label planted_rule(const Tensor& tweets, const Tensor& visual)
{
    double mean_b = 0.0;
    for (std::size_t t = 0; t < tweets.rows(); ++t) {
        mean_b += tweets.at(t, kPlantedComponent);
    }
    const bool agree = (visual[kPlantedComponent] >= 0.0) == (mean_b >= 0.0);
    return agree ? Label::bot : Label::human;
}

} // namespace msmbd
