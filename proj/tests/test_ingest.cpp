#include "doctest.h"

#include "msmbd/dataset.hpp"
#include "msmbd/embedding_io.hpp"
#include "msmbd/error.hpp"
#include "msmbd/record.hpp"
#include "msmbd/synthetic.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

using namespace msmbd;
using msmbd::testing::read_bytes;
using msmbd::testing::TempDir;

namespace {

const char* kFullLine =
    R"({"id":"u1","created_at":"2015-06-01T12:00:00Z","tweet_count":0,"followers_count":1000,"friends_count":12,)"
    R"("hashtag_count":3,"mention_count":4,"verified":true,"protected":false,"screen_name":"a1b2",)"
    R"("description":"hello","has_default_profile_image":false,"location":"Paris","url_in_description":true,)"
    R"("label":"human","tweet_embedding_ref":"emb/u1.t","visual_embedding_ref":"emb/u1.v","extra":42})";

} // namespace

TEST_CASE("parse_user_record maps every field")
{
    const UserRecord r = parse_user_record(kFullLine);
    CHECK(r.id == "u1");
    CHECK(format_timestamp(r.created_at) == "2015-06-01T12:00:00Z");
    CHECK(r.tweet_count == 0);
    CHECK(r.followers_count == 1000);
    CHECK(r.verified);
    CHECK_FALSE(r.is_protected);
    CHECK(r.screen_name == "a1b2");
    CHECK(r.description == "hello");
    CHECK(r.location == "Paris");
    CHECK(r.url_in_description);
    REQUIRE(r.label.has_value());
    CHECK(*r.label == Label::human);
    CHECK(r.tweet_embedding_ref == "emb/u1.t");
}

TEST_CASE("parse_user_record defaults and errors")
{
    const UserRecord r = parse_user_record(R"({"id":"u2","created_at":"2020-01-01 00:00:00+00:00"})");
    CHECK_FALSE(r.description.has_value());
    CHECK_FALSE(r.location.has_value());
    CHECK_FALSE(r.label.has_value());
    CHECK_FALSE(r.verified);
    CHECK(r.followers_count == 0);

    CHECK_THROWS_AS(parse_user_record(R"({"id":"u3","created_at":"2020-01-01T00:00:00Z","followers_count":-1})"),
                    ValidationError);
    CHECK_THROWS_AS(parse_user_record(R"({"id":"u3","created_at":"2020-01-01T00:00:00Z","verified":"yes"})"),
                    ParseError);
    CHECK_THROWS_AS(parse_user_record(R"({"id":"u3"})"), ValidationError);
    CHECK_THROWS_AS(parse_user_record(R"({"id":"u3","created_at":"2020-13-01T00:00:00Z"})"), ParseError);
    CHECK_THROWS_AS(parse_user_record(R"({"id":"u3","created_at":"2020-01-01T00:00:00Z","label":"cyborg"})"),
                    ParseError);
    try {
        parse_user_record("{not json", 17);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 17") != std::string::npos);
    }
}

TEST_CASE("user record parse -> serialize -> parse is a fixed point")
{
    const UserRecord a = parse_user_record(kFullLine);
    const std::string s1 = serialize_user_record(a);
    const UserRecord b = parse_user_record(s1);
    CHECK(a == b);
    CHECK(serialize_user_record(b) == s1);

    const auto synth = generate_synthetic({.seed = 5, .n_users = 40});
    for (const auto& r : synth.dataset.records) {
        CHECK(parse_user_record(serialize_user_record(r)) == r);
    }
}

TEST_CASE("corpus loader reports line numbers")
{
    TempDir dir("corpus");
    {
        std::ofstream out(dir / "c.jsonl");
        out << R"({"id":"a","created_at":"2020-01-01T00:00:00Z"})" << "\n\n";
        out << R"({"id":"b","created_at":"2020-01-01T00:00:00Z","tweet_count":-3})" << "\n";
    }
    try {
        load_corpus(dir / "c.jsonl");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("embedding file: exact layout and round trips")
{
    TempDir dir("emb");
    const Tensor half = Tensor::matrix({{0.5}});
    write_embedding_file(dir / "one.msmb", half);
    const std::string bytes = read_bytes(dir / "one.msmb");
    const std::string expected("MSMB\x01\x00\x01\x00\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x00\x3f", 20);
    CHECK(bytes == expected);
    CHECK(load_embedding_file(dir / "one.msmb") == half);

    Pcg32 rng(8);
    for (auto [r, c] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 4}, {8, 32}, {20, 384}}) {
        Tensor t = msmbd::testing::random_tensor({r, c}, rng, -3.0, 3.0);
        write_embedding_file(dir / "a.msmb", t);
        const Tensor back = load_embedding_file(dir / "a.msmb");
        for (std::size_t i = 0; i < t.size(); ++i) {
            CHECK(back[i] == static_cast<double>(static_cast<float>(t[i])));
        }
        write_embedding_file(dir / "b.msmb", back);
        CHECK(read_bytes(dir / "a.msmb") == read_bytes(dir / "b.msmb"));
    }
}

TEST_CASE("embedding file: malformed inputs name the field")
{
    TempDir dir("bad");
    write_embedding_file(dir / "ok.msmb", Tensor::matrix({{1, 2}, {3, 4}}));
    const std::string good = read_bytes(dir / "ok.msmb");
    auto expect_error = [&](std::string bytes, const std::string& field) {
        {
            std::ofstream out(dir / "x.msmb", std::ios::binary);
            out << bytes;
        }
        try {
            load_embedding_file(dir / "x.msmb");
            FAIL("expected FormatError for " << field);
        } catch (const FormatError& e) {
            CHECK_MESSAGE(std::string(e.what()).find(field) != std::string::npos, e.what());
        }
    };
    std::string s = good;
    s[0] = 'X';
    expect_error(s, "magic");
    s = good;
    s[4] = 2;
    expect_error(s, "version");
    s = good;
    s[6] = 7;
    expect_error(s, "dtype");
    s = good;
    s[7] = 1;
    expect_error(s, "reserved");
    s = good;
    s[8] = 0;
    s[9] = 0;
    expect_error(s, "rows");
    expect_error(good.substr(0, good.size() - 1), "payload");
    expect_error(good.substr(0, 10), "header");
    expect_error(good + "x", "trailing");
    CHECK_THROWS_AS(load_embedding_file(dir / "missing.msmb"), FormatError);
    CHECK_THROWS_AS(write_embedding_file(dir / "v.msmb", Tensor::vector({1.0})), DimensionError);
}

TEST_CASE("splits: 70/10/20, disjoint, covering")
{
    for (std::size_t n : {8u, 10u, 97u, 512u}) {
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < n; ++i) {
            ids.push_back("id" + std::to_string(i));
        }
        const SplitManifest m = make_splits(ids, 3);
        CHECK(std::abs(static_cast<double>(m.train.size()) - 0.7 * n) <= 1.0);
        CHECK(std::abs(static_cast<double>(m.val.size()) - 0.1 * n) <= 1.0);
        CHECK(std::abs(static_cast<double>(m.test.size()) - 0.2 * n) <= 1.0);
        std::set<std::string> all(m.train.begin(), m.train.end());
        all.insert(m.val.begin(), m.val.end());
        all.insert(m.test.begin(), m.test.end());
        CHECK(all.size() == n);
    }
}

TEST_CASE("dataset validation and manifest I/O")
{
    TempDir dir("ds");
    auto synth = generate_synthetic({.seed = 2, .n_users = 20});
    synth.dataset.validate();
    save_dataset(dir.path(), synth.dataset);
    const Dataset back = load_dataset(dir.path());
    CHECK(back.records == synth.dataset.records);
    CHECK(back.splits.train == synth.dataset.splits.train);

    Dataset overlap = synth.dataset;
    overlap.splits.test.push_back(overlap.splits.train.front());
    CHECK_THROWS_AS(overlap.validate(), ValidationError);

    Dataset unassigned = synth.dataset;
    unassigned.splits.val.clear();
    CHECK_THROWS_AS(unassigned.validate(), ValidationError);

    {
        std::ofstream out(dir / "bad.json");
        out << R"({"train":["a"],"holdout":[]})";
    }
    CHECK_THROWS_AS(read_split_manifest(dir / "bad.json"), ValidationError);
}

TEST_CASE("synthetic generator is deterministic to the byte")
{
    TempDir a("synA");
    TempDir b("synB");
    const SynthSpec spec{.seed = 1, .n_users = 24, .n_tweets = 4, .tweet_dim = 6, .visual_dim = 5};
    write_synthetic(a.path(), spec, generate_synthetic(spec));
    write_synthetic(b.path(), spec, generate_synthetic(spec));
    std::size_t files = 0;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
        if (!entry.is_regular_file()) {
            continue;
        }
        const auto rel = std::filesystem::relative(entry.path(), a.path());
        CHECK(read_bytes(entry.path()) == read_bytes(b.path() / rel));
        ++files;
    }
    CHECK(files == 3 + 2 * 24);

    const Dataset ds = load_dataset(a.path());
    const auto& r = ds.records.front();
    const auto mem = generate_synthetic(spec);
    CHECK(load_embedding_file(a.path() / *r.tweet_embedding_ref) == mem.tweets.at(r.id));
}

TEST_CASE("synthetic spec validation")
{
    CHECK_THROWS_AS(generate_synthetic({.n_users = 4}), ValidationError);
    CHECK_THROWS_AS(generate_synthetic({.tweet_dim = 3}), ValidationError);
    CHECK_THROWS_AS(generate_synthetic({.cross_modal_strength = 1.5}), ValidationError);
    CHECK_THROWS_AS(generate_synthetic({.bot_fraction = 1.0}), ValidationError);
}

// ---------------------------------------------------------------------------
// Oracles on the planted signal.
// ---------------------------------------------------------------------------
namespace {

using Rows = std::vector<std::vector<double>>;

// Full-batch logistic regression on standardized features.
struct LogReg {
    std::vector<double> mean, sd, w;
    double b = 0.0;

    void fit(const Rows& x, const std::vector<int>& y)
    {
        const std::size_t d = x.front().size();
        mean.assign(d, 0.0);
        sd.assign(d, 0.0);
        for (const auto& row : x) {
            for (std::size_t k = 0; k < d; ++k) {
                mean[k] += row[k] / x.size();
            }
        }
        for (const auto& row : x) {
            for (std::size_t k = 0; k < d; ++k) {
                sd[k] += (row[k] - mean[k]) * (row[k] - mean[k]) / x.size();
            }
        }
        for (double& s : sd) {
            s = std::sqrt(s) + 1e-9;
        }
        w.assign(d, 0.0);
        for (int it = 0; it < 400; ++it) {
            std::vector<double> gw(d, 0.0);
            double gb = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double p = 1.0 / (1.0 + std::exp(-score(x[i])));
                const double g = p - y[i];
                for (std::size_t k = 0; k < d; ++k) {
                    gw[k] += g * (x[i][k] - mean[k]) / sd[k] / x.size();
                }
                gb += g / x.size();
            }
            for (std::size_t k = 0; k < d; ++k) {
                w[k] -= 0.5 * gw[k];
            }
            b -= 0.5 * gb;
        }
    }
    double score(const std::vector<double>& row) const
    {
        double s = b;
        for (std::size_t k = 0; k < w.size(); ++k) {
            s += w[k] * (row[k] - mean[k]) / sd[k];
        }
        return s;
    }
    double accuracy(const Rows& x, const std::vector<int>& y) const
    {
        std::size_t ok = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            ok += (score(x[i]) >= 0.0) == (y[i] == 1);
        }
        return static_cast<double>(ok) / x.size();
    }
};

std::vector<double> modality_features(const SyntheticData& data, const UserRecord& r, int which)
{
    std::vector<double> f;
    if (which == 0) {
        const Tensor& v = data.visual.at(r.id);
        f.assign(v.data().begin(), v.data().end());
    } else if (which == 1) {
        const Tensor& t = data.tweets.at(r.id);
        f.assign(t.cols(), 0.0);
        for (std::size_t i = 0; i < t.rows(); ++i) {
            for (std::size_t k = 0; k < t.cols(); ++k) {
                f[k] += t.at(i, k) / t.rows();
            }
        }
    } else {
        const double age = static_cast<double>(kSynthReferenceTime - r.created_at) / 86400.0;
        f = {std::log1p(age), std::log1p(r.tweet_count), std::log1p(r.followers_count),
             std::log1p(r.friends_count), std::log1p(r.hashtag_count), std::log1p(r.mention_count)};
    }
    return f;
}

} // namespace

TEST_CASE("synthetic, strength 0: single modality ~ concatenation (within 3 points)")
{
    const auto data = generate_synthetic({.seed = 77, .n_users = 6000, .cross_modal_strength = 0.0});
    const auto train = data.dataset.indices(Split::train);
    const auto test = data.dataset.indices(Split::test);
    auto build = [&](const std::vector<std::size_t>& idx, std::vector<int> mods, Rows& x, std::vector<int>& y) {
        for (std::size_t i : idx) {
            const auto& r = data.dataset.records[i];
            std::vector<double> row;
            for (int m : mods) {
                const auto f = modality_features(data, r, m);
                row.insert(row.end(), f.begin(), f.end());
            }
            x.push_back(row);
            y.push_back(*r.label == Label::bot ? 1 : 0);
        }
    };
    auto fit_acc = [&](std::vector<int> mods) {
        Rows xtr, xte;
        std::vector<int> ytr, yte;
        build(train, mods, xtr, ytr);
        build(test, mods, xte, yte);
        LogReg lr;
        lr.fit(xtr, ytr);
        return lr.accuracy(xte, yte);
    };
    const double concat = fit_acc({0, 1, 2});
    for (int m : {0, 1, 2}) {
        const double single = fit_acc({m});
        INFO("modality " << m << " acc " << single << " concat " << concat);
        CHECK(std::abs(single - concat) <= 0.03);
        CHECK(single <= 0.75);
    }
}

TEST_CASE("synthetic, strength 1: the generating rule is a >= 0.95 classifier")
{
    const auto data = generate_synthetic({.seed = 42, .n_users = 512, .cross_modal_strength = 1.0});
    std::size_t ok = 0;
    for (const auto& r : data.dataset.records) {
        ok += planted_rule(data.tweets.at(r.id), data.visual.at(r.id)) == *r.label;
    }
    CHECK(static_cast<double>(ok) / 512.0 >= 0.95);

    const auto weak = generate_synthetic({.seed = 42, .n_users = 4000, .cross_modal_strength = 0.0});
    ok = 0;
    for (const auto& r : weak.dataset.records) {
        ok += planted_rule(weak.tweets.at(r.id), weak.visual.at(r.id)) == *r.label;
    }
    CHECK(std::abs(static_cast<double>(ok) / 4000.0 - 0.5) < 0.05);
}
