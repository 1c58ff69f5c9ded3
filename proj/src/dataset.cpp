#include "msmbd/dataset.hpp"

#include "msmbd/error.hpp"
#include "msmbd/rng.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <unordered_map>

namespace msmbd {

using nlohmann::json;

std::string_view to_string(Split split)
{
    switch (split) {
    case Split::train:
        return "train";
    case Split::val:
        return "val";
    case Split::test:
        return "test";
    }
    return "?";
}

const std::vector<std::string>& SplitManifest::ids(Split split) const
{
    switch (split) {
    case Split::train:
        return train;
    case Split::val:
        return val;
    case Split::test:
        return test;
    }
    return train;
}

SplitManifest read_split_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open split manifest " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) {
        throw ParseError(path.string() + ": expected an object");
    }
    SplitManifest m;
    auto read = [&](const char* key, std::vector<std::string>& dst) {
        auto it = j.find(key);
        if (it == j.end()) {
            return;
        }
        if (!it->is_array()) {
            throw ParseError(path.string() + ": \"" + key + "\" must be an array of ids");
        }
        for (const auto& v : *it) {
            if (!v.is_string()) {
                throw ParseError(path.string() + ": \"" + key + "\" must contain strings");
            }
            dst.push_back(v.get<std::string>());
        }
    };
    for (const auto& [key, _] : j.items()) {
        if (key != "train" && key != "val" && key != "test") {
            throw ValidationError(path.string() + ": unknown split \"" + key + "\"");
        }
    }
    read("train", m.train);
    read("val", m.val);
    read("test", m.test);
    return m;
}

void write_split_manifest(const std::filesystem::path& path, const SplitManifest& m)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    json j = {{"train", m.train}, {"val", m.val}, {"test", m.test}};
    out << j.dump() << '\n';
}

SplitManifest make_splits(std::vector<std::string> ids, std::uint64_t seed)
{
    Pcg32 rng(mix_seed(seed, fnv1a64("splits")));
    for (std::size_t i = ids.size(); i > 1; --i) {
        const std::size_t j = rng.below(static_cast<std::uint32_t>(i));
        std::swap(ids[i - 1], ids[j]);
    }
    const std::size_t n = ids.size();
    const auto n_train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
    SplitManifest m;
    m.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    m.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                 ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    m.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
    return m;
}

void Dataset::validate() const
{
    std::unordered_map<std::string, const UserRecord*> by_id;
    for (const auto& r : records) {
        if (!by_id.emplace(r.id, &r).second) {
            throw ValidationError("duplicate record id \"" + r.id + "\"");
        }
    }
    std::set<std::string> assigned;
    for (Split s : {Split::train, Split::val, Split::test}) {
        for (const auto& id : splits.ids(s)) {
            auto it = by_id.find(id);
            if (it == by_id.end()) {
                throw ValidationError("split " + std::string(to_string(s)) + " names unknown id \"" + id + "\"");
            }
            if (!assigned.insert(id).second) {
                throw ValidationError("id \"" + id + "\" appears in more than one split");
            }
            if (!it->second->label) {
                throw ValidationError("id \"" + id + "\" is in split " + std::string(to_string(s)) +
                                      " but has no label");
            }
        }
    }
    for (const auto& r : records) {
        if (r.label && !assigned.count(r.id)) {
            throw ValidationError("labeled record \"" + r.id + "\" has no split assignment");
        }
    }
}

std::vector<std::size_t> Dataset::indices(Split split) const
{
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < records.size(); ++i) {
        pos.emplace(records[i].id, i);
    }
    std::vector<std::size_t> out;
    for (const auto& id : splits.ids(split)) {
        auto it = pos.find(id);
        if (it == pos.end()) {
            throw ValidationError("split names unknown id \"" + id + "\"");
        }
        out.push_back(it->second);
    }
    return out;
}

const UserRecord& Dataset::find(const std::string& id) const
{
    for (const auto& r : records) {
        if (r.id == id) {
            return r;
        }
    }
    throw ValidationError("unknown record id \"" + id + "\"");
}

Dataset load_dataset(const std::filesystem::path& dir)
{
    Dataset ds;
    ds.root = dir;
    ds.records = load_corpus(dir / kCorpusFile);
    ds.splits = read_split_manifest(dir / kSplitFile);
    ds.validate();
    return ds;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset)
{
    std::filesystem::create_directories(dir);
    write_corpus(dir / kCorpusFile, dataset.records);
    write_split_manifest(dir / kSplitFile, dataset.splits);
}

} // namespace msmbd
