#pragma once

#include "msmbd/record.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace msmbd {

enum class Split { train, val, test };

std::string_view to_string(Split split);

struct SplitManifest {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;

    const std::vector<std::string>& ids(Split split) const;
};

SplitManifest read_split_manifest(const std::filesystem::path& path);
void write_split_manifest(const std::filesystem::path& path, const SplitManifest& manifest);

/// Seeded 70/10/20 shuffle split: train = round(0.7 n), val = round(0.1 n),
/// test takes the rest.
SplitManifest make_splits(std::vector<std::string> ids, std::uint64_t seed);

/// Records plus their split assignment. `root` anchors relative embedding
/// references found in the records.
struct Dataset {
    std::vector<UserRecord> records;
    SplitManifest splits;
    std::filesystem::path root;

    /// Splits disjoint, every id known, every labeled record assigned and
    /// every assigned record labeled. Throws ValidationError.
    void validate() const;

    std::vector<std::size_t> indices(Split split) const;
    const UserRecord& find(const std::string& id) const;
};

inline constexpr const char* kCorpusFile = "users.jsonl";
inline constexpr const char* kSplitFile = "splits.json";

/// Reads `dir/users.jsonl` and `dir/splits.json`.
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);

} // namespace msmbd
