#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace msmbd {

enum class Label { human, bot };

std::string_view to_string(Label label);
Label parse_label(std::string_view text);

/// Seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

/// Accepts "YYYY-MM-DDTHH:MM:SS" followed by "Z", "+00:00" or nothing;
/// a space may replace the 'T' and fractional seconds are dropped.
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp t);

/// One account as it appears in a JSON-Lines corpus.
///
/// Missing optional keys take these defaults: counts 0, booleans false,
/// description/location/label/embedding refs absent, screen_name empty.
/// "id" and "created_at" are required.
struct UserRecord {
    std::string id;
    Timestamp created_at = 0;
    std::int64_t tweet_count = 0;
    std::int64_t followers_count = 0;
    std::int64_t friends_count = 0;
    std::int64_t hashtag_count = 0;
    std::int64_t mention_count = 0;
    bool verified = false;
    bool is_protected = false; // JSON key "protected"
    std::string screen_name;
    std::optional<std::string> description;
    bool has_default_profile_image = false;
    std::optional<std::string> location;
    bool url_in_description = false;
    std::optional<Label> label;
    std::optional<std::string> tweet_embedding_ref;
    std::optional<std::string> visual_embedding_ref;

    friend bool operator==(const UserRecord&, const UserRecord&) = default;
};

/// Parses one corpus line. `line_number` only feeds error messages.
UserRecord parse_user_record(std::string_view line, std::size_t line_number = 1);
std::string serialize_user_record(const UserRecord& record);

std::vector<UserRecord> load_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const std::vector<UserRecord>& records);

} // namespace msmbd
