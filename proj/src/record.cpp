#include "msmbd/record.hpp"

#include "msmbd/error.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <json.hpp>

namespace msmbd {

using nlohmann::json;

namespace {

std::int64_t read_count(const json& obj, const char* key, std::size_t line)
{
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
        return 0;
    }
    if (!it->is_number_integer()) {
        throw ParseError("line " + std::to_string(line) + ": \"" + key + "\" must be an integer");
    }
    const auto v = it->get<std::int64_t>();
    if (v < 0) {
        throw ValidationError("line " + std::to_string(line) + ": \"" + key + "\" must be >= 0, got " +
                              std::to_string(v));
    }
    return v;
}

bool read_bool(const json& obj, const char* key, std::size_t line)
{
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
        return false;
    }
    if (!it->is_boolean()) {
        throw ParseError("line " + std::to_string(line) + ": \"" + key + "\" must be a boolean");
    }
    return it->get<bool>();
}

std::optional<std::string> read_opt_string(const json& obj, const char* key, std::size_t line)
{
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
        return std::nullopt;
    }
    if (!it->is_string()) {
        throw ParseError("line " + std::to_string(line) + ": \"" + key + "\" must be a string");
    }
    return it->get<std::string>();
}

} // namespace

std::string_view to_string(Label label)
{
    return label == Label::bot ? "bot" : "human";
}

Label parse_label(std::string_view text)
{
    if (text == "bot") {
        return Label::bot;
    }
    if (text == "human") {
        return Label::human;
    }
    throw ParseError("label must be \"human\" or \"bot\", got \"" + std::string(text) + "\"");
}

Timestamp parse_timestamp(std::string_view text)
{
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    char sep = 0;
    int consumed = 0;
    const std::string buf(text);
    if (std::sscanf(buf.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &s, &consumed) != 7 ||
        (sep != 'T' && sep != ' ')) {
        throw ParseError("malformed timestamp \"" + buf + "\"");
    }
    std::string_view rest = text.substr(static_cast<std::size_t>(consumed));
    if (!rest.empty() && rest.front() == '.') {
        std::size_t i = 1;
        while (i < rest.size() && rest[i] >= '0' && rest[i] <= '9') {
            ++i;
        }
        rest.remove_prefix(i);
    }
    if (!(rest.empty() || rest == "Z" || rest == "+00:00" || rest == "+0000")) {
        throw ParseError("timestamp \"" + buf + "\" must be UTC");
    }
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || s > 60) {
        throw ParseError("invalid calendar value in timestamp \"" + buf + "\"");
    }
    const auto days = sys_days{ymd}.time_since_epoch().count();
    return static_cast<Timestamp>(days) * 86400 + h * 3600 + mi * 60 + s;
}

std::string format_timestamp(Timestamp t)
{
    using namespace std::chrono;
    auto days = t / 86400;
    auto secs = t % 86400;
    if (secs < 0) {
        secs += 86400;
        --days;
    }
    const year_month_day ymd{sys_days{std::chrono::days{days}}};
    char out[32];
    std::snprintf(out, sizeof out, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(secs / 3600),
                  static_cast<int>(secs % 3600 / 60), static_cast<int>(secs % 60));
    return out;
}

UserRecord parse_user_record(std::string_view line, std::size_t line_number)
{
    json obj;
    try {
        obj = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ParseError("line " + std::to_string(line_number) + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) {
        throw ParseError("line " + std::to_string(line_number) + ": expected a JSON object");
    }

    UserRecord r;
    const auto id = read_opt_string(obj, "id", line_number);
    if (!id || id->empty()) {
        throw ValidationError("line " + std::to_string(line_number) + ": missing \"id\"");
    }
    r.id = *id;
    const auto created = read_opt_string(obj, "created_at", line_number);
    if (!created) {
        throw ValidationError("line " + std::to_string(line_number) + ": missing \"created_at\"");
    }
    try {
        r.created_at = parse_timestamp(*created);
    } catch (const ParseError& e) {
        throw ParseError("line " + std::to_string(line_number) + ": " + e.what());
    }
    r.tweet_count = read_count(obj, "tweet_count", line_number);
    r.followers_count = read_count(obj, "followers_count", line_number);
    r.friends_count = read_count(obj, "friends_count", line_number);
    r.hashtag_count = read_count(obj, "hashtag_count", line_number);
    r.mention_count = read_count(obj, "mention_count", line_number);
    r.verified = read_bool(obj, "verified", line_number);
    r.is_protected = read_bool(obj, "protected", line_number);
    r.screen_name = read_opt_string(obj, "screen_name", line_number).value_or("");
    r.description = read_opt_string(obj, "description", line_number);
    r.has_default_profile_image = read_bool(obj, "has_default_profile_image", line_number);
    r.location = read_opt_string(obj, "location", line_number);
    r.url_in_description = read_bool(obj, "url_in_description", line_number);
    if (auto label = read_opt_string(obj, "label", line_number)) {
        try {
            r.label = parse_label(*label);
        } catch (const ParseError& e) {
            throw ParseError("line " + std::to_string(line_number) + ": " + e.what());
        }
    }
    r.tweet_embedding_ref = read_opt_string(obj, "tweet_embedding_ref", line_number);
    r.visual_embedding_ref = read_opt_string(obj, "visual_embedding_ref", line_number);
    return r;
}

std::string serialize_user_record(const UserRecord& r)
{
    json obj = {
        {"id", r.id},
        {"created_at", format_timestamp(r.created_at)},
        {"tweet_count", r.tweet_count},
        {"followers_count", r.followers_count},
        {"friends_count", r.friends_count},
        {"hashtag_count", r.hashtag_count},
        {"mention_count", r.mention_count},
        {"verified", r.verified},
        {"protected", r.is_protected},
        {"screen_name", r.screen_name},
        {"has_default_profile_image", r.has_default_profile_image},
        {"url_in_description", r.url_in_description},
    };
    if (r.description) {
        obj["description"] = *r.description;
    }
    if (r.location) {
        obj["location"] = *r.location;
    }
    if (r.label) {
        obj["label"] = std::string(to_string(*r.label));
    }
    if (r.tweet_embedding_ref) {
        obj["tweet_embedding_ref"] = *r.tweet_embedding_ref;
    }
    if (r.visual_embedding_ref) {
        obj["visual_embedding_ref"] = *r.visual_embedding_ref;
    }
    return obj.dump();
}

std::vector<UserRecord> load_corpus(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open corpus " + path.string());
    }
    std::vector<UserRecord> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        out.push_back(parse_user_record(line, n));
    }
    return out;
}

void write_corpus(const std::filesystem::path& path, const std::vector<UserRecord>& records)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FormatError("cannot write corpus " + path.string());
    }
    for (const auto& r : records) {
        out << serialize_user_record(r) << '\n';
    }
    if (!out) {
        throw FormatError("I/O failure writing " + path.string());
    }
}

} // namespace msmbd
