#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace topocontro {

/// Author sentinel used by the dump format for removed accounts.
inline constexpr std::string_view kDeletedAuthor = "[deleted]";

struct CommentRecord {
    std::string comment_id;
    std::string parent_id;
    std::string author;
    std::string body;
    std::int64_t created_utc = 0;

    bool operator==(const CommentRecord&) const = default;
};

struct ThreadRecord {
    std::string post_id;
    std::string subreddit;
    std::string title;
    std::string selftext;
    std::string author;
    std::int64_t created_utc = 0;
    double upvote_ratio = 0.0;
    std::vector<CommentRecord> comments;

    bool operator==(const ThreadRecord&) const = default;
};

enum class LabelValue { Controversial, NonControversial, Excluded };
enum class LabelReason { InControversialBand, InNonControversialBand, URGap, TooFewComments };

struct Label {
    LabelValue value = LabelValue::Excluded;
    LabelReason reason = LabelReason::URGap;

    bool included() const noexcept { return value != LabelValue::Excluded; }
    bool operator==(const Label&) const = default;
};

std::string_view to_string(LabelValue v);
std::string_view to_string(LabelReason r);
LabelValue label_value_from_string(std::string_view s);
LabelReason label_reason_from_string(std::string_view s);

/// Upvote-ratio bands; all four bounds are inclusive.
struct LabelConfig {
    int min_comments = 5;
    double controversial_lo = 0.30;
    double controversial_hi = 0.70;
    double noncontroversial_lo = 0.80;
    double noncontroversial_hi = 1.00;

    bool operator==(const LabelConfig&) const = default;
};

nlohmann::json to_json(const LabelConfig& cfg);
LabelConfig label_config_from_json(const nlohmann::json& j);

/// Pure function of (upvote_ratio, comment count).
Label label_post(const ThreadRecord& rec, const LabelConfig& cfg = {});

// ---------------------------------------------------------------------------
// Parsing

struct ParseIssue {
    std::string source;  // file path
    std::size_t line = 0;  // 1-based; 0 for file-level notices
    std::string message;
};

struct ParseResult {
    std::vector<ThreadRecord> records;
    std::vector<ParseIssue> errors;    // malformed lines; the line is not in `records`
    std::vector<ParseIssue> warnings;  // accepted with a notice (duplicates, orphans)
};

/// Validates the record invariants. Returns an empty string when valid.
std::string validate_record(const ThreadRecord& rec);

ThreadRecord thread_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ThreadRecord& rec);

/// Reads JSON-Lines thread dumps. Unreadable files throw; bad lines are
/// reported in ParseResult::errors. Duplicate post_ids across or within files
/// keep the last occurrence and emit a warning.
ParseResult parse_dump(const std::filesystem::path& path);
ParseResult parse_dumps(const std::vector<std::filesystem::path>& paths);

// ---------------------------------------------------------------------------
// Store

inline constexpr int kStoreFormatVersion = 1;

struct LabeledStore {
    std::vector<ThreadRecord> records;
    std::vector<Label> labels;  // parallel to records
    LabelConfig label_config;
};

/// Writes `<dir>/manifest.json` and `<dir>/records.jsonl`. Creates `dir`.
void store_write(const std::filesystem::path& dir, const LabeledStore& store);

/// Throws MissingArtifactError if the store is absent, Error on version mismatch.
LabeledStore store_read(const std::filesystem::path& dir);

std::string label_config_hash(const LabelConfig& cfg);

// ---------------------------------------------------------------------------
// Summary

struct SummaryTable {
    std::size_t total = 0;
    std::size_t controversial = 0;
    std::size_t noncontroversial = 0;
    std::size_t excluded = 0;
    std::size_t excluded_ur_gap = 0;
    std::size_t excluded_too_few_comments = 0;
    std::optional<double> nc_per_c;  // NC / C; empty when C = 0
    std::size_t total_comments = 0;     // over included posts
    double median_comments = 0.0;       // over included posts

    /// "1 : 7.74", or "n/a" when undefined.
    std::string ratio_string() const;
    std::string render_markdown() const;
};

SummaryTable dataset_summary(const LabeledStore& store);

}  // namespace topocontro
