#include "topocontro/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

#include "topocontro/common.hpp"
#include "topocontro/hash.hpp"

namespace topocontro {

using nlohmann::json;

std::string_view to_string(LabelValue v) {
    switch (v) {
        case LabelValue::Controversial: return "Controversial";
        case LabelValue::NonControversial: return "NonControversial";
        case LabelValue::Excluded: return "Excluded";
    }
    return "?";
}

std::string_view to_string(LabelReason r) {
    switch (r) {
        case LabelReason::InControversialBand: return "InControversialBand";
        case LabelReason::InNonControversialBand: return "InNonControversialBand";
        case LabelReason::URGap: return "URGap";
        case LabelReason::TooFewComments: return "TooFewComments";
    }
    return "?";
}

LabelValue label_value_from_string(std::string_view s) {
    for (auto v : {LabelValue::Controversial, LabelValue::NonControversial, LabelValue::Excluded})
        if (to_string(v) == s) return v;
    throw Error(fmt::format("unknown label value '{}'", s));
}

LabelReason label_reason_from_string(std::string_view s) {
    for (auto r : {LabelReason::InControversialBand, LabelReason::InNonControversialBand,
                   LabelReason::URGap, LabelReason::TooFewComments})
        if (to_string(r) == s) return r;
    throw Error(fmt::format("unknown label reason '{}'", s));
}

json to_json(const LabelConfig& cfg) {
    return json{{"min_comments", cfg.min_comments},
                {"controversial_lo", cfg.controversial_lo},
                {"controversial_hi", cfg.controversial_hi},
                {"noncontroversial_lo", cfg.noncontroversial_lo},
                {"noncontroversial_hi", cfg.noncontroversial_hi}};
}

LabelConfig label_config_from_json(const json& j) {
    LabelConfig cfg;
    cfg.min_comments = j.at("min_comments").get<int>();
    cfg.controversial_lo = j.at("controversial_lo").get<double>();
    cfg.controversial_hi = j.at("controversial_hi").get<double>();
    cfg.noncontroversial_lo = j.at("noncontroversial_lo").get<double>();
    cfg.noncontroversial_hi = j.at("noncontroversial_hi").get<double>();
    return cfg;
}

std::string label_config_hash(const LabelConfig& cfg) { return sha256_hex(to_json(cfg).dump()); }

Label label_post(const ThreadRecord& rec, const LabelConfig& cfg) {
    // Every comment counts toward the engagement filter, deleted authors included.
    if (rec.comments.size() < static_cast<std::size_t>(std::max(cfg.min_comments, 0)))
        return {LabelValue::Excluded, LabelReason::TooFewComments};
    const double ur = rec.upvote_ratio;
    if (ur >= cfg.controversial_lo && ur <= cfg.controversial_hi)
        return {LabelValue::Controversial, LabelReason::InControversialBand};
    if (ur >= cfg.noncontroversial_lo && ur <= cfg.noncontroversial_hi)
        return {LabelValue::NonControversial, LabelReason::InNonControversialBand};
    return {LabelValue::Excluded, LabelReason::URGap};
}

// ---------------------------------------------------------------------------

namespace {

std::string text_field(const json& j, const char* key) {
    const auto& v = j.at(key);
    if (v.is_null()) return {};
    if (!v.is_string()) throw Error(fmt::format("field '{}' must be a string", key));
    return v.get<std::string>();
}

std::string author_field(const json& j) {
    const auto& v = j.at("author");
    if (v.is_null()) return std::string(kDeletedAuthor);
    if (!v.is_string()) throw Error("field 'author' must be a string");
    return v.get<std::string>();
}

std::int64_t timestamp_field(const json& j) {
    const auto& v = j.at("created_utc");
    if (v.is_number_integer()) return v.get<std::int64_t>();
    if (v.is_number_float()) {
        const double d = v.get<double>();
        if (std::isfinite(d) && d == std::floor(d)) return static_cast<std::int64_t>(d);
    }
    throw Error("field 'created_utc' must be an integer number of seconds");
}

}  // namespace

ThreadRecord thread_from_json(const json& j) {
    if (!j.is_object()) throw Error("thread line is not a JSON object");
    ThreadRecord rec;
    const auto& pid = j.at("post_id");
    if (!pid.is_string()) throw Error("field 'post_id' must be a string");
    rec.post_id = pid.get<std::string>();
    rec.subreddit = text_field(j, "subreddit");
    rec.title = text_field(j, "title");
    rec.selftext = text_field(j, "selftext");
    rec.author = author_field(j);
    rec.created_utc = timestamp_field(j);
    const auto& ur = j.at("upvote_ratio");
    if (!ur.is_number()) throw Error("field 'upvote_ratio' must be a number");
    rec.upvote_ratio = ur.get<double>();
    const auto& cs = j.at("comments");
    if (!cs.is_array()) throw Error("field 'comments' must be an array");
    rec.comments.reserve(cs.size());
    for (const auto& c : cs) {
        if (!c.is_object()) throw Error("comment entry is not an object");
        CommentRecord cr;
        cr.comment_id = c.at("comment_id").get<std::string>();
        cr.parent_id = c.at("parent_id").get<std::string>();
        cr.author = author_field(c);
        cr.body = text_field(c, "body");
        cr.created_utc = timestamp_field(c);
        rec.comments.push_back(std::move(cr));
    }
    return rec;
}

json to_json(const ThreadRecord& rec) {
    json comments = json::array();
    for (const auto& c : rec.comments)
        comments.push_back({{"comment_id", c.comment_id},
                            {"parent_id", c.parent_id},
                            {"author", c.author},
                            {"body", c.body},
                            {"created_utc", c.created_utc}});
    return json{{"post_id", rec.post_id},       {"subreddit", rec.subreddit},
                {"title", rec.title},           {"selftext", rec.selftext},
                {"author", rec.author},         {"created_utc", rec.created_utc},
                {"upvote_ratio", rec.upvote_ratio}, {"comments", std::move(comments)}};
}

std::string validate_record(const ThreadRecord& rec) {
    if (rec.post_id.empty()) return "post_id is empty";
    if (!(rec.upvote_ratio >= 0.0 && rec.upvote_ratio <= 1.0))
        return fmt::format("upvote_ratio {} outside [0,1]", format_double(rec.upvote_ratio));

    std::unordered_map<std::string_view, std::string_view> parent_of;
    parent_of.reserve(rec.comments.size());
    for (const auto& c : rec.comments) {
        if (c.comment_id.empty()) return "comment with empty comment_id";
        if (c.comment_id == rec.post_id)
            return fmt::format("comment_id '{}' collides with post_id", c.comment_id);
        if (c.parent_id == c.comment_id)
            return fmt::format("comment '{}' is its own parent", c.comment_id);
        if (!parent_of.emplace(c.comment_id, c.parent_id).second)
            return fmt::format("duplicate comment_id '{}'", c.comment_id);
    }

    // Walk parent chains; a chain must end at the post or at an unknown id.
    enum class Mark : unsigned char { Unseen, Active, Done };
    std::unordered_map<std::string_view, Mark> mark;
    for (const auto& c : rec.comments) {
        std::vector<std::string_view> walk;
        std::string_view cur = c.comment_id;
        while (true) {
            auto it = parent_of.find(cur);
            if (it == parent_of.end()) break;
            Mark& m = mark[cur];
            if (m == Mark::Done) break;
            if (m == Mark::Active)
                return fmt::format("reply cycle through comment '{}'", cur);
            m = Mark::Active;
            walk.push_back(cur);
            cur = it->second;
        }
        for (auto id : walk) mark[id] = Mark::Done;
    }
    return {};
}

namespace {

void parse_into(const std::filesystem::path& path, ParseResult& out,
                std::unordered_map<std::string, std::size_t>& index_by_id) {
    std::ifstream in(path);
    if (!in) throw Error(fmt::format("cannot read thread dump '{}'", path.string()));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        ThreadRecord rec;
        try {
            rec = thread_from_json(json::parse(line));
        } catch (const std::exception& e) {
            out.errors.push_back({path.string(), lineno, e.what()});
            continue;
        }
        if (auto problem = validate_record(rec); !problem.empty()) {
            out.errors.push_back({path.string(), lineno, std::move(problem)});
            continue;
        }
        std::unordered_set<std::string_view> ids;
        ids.insert(rec.post_id);
        for (const auto& c : rec.comments) ids.insert(c.comment_id);
        std::size_t orphans = 0;
        for (const auto& c : rec.comments)
            if (!ids.contains(c.parent_id)) ++orphans;
        if (orphans > 0)
            out.warnings.push_back(
                {path.string(), lineno,
                 fmt::format("post '{}': {} comment(s) reference a parent outside the thread",
                             rec.post_id, orphans)});

        auto [it, inserted] = index_by_id.emplace(rec.post_id, out.records.size());
        if (inserted) {
            out.records.push_back(std::move(rec));
        } else {
            out.warnings.push_back(
                {path.string(), lineno,
                 fmt::format("duplicate post_id '{}'; keeping this occurrence", rec.post_id)});
            out.records[it->second] = std::move(rec);
        }
    }
}

}  // namespace

ParseResult parse_dump(const std::filesystem::path& path) { return parse_dumps({path}); }

ParseResult parse_dumps(const std::vector<std::filesystem::path>& paths) {
    ParseResult out;
    std::unordered_map<std::string, std::size_t> index_by_id;
    for (const auto& p : paths) parse_into(p, out, index_by_id);
    return out;
}

// ---------------------------------------------------------------------------

void store_write(const std::filesystem::path& dir, const LabeledStore& store) {
    if (store.records.size() != store.labels.size())
        throw Error("store_write: records and labels differ in length");
    std::filesystem::create_directories(dir);
    const auto records_path = dir / "records.jsonl";
    {
        std::ofstream out(records_path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(fmt::format("cannot write '{}'", records_path.string()));
        for (std::size_t i = 0; i < store.records.size(); ++i) {
            json line{{"record", to_json(store.records[i])},
                      {"label",
                       {{"value", to_string(store.labels[i].value)},
                        {"reason", to_string(store.labels[i].reason)}}}};
            out << line.dump() << '\n';
        }
    }
    json manifest{{"format_version", kStoreFormatVersion},
                  {"record_count", store.records.size()},
                  {"label_config", to_json(store.label_config)},
                  {"label_config_hash", label_config_hash(store.label_config)},
                  {"records_sha256", sha256_file(records_path)}};
    std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    out << manifest.dump(2) << '\n';
}

LabeledStore store_read(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path))
        throw MissingArtifactError(
            fmt::format("no post store at '{}' (manifest.json missing)", dir.string()), "ingest");
    json manifest;
    {
        std::ifstream in(manifest_path);
        manifest = json::parse(in);
    }
    const int version = manifest.at("format_version").get<int>();
    if (version != kStoreFormatVersion)
        throw Error(fmt::format("store '{}' has format version {}, this build reads version {}",
                                dir.string(), version, kStoreFormatVersion));
    LabeledStore store;
    store.label_config = label_config_from_json(manifest.at("label_config"));
    const auto expected = manifest.at("record_count").get<std::size_t>();

    std::ifstream in(dir / "records.jsonl");
    if (!in) throw Error(fmt::format("store '{}' is missing records.jsonl", dir.string()));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = json::parse(line);
        store.records.push_back(thread_from_json(j.at("record")));
        const auto& l = j.at("label");
        store.labels.push_back({label_value_from_string(l.at("value").get<std::string>()),
                                label_reason_from_string(l.at("reason").get<std::string>())});
    }
    if (store.records.size() != expected)
        throw Error(fmt::format("store '{}' manifest lists {} records but {} were read",
                                dir.string(), expected, store.records.size()));
    return store;
}

// ---------------------------------------------------------------------------

std::string SummaryTable::ratio_string() const {
    if (!nc_per_c) return "n/a";
    return "1 : " + format_fixed(*nc_per_c, 2);
}

std::string SummaryTable::render_markdown() const {
    std::string s;
    s += "| Description | Stats |\n|---|---|\n";
    s += fmt::format("| Total posts | {} |\n", total);
    s += fmt::format("| Controversial posts (C) | {} |\n", controversial);
    s += fmt::format("| Non-controversial posts (NC) | {} |\n", noncontroversial);
    s += fmt::format("| Excluded posts | {} |\n", excluded);
    s += fmt::format("| Excluded: upvote ratio outside both bands | {} |\n", excluded_ur_gap);
    s += fmt::format("| Excluded: too few comments | {} |\n", excluded_too_few_comments);
    s += fmt::format("| Ratio of C to NC | {} |\n", ratio_string());
    s += fmt::format("| Total comments | {} |\n", total_comments);
    s += fmt::format("| Median comments per post | {} |\n", format_double(median_comments));
    return s;
}

SummaryTable dataset_summary(const LabeledStore& store) {
    SummaryTable t;
    t.total = store.records.size();
    std::vector<std::size_t> counts;
    for (std::size_t i = 0; i < store.records.size(); ++i) {
        const Label& l = store.labels[i];
        switch (l.value) {
            case LabelValue::Controversial: ++t.controversial; break;
            case LabelValue::NonControversial: ++t.noncontroversial; break;
            case LabelValue::Excluded:
                ++t.excluded;
                if (l.reason == LabelReason::TooFewComments)
                    ++t.excluded_too_few_comments;
                else
                    ++t.excluded_ur_gap;
                break;
        }
        if (l.included()) {
            counts.push_back(store.records[i].comments.size());
            t.total_comments += store.records[i].comments.size();
        }
    }
    if (t.controversial > 0)
        t.nc_per_c = static_cast<double>(t.noncontroversial) / static_cast<double>(t.controversial);
    if (!counts.empty()) {
        std::sort(counts.begin(), counts.end());
        const std::size_t m = counts.size() / 2;
        t.median_comments = counts.size() % 2 == 1
                                ? static_cast<double>(counts[m])
                                : 0.5 * static_cast<double>(counts[m - 1] + counts[m]);
    }
    return t;
}

}  // namespace topocontro
