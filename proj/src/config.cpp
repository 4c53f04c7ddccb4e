#include "topocontro/config.hpp"

#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "topocontro/common.hpp"
#include "topocontro/hash.hpp"

namespace topocontro {

using nlohmann::json;

// ---------------------------------------------------------------------------
// TOML subset

namespace {

class TomlLine {
public:
    TomlLine(std::string_view s, std::string_view source, std::size_t line)
        : s_(s), source_(source), line_(line) {}

    [[noreturn]] void fail(std::string_view what) const {
        throw Error(fmt::format("{}:{}: {}", source_, line_, what));
    }

    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
    }
    bool at_end() {
        skip_ws();
        return pos_ >= s_.size() || s_[pos_] == '#';
    }
    bool eat(char c) {
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    std::string key() {
        skip_ws();
        std::string k;
        while (pos_ < s_.size()) {
            const char c = s_[pos_];
            if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.') {
                k += c;
                ++pos_;
            } else {
                break;
            }
        }
        if (k.empty() || k.front() == '.' || k.back() == '.' || k.find("..") != std::string::npos)
            fail("expected a bare key");
        return k;
    }

    json value() {
        skip_ws();
        if (pos_ >= s_.size()) fail("missing value");
        const char c = s_[pos_];
        if (c == '"') return basic_string();
        if (c == '\'') return literal_string();
        if (c == '[') {
            ++pos_;
            json arr = json::array();
            if (eat(']')) return arr;
            while (true) {
                auto v = value();
                if (v.is_array()) fail("nested arrays are not supported");
                arr.push_back(std::move(v));
                if (eat(']')) return arr;
                if (!eat(',')) fail("expected ',' or ']' in array");
                if (eat(']')) return arr;  // trailing comma
            }
        }
        std::string tok;
        while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ']' && s_[pos_] != '#' && s_[pos_] != ' ' &&
               s_[pos_] != '\t')
            tok += s_[pos_++];
        if (tok == "true") return true;
        if (tok == "false") return false;
        std::string digits;
        for (char ch : tok)
            if (ch != '_') digits += ch;
        const bool is_float = digits.find_first_of(".eE") != std::string::npos || digits == "inf" ||
                              digits == "+inf" || digits == "-inf";
        try {
            if (is_float) return parse_double(digits);
            return parse_int(digits);
        } catch (const Error&) {
            fail(fmt::format("cannot parse value '{}'", tok));
        }
    }

private:
    json basic_string() {
        ++pos_;
        std::string out;
        while (pos_ < s_.size() && s_[pos_] != '"') {
            char c = s_[pos_++];
            if (c == '\\') {
                if (pos_ >= s_.size()) fail("unterminated escape");
                const char e = s_[pos_++];
                switch (e) {
                    case 'n': c = '\n'; break;
                    case 't': c = '\t'; break;
                    case '"': c = '"'; break;
                    case '\\': c = '\\'; break;
                    default: fail(fmt::format("unsupported escape '\\{}'", e));
                }
            }
            out += c;
        }
        if (pos_ >= s_.size()) fail("unterminated string");
        ++pos_;
        return out;
    }

    json literal_string() {
        ++pos_;
        const auto end = s_.find('\'', pos_);
        if (end == std::string_view::npos) fail("unterminated string");
        std::string out(s_.substr(pos_, end - pos_));
        pos_ = end + 1;
        return out;
    }

    std::string_view s_;
    std::string_view source_;
    std::size_t line_;
    std::size_t pos_ = 0;
};

}  // namespace

json parse_toml_subset(std::string_view text, std::string_view source) {
    json out = json::object();
    std::string section;
    std::size_t lineno = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        TomlLine p(line, source, lineno);
        if (p.at_end()) continue;
        if (p.eat('[')) {
            if (p.eat('[')) p.fail("arrays of tables are not supported");
            section = p.key();
            if (!p.eat(']')) p.fail("expected ']'");
            if (!p.at_end()) p.fail("trailing characters after section header");
            continue;
        }
        const auto k = p.key();
        if (!p.eat('=')) p.fail("expected '='");
        auto v = p.value();
        if (!p.at_end()) p.fail("trailing characters after value");
        const auto full = section.empty() ? k : section + "." + k;
        if (out.contains(full)) p.fail(fmt::format("duplicate key '{}'", full));
        out[full] = std::move(v);
    }
    return out;
}

// ---------------------------------------------------------------------------
// RunConfig

FeatureConfig RunConfig::feature_config() const {
    FeatureConfig f;
    f.tda = tda;
    f.d_cap = d_cap;
    f.d_cap_percentile = d_cap_percentile;
    f.pooling = pooling;
    f.jobs = effective_jobs();
    return f;
}

EvalConfig RunConfig::eval_config() const {
    EvalConfig e;
    e.train_scenarios = scenarios;
    e.train_frac = train_frac;
    e.oversample_factor = oversample_factor;
    e.standardize = standardize;
    e.grid = grid;
    e.training = training;
    e.jobs = effective_jobs();
    return e;
}

unsigned RunConfig::effective_jobs() const { return jobs ? jobs : default_jobs(); }

std::vector<std::uint64_t> RunConfig::evaluation_seeds() const {
    std::vector<std::uint64_t> s;
    for (int i = 0; i < eval_seeds; ++i) s.push_back(seed + static_cast<std::uint64_t>(i));
    return s;
}

namespace {

json auto_or(const std::optional<double>& v) { return v ? json(*v) : json("auto"); }

std::string joined(const auto& items) {
    std::string s;
    for (const auto& i : items) {
        if (!s.empty()) s += ',';
        s += i;
    }
    return s;
}

}  // namespace

json to_flat_json(const RunConfig& c) {
    std::vector<std::string> sets, models, scenarios;
    for (const auto& s : c.feature_sets) sets.push_back(s.name());
    for (auto m : c.models) models.emplace_back(to_string(m));
    for (auto s : c.scenarios) scenarios.emplace_back(to_string(s));
    const auto& t = c.training;
    const auto& sy = c.synth;
    return {
        {"seed", c.seed},
        {"jobs", c.jobs},
        {"ingest.min_comments", c.labels.min_comments},
        {"ingest.controversial_lo", c.labels.controversial_lo},
        {"ingest.controversial_hi", c.labels.controversial_hi},
        {"ingest.noncontroversial_lo", c.labels.noncontroversial_lo},
        {"ingest.noncontroversial_hi", c.labels.noncontroversial_hi},
        {"tda.metric", to_string(c.tda.metric)},
        {"tda.source", to_string(c.tda.source)},
        {"tda.eps_max", auto_or(c.tda.eps_max)},
        {"tda.resolution", c.tda.image.resolution},
        {"tda.sigma", auto_or(c.tda.image.sigma)},
        {"tda.essential", c.tda.image.essential == EssentialBars::Extend ? "extend" : "drop"},
        {"tda.essential_factor", c.tda.image.essential_factor},
        {"tda.d_cap", auto_or(c.d_cap)},
        {"tda.d_cap_percentile", c.d_cap_percentile},
        {"features.sets", sets},
        {"features.pooling", c.pooling == PoolingMode::PostAndComments ? "post_and_comments" : "comments_only"},
        {"features.post_embeddings", c.post_embeddings},
        {"features.comment_embeddings", c.comment_embeddings},
        {"adaboost.n_estimators", t.adaboost.n_estimators},
        {"adaboost.learning_rate", t.adaboost.learning_rate},
        {"random_forest.n_estimators", t.random_forest.n_estimators},
        {"random_forest.max_features", to_string(t.random_forest.max_features)},
        {"random_forest.max_depth", t.random_forest.max_depth.value_or(0)},
        {"random_forest.bootstrap", t.random_forest.bootstrap},
        {"mlp.hidden_sizes", t.mlp.hidden_sizes},
        {"mlp.activation", to_string(t.mlp.activation)},
        {"mlp.optimizer", to_string(t.mlp.optimizer)},
        {"mlp.learning_rate", t.mlp.learning_rate},
        {"mlp.l2_alpha", t.mlp.l2_alpha},
        {"mlp.epochs", t.mlp.epochs},
        {"mlp.batch_size", t.mlp.batch_size},
        {"eval.models", models},
        {"eval.scenarios", scenarios},
        {"eval.seeds", c.eval_seeds},
        {"eval.train_frac", c.train_frac},
        {"eval.oversample_factor", c.oversample_factor},
        {"eval.standardize", c.standardize},
        {"eval.grid", c.grid},
        {"synth.n_posts", sy.n_posts},
        {"synth.controversial_frac", sy.controversial_frac},
        {"synth.min_users", sy.min_users},
        {"synth.max_users", sy.max_users},
        {"synth.max_filler", sy.max_filler},
        {"synth.min_extra_edges", sy.min_extra_edges},
        {"synth.max_extra_edges", sy.max_extra_edges},
        {"synth.controversial_noise", sy.controversial_noise},
        {"synth.noncontroversial_noise", sy.noncontroversial_noise},
        {"synth.deleted_prob", sy.deleted_prob},
        {"synth.embedding_dim", c.embedding_dim},
    };
}

namespace {

class FlatReader {
public:
    explicit FlatReader(const json& j) : j_(j) {}

    [[noreturn]] void fail(const std::string& key, std::string_view what) const {
        throw Error(fmt::format("config key '{}': {}", key, what));
    }

    double number(const std::string& k) const {
        const auto& v = j_.at(k);
        if (!v.is_number()) fail(k, "expected a number");
        return v.get<double>();
    }
    std::int64_t integer(const std::string& k) const {
        const auto& v = j_.at(k);
        if (!v.is_number_integer()) fail(k, "expected an integer");
        return v.get<std::int64_t>();
    }
    std::int64_t nonneg(const std::string& k) const {
        const auto v = integer(k);
        if (v < 0) fail(k, "must be >= 0");
        return v;
    }
    bool boolean(const std::string& k) const {
        const auto& v = j_.at(k);
        if (!v.is_boolean()) fail(k, "expected true or false");
        return v.get<bool>();
    }
    std::string string(const std::string& k) const {
        const auto& v = j_.at(k);
        if (!v.is_string()) fail(k, "expected a string");
        return v.get<std::string>();
    }
    std::optional<double> auto_number(const std::string& k) const {
        const auto& v = j_.at(k);
        if (v.is_string() && v.get<std::string>() == "auto") return std::nullopt;
        if (!v.is_number()) fail(k, "expected \"auto\" or a number");
        return v.get<double>();
    }
    /// Array of strings, or one comma-separated string.
    std::vector<std::string> list(const std::string& k) const {
        const auto& v = j_.at(k);
        std::vector<std::string> out;
        if (v.is_string()) {
            std::string cur;
            for (char c : v.get<std::string>() + ",") {
                if (c == ',') {
                    if (!cur.empty()) out.push_back(cur);
                    cur.clear();
                } else if (c != ' ') {
                    cur += c;
                }
            }
            return out;
        }
        if (!v.is_array()) fail(k, "expected an array of strings");
        for (const auto& e : v) {
            if (!e.is_string()) fail(k, "expected an array of strings");
            out.push_back(e.get<std::string>());
        }
        return out;
    }
    template <typename F>
    auto parsed(const std::string& k, F&& f) const {
        try {
            return f(string(k));
        } catch (const Error& e) {
            fail(k, e.what());
        }
    }

private:
    const json& j_;
};

}  // namespace

RunConfig run_config_from_flat(const json& flat) {
    json merged = to_flat_json(RunConfig{});
    for (const auto& [k, v] : flat.items()) {
        if (!merged.contains(k)) throw Error(fmt::format("unknown config key '{}'", k));
        merged[k] = v;
    }
    const FlatReader r(merged);
    RunConfig c;
    c.seed = static_cast<std::uint64_t>(r.nonneg("seed"));
    c.jobs = static_cast<unsigned>(r.nonneg("jobs"));

    c.labels.min_comments = static_cast<int>(r.nonneg("ingest.min_comments"));
    c.labels.controversial_lo = r.number("ingest.controversial_lo");
    c.labels.controversial_hi = r.number("ingest.controversial_hi");
    c.labels.noncontroversial_lo = r.number("ingest.noncontroversial_lo");
    c.labels.noncontroversial_hi = r.number("ingest.noncontroversial_hi");
    if (!(c.labels.controversial_lo <= c.labels.controversial_hi &&
          c.labels.noncontroversial_lo <= c.labels.noncontroversial_hi))
        throw Error("config: label band bounds are inverted");

    c.tda.metric = r.parsed("tda.metric", distance_mode_from_string);
    c.tda.source = r.parsed("tda.source", filtration_source_from_string);
    c.tda.eps_max = r.auto_number("tda.eps_max");
    c.tda.image.resolution = static_cast<std::size_t>(r.nonneg("tda.resolution"));
    if (c.tda.image.resolution == 0) r.fail("tda.resolution", "must be >= 1");
    c.tda.image.sigma = r.auto_number("tda.sigma");
    if (c.tda.image.sigma && *c.tda.image.sigma <= 0) r.fail("tda.sigma", "must be > 0");
    c.tda.image.essential = r.parsed("tda.essential", [](const std::string& s) {
        if (s == "extend") return EssentialBars::Extend;
        if (s == "drop") return EssentialBars::Drop;
        throw Error("expected \"extend\" or \"drop\"");
    });
    c.tda.image.essential_factor = r.number("tda.essential_factor");
    c.d_cap = r.auto_number("tda.d_cap");
    if (c.d_cap && *c.d_cap <= 0) r.fail("tda.d_cap", "must be > 0");
    c.d_cap_percentile = r.number("tda.d_cap_percentile");
    if (!(c.d_cap_percentile > 0 && c.d_cap_percentile <= 100)) r.fail("tda.d_cap_percentile", "must be in (0, 100]");

    c.feature_sets.clear();
    try {
        for (const auto& s : r.list("features.sets")) c.feature_sets.push_back(FeatureSet::parse(s));
    } catch (const Error& e) {
        r.fail("features.sets", e.what());
    }
    if (c.feature_sets.empty()) r.fail("features.sets", "at least one feature set is required");
    c.pooling = r.parsed("features.pooling", [](const std::string& s) {
        if (s == "post_and_comments") return PoolingMode::PostAndComments;
        if (s == "comments_only") return PoolingMode::CommentsOnly;
        throw Error("expected \"post_and_comments\" or \"comments_only\"");
    });
    c.post_embeddings = r.string("features.post_embeddings");
    c.comment_embeddings = r.string("features.comment_embeddings");

    auto& t = c.training;
    t.adaboost.n_estimators = static_cast<int>(r.integer("adaboost.n_estimators"));
    t.adaboost.learning_rate = r.number("adaboost.learning_rate");
    t.random_forest.n_estimators = static_cast<int>(r.integer("random_forest.n_estimators"));
    t.random_forest.max_features = r.parsed("random_forest.max_features", max_features_from_string);
    const auto depth = r.nonneg("random_forest.max_depth");
    t.random_forest.max_depth = depth == 0 ? std::nullopt : std::optional<int>(static_cast<int>(depth));
    t.random_forest.bootstrap = r.boolean("random_forest.bootstrap");
    t.mlp.hidden_sizes.clear();
    for (const auto& h : merged.at("mlp.hidden_sizes")) {
        if (!h.is_number_integer()) r.fail("mlp.hidden_sizes", "expected an array of integers");
        t.mlp.hidden_sizes.push_back(h.get<int>());
    }
    t.mlp.activation = r.parsed("mlp.activation", activation_from_string);
    t.mlp.optimizer = r.parsed("mlp.optimizer", optimizer_from_string);
    t.mlp.learning_rate = r.number("mlp.learning_rate");
    t.mlp.l2_alpha = r.number("mlp.l2_alpha");
    t.mlp.epochs = static_cast<int>(r.integer("mlp.epochs"));
    t.mlp.batch_size = static_cast<int>(r.integer("mlp.batch_size"));
    try {
        t.validate();
    } catch (const Error& e) {
        throw Error(fmt::format("config [adaboost|random_forest|mlp]: {}", e.what()));
    }

    c.models.clear();
    try {
        for (const auto& m : r.list("eval.models")) c.models.push_back(model_kind_from_string(m));
    } catch (const Error& e) {
        r.fail("eval.models", e.what());
    }
    if (c.models.empty()) r.fail("eval.models", "at least one model is required");
    c.scenarios.clear();
    try {
        for (const auto& s : r.list("eval.scenarios")) c.scenarios.push_back(train_scenario_from_string(s));
    } catch (const Error& e) {
        r.fail("eval.scenarios", e.what());
    }
    if (c.scenarios.empty()) r.fail("eval.scenarios", "at least one scenario is required");
    c.eval_seeds = static_cast<int>(r.integer("eval.seeds"));
    if (c.eval_seeds < 1) r.fail("eval.seeds", "must be >= 1");
    c.train_frac = r.number("eval.train_frac");
    c.oversample_factor = r.number("eval.oversample_factor");
    c.standardize = r.boolean("eval.standardize");
    c.grid = r.boolean("eval.grid");

    auto& sy = c.synth;
    sy.n_posts = static_cast<std::size_t>(r.nonneg("synth.n_posts"));
    sy.controversial_frac = r.number("synth.controversial_frac");
    if (!(sy.controversial_frac > 0.0 && sy.controversial_frac < 1.0))
        r.fail("synth.controversial_frac", "must be in (0, 1)");
    sy.min_users = static_cast<int>(r.integer("synth.min_users"));
    sy.max_users = static_cast<int>(r.integer("synth.max_users"));
    sy.max_filler = static_cast<int>(r.integer("synth.max_filler"));
    sy.min_extra_edges = static_cast<int>(r.integer("synth.min_extra_edges"));
    sy.max_extra_edges = static_cast<int>(r.integer("synth.max_extra_edges"));
    sy.controversial_noise = r.number("synth.controversial_noise");
    sy.noncontroversial_noise = r.number("synth.noncontroversial_noise");
    sy.deleted_prob = r.number("synth.deleted_prob");
    sy.seed = c.seed;
    c.embedding_dim = static_cast<std::size_t>(r.nonneg("synth.embedding_dim"));
    try {
        sy.validate();
    } catch (const Error& e) {
        throw Error(fmt::format("config [synth]: {}", e.what()));
    }
    return c;
}

json load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(fmt::format("cannot read config file '{}'", path.string()));
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return parse_toml_subset(text, path.string());
}

std::string config_hash(const RunConfig& cfg) {
    auto flat = to_flat_json(cfg);
    flat.erase("jobs");
    return sha256_hex(flat.dump());
}

std::string render_toml(const RunConfig& cfg) {
    const auto flat = to_flat_json(cfg);
    auto scalar = [](const json& v) -> std::string {
        if (v.is_string()) return json(v.get<std::string>()).dump();
        if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
        if (v.is_number_float()) {
            auto s = format_double(v.get<double>());
            if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
            return s;
        }
        return v.dump();
    };
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
    for (const auto& [k, v] : flat.items()) {
        const auto dot = k.find('.');
        const auto sec = dot == std::string::npos ? "" : k.substr(0, dot);
        const auto key = dot == std::string::npos ? k : k.substr(dot + 1);
        std::string rendered;
        if (v.is_array()) {
            std::vector<std::string> parts;
            for (const auto& e : v) parts.push_back(scalar(e));
            rendered = "[" + joined(parts) + "]";
        } else {
            rendered = scalar(v);
        }
        sections[sec].emplace_back(key, rendered);
    }
    std::string out;
    for (const auto& [sec, kvs] : sections) {
        if (!sec.empty()) out += "\n[" + sec + "]\n";
        for (const auto& [k, v] : kvs) out += k + " = " + v + "\n";
    }
    return out;
}

}  // namespace topocontro
