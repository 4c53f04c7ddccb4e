#include "topocontro/cli.hpp"

#include <deque>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/logger.h>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/ostream_sink.h>

#include "topocontro/common.hpp"
#include "topocontro/config.hpp"
#include "topocontro/eval.hpp"
#include "topocontro/features.hpp"
#include "topocontro/graph.hpp"
#include "topocontro/hash.hpp"
#include "topocontro/ingest.hpp"
#include "topocontro/learn.hpp"
#include "topocontro/motifs.hpp"
#include "topocontro/synth.hpp"
#include "topocontro/tda.hpp"

namespace topocontro {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Human-readable lines on stderr plus a JSON-lines log file next to the outputs.
class Log {
public:
    Log(std::ostream& err, std::string command) : command_(std::move(command)) {
        auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
        human_ = std::make_shared<spdlog::logger>("topocontro", sink);
        human_->set_pattern("[%l] %v");
    }

    void attach_file(const fs::path& path) {
        fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
        auto sink = std::make_shared<spdlog::sinks::basic_file_sink_mt>(path.string(), true);
        json_ = std::make_shared<spdlog::logger>("topocontro-json", sink);
        json_->set_pattern(fmt::format(R"({{"time":"%Y-%m-%dT%H:%M:%S.%eZ","level":"%l","command":"{}","message":%v}})",
                                       command_),
                           spdlog::pattern_time_type::utc);
        json_->flush_on(spdlog::level::trace);
    }

    void info(const std::string& msg) { emit(spdlog::level::info, msg); }
    void warn(const std::string& msg) { emit(spdlog::level::warn, msg); }
    void error(const std::string& msg) { emit(spdlog::level::err, msg); }

private:
    void emit(spdlog::level::level_enum lvl, const std::string& msg) {
        human_->log(lvl, spdlog::string_view_t(msg));
        if (json_) {
            const auto quoted = json(msg).dump();
            json_->log(lvl, spdlog::string_view_t(quoted));
        }
    }

    std::string command_;
    std::shared_ptr<spdlog::logger> human_;
    std::shared_ptr<spdlog::logger> json_;
};

enum class Kind { Int, Number, AutoNumber, String, Flag };

struct Override {
    CLI::Option* option = nullptr;
    std::string key;
    Kind kind = Kind::String;
    std::string* raw = nullptr;
    bool* flag = nullptr;
};

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    unsigned jobs = 0;
    std::string out;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* jobs_opt = nullptr;
    CLI::Option* out_opt = nullptr;
    std::vector<Override> overrides;
};

// Storage for option values that must outlive the parse.
class Registry {
public:
    void add_common(CLI::App* sub, Common& c, std::string out_help, bool out_required) {
        sub->add_option("--config", c.config, "TOML config file")->check(CLI::ExistingFile);
        c.seed_opt = sub->add_option("--seed", c.seed, "master seed");
        c.jobs_opt = sub->add_option("--jobs", c.jobs, "worker threads (0 = all cores)");
        c.out_opt = sub->add_option("--out", c.out, std::move(out_help));
        if (out_required) c.out_opt->required();
    }

    void add(CLI::App* sub, Common& c, const std::string& name, const std::string& key, Kind kind,
             const std::string& help) {
        Override o;
        o.key = key;
        o.kind = kind;
        if (kind == Kind::Flag) {
            o.flag = &flags_.emplace_back(false);
            o.option = sub->add_flag(name, *o.flag, help);
        } else {
            o.raw = &strings_.emplace_back();
            o.option = sub->add_option(name, *o.raw, help);
        }
        c.overrides.push_back(o);
    }

private:
    std::deque<std::string> strings_;
    std::deque<bool> flags_;
};

json override_value(const Override& o) {
    switch (o.kind) {
        case Kind::Int: return parse_int(*o.raw);
        case Kind::Number: return parse_double(*o.raw);
        case Kind::AutoNumber:
            if (*o.raw == "auto") return "auto";
            return parse_double(*o.raw);
        case Kind::String: return *o.raw;
        case Kind::Flag: return *o.flag;
    }
    return nullptr;
}

struct Context {
    std::string command;
    std::vector<std::string> argv;
    RunConfig cfg;
    std::string hash;
    Log* log = nullptr;
};

// File config, then flags; flags win.
RunConfig resolve_config(const Common& c) {
    json flat = json::object();
    if (!c.config.empty()) flat = load_config_file(c.config);
    for (const auto& o : c.overrides) {
        if (o.option->count() == 0) continue;
        try {
            flat[o.key] = override_value(o);
        } catch (const Error& e) {
            throw Error(fmt::format("option {}: {}", o.option->get_name(), e.what()));
        }
    }
    if (c.seed_opt->count()) flat["seed"] = c.seed;
    if (c.jobs_opt->count()) flat["jobs"] = c.jobs;
    return run_config_from_flat(flat);
}

json file_entry(const fs::path& p) { return {{"path", p.string()}, {"sha256", sha256_file(p)}}; }

json store_inputs(const fs::path& store) {
    return json::array({file_entry(store / "manifest.json"), file_entry(store / "records.jsonl")});
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
    out << j.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
    out << text;
}

void write_manifest(const fs::path& path, const Context& ctx, json inputs, json outputs, json extra = json::object()) {
    auto flat = to_flat_json(ctx.cfg);
    flat.erase("jobs");
    json m{{"command", ctx.command},
           {"argv", ctx.argv},
           {"tool_version", kToolVersion},
           {"config_sha256", ctx.hash},
           {"config", flat},
           {"seed", ctx.cfg.seed},
           {"inputs", std::move(inputs)},
           {"outputs", std::move(outputs)}};
    for (auto& [k, v] : extra.items()) m[k] = v;
    write_json(path, m);
    ctx.log->info(fmt::format("wrote {}", path.string()));
}

fs::path sibling_manifest(const fs::path& file) {
    auto p = file;
    p += ".manifest.json";
    return p;
}

std::string safe_name(std::string_view id) {
    std::string s(id);
    for (auto& ch : s)
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' || ch == '.')) ch = '_';
    return s;
}

std::vector<PostStructure> analyze_all(const LabeledStore& store, const TdaConfig& tda, unsigned jobs) {
    std::vector<PostStructure> out(store.records.size());
    parallel_for(out.size(), jobs, [&](std::size_t i) { out[i] = analyze_post(store.records[i], tda); });
    return out;
}

// ---------------------------------------------------------------------------

struct IngestArgs {
    std::vector<std::string> inputs;
};

int cmd_ingest(Context& ctx, const IngestArgs& a, const fs::path& out_dir) {
    std::vector<fs::path> paths(a.inputs.begin(), a.inputs.end());
    auto parsed = parse_dumps(paths);
    for (const auto& e : parsed.errors) ctx.log->warn(fmt::format("{}:{}: {}", e.source, e.line, e.message));
    for (const auto& w : parsed.warnings) ctx.log->warn(fmt::format("{}:{}: {}", w.source, w.line, w.message));
    if (parsed.records.empty()) throw Error("no valid records in the input");

    LabeledStore store;
    store.label_config = ctx.cfg.labels;
    store.records = std::move(parsed.records);
    for (const auto& r : store.records) store.labels.push_back(label_post(r, store.label_config));
    store_write(out_dir, store);

    const auto summary = dataset_summary(store);
    write_text(out_dir / "summary.md", summary.render_markdown());
    auto issues = [](const std::vector<ParseIssue>& v) {
        json arr = json::array();
        for (const auto& i : v) arr.push_back({{"source", i.source}, {"line", i.line}, {"message", i.message}});
        return arr;
    };
    write_json(out_dir / "parse_report.json",
               {{"records", store.records.size()}, {"errors", issues(parsed.errors)}, {"warnings", issues(parsed.warnings)}});
    ctx.log->info(fmt::format("{} records: {} controversial, {} non-controversial, {} excluded", summary.total,
                              summary.controversial, summary.noncontroversial, summary.excluded));

    json inputs = json::array();
    for (const auto& p : paths) inputs.push_back(file_entry(p));
    write_manifest(out_dir / "ingest.manifest.json", ctx, inputs,
                   {"manifest.json", "records.jsonl", "summary.md", "parse_report.json"},
                   {{"malformed_lines", parsed.errors.size()}});
    return 0;
}

// ---------------------------------------------------------------------------

struct StoreArgs {
    std::string store;
    bool export_edgelists = false;
};

int cmd_graphs(Context& ctx, const StoreArgs& a, const fs::path& out_dir) {
    const auto store = store_read(a.store);
    std::vector<InteractionGraph> graphs(store.records.size());
    parallel_for(graphs.size(), ctx.cfg.effective_jobs(),
                 [&](std::size_t i) { graphs[i] = build_interaction_graph(store.records[i]); });

    std::ofstream csv(out_dir / "graphs.csv", std::ios::binary | std::ios::trunc);
    csv << "post_id,label,nodes,directed_edges,undirected_edges,reply_events,deleted_author,"
           "deleted_parent_author,unresolvable_parent,self_replies\n";
    json outputs{"graphs.csv"};
    if (a.export_edgelists) fs::create_directories(out_dir / "edgelists");
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        const auto& g = graphs[i];
        const auto& d = g.diagnostics;
        csv << store.records[i].post_id << ',' << to_string(store.labels[i].value) << ',' << g.node_count() << ','
            << g.edges.size() << ',' << undirected_view(g).edges.size() << ',' << g.event_count() << ','
            << d.deleted_author << ',' << d.deleted_parent_author << ',' << d.unresolvable_parent << ','
            << d.self_replies << '\n';
        if (a.export_edgelists) export_edgelist(g, out_dir / "edgelists" / safe_name(store.records[i].post_id));
    }
    if (a.export_edgelists) outputs.push_back("edgelists/");
    ctx.log->info(fmt::format("built {} interaction graphs", graphs.size()));
    write_manifest(out_dir / "graphs.manifest.json", ctx, store_inputs(a.store), outputs);
    return 0;
}

int cmd_tda(Context& ctx, const StoreArgs& a, const fs::path& out_dir) {
    const auto store = store_read(a.store);
    const auto posts = analyze_all(store, ctx.cfg.tda, ctx.cfg.effective_jobs());

    double d_cap = 0.0;
    if (ctx.cfg.d_cap) {
        d_cap = *ctx.cfg.d_cap;
    } else {
        std::vector<PostStructure> included;
        for (std::size_t i = 0; i < posts.size(); ++i)
            if (store.labels[i].included()) included.push_back(posts[i]);
        d_cap = image_domain_cap(included, ctx.cfg.d_cap_percentile);
    }
    ImageConfig img = ctx.cfg.tda.image;
    img.birth_min = img.death_min = 0.0;
    img.birth_max = img.death_max = d_cap;

    fs::create_directories(out_dir / "diagrams");
    fs::create_directories(out_dir / "images");
    std::ofstream summary(out_dir / "tda_summary.csv", std::ios::binary | std::ios::trunc);
    summary << "post_id,label,h0_bars,h1_bars,h0_essential,h1_essential,max_filtration_value\n";
    for (std::size_t i = 0; i < posts.size(); ++i) {
        const auto& diag = posts[i].diagram;
        const auto name = safe_name(store.records[i].post_id);
        {
            std::ofstream d(out_dir / "diagrams" / (name + ".csv"), std::ios::binary | std::ios::trunc);
            write_diagram_csv(d, diag);
        }
        for (int dim = 0; dim <= 1; ++dim) {
            std::ofstream im(out_dir / "images" / fmt::format("{}_h{}.csv", name, dim), std::ios::binary | std::ios::trunc);
            write_image_csv(im, diagram_to_image(diag, dim, img));
        }
        summary << store.records[i].post_id << ',' << to_string(store.labels[i].value) << ',' << diag.count(0) << ','
                << diag.count(1) << ',' << diag.essential_count(0) << ',' << diag.essential_count(1) << ','
                << format_double(diag.max_filtration_value) << '\n';
    }
    ctx.log->info(fmt::format("computed {} diagrams, image domain [0, {}]", posts.size(), format_double(d_cap)));
    write_manifest(out_dir / "tda.manifest.json", ctx, store_inputs(a.store), {"tda_summary.csv", "diagrams/", "images/"},
                   {{"d_cap", d_cap}, {"sigma", img.effective_sigma()}});
    return 0;
}

int cmd_motifs(Context& ctx, const StoreArgs& a, const fs::path& out_dir) {
    const auto store = store_read(a.store);
    std::vector<TriadCensus> census(store.records.size());
    parallel_for(census.size(), ctx.cfg.effective_jobs(),
                 [&](std::size_t i) { census[i] = triad_census(build_interaction_graph(store.records[i])); });
    std::ofstream csv(out_dir / "census.csv", std::ios::binary | std::ios::trunc);
    write_census_header(csv);
    for (std::size_t i = 0; i < census.size(); ++i) write_census_row(csv, store.records[i].post_id, census[i]);
    ctx.log->info(fmt::format("counted triads of {} graphs", census.size()));
    write_manifest(out_dir / "motifs.manifest.json", ctx, store_inputs(a.store), {"census.csv"});
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_features(Context& ctx, const StoreArgs& a, const fs::path& out_file) {
    const auto store = store_read(a.store);
    const auto set = FeatureSet::merge(ctx.cfg.feature_sets);
    std::optional<EmbeddingTable> post_emb, comment_emb;
    json inputs = store_inputs(a.store);
    if (!ctx.cfg.post_embeddings.empty()) {
        post_emb = load_embeddings(ctx.cfg.post_embeddings, EmbeddingScope::Post);
        inputs.push_back(file_entry(ctx.cfg.post_embeddings));
    }
    if (!ctx.cfg.comment_embeddings.empty()) {
        comment_emb = load_embeddings(ctx.cfg.comment_embeddings, EmbeddingScope::Comment);
        inputs.push_back(file_entry(ctx.cfg.comment_embeddings));
    }
    const auto res = assemble(store, set, ctx.cfg.feature_config(), post_emb ? &*post_emb : nullptr,
                              comment_emb ? &*comment_emb : nullptr);
    for (const auto& w : res.warnings) ctx.log->warn(w);
    if (!out_file.parent_path().empty()) fs::create_directories(out_file.parent_path());
    write_feature_csv(out_file, res.matrix);
    ctx.log->info(fmt::format("{} rows x {} columns ({}) -> {}", res.matrix.size(), res.matrix.columns.size(),
                              set.name(), out_file.string()));
    json sets = json::array();
    for (const auto& s : ctx.cfg.feature_sets) sets.push_back(s.name());
    write_manifest(sibling_manifest(out_file), ctx, inputs, {out_file.filename().string()},
                   {{"feature_sets", sets},
                    {"blocks", set.name()},
                    {"d_cap", res.d_cap},
                    {"missing_post_embedding", res.missing_post_embedding},
                    {"missing_comment_embedding", res.missing_comment_embedding},
                    {"empty_pool", res.empty_pool}});
    return 0;
}

struct ModelArgs {
    std::string input;
    std::string features;
    std::string store;
};

fs::path features_path(const ModelArgs& a) {
    if (!a.features.empty()) return a.features;
    if (a.input.empty()) throw Error("pass a store directory or --features <file>");
    const fs::path p(a.input);
    if (fs::is_directory(p)) return p / "features.csv";
    if (!fs::exists(p)) {
        if (p.extension() == ".csv")
            throw MissingArtifactError(fmt::format("no feature matrix at '{}'", p.string()), "features");
        throw MissingArtifactError(fmt::format("no post store at '{}'", p.string()), "ingest");
    }
    return p;
}

FeatureMatrix read_features(const fs::path& p) {
    if (!fs::exists(p)) throw MissingArtifactError(fmt::format("no feature matrix at '{}'", p.string()), "features");
    return read_feature_csv(p);
}

struct TrainArgs : ModelArgs {
    std::string model = "adaboost";
    std::string set;
    std::string scenario = "C";
};

int cmd_train(Context& ctx, const TrainArgs& a, const fs::path& out_dir) {
    const auto fpath = features_path(a);
    const auto matrix = read_features(fpath);
    const auto set = a.set.empty() ? ctx.cfg.feature_sets.back() : FeatureSet::parse(a.set);
    const auto kind = model_kind_from_string(a.model);
    const auto scenario = train_scenario_from_string(a.scenario);
    const auto sel = matrix.select(set);
    if (sel.size() == 0) throw Error(fmt::format("no complete rows for feature set {}", set.name()));

    auto x = sel.values;
    Standardizer scaler;
    if (ctx.cfg.standardize) {
        scaler = Standardizer::fit(x);
        scaler.apply(x);
    }
    std::vector<std::size_t> all(sel.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto rows = resample_train(all, sel.labels, scenario, derive_seed(ctx.cfg.seed, 10 + static_cast<int>(scenario)),
                                     ctx.cfg.oversample_factor);
    Matrix xt(rows.size(), x.cols());
    std::vector<int> yt(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) xt(r, c) = x(rows[r], c);
        yt[r] = sel.labels[rows[r]];
    }

    const auto model_seed = derive_seed(ctx.cfg.seed, 100 + static_cast<int>(kind));
    auto training = ctx.cfg.training;
    json grid_info = nullptr;
    if (ctx.cfg.grid) {
        const auto g = grid_search(kind, xt, yt, default_grid(kind, training), model_seed, 3, ctx.cfg.effective_jobs());
        training = g.best;
        grid_info = {{"best_index", g.best_index}, {"scores", g.scores}};
        ctx.log->info(fmt::format("grid search picked point {} of {}", g.best_index, g.scores.size()));
    }
    const auto model = train(kind, xt, yt, training, model_seed, ctx.cfg.effective_jobs());
    const auto pred = predict(model, x);
    const auto m = f1_per_class(sel.labels, pred.labels);

    json columns = json::array();
    for (const auto& c : sel.columns) columns.push_back(c.name());
    write_json(out_dir / "model.json", {{"model", to_json(model)},
                                        {"feature_set", set.name()},
                                        {"columns", columns},
                                        {"standardize", ctx.cfg.standardize},
                                        {"scaler_mean", scaler.mean},
                                        {"scaler_scale", scaler.scale}});
    ctx.log->info(fmt::format("{} on {} ({} training rows, scenario {}): training F1 C {} / NC {}", to_string(kind),
                              set.name(), rows.size(), to_string(scenario), format_fixed(m.f1_controversial, 4),
                              format_fixed(m.f1_noncontroversial, 4)));
    write_manifest(out_dir / "train.manifest.json", ctx, json::array({file_entry(fpath)}), {"model.json"},
                   {{"model", to_string(kind)},
                    {"feature_set", set.name()},
                    {"scenario", to_string(scenario)},
                    {"training_rows", rows.size()},
                    {"grid", grid_info},
                    {"training_f1_controversial", m.f1_controversial},
                    {"training_f1_noncontroversial", m.f1_noncontroversial}});
    return 0;
}

int cmd_evaluate(Context& ctx, const ModelArgs& a, const fs::path& out_dir) {
    const auto fpath = features_path(a);
    const auto matrix = read_features(fpath);
    const auto report =
        run_matrix(matrix, ctx.cfg.feature_sets, ctx.cfg.models, ctx.cfg.evaluation_seeds(), ctx.cfg.eval_config());
    std::size_t failed = 0;
    for (const auto& row : report.rows)
        if (row.error) {
            ++failed;
            ctx.log->warn(fmt::format("cell {}/{}/{} failed: {}", to_string(row.scenario), to_string(row.model),
                                      row.features, *row.error));
        }
    write_report_csv(out_dir / "report.csv", report);
    write_json(out_dir / "report.json", to_json(report));
    write_text(out_dir / "report.md", render_report_markdown(report));
    ctx.log->info(fmt::format("{} report rows ({} failed) over {} seeds", report.rows.size(), failed,
                              ctx.cfg.eval_seeds));
    write_manifest(out_dir / "evaluate.manifest.json", ctx, json::array({file_entry(fpath)}),
                   {"report.csv", "report.json", "report.md"}, {{"failed_cells", failed}});
    if (failed == report.rows.size() && failed > 0) throw Error("every evaluation cell failed; see report.md");
    return 0;
}

int cmd_report(Context& ctx, std::ostream& out, const ModelArgs& a, const fs::path& out_dir) {
    const fs::path eval_dir(a.input);
    const auto report_path = eval_dir / "report.json";
    if (!fs::exists(report_path))
        throw MissingArtifactError(fmt::format("no evaluation report at '{}'", report_path.string()), "evaluate");
    json j;
    {
        std::ifstream in(report_path);
        j = json::parse(in);
    }
    const auto report = eval_report_from_json(j);
    const auto md = render_report_markdown(report);
    write_text(out_dir / "report.md", md);
    out << md;
    json inputs = json::array({file_entry(report_path)});
    json outputs{"report.md"};
    if (!a.store.empty()) {
        const auto store = store_read(a.store);
        write_text(out_dir / "ur_density.svg", ur_density_svg(store));
        write_text(out_dir / "summary.md", dataset_summary(store).render_markdown());
        for (auto& e : store_inputs(a.store)) inputs.push_back(e);
        outputs.push_back("ur_density.svg");
        outputs.push_back("summary.md");
    }
    write_manifest(out_dir / "report.manifest.json", ctx, inputs, outputs);
    return 0;
}

int cmd_synth(Context& ctx, const fs::path& out_file) {
    auto scfg = ctx.cfg.synth;
    const auto records = generate_synthetic_corpus(scfg);
    if (!out_file.parent_path().empty()) fs::create_directories(out_file.parent_path());
    write_corpus_jsonl(out_file, records);
    json outputs{out_file.filename().string()};
    if (ctx.cfg.embedding_dim > 0) {
        const auto [posts, comments] =
            synthetic_embeddings(records, ctx.cfg.embedding_dim, derive_seed(ctx.cfg.seed, 0x656d62ULL));
        const auto stem = out_file.parent_path() / out_file.stem();
        auto post_path = stem, comment_path = stem;
        post_path += "_post_emb.csv";
        comment_path += "_comment_emb.csv";
        write_embeddings_csv(post_path, posts);
        write_embeddings_csv(comment_path, comments);
        outputs.push_back(post_path.filename().string());
        outputs.push_back(comment_path.filename().string());
    }
    const auto signal = measure_planted_signal(records, ctx.cfg.effective_jobs());
    ctx.log->info(fmt::format("{} posts: {} controversial (mean H1 {}), {} non-controversial (mean H1 {})",
                              records.size(), signal.controversial, format_fixed(signal.mean_h1_controversial, 3),
                              signal.noncontroversial, format_fixed(signal.mean_h1_noncontroversial, 3)));
    write_manifest(sibling_manifest(out_file), ctx, json::array(), outputs,
                   {{"controversial", signal.controversial},
                    {"noncontroversial", signal.noncontroversial},
                    {"mean_h1_controversial", signal.mean_h1_controversial},
                    {"mean_h1_noncontroversial", signal.mean_h1_noncontroversial}});
    return 0;
}

// ---------------------------------------------------------------------------

json error_summary(std::string_view command, std::string_view kind, const std::string& message,
                   const std::string& run_first, int code) {
    json j{{"status", "error"}, {"command", command}, {"kind", kind}, {"message", message}, {"exit_code", code}};
    j["run_first"] = run_first.empty() ? json(nullptr) : json(run_first);
    return j;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Controversy detection from reply-graph topology", "topocontro"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));
    Registry reg;

    IngestArgs ingest_args;
    StoreArgs store_args;
    TrainArgs train_args;
    ModelArgs model_args;
    std::map<std::string, Common> common;

    auto* ingest = app.add_subcommand("ingest", "parse thread dumps, label posts and write a post store");
    ingest->add_option("inputs", ingest_args.inputs, "JSON-Lines thread dumps")->required()->check(CLI::ExistingFile);
    reg.add_common(ingest, common["ingest"], "store directory", true);
    reg.add(ingest, common["ingest"], "--min-comments", "ingest.min_comments", Kind::Int, "minimum comments per post");

    auto* graphs = app.add_subcommand("graphs", "build interaction graphs");
    graphs->add_option("store", store_args.store, "post store")->required();
    graphs->add_flag("--export-edgelists", store_args.export_edgelists, "write per-post edge and node lists");
    reg.add_common(graphs, common["graphs"], "output directory", true);

    auto add_tda_flags = [&](CLI::App* sub, Common& c) {
        reg.add(sub, c, "--resolution", "tda.resolution", Kind::Int, "persistence image resolution");
        reg.add(sub, c, "--sigma", "tda.sigma", Kind::AutoNumber, "Gaussian width or 'auto'");
        reg.add(sub, c, "--metric", "tda.metric", Kind::String, "hop or invweight");
        reg.add(sub, c, "--source", "tda.source", Kind::String, "vr or temporal");
        reg.add(sub, c, "--d-cap", "tda.d_cap", Kind::AutoNumber, "image domain upper bound or 'auto'");
    };

    auto* tda = app.add_subcommand("tda", "persistence diagrams and images");
    tda->add_option("store", store_args.store, "post store")->required();
    reg.add_common(tda, common["tda"], "output directory", true);
    add_tda_flags(tda, common["tda"]);

    auto* motifs = app.add_subcommand("motifs", "directed triad census");
    motifs->add_option("store", store_args.store, "post store")->required();
    reg.add_common(motifs, common["motifs"], "output directory", true);

    auto* features = app.add_subcommand("features", "assemble the feature matrix");
    features->add_option("store", store_args.store, "post store")->required();
    reg.add_common(features, common["features"], "feature CSV (default <store>/features.csv)", false);
    reg.add(features, common["features"], "--sets", "features.sets", Kind::String, "feature sets, e.g. f0,f0+f3+f4");
    reg.add(features, common["features"], "--post-emb", "features.post_embeddings", Kind::String, "post embeddings");
    reg.add(features, common["features"], "--comment-emb", "features.comment_embeddings", Kind::String,
            "comment embeddings");
    reg.add(features, common["features"], "--pooling", "features.pooling", Kind::String,
            "post_and_comments or comments_only");
    add_tda_flags(features, common["features"]);

    auto* trainc = app.add_subcommand("train", "fit one model on the whole feature matrix");
    trainc->add_option("input", train_args.input, "post store or feature CSV");
    trainc->add_option("--features", train_args.features, "feature CSV");
    trainc->add_option("--model", train_args.model, "adaboost, random_forest or mlp")->capture_default_str();
    trainc->add_option("--set", train_args.set, "feature set (default: last configured set)");
    trainc->add_option("--scenario", train_args.scenario, "training scenario A, B or C")->capture_default_str();
    reg.add_common(trainc, common["train"], "output directory", true);
    reg.add(trainc, common["train"], "--grid", "eval.grid", Kind::Flag, "grid search hyperparameters");

    auto* evaluate = app.add_subcommand("evaluate", "run the scenario x model x feature-set matrix");
    evaluate->add_option("input", model_args.input, "post store or feature CSV");
    evaluate->add_option("--features", model_args.features, "feature CSV");
    reg.add_common(evaluate, common["evaluate"], "output directory (default <store>/eval)", false);
    reg.add(evaluate, common["evaluate"], "--sets", "features.sets", Kind::String, "feature sets");
    reg.add(evaluate, common["evaluate"], "--models", "eval.models", Kind::String, "models");
    reg.add(evaluate, common["evaluate"], "--scenarios", "eval.scenarios", Kind::String, "training scenarios");
    reg.add(evaluate, common["evaluate"], "--seeds", "eval.seeds", Kind::Int, "number of seeds per cell");
    reg.add(evaluate, common["evaluate"], "--grid", "eval.grid", Kind::Flag, "grid search per cell");

    ModelArgs report_args;
    auto* reportc = app.add_subcommand("report", "render the evaluation report");
    reportc->add_option("eval_dir", report_args.input, "directory written by evaluate")->required();
    reportc->add_option("--store", report_args.store, "post store, for the upvote-ratio density plot");
    reg.add_common(reportc, common["report"], "output directory (default: eval_dir)", false);

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus with planted cycles");
    reg.add_common(synth, common["synth"], "corpus JSONL file", true);
    reg.add(synth, common["synth"], "--n-posts", "synth.n_posts", Kind::Int, "number of posts");
    reg.add(synth, common["synth"], "--frac", "synth.controversial_frac", Kind::Number, "controversial fraction");
    reg.add(synth, common["synth"], "--embedding-dim", "synth.embedding_dim", Kind::Int,
            "also write random embeddings of this size");

    auto* configc = app.add_subcommand("config", "print the effective configuration");
    reg.add_common(configc, common["config"], "unused", false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    CLI::App* sub = app.get_subcommands().front();
    const std::string command = sub->get_name();
    Log log(err, command);
    Context ctx;
    ctx.command = command;
    ctx.log = &log;
    for (int i = 1; i < argc; ++i) ctx.argv.emplace_back(argv[i]);
    auto& c = common[command];

    try {
        ctx.cfg = resolve_config(c);
        ctx.hash = config_hash(ctx.cfg);

        // Where outputs (and the JSON log) go.
        fs::path out_dir;
        fs::path out_file;
        if (command == "features") {
            out_file = c.out.empty() ? fs::path(store_args.store) / "features.csv" : fs::path(c.out);
            if (!fs::exists(fs::path(store_args.store) / "manifest.json")) store_read(store_args.store);
            out_dir = out_file.parent_path();
        } else if (command == "synth") {
            out_file = c.out;
            out_dir = out_file.parent_path();
        } else if (command == "evaluate") {
            if (!c.out.empty()) out_dir = c.out;
            else if (!model_args.input.empty() && fs::is_directory(model_args.input)) out_dir = fs::path(model_args.input) / "eval";
            else throw Error("evaluate needs --out when the input is not a store directory");
            read_features(features_path(model_args));  // fail before creating anything
        } else if (command == "report") {
            out_dir = c.out.empty() ? fs::path(report_args.input) : fs::path(c.out);
            if (!fs::exists(fs::path(report_args.input) / "report.json"))
                throw MissingArtifactError(
                    fmt::format("no evaluation report in '{}'", report_args.input), "evaluate");
        } else if (command == "train") {
            out_dir = c.out;
            read_features(features_path(train_args));
        } else if (command != "config") {
            out_dir = c.out;
            if (command != "ingest") store_read(store_args.store);
        }

        if (command == "config") {
            out << render_toml(ctx.cfg) << "# config_sha256 = \"" << ctx.hash << "\"\n";
            return 0;
        }
        if (out_dir.empty()) out_dir = ".";
        fs::create_directories(out_dir);
        log.attach_file(out_dir / (command + ".log.jsonl"));
        log.info(fmt::format("topocontro {} {} (config {})", kToolVersion, command, ctx.hash.substr(0, 12)));

        if (command == "ingest") return cmd_ingest(ctx, ingest_args, out_dir);
        if (command == "graphs") return cmd_graphs(ctx, store_args, out_dir);
        if (command == "tda") return cmd_tda(ctx, store_args, out_dir);
        if (command == "motifs") return cmd_motifs(ctx, store_args, out_dir);
        if (command == "features") return cmd_features(ctx, store_args, out_file);
        if (command == "train") return cmd_train(ctx, train_args, out_dir);
        if (command == "evaluate") return cmd_evaluate(ctx, model_args, out_dir);
        if (command == "report") return cmd_report(ctx, out, report_args, out_dir);
        if (command == "synth") return cmd_synth(ctx, out_file);
        throw Error(fmt::format("unknown command '{}'", command));
    } catch (const MissingArtifactError& e) {
        const auto msg = fmt::format("{}; run `topocontro {}` first", e.what(), e.producing_command());
        log.error(msg);
        err << error_summary(command, "missing_artifact", msg, e.producing_command(), 2).dump() << '\n';
        return 2;
    } catch (const std::exception& e) {
        log.error(e.what());
        err << error_summary(command, "error", e.what(), "", 1).dump() << '\n';
        return 1;
    }
}

}  // namespace topocontro
