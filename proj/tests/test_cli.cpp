#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "test_support.hpp"
#include "topocontro/cli.hpp"

using topocontro::testing::TempDir;
namespace fs = std::filesystem;

namespace {

const fs::path kCorpus = fs::path(TOPOCONTRO_TEST_DATA) / "synthetic_50.jsonl";

struct Result {
    int code = 0;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "topocontro");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Result r;
    r.code = topocontro::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json last_json_line(const std::string& text) {
    std::istringstream in(text);
    std::string line, last;
    while (std::getline(in, line))
        if (!line.empty() && line.front() == '{') last = line;
    return nlohmann::json::parse(last);
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("--help works for the binary and every subcommand") {
    auto top = run({"--help"});
    CHECK(top.code == 0);
    CHECK(top.out.find("Usage") != std::string::npos);
    for (const char* sub : {"ingest", "graphs", "tda", "motifs", "features", "train", "evaluate", "report", "synth",
                            "config"}) {
        CAPTURE(sub);
        auto r = run({sub, "--help"});
        CHECK(r.code == 0);
        CHECK(r.out.find("Usage") != std::string::npos);
        CHECK(r.out.find(sub) != std::string::npos);
        CHECK(r.out.find("--seed") != std::string::npos);
    }
    CHECK(run({}).code != 0);
    CHECK(run({"frobnicate"}).code != 0);
}

TEST_CASE("stages run out of order name the command to run first") {
    TempDir dir;
    const auto store = (dir / "store").string();

    auto r = run({"features", store});
    CHECK(r.code == 2);
    CHECK(r.err.find("topocontro ingest") != std::string::npos);

    REQUIRE(run({"ingest", kCorpus.string(), "--out", store}).code == 0);
    r = run({"evaluate", store});
    CHECK(r.code == 2);
    CHECK(r.err.find("`topocontro features`") != std::string::npos);
    const auto summary = last_json_line(r.err);
    CHECK(summary.at("exit_code") == 2);
    CHECK(summary.at("run_first") == "features");
    CHECK(summary.at("status") == "error");
    CHECK_FALSE(fs::exists(dir / "store" / "eval"));

    r = run({"train", store, "--out", (dir / "model").string()});
    CHECK(r.code == 2);
    CHECK(last_json_line(r.err).at("run_first") == "features");

    r = run({"report", (dir / "store" / "eval").string()});
    CHECK(r.code == 2);
    CHECK(last_json_line(r.err).at("run_first") == "evaluate");
}

TEST_CASE("full pipeline on the bundled 50-post corpus") {
    TempDir dir;
    const auto store = (dir / "store").string();
    REQUIRE(run({"ingest", kCorpus.string(), "--out", store}).code == 0);
    CHECK(fs::exists(dir / "store" / "summary.md"));
    REQUIRE(run({"graphs", store, "--out", (dir / "graphs").string(), "--export-edgelists"}).code == 0);
    REQUIRE(run({"tda", store, "--out", (dir / "tda").string(), "--resolution", "4"}).code == 0);
    REQUIRE(run({"motifs", store, "--out", (dir / "motifs").string()}).code == 0);
    CHECK(line_count(slurp(dir / "graphs" / "graphs.csv")) == 51);
    CHECK(line_count(slurp(dir / "motifs" / "census.csv")) == 51);
    CHECK(line_count(slurp(dir / "tda" / "tda_summary.csv")) == 51);
    CHECK(line_count(slurp(dir / "tda" / "images" / "syn000000_h1.csv")) == 4);

    REQUIRE(run({"features", store, "--jobs", "2"}).code == 0);
    const auto features = slurp(dir / "store" / "features.csv");
    CHECK(features.rfind("post_id,label,f0:0", 0) == 0);
    CHECK(line_count(features) == 51);

    auto r = run({"evaluate", store});
    REQUIRE(r.code == 0);
    const auto report = slurp(dir / "store" / "eval" / "report.csv");
    // 3 scenarios x 3 models x 2 feature sets, plus the header.
    CHECK(line_count(report) == 1 + 3 * 3 * 2);
    std::istringstream rows(report);
    std::string line;
    std::getline(rows, line);
    while (std::getline(rows, line)) CHECK(line.back() == ',');  // empty error column

    const auto manifest = nlohmann::json::parse(slurp(dir / "store" / "eval" / "evaluate.manifest.json"));
    CHECK(manifest.at("tool_version") == "0.1.0");
    CHECK(manifest.at("config_sha256").get<std::string>().size() == 64);
    CHECK(manifest.at("inputs").at(0).at("sha256").get<std::string>().size() == 64);
    CHECK(manifest.at("seed") == 1);
    CHECK(fs::exists(dir / "store" / "eval" / "evaluate.log.jsonl"));
    std::istringstream log(slurp(dir / "store" / "eval" / "evaluate.log.jsonl"));
    while (std::getline(log, line)) CHECK(nlohmann::json::parse(line).at("command") == "evaluate");

    r = run({"report", (dir / "store" / "eval").string(), "--store", store});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("| adaboost | f0+f3+f4 |") != std::string::npos);
    CHECK(slurp(dir / "store" / "eval" / "ur_density.svg").rfind("<svg", 0) == 0);

    r = run({"train", store, "--out", (dir / "model").string(), "--model", "random_forest", "--set", "f0+f3"});
    REQUIRE(r.code == 0);
    const auto model = nlohmann::json::parse(slurp(dir / "model" / "model.json"));
    CHECK(model.at("feature_set") == "f0+f3");
    CHECK(model.at("columns").size() == 4 + 13);
}

TEST_CASE("repeated runs are byte-identical regardless of --jobs") {
    TempDir dir;
    const auto store = (dir / "store").string();
    REQUIRE(run({"ingest", kCorpus.string(), "--out", store}).code == 0);
    REQUIRE(run({"features", store, "--out", (dir / "f1.csv").string(), "--jobs", "1"}).code == 0);
    REQUIRE(run({"features", store, "--out", (dir / "f2.csv").string(), "--jobs", "3"}).code == 0);
    CHECK(slurp(dir / "f1.csv") == slurp(dir / "f2.csv"));
    REQUIRE(run({"evaluate", "--features", (dir / "f1.csv").string(), "--out", (dir / "e1").string(), "--seeds", "2",
                 "--jobs", "1"})
                .code == 0);
    REQUIRE(run({"evaluate", "--features", (dir / "f2.csv").string(), "--out", (dir / "e2").string(), "--seeds", "2",
                 "--jobs", "3"})
                .code == 0);
    CHECK(slurp(dir / "e1" / "report.csv") == slurp(dir / "e2" / "report.csv"));
    const auto m1 = nlohmann::json::parse(slurp(dir / "e1" / "evaluate.manifest.json"));
    const auto m2 = nlohmann::json::parse(slurp(dir / "e2" / "evaluate.manifest.json"));
    CHECK(m1.at("config_sha256") == m2.at("config_sha256"));
}

TEST_CASE("config file, flag precedence and unknown keys") {
    TempDir dir;
    topocontro::testing::write_file(dir / "run.toml", "seed = 5\n[eval]\nseeds = 2\n");
    auto r = run({"config", "--config", (dir / "run.toml").string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("seed = 5") != std::string::npos);

    r = run({"config", "--config", (dir / "run.toml").string(), "--seed", "9"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("seed = 9") != std::string::npos);
    CHECK(r.out.find("config_sha256") != std::string::npos);

    topocontro::testing::write_file(dir / "bad.toml", "[tda]\nresolutoin = 8\n");
    r = run({"config", "--config", (dir / "bad.toml").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("unknown config key 'tda.resolutoin'") != std::string::npos);
    CHECK(last_json_line(r.err).at("exit_code") == 1);

    r = run({"synth", "--out", (dir / "x.jsonl").string(), "--frac", "0"});
    CHECK(r.code == 1);
    CHECK_FALSE(fs::exists(dir / "x.jsonl"));
}

TEST_CASE("synth writes identical corpora for one seed") {
    TempDir dir;
    REQUIRE(run({"synth", "--out", (dir / "a.jsonl").string(), "--n-posts", "30", "--seed", "4", "--embedding-dim",
                 "3"})
                .code == 0);
    REQUIRE(run({"synth", "--out", (dir / "b.jsonl").string(), "--n-posts", "30", "--seed", "4"}).code == 0);
    CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));
    CHECK(fs::exists(dir / "a_post_emb.csv"));
    CHECK(fs::exists(dir / "a_comment_emb.csv"));
    CHECK(fs::exists(dir / "a.jsonl.manifest.json"));

    // Embeddings feed f1/f2 through the features command.
    const auto store = (dir / "store").string();
    REQUIRE(run({"ingest", (dir / "a.jsonl").string(), "--out", store}).code == 0);
    auto r = run({"features", store, "--sets", "f1,f2+f3", "--post-emb", (dir / "a_post_emb.csv").string(),
                  "--comment-emb", (dir / "a_comment_emb.csv").string()});
    REQUIRE(r.code == 0);
    CHECK(slurp(dir / "store" / "features.csv").rfind("post_id,label,f1:0,f1:1,f1:2,f2:0", 0) == 0);
    r = run({"features", store, "--sets", "f1"});
    CHECK(r.code == 1);
}
