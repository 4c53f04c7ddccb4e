#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "topocontro/eval.hpp"
#include "topocontro/features.hpp"
#include "topocontro/ingest.hpp"
#include "topocontro/learn.hpp"
#include "topocontro/synth.hpp"
#include "topocontro/tda.hpp"

namespace topocontro {

/// Parses the subset of TOML the run config uses: [section] headers, bare keys,
/// strings, integers, floats, booleans and single-line arrays of those. Returns
/// a flat object keyed "section.key". Duplicate keys and anything else are errors.
nlohmann::json parse_toml_subset(std::string_view text, std::string_view source = "<config>");

struct RunConfig {
    std::uint64_t seed = 1;
    unsigned jobs = 0;  // 0: all cores. Not hashed; results do not depend on it

    LabelConfig labels;
    TdaConfig tda;
    std::optional<double> d_cap;  // empty: percentile of the corpus
    double d_cap_percentile = 99.0;

    std::vector<FeatureSet> feature_sets{FeatureSet::parse("f0"), FeatureSet::parse("f0+f3+f4")};
    PoolingMode pooling = PoolingMode::PostAndComments;
    std::string post_embeddings;     // empty: none
    std::string comment_embeddings;  // empty: none

    TrainingConfig training;

    std::vector<ModelKind> models{ModelKind::AdaBoost, ModelKind::RandomForest, ModelKind::Mlp};
    std::vector<TrainScenario> scenarios{TrainScenario::A, TrainScenario::B, TrainScenario::C};
    int eval_seeds = 5;  // seeds used: seed, seed + 1, ...
    double train_frac = 0.8;
    double oversample_factor = 2.0;
    bool standardize = true;
    bool grid = false;

    SynthConfig synth;
    std::size_t embedding_dim = 0;  // synth: 0 writes no embeddings

    FeatureConfig feature_config() const;
    EvalConfig eval_config() const;
    std::vector<std::uint64_t> evaluation_seeds() const;
    unsigned effective_jobs() const;
};

/// Flat "section.key" view with every key and its current value.
nlohmann::json to_flat_json(const RunConfig& cfg);
/// Builds a config from defaults overlaid with `flat`; unknown keys and
/// ill-typed values are rejected with the offending key in the message.
RunConfig run_config_from_flat(const nlohmann::json& flat);
/// Reads a TOML config file (flat overrides applied on top by the caller).
nlohmann::json load_config_file(const std::filesystem::path& path);
/// SHA-256 over the canonical flat JSON, excluding `jobs`.
std::string config_hash(const RunConfig& cfg);
/// Effective configuration rendered back as TOML.
std::string render_toml(const RunConfig& cfg);

}  // namespace topocontro
