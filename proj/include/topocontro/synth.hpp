#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "topocontro/features.hpp"
#include "topocontro/ingest.hpp"

namespace topocontro {

/// Desk-scale corpus with a planted topological signal. Both classes share the
/// same distribution of users, comments and extra reply edges; controversial
/// posts close their extra edges into 4-6 user loops, non-controversial posts
/// into triangles. A fraction of each class gets the other class's structure.
struct SynthConfig {
    std::size_t n_posts = 50;
    double controversial_frac = 0.129;
    std::uint64_t seed = 1;
    int min_users = 8;
    int max_users = 24;
    int max_filler = 12;        // repeat replies along existing user pairs
    int min_extra_edges = 1;    // loops or triangles per post
    int max_extra_edges = 3;
    double controversial_noise = 0.2;      // later C structures planted as triangles instead of loops
    double noncontroversial_noise = 0.06;  // NC structures planted as loops
    double deleted_prob = 0.05;            // leaf comments by "[deleted]"

    void validate() const;
};

std::vector<ThreadRecord> generate_synthetic_corpus(const SynthConfig& cfg);

void write_corpus_jsonl(const std::filesystem::path& path, const std::vector<ThreadRecord>& records);

struct SynthSignal {
    double mean_h1_controversial = 0.0;
    double mean_h1_noncontroversial = 0.0;
    std::size_t controversial = 0;
    std::size_t noncontroversial = 0;
};

/// Mean H1 bar counts per class under the default hop-metric filtration.
SynthSignal measure_planted_signal(const std::vector<ThreadRecord>& records, unsigned jobs = 1);

/// Random unit-free post and comment vectors (no class signal) for exercising f1/f2.
std::pair<EmbeddingTable, EmbeddingTable> synthetic_embeddings(const std::vector<ThreadRecord>& records,
                                                                std::size_t dim, std::uint64_t seed);

}  // namespace topocontro
