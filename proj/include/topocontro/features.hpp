#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "topocontro/graph.hpp"
#include "topocontro/ingest.hpp"
#include "topocontro/matrix.hpp"
#include "topocontro/motifs.hpp"
#include "topocontro/tda.hpp"

namespace topocontro {

enum class Block { F0, F1, F2, F3, F4 };

std::string_view to_string(Block b);

/// Ordered, duplicate-free block selection such as "f0+f3+f4". Blocks are kept
/// in f0..f4 order regardless of how the spec string lists them.
class FeatureSet {
public:
    FeatureSet() = default;
    explicit FeatureSet(std::vector<Block> blocks);

    static FeatureSet parse(std::string_view spec);
    /// Comma-separated list of specs.
    static std::vector<FeatureSet> parse_list(std::string_view specs);
    /// Union of several sets.
    static FeatureSet merge(const std::vector<FeatureSet>& sets);

    const std::vector<Block>& blocks() const noexcept { return blocks_; }
    bool contains(Block b) const;
    bool needs_embeddings() const { return contains(Block::F1) || contains(Block::F2); }
    std::string name() const;

    bool operator==(const FeatureSet&) const = default;

private:
    std::vector<Block> blocks_;
};

// ---------------------------------------------------------------------------

/// [comment count, node count, undirected edge count, 2E/N (0 when N = 0)]
std::vector<double> f0_features(const ThreadRecord& rec, const InteractionGraph& g);

enum class EmbeddingScope { Post, Comment };

struct EmbeddingTable {
    EmbeddingScope scope = EmbeddingScope::Post;
    std::optional<std::size_t> dim;  // unset until the first row is seen
    std::unordered_map<std::string, std::vector<double>> vectors;

    const std::vector<double>* find(const std::string& id) const;
    std::size_t size() const noexcept { return vectors.size(); }
};

/// CSV rows "id,v0,v1,..." (an optional header starting with "id" is skipped)
/// or JSON-Lines {"id": ..., "vector": [...]} when the extension is .jsonl/.json.
/// Ragged dimensions or duplicate ids are fatal and name the offending id.
EmbeddingTable load_embeddings(const std::filesystem::path& path, EmbeddingScope scope);
void write_embeddings_csv(const std::filesystem::path& path, const EmbeddingTable& table);

enum class PoolingMode { PostAndComments, CommentsOnly };

/// Element-wise mean of the post vector and the comment vectors (or of the
/// comment vectors only). Throws on an empty input set or mismatched sizes.
std::vector<double> f2_pool(std::span<const double> post_vec,
                            const std::vector<std::span<const double>>& comment_vecs,
                            PoolingMode mode = PoolingMode::PostAndComments);

// ---------------------------------------------------------------------------

struct ColumnInfo {
    Block block = Block::F0;
    std::size_t index = 0;

    std::string name() const;  // "f3:12"
    bool operator==(const ColumnInfo&) const = default;
};

/// One row per labeled post. Missing blocks (absent embeddings) are NaN.
struct FeatureMatrix {
    std::vector<std::string> post_ids;
    std::vector<int> labels;  // 1 = controversial, 0 = non-controversial
    std::vector<ColumnInfo> columns;
    Matrix values;

    std::size_t size() const noexcept { return post_ids.size(); }
    std::size_t block_length(Block b) const;

    /// Columns of `set`, dropping rows with any missing value in them.
    FeatureMatrix select(const FeatureSet& set) const;

    bool operator==(const FeatureMatrix&) const = default;
};

/// Tagged per-post view with per-block provenance.
struct FeatureVector {
    std::string post_id;
    std::vector<std::pair<Block, std::vector<double>>> blocks;
    int label = 0;

    std::size_t size() const;
};

std::vector<FeatureVector> feature_vectors(const FeatureMatrix& m);

/// Header "post_id,label,<block:index>..."; missing values are empty fields.
void write_feature_csv(std::ostream& out, const FeatureMatrix& m);
void write_feature_csv(const std::filesystem::path& path, const FeatureMatrix& m);
FeatureMatrix read_feature_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct FeatureConfig {
    TdaConfig tda;                       // image resolution, metric, sigma override
    std::optional<double> d_cap;         // image domain [0, d_cap]^2; empty: percentile
    double d_cap_percentile = 99.0;
    PoolingMode pooling = PoolingMode::PostAndComments;
    unsigned jobs = 1;
};

/// Graph, motif and topology products of one labeled post.
struct PostStructure {
    InteractionGraph graph;
    std::vector<double> f0;
    TriadCensus census;
    PersistenceDiagram diagram;
};

PostStructure analyze_post(const ThreadRecord& rec, const TdaConfig& tda);

/// Nearest-rank percentile of per-post max filtration values; 1.0 when that is 0.
double image_domain_cap(std::span<const PostStructure> posts, double percentile);

struct AssembleResult {
    FeatureMatrix matrix;
    double d_cap = 0.0;
    std::size_t missing_post_embedding = 0;
    std::size_t missing_comment_embedding = 0;  // comment vectors absent (post still kept)
    std::size_t empty_pool = 0;                 // comments-only pooling with nothing to pool
    std::vector<std::string> warnings;
};

/// Builds rows for every included post of `store`. Embedding tables are needed
/// only when the set contains f1 or f2; posts lacking them get NaN blocks.
AssembleResult assemble(const LabeledStore& store, const FeatureSet& set, const FeatureConfig& cfg,
                        const EmbeddingTable* post_embeddings = nullptr,
                        const EmbeddingTable* comment_embeddings = nullptr);

// ---------------------------------------------------------------------------

/// Per-column z-score fitted on a subset of rows.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;  // population std; 1 for constant columns

    static Standardizer fit(const Matrix& x, std::span<const std::size_t> rows);
    static Standardizer fit(const Matrix& x);
    void apply(Matrix& x) const;

    bool operator==(const Standardizer&) const = default;
};

}  // namespace topocontro
