#include "topocontro/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "topocontro/common.hpp"

namespace topocontro {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

Block block_from_string(std::string_view s) {
    if (s == "f0") return Block::F0;
    if (s == "f1") return Block::F1;
    if (s == "f2") return Block::F2;
    if (s == "f3") return Block::F3;
    if (s == "f4") return Block::F4;
    throw Error(fmt::format("unknown feature block '{}' (expected f0..f4)", s));
}

}  // namespace

std::string_view to_string(Block b) {
    switch (b) {
        case Block::F0: return "f0";
        case Block::F1: return "f1";
        case Block::F2: return "f2";
        case Block::F3: return "f3";
        case Block::F4: return "f4";
    }
    return "?";
}

FeatureSet::FeatureSet(std::vector<Block> blocks) : blocks_(std::move(blocks)) {
    std::sort(blocks_.begin(), blocks_.end());
    if (std::adjacent_find(blocks_.begin(), blocks_.end()) != blocks_.end())
        throw Error("feature set lists a block twice");
    if (blocks_.empty()) throw Error("feature set is empty");
}

FeatureSet FeatureSet::parse(std::string_view spec) {
    std::vector<Block> blocks;
    for (auto part : split(spec, '+')) {
        while (!part.empty() && part.front() == ' ') part.remove_prefix(1);
        while (!part.empty() && part.back() == ' ') part.remove_suffix(1);
        blocks.push_back(block_from_string(part));
    }
    return FeatureSet(std::move(blocks));
}

std::vector<FeatureSet> FeatureSet::parse_list(std::string_view specs) {
    std::vector<FeatureSet> out;
    for (auto part : split(specs, ','))
        if (!part.empty()) out.push_back(parse(part));
    if (out.empty()) throw Error("no feature sets given");
    return out;
}

FeatureSet FeatureSet::merge(const std::vector<FeatureSet>& sets) {
    std::vector<Block> all;
    for (const auto& s : sets) all.insert(all.end(), s.blocks().begin(), s.blocks().end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    return FeatureSet(std::move(all));
}

bool FeatureSet::contains(Block b) const {
    return std::find(blocks_.begin(), blocks_.end(), b) != blocks_.end();
}

std::string FeatureSet::name() const {
    std::string s;
    for (auto b : blocks_) {
        if (!s.empty()) s += '+';
        s += to_string(b);
    }
    return s;
}

// ---------------------------------------------------------------------------

std::vector<double> f0_features(const ThreadRecord& rec, const InteractionGraph& g) {
    const double nodes = static_cast<double>(g.node_count());
    const double edges = static_cast<double>(undirected_view(g).edges.size());
    return {static_cast<double>(rec.comments.size()), nodes, edges,
            nodes == 0.0 ? 0.0 : 2.0 * edges / nodes};
}

const std::vector<double>* EmbeddingTable::find(const std::string& id) const {
    auto it = vectors.find(id);
    return it == vectors.end() ? nullptr : &it->second;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, EmbeddingScope scope) {
    std::ifstream in(path);
    if (!in) throw Error(fmt::format("cannot read embeddings '{}'", path.string()));
    EmbeddingTable table;
    table.scope = scope;
    const auto ext = path.extension().string();
    const bool jsonl = ext == ".jsonl" || ext == ".json";

    auto add = [&](std::string id, std::vector<double> v) {
        if (!table.dim) table.dim = v.size();
        if (v.size() != *table.dim)
            throw Error(fmt::format("embedding '{}' has dimension {}, expected {}", id, v.size(), *table.dim));
        if (!table.vectors.emplace(id, std::move(v)).second)
            throw Error(fmt::format("duplicate embedding id '{}'", id));
    };

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (jsonl) {
            auto j = nlohmann::json::parse(line);
            const auto& vec = j.contains("vector") ? j.at("vector") : j.at("embedding");
            add(j.at("id").get<std::string>(), vec.get<std::vector<double>>());
            continue;
        }
        auto fields = split(line, ',');
        if (lineno == 1 && fields[0] == "id") continue;
        std::vector<double> v;
        v.reserve(fields.size() - 1);
        for (std::size_t i = 1; i < fields.size(); ++i) {
            try {
                v.push_back(parse_double(fields[i]));
            } catch (const Error&) {
                throw Error(fmt::format("embedding '{}' (line {}): bad value '{}'", fields[0], lineno, fields[i]));
            }
        }
        add(std::string(fields[0]), std::move(v));
    }
    return table;
}

void write_embeddings_csv(const std::filesystem::path& path, const EmbeddingTable& table) {
    std::vector<const std::string*> ids;
    for (const auto& [id, v] : table.vectors) ids.push_back(&id);
    std::sort(ids.begin(), ids.end(), [](auto a, auto b) { return *a < *b; });
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
    for (const auto* id : ids) {
        out << *id;
        for (double x : table.vectors.at(*id)) out << ',' << format_double(x);
        out << '\n';
    }
}

std::vector<double> f2_pool(std::span<const double> post_vec,
                            const std::vector<std::span<const double>>& comment_vecs, PoolingMode mode) {
    std::vector<std::span<const double>> members;
    if (mode == PoolingMode::PostAndComments && !post_vec.empty()) members.push_back(post_vec);
    members.insert(members.end(), comment_vecs.begin(), comment_vecs.end());
    if (members.empty()) throw Error("f2_pool: nothing to pool");
    const std::size_t dim = members.front().size();
    std::vector<double> mean(dim, 0.0);
    for (const auto& m : members) {
        if (m.size() != dim) throw Error("f2_pool: vectors differ in dimension");
        for (std::size_t k = 0; k < dim; ++k) mean[k] += m[k];
    }
    for (auto& x : mean) x /= static_cast<double>(members.size());
    return mean;
}

// ---------------------------------------------------------------------------

std::string ColumnInfo::name() const { return fmt::format("{}:{}", to_string(block), index); }

std::size_t FeatureMatrix::block_length(Block b) const {
    return static_cast<std::size_t>(
        std::count_if(columns.begin(), columns.end(), [b](const auto& c) { return c.block == b; }));
}

FeatureMatrix FeatureMatrix::select(const FeatureSet& set) const {
    std::vector<std::size_t> cols;
    for (std::size_t c = 0; c < columns.size(); ++c)
        if (set.contains(columns[c].block)) cols.push_back(c);
    for (auto b : set.blocks())
        if (block_length(b) == 0)
            throw Error(fmt::format("feature matrix has no '{}' columns", to_string(b)));
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < size(); ++r) {
        bool ok = true;
        for (auto c : cols) ok = ok && !std::isnan(values(r, c));
        if (ok) keep.push_back(r);
    }
    FeatureMatrix out;
    for (auto r : keep) {
        out.post_ids.push_back(post_ids[r]);
        out.labels.push_back(labels[r]);
    }
    for (auto c : cols) out.columns.push_back(columns[c]);
    out.values = values.take_rows(keep).take_cols(cols);
    if (keep.empty()) out.values = Matrix(0, cols.size());
    return out;
}

std::size_t FeatureVector::size() const {
    std::size_t n = 0;
    for (const auto& [b, v] : blocks) n += v.size();
    return n;
}

std::vector<FeatureVector> feature_vectors(const FeatureMatrix& m) {
    std::vector<FeatureVector> out;
    out.reserve(m.size());
    for (std::size_t r = 0; r < m.size(); ++r) {
        FeatureVector fv{m.post_ids[r], {}, m.labels[r]};
        for (std::size_t c = 0; c < m.columns.size(); ++c) {
            if (fv.blocks.empty() || fv.blocks.back().first != m.columns[c].block)
                fv.blocks.emplace_back(m.columns[c].block, std::vector<double>{});
            fv.blocks.back().second.push_back(m.values(r, c));
        }
        out.push_back(std::move(fv));
    }
    return out;
}

void write_feature_csv(std::ostream& out, const FeatureMatrix& m) {
    out << "post_id,label";
    for (const auto& c : m.columns) out << ',' << c.name();
    out << '\n';
    for (std::size_t r = 0; r < m.size(); ++r) {
        out << m.post_ids[r] << ',' << m.labels[r];
        for (std::size_t c = 0; c < m.columns.size(); ++c) {
            out << ',';
            if (!std::isnan(m.values(r, c))) out << format_double(m.values(r, c));
        }
        out << '\n';
    }
}

void write_feature_csv(const std::filesystem::path& path, const FeatureMatrix& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
    write_feature_csv(out, m);
}

FeatureMatrix read_feature_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw MissingArtifactError(fmt::format("feature matrix '{}' not found", path.string()), "features");
    FeatureMatrix m;
    std::string line;
    if (!std::getline(in, line)) throw Error(fmt::format("feature matrix '{}' is empty", path.string()));
    auto header = split(line, ',');
    if (header.size() < 2 || header[0] != "post_id" || header[1] != "label")
        throw Error(fmt::format("'{}' is not a feature matrix (bad header)", path.string()));
    for (std::size_t i = 2; i < header.size(); ++i) {
        auto parts = split(header[i], ':');
        if (parts.size() != 2) throw Error(fmt::format("bad feature column '{}'", header[i]));
        m.columns.push_back({block_from_string(parts[0]), static_cast<std::size_t>(parse_int(parts[1]))});
    }
    m.values = Matrix(0, m.columns.size());
    std::vector<double> row(m.columns.size());
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split(line, ',');
        if (fields.size() != header.size())
            throw Error(fmt::format("{}:{}: expected {} fields, found {}", path.string(), lineno,
                                    header.size(), fields.size()));
        m.post_ids.emplace_back(fields[0]);
        m.labels.push_back(static_cast<int>(parse_int(fields[1])));
        for (std::size_t c = 0; c < m.columns.size(); ++c)
            row[c] = fields[c + 2].empty() ? kMissing : parse_double(fields[c + 2]);
        m.values.append_row(row);
    }
    return m;
}

// ---------------------------------------------------------------------------

PostStructure analyze_post(const ThreadRecord& rec, const TdaConfig& tda) {
    PostStructure s;
    s.graph = build_interaction_graph(rec);
    s.f0 = f0_features(rec, s.graph);
    s.census = triad_census(s.graph);
    s.diagram = graph_persistence(s.graph, tda);
    return s;
}

double image_domain_cap(std::span<const PostStructure> posts, double percentile) {
    if (posts.empty()) return 1.0;
    std::vector<double> v;
    v.reserve(posts.size());
    for (const auto& p : posts) v.push_back(p.diagram.max_filtration_value);
    std::sort(v.begin(), v.end());
    const double rank = std::ceil(percentile / 100.0 * static_cast<double>(v.size()));
    const std::size_t idx = static_cast<std::size_t>(std::clamp(rank, 1.0, static_cast<double>(v.size()))) - 1;
    return v[idx] > 0.0 ? v[idx] : 1.0;
}

AssembleResult assemble(const LabeledStore& store, const FeatureSet& set, const FeatureConfig& cfg,
                        const EmbeddingTable* post_embeddings, const EmbeddingTable* comment_embeddings) {
    if (set.needs_embeddings() && (!post_embeddings || (set.contains(Block::F2) && !comment_embeddings &&
                                                         cfg.pooling == PoolingMode::CommentsOnly)))
        throw Error(fmt::format("feature set '{}' needs embedding tables", set.name()));

    std::vector<std::size_t> included;
    for (std::size_t i = 0; i < store.records.size(); ++i)
        if (store.labels[i].included()) included.push_back(i);

    std::vector<PostStructure> posts(included.size());
    parallel_for(included.size(), cfg.jobs, [&](std::size_t k) {
        posts[k] = analyze_post(store.records[included[k]], cfg.tda);
    });

    AssembleResult result;
    result.d_cap = cfg.d_cap.value_or(image_domain_cap(posts, cfg.d_cap_percentile));
    ImageConfig image = cfg.tda.image;
    image.birth_min = image.death_min = 0.0;
    image.birth_max = image.death_max = result.d_cap;

    std::size_t emb_dim = 0;
    if (set.needs_embeddings()) {
        if (post_embeddings->dim) emb_dim = *post_embeddings->dim;
        if (comment_embeddings && comment_embeddings->dim) {
            if (emb_dim != 0 && *comment_embeddings->dim != emb_dim)
                throw Error("post and comment embeddings differ in dimension");
            emb_dim = *comment_embeddings->dim;
        }
        if (emb_dim == 0) throw Error("embedding tables are empty");
    }

    auto& m = result.matrix;
    const std::size_t r2 = image.resolution * image.resolution;
    for (auto b : set.blocks()) {
        std::size_t len = 0;
        switch (b) {
            case Block::F0: len = 4; break;
            case Block::F1:
            case Block::F2: len = emb_dim; break;
            case Block::F3: len = kMotifClassCount; break;
            case Block::F4: len = 2 * r2; break;
        }
        for (std::size_t i = 0; i < len; ++i) m.columns.push_back({b, i});
    }
    m.values = Matrix(included.size(), m.columns.size(), 0.0);
    m.post_ids.resize(included.size());
    m.labels.resize(included.size());

    std::vector<std::size_t> missing_comment(included.size(), 0);
    std::vector<char> missing_post(included.size(), 0), empty_pool(included.size(), 0);
    parallel_for(included.size(), cfg.jobs, [&](std::size_t k) {
        const auto& rec = store.records[included[k]];
        const auto& post = posts[k];
        m.post_ids[k] = rec.post_id;
        m.labels[k] = store.labels[included[k]].value == LabelValue::Controversial ? 1 : 0;
        auto row = m.values.row(k);
        std::size_t col = 0;
        auto put = [&](std::span<const double> v) {
            std::copy(v.begin(), v.end(), row.begin() + static_cast<std::ptrdiff_t>(col));
            col += v.size();
        };
        auto put_missing = [&](std::size_t n) {
            std::fill_n(row.begin() + static_cast<std::ptrdiff_t>(col), n, kMissing);
            col += n;
        };
        const std::vector<double>* post_vec =
            set.needs_embeddings() ? post_embeddings->find(rec.post_id) : nullptr;
        for (auto b : set.blocks()) {
            switch (b) {
                case Block::F0: put(post.f0); break;
                case Block::F1:
                    if (post_vec) {
                        put(*post_vec);
                    } else {
                        missing_post[k] = 1;
                        put_missing(emb_dim);
                    }
                    break;
                case Block::F2: {
                    std::vector<std::span<const double>> comment_vecs;
                    for (const auto& c : rec.comments) {
                        const auto* v = comment_embeddings ? comment_embeddings->find(c.comment_id) : nullptr;
                        if (v)
                            comment_vecs.emplace_back(*v);
                        else
                            ++missing_comment[k];
                    }
                    const bool need_post = cfg.pooling == PoolingMode::PostAndComments;
                    if (need_post && !post_vec) {
                        missing_post[k] = 1;
                        put_missing(emb_dim);
                    } else if (!need_post && comment_vecs.empty()) {
                        empty_pool[k] = 1;
                        put_missing(emb_dim);
                    } else {
                        put(f2_pool(post_vec ? std::span<const double>(*post_vec) : std::span<const double>{},
                                     comment_vecs, cfg.pooling));
                    }
                    break;
                }
                case Block::F3: {
                    std::array<double, kMotifClassCount> c{};
                    for (std::size_t i = 0; i < kMotifClassCount; ++i)
                        c[i] = static_cast<double>(post.census.counts[i]);
                    put(c);
                    break;
                }
                case Block::F4: put(f4_from_diagram(post.diagram, image)); break;
            }
        }
    });

    for (std::size_t k = 0; k < included.size(); ++k) {
        result.missing_post_embedding += missing_post[k];
        result.missing_comment_embedding += missing_comment[k];
        result.empty_pool += empty_pool[k];
    }
    if (result.missing_post_embedding > 0)
        result.warnings.push_back(fmt::format("{} post(s) lack a post embedding and are excluded from sets using f1/f2",
                                              result.missing_post_embedding));
    if (result.empty_pool > 0)
        result.warnings.push_back(fmt::format("{} post(s) have no comment embeddings to pool", result.empty_pool));
    return result;
}

// ---------------------------------------------------------------------------

Standardizer Standardizer::fit(const Matrix& x, std::span<const std::size_t> rows) {
    Standardizer s;
    const std::size_t d = x.cols();
    s.mean.assign(d, 0.0);
    s.scale.assign(d, 1.0);
    if (rows.empty()) return s;
    const double n = static_cast<double>(rows.size());
    for (auto r : rows)
        for (std::size_t c = 0; c < d; ++c) s.mean[c] += x(r, c);
    for (auto& m : s.mean) m /= n;
    std::vector<double> var(d, 0.0);
    for (auto r : rows)
        for (std::size_t c = 0; c < d; ++c) {
            const double dv = x(r, c) - s.mean[c];
            var[c] += dv * dv;
        }
    for (std::size_t c = 0; c < d; ++c) {
        const double sd = std::sqrt(var[c] / n);
        s.scale[c] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
}

Standardizer Standardizer::fit(const Matrix& x) {
    std::vector<std::size_t> all(x.rows());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return fit(x, all);
}

void Standardizer::apply(Matrix& x) const {
    if (x.cols() != mean.size()) throw Error("Standardizer: column count mismatch");
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) x(r, c) = (x(r, c) - mean[c]) / scale[c];
}

}  // namespace topocontro
