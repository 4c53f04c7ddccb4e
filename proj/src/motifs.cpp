#include "topocontro/motifs.hpp"

#include <algorithm>
#include <bit>

#include <fmt/format.h>

#include "topocontro/common.hpp"

namespace topocontro {

namespace {

constexpr std::array<std::pair<int, int>, 6> kBitPairs{
    {{0, 1}, {0, 2}, {1, 0}, {1, 2}, {2, 0}, {2, 1}}};

constexpr std::array<std::array<int, 3>, 6> kPermutations{
    {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};

constexpr int bit_index(int from, int to) {
    for (int k = 0; k < 6; ++k)
        if (kBitPairs[k].first == from && kBitPairs[k].second == to) return k;
    return -1;
}

constexpr std::uint8_t relabel(std::uint8_t code, const std::array<int, 3>& perm) {
    std::uint8_t out = 0;
    for (int k = 0; k < 6; ++k) {
        if (!((code >> (5 - k)) & 1)) continue;
        const auto [a, b] = kBitPairs[k];
        out |= static_cast<std::uint8_t>(1u << (5 - bit_index(perm[a], perm[b])));
    }
    return out;
}

constexpr std::uint8_t min_relabeling(std::uint8_t code) {
    std::uint8_t best = code;
    for (const auto& p : kPermutations) best = std::min(best, relabel(code, p));
    return best;
}

// Weakly connected iff at least two of the three vertex pairs are linked.
constexpr bool weakly_connected(std::uint8_t code) {
    const bool ab = ((code >> 5) & 1) || ((code >> 3) & 1);  // 0-1
    const bool ac = ((code >> 4) & 1) || ((code >> 1) & 1);  // 0-2
    const bool bc = ((code >> 2) & 1) || (code & 1);         // 1-2
    return int(ab) + int(ac) + int(bc) >= 2;
}

struct ClassTables {
    std::array<std::uint8_t, 64> class_of{};
    std::array<std::uint8_t, kMotifClassCount + 1> representative{};
};

constexpr ClassTables make_tables() {
    ClassTables t{};
    std::array<std::uint8_t, 64> reps{};
    std::size_t nreps = 0;
    for (int c = 0; c < 64; ++c) {
        const auto code = static_cast<std::uint8_t>(c);
        if (!weakly_connected(code)) continue;
        const std::uint8_t m = min_relabeling(code);
        bool known = false;
        for (std::size_t i = 0; i < nreps; ++i) known = known || reps[i] == m;
        if (!known) reps[nreps++] = m;
    }
    // Order by (edge count, code).
    for (std::size_t i = 0; i < nreps; ++i)
        for (std::size_t j = i + 1; j < nreps; ++j) {
            const auto key_i = std::popcount(reps[i]) * 64 + reps[i];
            const auto key_j = std::popcount(reps[j]) * 64 + reps[j];
            if (key_j < key_i) std::swap(reps[i], reps[j]);
        }
    for (std::size_t i = 0; i < nreps; ++i) t.representative[i + 1] = reps[i];
    for (int c = 0; c < 64; ++c) {
        const auto code = static_cast<std::uint8_t>(c);
        if (!weakly_connected(code)) continue;
        const std::uint8_t m = min_relabeling(code);
        for (std::size_t i = 0; i < nreps; ++i)
            if (reps[i] == m) t.class_of[c] = static_cast<std::uint8_t>(i + 1);
    }
    return t;
}

constexpr ClassTables kTables = make_tables();

static_assert(kTables.representative[kMotifClassCount] == 63, "13 connected triad classes");
static_assert(kTables.class_of[0] == kDisconnectedTriad);

constexpr std::array<std::string_view, kMotifClassCount + 1> kLabels{
    "disconnected", "021D", "021C", "021U", "111U", "030T", "111D", "030C",
    "120U",         "201",  "120C", "120D", "210",  "300"};

}  // namespace

std::uint8_t adjacency_code(const TriadAdjacency& adj) {
    std::uint8_t code = 0;
    for (int k = 0; k < 6; ++k) {
        const auto [a, b] = kBitPairs[k];
        if (adj[a][b]) code |= static_cast<std::uint8_t>(1u << (5 - k));
    }
    return code;
}

TriadAdjacency adjacency_from_code(std::uint8_t code) {
    TriadAdjacency adj{};
    for (int k = 0; k < 6; ++k) {
        const auto [a, b] = kBitPairs[k];
        adj[a][b] = (code >> (5 - k)) & 1;
    }
    return adj;
}

int canonical_class(std::uint8_t code) {
    if (code >= 64) throw Error(fmt::format("triad adjacency code {} out of range", code));
    return kTables.class_of[code];
}

int canonical_class(const TriadAdjacency& adj) { return canonical_class(adjacency_code(adj)); }

std::uint8_t class_representative(int cls) {
    if (cls < 1 || cls > static_cast<int>(kMotifClassCount))
        throw Error(fmt::format("motif class {} out of range", cls));
    return kTables.representative[static_cast<std::size_t>(cls)];
}

std::string_view class_label(int cls) {
    if (cls < 0 || cls > static_cast<int>(kMotifClassCount))
        throw Error(fmt::format("motif class {} out of range", cls));
    return kLabels[static_cast<std::size_t>(cls)];
}

// ---------------------------------------------------------------------------

void SimpleDigraph::add_edge(NodeId from, NodeId to) {
    if (from == to) return;
    if (from >= out_.size() || to >= out_.size()) throw Error("SimpleDigraph: vertex out of range");
    out_[from].push_back(to);
}

void SimpleDigraph::finalize() {
    for (auto& o : out_) {
        std::sort(o.begin(), o.end());
        o.erase(std::unique(o.begin(), o.end()), o.end());
    }
}

bool SimpleDigraph::has_edge(NodeId from, NodeId to) const {
    const auto& o = out_[from];
    return std::binary_search(o.begin(), o.end(), to);
}

std::size_t SimpleDigraph::edge_count() const {
    std::size_t m = 0;
    for (const auto& o : out_) m += o.size();
    return m;
}

SimpleDigraph SimpleDigraph::from(const InteractionGraph& g) {
    SimpleDigraph d(g.node_count());
    for (const auto& [key, events] : g.edges) d.add_edge(key.first, key.second);
    d.finalize();
    return d;
}

std::uint64_t TriadCensus::total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
}

TriadCensus triad_census(const SimpleDigraph& g) {
    const std::size_t n = g.size();
    TriadCensus census;
    if (n < 3) return census;

    // Undirected neighbourhoods, sorted.
    std::vector<std::vector<NodeId>> nbr(n);
    for (NodeId v = 0; v < n; ++v)
        for (NodeId w : g.out(v)) {
            nbr[v].push_back(w);
            nbr[w].push_back(v);
        }
    for (auto& l : nbr) {
        std::sort(l.begin(), l.end());
        l.erase(std::unique(l.begin(), l.end()), l.end());
    }
    auto adjacent = [&](NodeId a, NodeId b) {
        return std::binary_search(nbr[a].begin(), nbr[a].end(), b);
    };

    std::vector<NodeId> s;
    for (NodeId v = 0; v < n; ++v) {
        for (NodeId u : nbr[v]) {
            if (u <= v) continue;
            s.clear();
            std::set_union(nbr[u].begin(), nbr[u].end(), nbr[v].begin(), nbr[v].end(),
                           std::back_inserter(s));
            for (NodeId w : s) {
                if (w == u || w == v) continue;
                // Each connected triple {a<b<c} is seen from its smallest linked
                // pair containing a, so count it once.
                if (!(u < w || (v < w && w < u && !adjacent(v, w)))) continue;
                const std::array<NodeId, 3> t{v, u, w};
                TriadAdjacency adj{};
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j)
                        if (i != j) adj[i][j] = g.has_edge(t[i], t[j]) ? 1 : 0;
                const int cls = canonical_class(adj);
                if (cls != kDisconnectedTriad) ++census.counts[static_cast<std::size_t>(cls - 1)];
            }
        }
    }
    return census;
}

TriadCensus triad_census(const InteractionGraph& g) { return triad_census(SimpleDigraph::from(g)); }

void write_census_header(std::ostream& out) {
    out << "post_id";
    for (std::size_t i = 1; i <= kMotifClassCount; ++i) out << fmt::format(",m{:02d}", i);
    out << '\n';
}

void write_census_row(std::ostream& out, std::string_view post_id, const TriadCensus& c) {
    out << post_id;
    for (auto v : c.counts) out << ',' << v;
    out << '\n';
}

}  // namespace topocontro
