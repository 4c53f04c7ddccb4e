#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "topocontro/graph.hpp"

namespace topocontro {

inline constexpr std::size_t kMotifClassCount = 13;
inline constexpr int kDisconnectedTriad = 0;

/// 3x3 binary adjacency, adj[i][j] = edge i -> j; diagonal ignored.
using TriadAdjacency = std::array<std::array<std::uint8_t, 3>, 3>;

/// Six off-diagonal bits, most significant first, in the order
/// (0,1) (0,2) (1,0) (1,2) (2,0) (2,1).
std::uint8_t adjacency_code(const TriadAdjacency& adj);
TriadAdjacency adjacency_from_code(std::uint8_t code);

/// Isomorphism class in 1..13 of a weakly connected triad, or
/// kDisconnectedTriad. Classes are numbered by ascending edge count, then by
/// the smallest adjacency code reachable under the six vertex relabelings.
int canonical_class(const TriadAdjacency& adj);
int canonical_class(std::uint8_t code);

/// Smallest adjacency code of class `cls` (1..13).
std::uint8_t class_representative(int cls);

/// Holland-Leinhardt style label (e.g. "030T") of class `cls`, for reports.
std::string_view class_label(int cls);

/// Simple directed graph: multiplicities collapsed, no self-loops.
class SimpleDigraph {
public:
    explicit SimpleDigraph(std::size_t n = 0) : out_(n) {}

    std::size_t size() const noexcept { return out_.size(); }
    void add_edge(NodeId from, NodeId to);
    bool has_edge(NodeId from, NodeId to) const;
    const std::vector<NodeId>& out(NodeId v) const { return out_[v]; }
    std::size_t edge_count() const;

    /// Out-lists become sorted and deduplicated; call before querying.
    void finalize();

    static SimpleDigraph from(const InteractionGraph& g);

private:
    std::vector<std::vector<NodeId>> out_;
};

struct TriadCensus {
    std::array<std::uint64_t, kMotifClassCount> counts{};

    std::uint64_t total() const;
    bool operator==(const TriadCensus&) const = default;
};

/// Induced census of weakly connected triads. Only triples reachable from an
/// edge are visited, each exactly once.
TriadCensus triad_census(const SimpleDigraph& g);
TriadCensus triad_census(const InteractionGraph& g);

void write_census_header(std::ostream& out);
void write_census_row(std::ostream& out, std::string_view post_id, const TriadCensus& c);

}  // namespace topocontro
