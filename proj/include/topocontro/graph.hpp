#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "topocontro/ingest.hpp"

namespace topocontro {

using NodeId = std::uint32_t;

struct GraphDiagnostics {
    std::size_t deleted_author = 0;       // replies written by "[deleted]"
    std::size_t deleted_parent_author = 0;  // replies to a "[deleted]" post/comment
    std::size_t unresolvable_parent = 0;  // parent id not in the thread
    std::size_t self_replies = 0;

    bool operator==(const GraphDiagnostics&) const = default;
};

/// Directed user-user reply graph of one thread. Edges point replier -> repliee;
/// each edge carries the sorted timestamps of the replies that produced it.
/// Nodes are sorted by user id, so construction does not depend on comment order.
struct InteractionGraph {
    std::vector<std::string> nodes;
    std::map<std::pair<NodeId, NodeId>, std::vector<std::int64_t>> edges;
    std::string post_author;  // empty when the post author is "[deleted]"
    GraphDiagnostics diagnostics;

    std::size_t node_count() const noexcept { return nodes.size(); }
    std::size_t event_count() const noexcept;
    /// Index of `user` in `nodes`, or nodes.size() when absent.
    NodeId index_of(std::string_view user) const;

    bool operator==(const InteractionGraph&) const = default;
};

InteractionGraph build_interaction_graph(const ThreadRecord& rec);

struct UndirectedEdge {
    NodeId u = 0;  // u < v
    NodeId v = 0;
    std::size_t weight = 0;

    bool operator==(const UndirectedEdge&) const = default;
};

struct UndirectedGraph {
    std::size_t node_count = 0;
    std::vector<UndirectedEdge> edges;  // sorted by (u, v)

    std::vector<std::vector<std::pair<NodeId, std::size_t>>> adjacency() const;
};

/// {u,v} exists iff u->v or v->u does; weight is the event total of both directions.
UndirectedGraph undirected_view(const InteractionGraph& g);

// ---------------------------------------------------------------------------

struct CommentTreeNode {
    std::string id;  // post_id, comment_id, or "<orphans>"
    std::int64_t parent = -1;
    std::vector<std::size_t> children;
    std::size_t depth = 0;
    bool synthetic = false;
};

struct CommentTree {
    std::vector<CommentTreeNode> nodes;  // nodes[0] is the post
    std::size_t orphan_count = 0;

    std::size_t max_depth() const;
    std::size_t max_branching() const;
    double mean_branching() const;  // over nodes with at least one child
};

inline constexpr std::string_view kOrphansNodeId = "<orphans>";

/// Orphaned comments (parent outside the thread) hang under a synthetic
/// "<orphans>" child of the root.
CommentTree build_comment_tree(const ThreadRecord& rec);

// ---------------------------------------------------------------------------

enum class DistanceMode { Hop, InverseWeight };

std::string_view to_string(DistanceMode m);
DistanceMode distance_mode_from_string(std::string_view s);

/// Dense symmetric matrix; +inf marks disconnected pairs.
class DistanceMatrix {
public:
    DistanceMatrix() = default;
    explicit DistanceMatrix(std::size_t n, double fill = 0.0) : n_(n), d_(n * n, fill) {}

    std::size_t size() const noexcept { return n_; }
    double operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }
    double& operator()(std::size_t i, std::size_t j) { return d_[i * n_ + j]; }

    /// Largest finite off-diagonal entry, 0 if none.
    double max_finite() const;

private:
    std::size_t n_ = 0;
    std::vector<double> d_;
};

DistanceMatrix graph_distance_matrix(const UndirectedGraph& g, DistanceMode mode = DistanceMode::Hop);

// ---------------------------------------------------------------------------

/// Writes `<stem>.edges` ("src dst weight t1,t2,...") and `<stem>.nodes`.
void export_edgelist(const InteractionGraph& g, const std::filesystem::path& stem);

}  // namespace topocontro
