#include "topocontro/graph.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <queue>
#include <set>
#include <unordered_map>

#include <fmt/format.h>

#include "topocontro/common.hpp"

namespace topocontro {

namespace {
bool is_deleted(std::string_view author) { return author.empty() || author == kDeletedAuthor; }
}  // namespace

std::size_t InteractionGraph::event_count() const noexcept {
    std::size_t total = 0;
    for (const auto& [key, events] : edges) total += events.size();
    return total;
}

NodeId InteractionGraph::index_of(std::string_view user) const {
    auto it = std::lower_bound(nodes.begin(), nodes.end(), user);
    if (it == nodes.end() || *it != user) return static_cast<NodeId>(nodes.size());
    return static_cast<NodeId>(it - nodes.begin());
}

InteractionGraph build_interaction_graph(const ThreadRecord& rec) {
    InteractionGraph g;
    std::unordered_map<std::string_view, std::string_view> author_of;
    author_of.reserve(rec.comments.size() + 1);
    author_of.emplace(rec.post_id, rec.author);
    for (const auto& c : rec.comments) author_of.emplace(c.comment_id, c.author);

    struct Reply {
        std::string_view src, dst;
        std::int64_t t;
    };
    std::set<std::string_view> users;
    std::vector<Reply> replies;
    if (!is_deleted(rec.author)) {
        users.insert(rec.author);
        g.post_author = rec.author;
    }
    for (const auto& c : rec.comments) {
        auto parent = author_of.find(c.parent_id);
        if (parent == author_of.end()) {
            ++g.diagnostics.unresolvable_parent;
            continue;
        }
        if (is_deleted(c.author)) {
            ++g.diagnostics.deleted_author;
            continue;
        }
        users.insert(c.author);
        if (is_deleted(parent->second)) {
            ++g.diagnostics.deleted_parent_author;
            continue;
        }
        if (parent->second == c.author) {
            ++g.diagnostics.self_replies;
            continue;
        }
        replies.push_back({c.author, parent->second, c.created_utc});
    }

    g.nodes.assign(users.begin(), users.end());
    for (const auto& r : replies)
        g.edges[{g.index_of(r.src), g.index_of(r.dst)}].push_back(r.t);
    for (auto& [key, events] : g.edges) std::sort(events.begin(), events.end());
    return g;
}

UndirectedGraph undirected_view(const InteractionGraph& g) {
    std::map<std::pair<NodeId, NodeId>, std::size_t> merged;
    for (const auto& [key, events] : g.edges) {
        auto [a, b] = key;
        merged[{std::min(a, b), std::max(a, b)}] += events.size();
    }
    UndirectedGraph u;
    u.node_count = g.nodes.size();
    u.edges.reserve(merged.size());
    for (const auto& [key, w] : merged) u.edges.push_back({key.first, key.second, w});
    return u;
}

std::vector<std::vector<std::pair<NodeId, std::size_t>>> UndirectedGraph::adjacency() const {
    std::vector<std::vector<std::pair<NodeId, std::size_t>>> adj(node_count);
    for (const auto& e : edges) {
        adj[e.u].emplace_back(e.v, e.weight);
        adj[e.v].emplace_back(e.u, e.weight);
    }
    return adj;
}

// ---------------------------------------------------------------------------

CommentTree build_comment_tree(const ThreadRecord& rec) {
    CommentTree tree;
    tree.nodes.push_back({rec.post_id, -1, {}, 0, false});

    std::unordered_map<std::string_view, std::size_t> index;
    index.emplace(rec.post_id, 0);
    for (const auto& c : rec.comments) {
        index.emplace(c.comment_id, tree.nodes.size());
        tree.nodes.push_back({c.comment_id, -1, {}, 0, false});
    }

    std::size_t orphans_node = 0;
    auto orphans = [&]() -> std::size_t {
        if (orphans_node == 0) {
            orphans_node = tree.nodes.size();
            tree.nodes.push_back({std::string(kOrphansNodeId), 0, {}, 1, true});
            tree.nodes[0].children.push_back(orphans_node);
        }
        return orphans_node;
    };

    for (std::size_t i = 0; i < rec.comments.size(); ++i) {
        const std::size_t self = i + 1;
        auto it = index.find(rec.comments[i].parent_id);
        if (it == index.end()) {
            ++tree.orphan_count;
            tree.nodes[self].parent = static_cast<std::int64_t>(orphans());
        } else {
            tree.nodes[self].parent = static_cast<std::int64_t>(it->second);
        }
    }
    for (std::size_t i = 1; i <= rec.comments.size(); ++i)
        tree.nodes[static_cast<std::size_t>(tree.nodes[i].parent)].children.push_back(i);

    // Depths by BFS from the root; anything unreached sits on a reply cycle and
    // is re-homed under the orphans node.
    std::vector<bool> seen(tree.nodes.size(), false);
    auto bfs = [&](std::size_t start) {
        std::deque<std::size_t> q{start};
        seen[start] = true;
        while (!q.empty()) {
            const std::size_t v = q.front();
            q.pop_front();
            for (std::size_t ch : tree.nodes[v].children) {
                if (seen[ch]) continue;
                seen[ch] = true;
                tree.nodes[ch].depth = tree.nodes[v].depth + 1;
                q.push_back(ch);
            }
        }
    };
    bfs(0);
    for (std::size_t i = 1; i <= rec.comments.size(); ++i) {
        if (seen[i]) continue;
        auto& old_parent = tree.nodes[static_cast<std::size_t>(tree.nodes[i].parent)].children;
        old_parent.erase(std::remove(old_parent.begin(), old_parent.end(), i), old_parent.end());
        const std::size_t o = orphans();
        seen.resize(tree.nodes.size(), true);
        tree.nodes[i].parent = static_cast<std::int64_t>(o);
        tree.nodes[o].children.push_back(i);
        ++tree.orphan_count;
        tree.nodes[i].depth = tree.nodes[o].depth + 1;
        bfs(i);
    }
    return tree;
}

std::size_t CommentTree::max_depth() const {
    std::size_t d = 0;
    for (const auto& n : nodes) d = std::max(d, n.depth);
    return d;
}

std::size_t CommentTree::max_branching() const {
    std::size_t b = 0;
    for (const auto& n : nodes) b = std::max(b, n.children.size());
    return b;
}

double CommentTree::mean_branching() const {
    std::size_t internal = 0, total = 0;
    for (const auto& n : nodes) {
        if (n.children.empty()) continue;
        ++internal;
        total += n.children.size();
    }
    return internal == 0 ? 0.0 : static_cast<double>(total) / static_cast<double>(internal);
}

// ---------------------------------------------------------------------------

std::string_view to_string(DistanceMode m) {
    return m == DistanceMode::Hop ? "hop" : "invweight";
}

DistanceMode distance_mode_from_string(std::string_view s) {
    if (s == "hop") return DistanceMode::Hop;
    if (s == "invweight" || s == "inverse-weight") return DistanceMode::InverseWeight;
    throw Error(fmt::format("unknown distance mode '{}' (expected hop|invweight)", s));
}

double DistanceMatrix::max_finite() const {
    double m = 0.0;
    for (double v : d_)
        if (v != kInf) m = std::max(m, v);
    return m;
}

DistanceMatrix graph_distance_matrix(const UndirectedGraph& g, DistanceMode mode) {
    const std::size_t n = g.node_count;
    DistanceMatrix dist(n, kInf);
    const auto adj = g.adjacency();
    using Item = std::pair<double, NodeId>;
    for (std::size_t s = 0; s < n; ++s) {
        dist(s, s) = 0.0;
        if (mode == DistanceMode::Hop) {
            std::deque<NodeId> q{static_cast<NodeId>(s)};
            while (!q.empty()) {
                const NodeId v = q.front();
                q.pop_front();
                for (auto [w, weight] : adj[v]) {
                    if (dist(s, w) != kInf) continue;
                    dist(s, w) = dist(s, v) + 1.0;
                    q.push_back(w);
                }
            }
        } else {
            std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
            pq.emplace(0.0, static_cast<NodeId>(s));
            while (!pq.empty()) {
                auto [d, v] = pq.top();
                pq.pop();
                if (d > dist(s, v)) continue;
                for (auto [w, weight] : adj[v]) {
                    const double nd = d + 1.0 / static_cast<double>(weight);
                    if (nd < dist(s, w)) {
                        dist(s, w) = nd;
                        pq.emplace(nd, w);
                    }
                }
            }
        }
    }
    // Dijkstra sums can differ in the last ulp depending on direction.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double m = std::min(dist(i, j), dist(j, i));
            dist(i, j) = dist(j, i) = m;
        }
    return dist;
}

// ---------------------------------------------------------------------------

void export_edgelist(const InteractionGraph& g, const std::filesystem::path& stem) {
    auto edges_path = stem;
    edges_path += ".edges";
    auto nodes_path = stem;
    nodes_path += ".nodes";
    std::ofstream eo(edges_path, std::ios::binary | std::ios::trunc);
    std::ofstream no(nodes_path, std::ios::binary | std::ios::trunc);
    if (!eo || !no) throw Error(fmt::format("cannot write edge list '{}'", stem.string()));
    for (const auto& [key, events] : g.edges) {
        eo << g.nodes[key.first] << ' ' << g.nodes[key.second] << ' ' << events.size() << ' ';
        for (std::size_t i = 0; i < events.size(); ++i) eo << (i ? "," : "") << events[i];
        eo << '\n';
    }
    for (const auto& n : g.nodes) no << n << (n == g.post_author ? " author" : "") << '\n';
}

}  // namespace topocontro
