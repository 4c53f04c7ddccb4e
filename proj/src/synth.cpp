#include "topocontro/synth.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "topocontro/common.hpp"
#include "topocontro/graph.hpp"
#include "topocontro/tda.hpp"

namespace topocontro {

void SynthConfig::validate() const {
    if (!(controversial_frac > 0.0 && controversial_frac < 1.0))
        throw Error(fmt::format("controversial fraction must be in (0, 1), got {}", controversial_frac));
    if (n_posts == 0) throw Error("synthetic corpus needs at least one post");
    if (min_users < 6 || max_users < min_users) throw Error("synthetic user range must satisfy 6 <= min <= max");
    if (min_extra_edges < 0 || max_extra_edges < min_extra_edges) throw Error("bad extra edge range");
    if (max_filler < 0) throw Error("max_filler must be >= 0");
}

namespace {

const char* const kSubreddits[] = {"r/AskReddit", "r/news", "r/politics", "r/science", "r/technology"};

class PostBuilder {
public:
    PostBuilder(ThreadRecord& rec, Rng& rng) : rec_(rec), rng_(rng) {}

    void add_user() {
        const std::size_t k = names_.size();
        names_.push_back(k == 0 ? rec_.author : fmt::format("{}_u{}", rec_.post_id, k));
        by_user_.emplace_back();
        adj_.emplace_back();
    }

    std::size_t users() const { return names_.size(); }

    // Comment by user `u` answering comment `parent` (-1 = the post). Returns its index.
    std::size_t reply(std::size_t u, long parent) {
        CommentRecord c;
        c.comment_id = fmt::format("{}_c{}", rec_.post_id, rec_.comments.size() + 1);
        c.parent_id = parent < 0 ? rec_.post_id : rec_.comments[static_cast<std::size_t>(parent)].comment_id;
        c.author = names_[u];
        c.body = fmt::format("comment {}", rec_.comments.size() + 1);
        c.created_utc = rec_.created_utc + 60 * static_cast<std::int64_t>(rec_.comments.size() + 1);
        const std::size_t target = parent < 0 ? 0 : owner_[static_cast<std::size_t>(parent)];
        if (target != u) {
            adj_[u].insert(target);
            adj_[target].insert(u);
        }
        rec_.comments.push_back(std::move(c));
        owner_.push_back(u);
        by_user_[u].push_back(rec_.comments.size() - 1);
        return rec_.comments.size() - 1;
    }

    void deleted_reply() {
        const auto parent = static_cast<std::size_t>(rng_.below(rec_.comments.size()));
        CommentRecord c;
        c.comment_id = fmt::format("{}_c{}", rec_.post_id, rec_.comments.size() + 1);
        c.parent_id = rec_.comments[parent].comment_id;
        c.author = "[deleted]";
        c.body = "[deleted]";
        c.created_utc = rec_.created_utc + 60 * static_cast<std::int64_t>(rec_.comments.size() + 1);
        rec_.comments.push_back(std::move(c));
        owner_.push_back(kNoUser);
    }

    // Some comment written by `u`; the post itself (-1) for the author without comments.
    long comment_of(std::size_t u) {
        if (by_user_[u].empty()) return -1;
        return static_cast<long>(by_user_[u][rng_.below(by_user_[u].size())]);
    }

    // u answers one of v's comments and v answers back.
    void exchange(std::size_t u, std::size_t v) {
        const auto first = reply(u, comment_of(v));
        reply(v, static_cast<long>(first));
    }

    std::vector<std::size_t> distances_from(std::size_t s) const {
        std::vector<std::size_t> d(users(), SIZE_MAX);
        std::deque<std::size_t> q{s};
        d[s] = 0;
        while (!q.empty()) {
            auto x = q.front();
            q.pop_front();
            for (auto y : adj_[x])
                if (d[y] == SIZE_MAX) {
                    d[y] = d[x] + 1;
                    q.push_back(y);
                }
        }
        return d;
    }

    // Closes a shortest path of 3-5 hops into a loop of 4-6 users.
    bool plant_loop() {
        for (int attempt = 0; attempt < 60; ++attempt) {
            const auto a = static_cast<std::size_t>(rng_.below(users()));
            const auto d = distances_from(a);
            for (std::size_t len = 3 + rng_.below(3); len >= 3; --len) {
                std::vector<std::size_t> far;
                for (std::size_t v = 0; v < users(); ++v)
                    if (d[v] == len) far.push_back(v);
                if (!far.empty()) {
                    exchange(a, far[rng_.below(far.size())]);
                    return true;
                }
            }
        }
        return plant_square();
    }

    // Two newcomers x, y and an adjacent pair a-b form the square a-x-y-b.
    bool plant_square() {
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (std::size_t a = 0; a < users(); ++a)
            for (auto b : adj_[a])
                if (a < b) pairs.emplace_back(a, b);
        if (pairs.empty()) return false;
        const auto [a, b] = pairs[rng_.below(pairs.size())];
        add_user();
        const auto x = users() - 1;
        add_user();
        const auto y = users() - 1;
        const auto cx = reply(x, comment_of(a));
        const auto cy = reply(y, static_cast<long>(cx));
        reply(b, static_cast<long>(cy));
        return true;
    }

    bool plant_triangle() {
        for (int attempt = 0; attempt < 60; ++attempt) {
            const auto a = static_cast<std::size_t>(rng_.below(users()));
            std::vector<std::size_t> cands;
            for (auto b : adj_[a])
                for (auto c : adj_[b])
                    if (c != a && !adj_[a].count(c)) cands.push_back(c);
            if (cands.empty()) continue;
            std::sort(cands.begin(), cands.end());
            exchange(a, cands[rng_.below(cands.size())]);
            return true;
        }
        return false;
    }

    // Repeat reply along an existing user pair.
    void filler() {
        const auto u = static_cast<std::size_t>(rng_.below(users()));
        if (adj_[u].empty()) return;
        std::vector<std::size_t> nb(adj_[u].begin(), adj_[u].end());
        reply(u, comment_of(nb[rng_.below(nb.size())]));
    }

private:
    static constexpr std::size_t kNoUser = SIZE_MAX;
    ThreadRecord& rec_;
    Rng& rng_;
    std::vector<std::string> names_;
    std::vector<std::vector<std::size_t>> by_user_;
    std::vector<std::set<std::size_t>> adj_;
    std::vector<std::size_t> owner_;
};

ThreadRecord make_post(const SynthConfig& cfg, std::size_t index) {
    Rng rng(derive_seed(cfg.seed, index));
    const bool controversial = rng.bernoulli(cfg.controversial_frac);

    ThreadRecord rec;
    rec.post_id = fmt::format("syn{:06}", index);
    rec.subreddit = kSubreddits[rng.below(std::size(kSubreddits))];
    rec.title = fmt::format("Synthetic post {}", index);
    rec.selftext = "";
    rec.author = fmt::format("{}_u0", rec.post_id);
    rec.created_utc = 1'600'000'000 + 3600 * static_cast<std::int64_t>(index);
    const double ur = controversial ? rng.uniform(0.30, 0.70) : rng.uniform(0.80, 1.00);
    rec.upvote_ratio = std::round(ur * 100.0) / 100.0;

    PostBuilder b(rec, rng);
    b.add_user();
    const auto n_users = static_cast<std::size_t>(rng.between(cfg.min_users, cfg.max_users));
    for (std::size_t u = 1; u < n_users; ++u) {
        b.add_user();
        const long parent = rec.comments.empty() || rng.bernoulli(0.35)
                                ? -1
                                : static_cast<long>(rng.below(rec.comments.size()));
        b.reply(u, parent);
    }
    const auto extra = rng.between(cfg.min_extra_edges, cfg.max_extra_edges);
    std::int64_t loops = 0;
    for (std::int64_t e = 0; e < extra; ++e) {
        // The first structure of a controversial post is always a loop.
        loops += controversial ? e == 0 || !rng.bernoulli(cfg.controversial_noise)
                               : rng.bernoulli(cfg.noncontroversial_noise);
    }
    // Triangles first: a later triangle closure could chord a planted loop.
    for (std::int64_t e = loops; e < extra; ++e)
        if (!b.plant_triangle()) b.filler();
    for (std::int64_t e = 0; e < loops; ++e)
        if (!b.plant_loop()) b.filler();
    const auto fillers = rng.between(0, cfg.max_filler);
    for (std::int64_t f = 0; f < fillers; ++f) b.filler();
    const std::size_t before = rec.comments.size();
    for (std::size_t k = 0; k < before; ++k)
        if (rng.bernoulli(cfg.deleted_prob)) b.deleted_reply();
    return rec;
}

}  // namespace

std::vector<ThreadRecord> generate_synthetic_corpus(const SynthConfig& cfg) {
    cfg.validate();
    std::vector<ThreadRecord> out(cfg.n_posts);
    for (std::size_t i = 0; i < cfg.n_posts; ++i) out[i] = make_post(cfg, i);

    const auto signal = measure_planted_signal(out);
    if (signal.controversial > 0 && signal.noncontroversial > 0 &&
        !(signal.mean_h1_controversial > signal.mean_h1_noncontroversial))
        throw Error(fmt::format("synthetic corpus lacks the planted signal: mean H1 bars {} (C) vs {} (NC)",
                                signal.mean_h1_controversial, signal.mean_h1_noncontroversial));
    return out;
}

void write_corpus_jsonl(const std::filesystem::path& path, const std::vector<ThreadRecord>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
    for (const auto& r : records) out << to_json(r).dump() << '\n';
}

SynthSignal measure_planted_signal(const std::vector<ThreadRecord>& records, unsigned jobs) {
    std::vector<std::size_t> h1(records.size(), 0);
    std::vector<int> cls(records.size(), -1);
    parallel_for(records.size(), jobs, [&](std::size_t i) {
        const auto label = label_post(records[i]);
        if (!label.included()) return;
        cls[i] = label.value == LabelValue::Controversial ? 1 : 0;
        h1[i] = graph_persistence(build_interaction_graph(records[i]), TdaConfig{}).count(1);
    });
    SynthSignal s;
    double sum_c = 0, sum_nc = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (cls[i] == 1) {
            ++s.controversial;
            sum_c += static_cast<double>(h1[i]);
        } else if (cls[i] == 0) {
            ++s.noncontroversial;
            sum_nc += static_cast<double>(h1[i]);
        }
    }
    if (s.controversial) s.mean_h1_controversial = sum_c / static_cast<double>(s.controversial);
    if (s.noncontroversial) s.mean_h1_noncontroversial = sum_nc / static_cast<double>(s.noncontroversial);
    return s;
}

std::pair<EmbeddingTable, EmbeddingTable> synthetic_embeddings(const std::vector<ThreadRecord>& records,
                                                                std::size_t dim, std::uint64_t seed) {
    if (dim == 0) throw Error("embedding dimension must be >= 1");
    EmbeddingTable posts, comments;
    posts.scope = EmbeddingScope::Post;
    comments.scope = EmbeddingScope::Comment;
    posts.dim = comments.dim = dim;
    for (std::size_t i = 0; i < records.size(); ++i) {
        Rng rng(derive_seed(seed, 0x656d6200ULL + i));
        auto draw = [&] {
            std::vector<double> v(dim);
            for (auto& x : v) x = std::round(rng.normal() * 1e6) / 1e6;
            return v;
        };
        posts.vectors[records[i].post_id] = draw();
        for (const auto& c : records[i].comments) comments.vectors[c.comment_id] = draw();
    }
    return {std::move(posts), std::move(comments)};
}

}  // namespace topocontro
