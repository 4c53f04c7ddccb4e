#include <doctest.h>

#include <cmath>
#include <numeric>

#include "persistence_oracle.hpp"
#include "test_support.hpp"
#include "topocontro/tda.hpp"

using namespace topocontro;
using topocontro::testing::ThreadBuilder;

namespace {

const double kSqrt2 = std::sqrt(2.0);

DistanceMatrix square_metric() {
    DistanceMatrix d(4, 0.0);
    auto set = [&](int i, int j, double v) { d(i, j) = d(j, i) = v; };
    set(0, 1, 1.0);
    set(1, 2, 1.0);
    set(2, 3, 1.0);
    set(3, 0, 1.0);
    set(0, 2, kSqrt2);
    set(1, 3, kSqrt2);
    return d;
}

DistanceMatrix random_graph_metric(Rng& rng, std::size_t n, double p) {
    UndirectedGraph g{n, {}};
    for (NodeId i = 0; i < n; ++i)
        for (NodeId j = i + 1; j < n; ++j)
            if (rng.bernoulli(p)) g.edges.push_back({i, j, 1 + rng.below(3)});
    return graph_distance_matrix(g, rng.bernoulli(0.5) ? DistanceMode::Hop : DistanceMode::InverseWeight);
}

DistanceMatrix random_point_cloud(Rng& rng, std::size_t n) {
    std::vector<std::pair<double, double>> pts(n);
    for (auto& p : pts) p = {std::round(rng.uniform(0, 4) * 4) / 4, std::round(rng.uniform(0, 4) * 4) / 4};
    DistanceMatrix d(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            d(i, j) = d(j, i) = std::hypot(pts[i].first - pts[j].first, pts[i].second - pts[j].second);
    return d;
}

std::size_t components(const DistanceMatrix& d, double eps) {
    std::vector<std::size_t> parent(d.size());
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t j = i + 1; j < d.size(); ++j)
            if (d(i, j) != kInf && d(i, j) <= eps) parent[find(i)] = find(j);
    std::size_t c = 0;
    for (std::size_t i = 0; i < d.size(); ++i) c += find(i) == i;
    return c;
}

}  // namespace

TEST_CASE("VR filtration fixtures") {
    SUBCASE("two points") {
        DistanceMatrix d(2, 0.0);
        d(0, 1) = d(1, 0) = 1.0;
        auto f = build_vr_filtration(d, 2.0);
        CHECK(f.count(0) == 2);
        CHECK(f.count(1) == 1);
        CHECK(f.simplices.back().value == 1.0);
    }
    SUBCASE("equilateral triple") {
        DistanceMatrix d(3, 1.0);
        for (int i = 0; i < 3; ++i) d(i, i) = 0.0;
        auto f = build_vr_filtration(d, 2.0);
        CHECK(f.count(0) == 3);
        CHECK(f.count(1) == 3);
        CHECK(f.count(2) == 1);
        CHECK(f.simplices.back() == Simplex{{0, 1, 2}, 2, 1.0});
    }
    SUBCASE("square with diagonals") {
        auto f = build_vr_filtration(square_metric(), 2.0);
        CHECK(f.count(0) == 4);
        CHECK(f.count(1) == 6);
        CHECK(f.count(2) == 4);
        std::size_t unit_edges = 0, diag_edges = 0;
        for (const auto& s : f.simplices) {
            if (s.dim == 1) (s.value == 1.0 ? unit_edges : diag_edges) += 1;
            if (s.dim == 2) CHECK(s.value == kSqrt2);
            if (s.dim == 0) CHECK(s.value == 0.0);
        }
        CHECK(unit_edges == 4);
        CHECK(diag_edges == 2);
    }
    SUBCASE("eps_max cuts long edges and their triangles") {
        auto f = build_vr_filtration(square_metric(), 1.2);
        CHECK(f.count(1) == 4);
        CHECK(f.count(2) == 0);
    }
    SUBCASE("empty metric space") {
        CHECK_THROWS_WITH(build_vr_filtration(DistanceMatrix(0), 1.0), "empty metric space");
    }
}

TEST_CASE("filtration order and closure on random inputs") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        auto d = random_point_cloud(rng, 2 + rng.below(7));
        auto f = build_vr_filtration(d, 3.0);
        std::map<std::vector<NodeId>, double> value_of;
        for (std::size_t i = 0; i < f.simplices.size(); ++i) {
            const auto& s = f.simplices[i];
            std::vector<NodeId> verts(s.vertices.begin(), s.vertices.begin() + s.dim + 1);
            value_of[verts] = s.value;
            if (i > 0) {
                const auto& p = f.simplices[i - 1];
                CHECK(std::tie(p.value, p.dim, p.vertices) <= std::tie(s.value, s.dim, s.vertices));
            }
            if (s.dim == 1) CHECK(s.value == d(s.vertices[0], s.vertices[1]));
            // faces already present, with no larger value
            if (s.dim >= 1) {
                for (std::size_t drop = 0; drop <= s.dim; ++drop) {
                    std::vector<NodeId> face;
                    for (std::size_t k = 0; k <= s.dim; ++k)
                        if (k != drop) face.push_back(s.vertices[k]);
                    REQUIRE(value_of.contains(face));
                    CHECK(value_of[face] <= s.value);
                }
            }
        }
    }
}

TEST_CASE("persistence fixtures") {
    SUBCASE("single point") {
        auto diag = compute_persistence(build_vr_filtration(DistanceMatrix(1, 0.0), 0.0));
        CHECK(diag.bars == std::vector<PersistenceBar>{{0, 0.0, kInf}});
    }
    SUBCASE("two points") {
        DistanceMatrix d(2, 0.0);
        d(0, 1) = d(1, 0) = 1.0;
        auto diag = compute_persistence(build_vr_filtration(d, 2.0));
        CHECK(diag.bars == std::vector<PersistenceBar>{{0, 0.0, 1.0}, {0, 0.0, kInf}});
    }
    SUBCASE("square: three finite H0 bars, one essential, one loop") {
        const std::vector<PersistenceBar> expected{
            {0, 0.0, 1.0}, {0, 0.0, 1.0}, {0, 0.0, 1.0}, {0, 0.0, kInf}, {1, 1.0, kSqrt2}};
        // The brute-force oracle derives the same multiset independently.
        oracle::BruteForcePersistence bf(square_metric(), 2.0);
        CHECK(bf.bars() == expected);
        auto diag = compute_persistence(build_vr_filtration(square_metric(), 2.0));
        CHECK(diag.bars == expected);
    }
    SUBCASE("square without diagonals keeps an essential loop") {
        auto diag = compute_persistence(build_vr_filtration(square_metric(), 1.0));
        CHECK(diag.count(1) == 1);
        CHECK(diag.essential_count(1) == 1);
    }
}

TEST_CASE("reduction engine matches the brute-force oracle on random small graphs") {
    Rng rng(20240601);
    int compared = 0;
    for (int trial = 0; trial < 220; ++trial) {
        const std::size_t n = 1 + rng.below(7);
        auto d = trial % 3 == 0 ? random_point_cloud(rng, n) : random_graph_metric(rng, n, rng.uniform(0.2, 0.8));
        double eps = d.max_finite();
        if (rng.bernoulli(0.25)) eps *= 0.6;
        auto diag = compute_persistence(build_vr_filtration(d, eps));
        oracle::BruteForcePersistence bf(d, eps);
        REQUIRE(diag.bars == bf.bars());
        ++compared;

        for (const auto& b : diag.bars) {
            CHECK(b.birth <= b.death);
            if (b.dim == 0) CHECK(b.birth == 0.0);
        }
        CHECK(diag.essential_count(0) == components(d, eps));
    }
    CHECK(compared >= 200);
}

TEST_CASE("Euler characteristic matches oracle Betti numbers at every scale") {
    Rng rng(77);
    for (int trial = 0; trial < 60; ++trial) {
        auto d = random_graph_metric(rng, 2 + rng.below(6), 0.5);
        oracle::BruteForcePersistence bf(d, d.max_finite());
        auto f = build_vr_filtration(d, d.max_finite());
        for (std::size_t i = 0; i < bf.values().size(); ++i) {
            const double eps = bf.values()[i];
            long chi = 0;
            for (const auto& s : f.simplices)
                if (s.value <= eps) chi += (s.dim % 2 == 0) ? 1 : -1;
            auto b = bf.betti(i);
            CHECK(chi == b[0] - b[1] + b[2]);
        }
    }
}

TEST_CASE("persistence image") {
    SUBCASE("empty diagram") {
        auto img = diagram_to_image(PersistenceDiagram{}, 0, ImageConfig::square(1.0));
        CHECK(std::all_of(img.pixels.begin(), img.pixels.end(), [](double v) { return v == 0.0; }));
        CHECK(img.pixels.size() == 64);
    }
    SUBCASE("single bar on a single pixel") {
        PersistenceDiagram diag;
        diag.bars = {{0, 0.0, 1.0}};
        auto cfg = ImageConfig::square(1.0, 1);
        cfg.sigma = 0.5;
        auto img = diagram_to_image(diag, 0, cfg);
        CHECK(img.pixels[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
        CHECK(img.pixels[0] == doctest::Approx(0.3679).epsilon(1e-4));
        CHECK(diagram_to_image(diag, 1, cfg).pixels[0] == 0.0);
    }
    SUBCASE("essential bars: extended or dropped") {
        PersistenceDiagram diag;
        diag.bars = {{0, 0.0, kInf}};
        diag.max_filtration_value = 2.0;
        auto cfg = ImageConfig::square(2.0, 1);
        cfg.sigma = 1.0;
        const double expected = 2.1 * std::exp(-(1.0 + 1.1 * 1.1) / 2.0);
        CHECK(diagram_to_image(diag, 0, cfg).pixels[0] == doctest::Approx(expected));
        cfg.essential = EssentialBars::Drop;
        CHECK(diagram_to_image(diag, 0, cfg).pixels[0] == 0.0);
    }
    SUBCASE("additivity and nonnegativity on random diagrams") {
        Rng rng(3);
        for (int trial = 0; trial < 100; ++trial) {
            PersistenceDiagram a, b, both;
            for (auto* d : {&a, &b}) {
                const auto n = rng.below(6);
                for (std::size_t i = 0; i < n; ++i) {
                    const double birth = rng.uniform(0, 2);
                    const double death = rng.bernoulli(0.2) ? kInf : birth + rng.uniform(0, 2);
                    d->bars.push_back({1, birth, death});
                    both.bars.push_back({1, birth, death});
                }
                d->max_filtration_value = 3.0;
            }
            both.max_filtration_value = 3.0;
            auto cfg = ImageConfig::square(3.0, 5);
            auto ia = diagram_to_image(a, 1, cfg), ib = diagram_to_image(b, 1, cfg);
            auto iab = diagram_to_image(both, 1, cfg);
            for (std::size_t p = 0; p < iab.pixels.size(); ++p) {
                CHECK(iab.pixels[p] >= 0.0);
                CHECK(iab.pixels[p] == doctest::Approx(ia.pixels[p] + ib.pixels[p]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("f4 vectors") {
    TdaConfig cfg;
    cfg.image = ImageConfig::square(3.0);
    SUBCASE("default resolution gives 128 values") {
        auto g = build_interaction_graph(ThreadBuilder().filler(4).build());
        CHECK(f4_vector(g, cfg).size() == 128);
    }
    SUBCASE("edgeless graph has no H1 signal") {
        InteractionGraph g;
        g.nodes = {"a", "b", "c", "d", "e"};
        auto v = f4_vector(g, cfg);
        REQUIRE(v.size() == 128);
        CHECK(std::all_of(v.begin() + 64, v.end(), [](double x) { return x == 0.0; }));
    }
    SUBCASE("empty graph gives zeros") {
        auto v = f4_vector(InteractionGraph{}, cfg);
        CHECK(v == std::vector<double>(128, 0.0));
    }
    SUBCASE("a reply square yields an H1 bar (1, 2)") {
        std::string a, b, c;
        auto rec = ThreadBuilder("p", "A")
                       .reply("B", "", &a)
                       .reply("C", a, &b)
                       .reply("D", b, &c)
                       .reply("A", c)
                       .build();
        auto diag = graph_persistence(build_interaction_graph(rec), cfg);
        CHECK(diag.in_dim(1) == std::vector<PersistenceBar>{{1, 1.0, 2.0}});
    }
    SUBCASE("relabeling users and shuffling comments leaves f4 unchanged") {
        Rng rng(8);
        for (int trial = 0; trial < 30; ++trial) {
            ThreadBuilder b("p", "u0");
            std::vector<std::string> ids;
            const auto users = 3 + rng.below(8);
            for (std::size_t i = 0, n = 5 + rng.below(20); i < n; ++i) {
                std::string parent = ids.empty() || rng.bernoulli(0.2) ? "" : ids[rng.below(ids.size())];
                std::string id;
                b.reply("u" + std::to_string(rng.below(users)), parent, &id);
                ids.push_back(id);
            }
            auto rec = b.build();
            auto relabeled = rec;
            std::vector<std::size_t> perm(users);
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            rng.shuffle(perm);
            auto rename = [&](std::string& u) { u = "z" + std::to_string(perm[std::stoul(u.substr(1))]); };
            rename(relabeled.author);
            for (auto& c : relabeled.comments) rename(c.author);
            rng.shuffle(relabeled.comments);
            CHECK(f4_vector(build_interaction_graph(rec), cfg) ==
                  f4_vector(build_interaction_graph(relabeled), cfg));
        }
    }
}

TEST_CASE("temporal filtration source") {
    std::string a;
    auto rec = ThreadBuilder("p", "A").reply("B", "", &a, 0).reply("C", a, nullptr, 7200).build();
    TdaConfig cfg;
    cfg.source = FiltrationSource::Temporal;
    auto m = filtration_matrix(build_interaction_graph(rec), cfg);
    // nodes A, B, C: B-A at hour 0, C-B at hour 2, A-C never
    CHECK(m(0, 1) == 0.0);
    CHECK(m(1, 2) == 2.0);
    CHECK(m(0, 2) == kInf);
}
