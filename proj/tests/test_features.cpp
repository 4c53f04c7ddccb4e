#include <doctest.h>

#include <cmath>
#include <sstream>

#include "test_support.hpp"
#include "topocontro/features.hpp"

using namespace topocontro;
using topocontro::testing::TempDir;
using topocontro::testing::ThreadBuilder;
using topocontro::testing::write_file;

namespace {

LabeledStore make_store(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    LabeledStore s;
    for (std::size_t i = 0; i < n; ++i) {
        ThreadBuilder b("p" + std::to_string(i), "A");
        b.ur(rng.bernoulli(0.5) ? 0.5 : 0.9);
        std::vector<std::string> ids;
        const std::size_t m = 5 + rng.below(15);
        for (std::size_t k = 0; k < m; ++k) {
            const std::string author = "u" + std::to_string(rng.below(8));
            std::string id;
            const std::string parent = ids.empty() || rng.bernoulli(0.3) ? "" : ids[rng.below(ids.size())];
            b.reply(author, parent, &id);
            ids.push_back(id);
        }
        s.records.push_back(b.build());
        s.labels.push_back(label_post(s.records.back(), s.label_config));
    }
    return s;
}

EmbeddingTable random_post_table(const LabeledStore& s, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    EmbeddingTable t;
    t.dim = dim;
    for (const auto& r : s.records) {
        std::vector<double> v(dim);
        for (auto& x : v) x = rng.normal();
        t.vectors[r.post_id] = v;
    }
    return t;
}

}  // namespace

TEST_CASE("FeatureSet parsing") {
    CHECK(FeatureSet::parse("f4+f0+f3").name() == "f0+f3+f4");
    CHECK_THROWS_AS(FeatureSet::parse("f0+f0"), Error);
    CHECK_THROWS_AS(FeatureSet::parse("f5"), Error);
    CHECK_THROWS_AS(FeatureSet::parse(""), Error);
    auto list = FeatureSet::parse_list("f0,f0+f3+f4");
    REQUIRE(list.size() == 2);
    CHECK(FeatureSet::merge(list).name() == "f0+f3+f4");
    CHECK(FeatureSet::parse("f2+f3").needs_embeddings());
    CHECK_FALSE(FeatureSet::parse("f0+f3").needs_embeddings());
}

TEST_CASE("f0 examples") {
    SUBCASE("20 comments, 10 users, 15 undirected edges") {
        ThreadBuilder b("p", "A");
        std::vector<std::string> first(10);
        for (int i = 1; i <= 9; ++i) b.reply("u" + std::to_string(i), "", &first[i]);
        // six more user pairs among u1..u9
        const std::pair<int, int> extra[] = {{1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 6}, {6, 7}};
        for (auto [x, y] : extra) b.reply("u" + std::to_string(x), first[y]);
        // five repeats on existing pairs
        for (int i = 1; i <= 5; ++i) b.reply("u" + std::to_string(i));
        auto rec = b.build();
        auto g = build_interaction_graph(rec);
        CHECK(f0_features(rec, g) == std::vector<double>{20, 10, 15, 3.0});
    }
    SUBCASE("zero-comment post") {
        auto rec = ThreadBuilder("p", "A").build();
        CHECK(f0_features(rec, build_interaction_graph(rec)) == std::vector<double>{0, 1, 0, 0.0});
    }
    SUBCASE("two users, one edge") {
        auto rec = ThreadBuilder("p", "A").reply("B").build();
        CHECK(f0_features(rec, build_interaction_graph(rec))[3] == 1.0);
    }
}

TEST_CASE("load_embeddings") {
    TempDir dir;
    SUBCASE("three rows of dim 4") {
        write_file(dir / "e.csv", "id,v0,v1,v2,v3\na,1,2,3,4\nb,0,0,0,0\nc,-1,0.5,2e-3,7\n");
        auto t = load_embeddings(dir / "e.csv", EmbeddingScope::Post);
        CHECK(t.size() == 3);
        CHECK(t.dim == 4u);
        CHECK((*t.find("c"))[2] == doctest::Approx(0.002));
    }
    SUBCASE("ragged row is fatal and names the id") {
        write_file(dir / "e.csv", "a,1,2,3,4\nbad,1,2,3,4,5\n");
        try {
            load_embeddings(dir / "e.csv", EmbeddingScope::Post);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("bad") != std::string::npos);
        }
    }
    SUBCASE("empty file") {
        write_file(dir / "e.csv", "");
        auto t = load_embeddings(dir / "e.csv", EmbeddingScope::Comment);
        CHECK(t.size() == 0);
        CHECK_FALSE(t.dim.has_value());
    }
    SUBCASE("jsonl and duplicates") {
        write_file(dir / "e.jsonl", "{\"id\":\"a\",\"vector\":[1,2]}\n{\"id\":\"b\",\"vector\":[3,4]}\n");
        auto t = load_embeddings(dir / "e.jsonl", EmbeddingScope::Post);
        CHECK(t.dim == 2u);
        write_file(dir / "d.csv", "a,1\na,2\n");
        CHECK_THROWS_AS(load_embeddings(dir / "d.csv", EmbeddingScope::Post), Error);
    }
    SUBCASE("csv round trip") {
        EmbeddingTable t;
        t.dim = 3;
        t.vectors = {{"x", {0.1, 1.0 / 3.0, -2.5}}, {"y", {1e-300, 0, 4}}};
        write_embeddings_csv(dir / "rt.csv", t);
        auto back = load_embeddings(dir / "rt.csv", EmbeddingScope::Post);
        CHECK(back.vectors == t.vectors);
    }
}

TEST_CASE("f2_pool examples") {
    const std::vector<double> post{1, 2}, c1{3, 4};
    CHECK(f2_pool(post, {std::span<const double>(c1)}) == std::vector<double>{2, 3});
    CHECK(f2_pool(post, {}) == post);
    CHECK(f2_pool(post, {std::span<const double>(post), std::span<const double>(post)}) == post);
    CHECK(f2_pool(post, {std::span<const double>(c1)}, PoolingMode::CommentsOnly) == c1);
    CHECK_THROWS_AS(f2_pool({}, {}), Error);
    const std::vector<double> bad{1, 2, 3};
    CHECK_THROWS_AS(f2_pool(post, {std::span<const double>(bad)}), Error);
}

TEST_CASE("assembled vector lengths") {
    auto store = make_store(30, 5);
    FeatureConfig cfg;
    CHECK(assemble(store, FeatureSet::parse("f0"), cfg).matrix.columns.size() == 4);
    CHECK(assemble(store, FeatureSet::parse("f3+f4"), cfg).matrix.columns.size() == 141);

    EmbeddingTable posts = random_post_table(store, 768, 1);
    EmbeddingTable comments;
    comments.dim = 768;
    Rng rng(2);
    for (const auto& r : store.records)
        for (const auto& c : r.comments) {
            std::vector<double> v(768);
            for (auto& x : v) x = rng.normal();
            comments.vectors[c.comment_id] = v;
        }
    auto res = assemble(store, FeatureSet::parse("f2+f3+f4"), cfg, &posts, &comments);
    CHECK(res.matrix.columns.size() == 909);
    for (const auto& fv : feature_vectors(res.matrix)) CHECK(fv.size() == 909);
}

TEST_CASE("assemble includes labeled posts only and is deterministic") {
    auto store = make_store(40, 9);
    std::size_t included = 0;
    for (const auto& l : store.labels) included += l.included();
    FeatureConfig cfg;
    auto a = assemble(store, FeatureSet::parse("f0+f3+f4"), cfg);
    CHECK(a.matrix.size() == included);
    cfg.jobs = 4;
    auto b = assemble(store, FeatureSet::parse("f0+f3+f4"), cfg);
    std::ostringstream sa, sb;
    write_feature_csv(sa, a.matrix);
    write_feature_csv(sb, b.matrix);
    CHECK(sa.str() == sb.str());
}

TEST_CASE("block independence") {
    auto store = make_store(25, 11);
    FeatureConfig cfg;
    auto small = assemble(store, FeatureSet::parse("f3"), cfg).matrix;
    auto big = assemble(store, FeatureSet::parse("f0+f3+f4"), cfg).matrix;
    auto back = big.select(FeatureSet::parse("f3"));
    CHECK(back.values == small.values);
    CHECK(back.columns == small.columns);
    auto f4a = assemble(store, FeatureSet::parse("f4"), cfg).matrix;
    CHECK(big.select(FeatureSet::parse("f4")).values == f4a.values);
}

TEST_CASE("missing post embeddings become NaN and are dropped by select") {
    auto store = make_store(20, 3);
    auto posts = random_post_table(store, 4, 1);
    std::size_t removed = 0;
    for (std::size_t i = 0; i < store.records.size(); ++i)
        if (store.labels[i].included() && removed < 2) {
            posts.vectors.erase(store.records[i].post_id);
            ++removed;
        }
    FeatureConfig cfg;
    auto res = assemble(store, FeatureSet::parse("f0+f1"), cfg, &posts);
    CHECK(res.missing_post_embedding == removed);
    CHECK_FALSE(res.warnings.empty());
    CHECK(res.matrix.select(FeatureSet::parse("f0")).size() == res.matrix.size());
    CHECK(res.matrix.select(FeatureSet::parse("f0+f1")).size() == res.matrix.size() - removed);
}

TEST_CASE("feature csv round trip keeps missing values") {
    TempDir dir;
    FeatureMatrix m;
    m.post_ids = {"a", "b"};
    m.labels = {1, 0};
    m.columns = {{Block::F0, 0}, {Block::F1, 0}, {Block::F1, 1}};
    m.values = Matrix(2, 3);
    m.values(0, 0) = 1.5;
    m.values(0, 1) = 1.0 / 3.0;
    m.values(0, 2) = -2e-9;
    m.values(1, 0) = 7;
    m.values(1, 1) = m.values(1, 2) = std::nan("");
    write_feature_csv(dir / "f.csv", m);
    auto back = read_feature_csv(dir / "f.csv");
    CHECK(back.post_ids == m.post_ids);
    CHECK(back.labels == m.labels);
    CHECK(back.columns == m.columns);
    CHECK(back.values(0, 1) == m.values(0, 1));
    CHECK(std::isnan(back.values(1, 2)));
    CHECK_THROWS_AS(read_feature_csv(dir / "absent.csv"), MissingArtifactError);
}

TEST_CASE("image domain cap is a nearest-rank percentile") {
    std::vector<PostStructure> posts(100);
    for (std::size_t i = 0; i < posts.size(); ++i) posts[i].diagram.max_filtration_value = static_cast<double>(i + 1);
    CHECK(image_domain_cap(posts, 99.0) == 99.0);
    CHECK(image_domain_cap(posts, 100.0) == 100.0);
    std::vector<PostStructure> zeros(3);
    CHECK(image_domain_cap(zeros, 99.0) == 1.0);
}

TEST_CASE("standardizer: refit reproduces, test rows never leak") {
    Rng rng(8);
    Matrix x(50, 3);
    for (std::size_t r = 0; r < 50; ++r) {
        x(r, 0) = rng.normal();
        x(r, 1) = 10 + 3 * rng.normal();
        x(r, 2) = 4.0;  // constant
    }
    std::vector<std::size_t> train;
    for (std::size_t r = 0; r < 35; ++r) train.push_back(r);
    auto s1 = Standardizer::fit(x, train);
    CHECK(Standardizer::fit(x, train) == s1);
    CHECK(s1.scale[2] == 1.0);

    // canary: perturb every test row wildly
    Matrix y = x;
    for (std::size_t r = 35; r < 50; ++r)
        for (std::size_t c = 0; c < 3; ++c) y(r, c) = 1e9 * (static_cast<double>(r) + 1);
    CHECK(Standardizer::fit(y, train) == s1);

    Matrix z = x.take_rows(train);
    s1.apply(z);
    double mean = 0, var = 0;
    for (std::size_t r = 0; r < z.rows(); ++r) mean += z(r, 1);
    mean /= static_cast<double>(z.rows());
    for (std::size_t r = 0; r < z.rows(); ++r) var += (z(r, 1) - mean) * (z(r, 1) - mean);
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(var / static_cast<double>(z.rows()) == doctest::Approx(1.0));
}
