#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "test_support.hpp"
#include "topocontro/eval.hpp"

using namespace topocontro;

namespace {

std::vector<int> make_labels(std::size_t c, std::size_t nc, std::uint64_t seed = 0) {
    std::vector<int> y(c, 1);
    y.insert(y.end(), nc, 0);
    if (seed) {
        Rng rng(seed);
        rng.shuffle(y);
    }
    return y;
}

std::pair<std::size_t, std::size_t> counts(std::span<const std::size_t> rows, std::span<const int> y) {
    std::size_t c = 0, nc = 0;
    for (auto r : rows) ++(y[r] ? c : nc);
    return {c, nc};
}

std::vector<std::size_t> iota_rows(std::size_t n) {
    std::vector<std::size_t> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = i;
    return r;
}

// Features whose first column carries the label with noise.
FeatureMatrix toy_features(std::size_t c, std::size_t nc, std::uint64_t seed) {
    Rng rng(seed);
    FeatureMatrix m;
    m.columns = {{Block::F0, 0}, {Block::F0, 1}, {Block::F3, 0}};
    m.values = Matrix(0, 3);
    auto y = make_labels(c, nc, seed);
    for (std::size_t i = 0; i < y.size(); ++i) {
        m.post_ids.push_back("p" + std::to_string(i));
        m.labels.push_back(y[i]);
        const std::vector<double> row{y[i] * 1.5 + rng.normal(), rng.normal(), rng.normal()};
        m.values.append_row(row);
    }
    return m;
}

}  // namespace

TEST_CASE("imbalance impact reference pairs") {
    struct Fixture {
        double fa, fc, printed;
    };
    const Fixture fixtures[] = {
        {0.6727, 0.2853, 11.757}, {0.6722, 0.2897, 12.025}, {0.6291, 0.2667, 10.698}, {0.7523, 0.3943, 19.044},
        {0.6945, 0.4142, 20.703}, {0.4598, 0.3660, 15.250}, {0.1220, 0.1116, 1.347},  {0.0045, 0.0045, 0.002},
        {0.7414, 0.4471, 23.393}, {0.4332, 0.3644, 14.700}, {0.6623, 0.2412, 9.248},
    };
    for (const auto& f : fixtures) {
        CAPTURE(f.fa);
        CAPTURE(f.fc);
        CHECK(std::abs(imbalance_impact(f.fa, f.fc).value - f.printed) <= 0.005);
    }
    CHECK(imbalance_impact(1.0, 1.0).value == 100.0);
    CHECK(imbalance_impact(1.0, 0.0).value == 0.0);
    CHECK_THROWS_AS(imbalance_impact(1.1, 0.5), Error);
    CHECK_THROWS_AS(imbalance_impact(0.5, -0.01), Error);
}

TEST_CASE("imbalance impact properties") {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const double x = rng.uniform(), y = rng.uniform();
        const double v = imbalance_impact(x, y).value;
        CHECK(v == imbalance_impact(y, x).value);
        CHECK(v >= 0.0);
        CHECK(v <= 100.0);
        CHECK(imbalance_impact(x, x).value == 100.0 * (x * x));
    }
}

TEST_CASE("f1_per_class examples") {
    const std::vector<int> t{1, 0, 1, 0};
    auto m = f1_per_class(t, t);
    CHECK(m.f1_controversial == 1.0);
    CHECK(m.f1_noncontroversial == 1.0);
    CHECK(m.support_controversial == 2);

    // TP=1, FP=1, FN=1 for class C
    auto h = f1_per_class(std::vector<int>{1, 0, 1, 0}, std::vector<int>{1, 1, 0, 0});
    CHECK(h.f1_controversial == 0.5);

    auto z = f1_per_class(std::vector<int>{0, 0, 0}, std::vector<int>{0, 0, 0});
    CHECK(z.f1_controversial == 0.0);
    CHECK_THROWS_AS(f1_per_class(std::vector<int>{1}, std::vector<int>{1, 0}), Error);
    CHECK_THROWS_AS(f1_per_class(std::vector<int>{}, std::vector<int>{}), Error);
}

TEST_CASE("stratified split arithmetic and determinism") {
    auto y = make_labels(100, 800, 3);
    auto s = stratified_split(y, 0.8, 42);
    CHECK(counts(s.train, y) == std::pair<std::size_t, std::size_t>{80, 640});
    CHECK(counts(s.test, y) == std::pair<std::size_t, std::size_t>{20, 160});
    auto again = stratified_split(y, 0.8, 42);
    CHECK(again.train == s.train);
    CHECK(again.test == s.test);
    CHECK_FALSE(stratified_split(y, 0.8, 43).train == s.train);

    CHECK_THROWS_AS(stratified_split(make_labels(1, 50), 0.8, 1), Error);
    auto tiny = stratified_split(make_labels(2, 2), 0.8, 1);
    CHECK(tiny.train.size() == 2);
    CHECK(tiny.test.size() == 2);
}

TEST_CASE("training resampling scenarios") {
    auto y = make_labels(80, 640, 5);
    auto rows = iota_rows(y.size());
    CHECK(counts(resample_train(rows, y, TrainScenario::A, 1), y) == std::pair<std::size_t, std::size_t>{80, 80});
    auto b = resample_train(rows, y, TrainScenario::B, 1);
    CHECK(counts(b, y) == std::pair<std::size_t, std::size_t>{160, 160});
    std::set<std::size_t> c_in_b;
    for (auto r : b)
        if (y[r]) c_in_b.insert(r);
    CHECK(c_in_b.size() == 80);  // every original minority row survives
    CHECK(resample_train(rows, y, TrainScenario::C, 1) == rows);
    CHECK(resample_train(rows, y, TrainScenario::A, 9) == resample_train(rows, y, TrainScenario::A, 9));
}

TEST_CASE("test resampling scenarios") {
    auto y = make_labels(20, 160, 6);
    auto rows = iota_rows(y.size());
    CHECK(counts(resample_test(rows, y, TestScenario::a, 1), y) == std::pair<std::size_t, std::size_t>{20, 20});
    CHECK(resample_test(rows, y, TestScenario::c, 1) == rows);
    auto only_nc = make_labels(0, 30);
    CHECK_THROWS_AS(resample_test(iota_rows(30), only_nc, TestScenario::a, 1), Error);
}

TEST_CASE("no leakage and balanced scenario a, randomized") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t c = 2 + rng.below(40), nc = 2 + rng.below(400);
        auto y = make_labels(c, nc, rng.next() | 1);
        auto s = stratified_split(y, rng.uniform(0.5, 0.9), rng.next());
        std::vector<std::size_t> inter;
        std::set_intersection(s.train.begin(), s.train.end(), s.test.begin(), s.test.end(), std::back_inserter(inter));
        CHECK(inter.empty());
        CHECK(s.train.size() + s.test.size() == y.size());
        const std::set<std::size_t> train_set(s.train.begin(), s.train.end());
        for (auto sc : {TrainScenario::A, TrainScenario::B, TrainScenario::C})
            for (auto r : resample_train(s.train, y, sc, rng.next())) CHECK(train_set.count(r) == 1);
        auto a = resample_test(s.test, y, TestScenario::a, rng.next());
        auto [ac, anc] = counts(a, y);
        CHECK(ac == anc);
    }
}

TEST_CASE("run_matrix shape, seeds and per-cell errors") {
    auto fm = toy_features(60, 300, 2);
    EvalConfig cfg;
    cfg.training.adaboost.n_estimators = 20;
    auto one = run_matrix(fm, {FeatureSet::parse("f0")}, {ModelKind::AdaBoost}, {1}, cfg);
    CHECK(one.rows.size() == 3);
    for (const auto& r : one.rows) {
        CHECK_FALSE(r.error.has_value());
        CHECK(r.fc_a_sd == 0.0);
        CHECK(r.impact_mean == doctest::Approx(imbalance_impact(r.fc_a_mean, r.fc_c_mean).value));
        CHECK(r.seeds.at(0).test_rows_a < r.seeds.at(0).test_rows_c);
    }

    auto two = run_matrix(fm, {FeatureSet::parse("f0")}, {ModelKind::AdaBoost}, {1, 2}, cfg);
    for (const auto& r : two.rows) {
        CHECK(r.seeds.size() == 2);
        CHECK(r.fc_c_sd >= 0.0);
    }
    const auto* c = two.find(TrainScenario::C, ModelKind::AdaBoost, "f0");
    REQUIRE(c);
    CHECK((c->fc_a_sd > 0.0 || c->fc_c_sd > 0.0));

    // f3 is missing for all but one controversial post, so its cells fail on their own.
    auto broken = fm;
    bool kept = false;
    for (std::size_t i = 0; i < broken.size(); ++i)
        if (broken.labels[i] == 1) {
            if (kept) broken.values(i, 2) = std::nan("");
            kept = true;
        }
    auto mixed = run_matrix(broken, {FeatureSet::parse("f0"), FeatureSet::parse("f3")}, {ModelKind::AdaBoost}, {1}, cfg);
    CHECK(mixed.rows.size() == 6);
    for (const auto& r : mixed.rows) CHECK(r.error.has_value() == (r.features == "f3"));

    std::ostringstream csv;
    write_report_csv(csv, mixed);
    CHECK(csv.str().rfind("scenario,model,features,fc_a_mean,fc_a_sd,fc_c_mean,fc_c_sd,I_mean,I_sd", 0) == 0);
    const auto md = render_report_markdown(mixed);
    CHECK(md.find("A Fc(a)") != std::string::npos);
    CHECK(md.find("Failed cells") != std::string::npos);
}

TEST_CASE("run_matrix is deterministic across job counts") {
    auto fm = toy_features(40, 200, 4);
    EvalConfig cfg;
    cfg.training.random_forest.n_estimators = 10;
    auto a = run_matrix(fm, {FeatureSet::parse("f0"), FeatureSet::parse("f0+f3")},
                        {ModelKind::AdaBoost, ModelKind::RandomForest}, {1, 2}, cfg);
    cfg.jobs = 3;
    auto b = run_matrix(fm, {FeatureSet::parse("f0"), FeatureSet::parse("f0+f3")},
                        {ModelKind::AdaBoost, ModelKind::RandomForest}, {1, 2}, cfg);
    CHECK(to_json(a) == to_json(b));
}

TEST_CASE("mean_sd uses the sample deviation") {
    const std::vector<double> v{1, 2, 3, 4};
    auto [m, sd] = mean_sd(v);
    CHECK(m == 2.5);
    CHECK(sd == doctest::Approx(std::sqrt(5.0 / 3.0)));
    CHECK(mean_sd(std::vector<double>{7}).second == 0.0);
}

TEST_CASE("UR density svg") {
    LabeledStore s;
    for (int i = 0; i < 20; ++i) {
        auto rec = topocontro::testing::ThreadBuilder("p" + std::to_string(i)).ur(i % 2 ? 0.5 : 0.9).filler(6).build();
        s.labels.push_back(label_post(rec));
        s.records.push_back(rec);
    }
    auto svg = ur_density_svg(s);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("Controversial") != std::string::npos);
    CHECK(svg.find("polyline") != std::string::npos);
}
