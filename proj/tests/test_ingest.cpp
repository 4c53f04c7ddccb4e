#include <doctest.h>

#include "test_support.hpp"
#include "topocontro/ingest.hpp"

using namespace topocontro;
using topocontro::testing::TempDir;
using topocontro::testing::ThreadBuilder;
using topocontro::testing::write_file;

namespace {

ThreadRecord with_comments(double ur, std::size_t n) {
    return ThreadBuilder().ur(ur).filler(n).build();
}

ThreadRecord random_record(Rng& rng, int idx) {
    ThreadBuilder b("post" + std::to_string(idx), "u" + std::to_string(rng.below(5)));
    b.ur(rng.uniform());
    const auto n = rng.below(12);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
        std::string parent = ids.empty() || rng.bernoulli(0.3) ? "" : ids[rng.below(ids.size())];
        std::string id;
        std::string author = rng.bernoulli(0.1) ? std::string(kDeletedAuthor)
                                                : "u" + std::to_string(rng.below(6));
        b.reply(author, parent, &id, static_cast<std::int64_t>(rng.below(1'000'000'000)));
        ids.push_back(id);
    }
    auto rec = b.build();
    // Text with characters that stress the encoder.
    rec.title = "quote \" backslash \\ newline\n unicode \xc3\xa9 " + std::to_string(rng.next());
    return rec;
}

}  // namespace

TEST_CASE("label_post follows the upvote-ratio bands") {
    const LabelConfig cfg;
    CHECK(label_post(with_comments(0.50, 20), cfg) ==
          Label{LabelValue::Controversial, LabelReason::InControversialBand});
    CHECK(label_post(with_comments(0.95, 20), cfg) ==
          Label{LabelValue::NonControversial, LabelReason::InNonControversialBand});
    CHECK(label_post(with_comments(0.75, 20), cfg) == Label{LabelValue::Excluded, LabelReason::URGap});
    CHECK(label_post(with_comments(0.50, 3), cfg) ==
          Label{LabelValue::Excluded, LabelReason::TooFewComments});
}

TEST_CASE("label bounds are inclusive at all four endpoints") {
    for (double ur : {0.30, 0.70}) CHECK(label_post(with_comments(ur, 5)).value == LabelValue::Controversial);
    for (double ur : {0.80, 1.00})
        CHECK(label_post(with_comments(ur, 5)).value == LabelValue::NonControversial);
    for (double ur : {0.0, 0.2999, 0.7001, 0.7999})
        CHECK(label_post(with_comments(ur, 5)).reason == LabelReason::URGap);
    CHECK(label_post(with_comments(0.5, 4)).reason == LabelReason::TooFewComments);
    CHECK(label_post(with_comments(0.5, 5)).value == LabelValue::Controversial);
}

TEST_CASE("deleted-author comments count toward the comment filter") {
    auto rec = ThreadBuilder().ur(0.5).filler(3).reply("[deleted]").reply("[deleted]").build();
    CHECK(label_post(rec).value == LabelValue::Controversial);
}

TEST_CASE("labeling properties: purity, partition, monotone filter") {
    Rng rng(7);
    for (int trial = 0; trial < 500; ++trial) {
        const double ur = rng.uniform();
        const auto n = static_cast<std::size_t>(rng.below(10));
        const auto rec = with_comments(ur, n);
        const Label l = label_post(rec);
        CHECK(l == label_post(rec));
        CHECK((l.value == LabelValue::Excluded) ==
              (l.reason == LabelReason::URGap || l.reason == LabelReason::TooFewComments));
        LabelConfig stricter;
        stricter.min_comments = 5 + static_cast<int>(rng.below(5));
        if (!l.included()) CHECK_FALSE(label_post(rec, stricter).included());
    }
}

TEST_CASE("parse_dump: minimal, empty and invalid inputs") {
    TempDir dir;
    SUBCASE("one zero-comment post") {
        write_file(dir / "a.jsonl",
                   R"({"post_id":"x","subreddit":"s","title":"t","selftext":"","author":"A",)"
                   R"("created_utc":1,"upvote_ratio":0.9,"comments":[]})"
                   "\n");
        auto r = parse_dump(dir / "a.jsonl");
        CHECK(r.records.size() == 1);
        CHECK(r.errors.empty());
    }
    SUBCASE("empty file") {
        write_file(dir / "e.jsonl", "");
        auto r = parse_dump(dir / "e.jsonl");
        CHECK(r.records.empty());
        CHECK(r.errors.empty());
    }
    SUBCASE("upvote ratio out of range is a per-line error") {
        write_file(dir / "b.jsonl",
                   R"({"post_id":"ok","subreddit":"s","title":"t","selftext":"","author":"A","created_utc":1,"upvote_ratio":0.5,"comments":[]})"
                   "\n"
                   R"({"post_id":"bad","subreddit":"s","title":"t","selftext":"","author":"A","created_utc":1,"upvote_ratio":1.3,"comments":[]})"
                   "\n"
                   "{not json\n");
        auto r = parse_dump(dir / "b.jsonl");
        REQUIRE(r.records.size() == 1);
        REQUIRE(r.errors.size() == 2);
        CHECK(r.errors[0].line == 2);
        CHECK(r.errors[0].message.find("upvote_ratio") != std::string::npos);
        CHECK(r.errors[1].line == 3);
    }
    SUBCASE("reply cycles and duplicate comment ids are rejected") {
        write_file(dir / "c.jsonl",
                   R"({"post_id":"p","subreddit":"s","title":"t","selftext":"","author":"A","created_utc":1,"upvote_ratio":0.5,)"
                   R"("comments":[{"comment_id":"a","parent_id":"b","author":"X","body":"","created_utc":2},)"
                   R"({"comment_id":"b","parent_id":"a","author":"Y","body":"","created_utc":3}]})"
                   "\n"
                   R"({"post_id":"q","subreddit":"s","title":"t","selftext":"","author":"A","created_utc":1,"upvote_ratio":0.5,)"
                   R"("comments":[{"comment_id":"a","parent_id":"q","author":"X","body":"","created_utc":2},)"
                   R"({"comment_id":"a","parent_id":"q","author":"Y","body":"","created_utc":3}]})"
                   "\n");
        auto r = parse_dump(dir / "c.jsonl");
        CHECK(r.records.empty());
        REQUIRE(r.errors.size() == 2);
        CHECK(r.errors[0].message.find("cycle") != std::string::npos);
        CHECK(r.errors[1].message.find("duplicate") != std::string::npos);
    }
    SUBCASE("null text fields and deleted authors are accepted") {
        write_file(dir / "d.jsonl",
                   R"({"post_id":"p","subreddit":"s","title":null,"selftext":null,"author":null,"created_utc":1.0,"upvote_ratio":0.5,)"
                   R"("comments":[{"comment_id":"a","parent_id":"zz","author":"X","body":null,"created_utc":2}]})"
                   "\n");
        auto r = parse_dump(dir / "d.jsonl");
        REQUIRE(r.records.size() == 1);
        CHECK(r.records[0].author == "[deleted]");
        CHECK(r.warnings.size() == 1);  // orphaned comment
    }
    SUBCASE("unreadable file is fatal") {
        CHECK_THROWS_AS(parse_dump(dir / "missing.jsonl"), Error);
    }
}

TEST_CASE("duplicate post ids: last occurrence wins with a warning") {
    TempDir dir;
    auto line = [](double ur) {
        return R"({"post_id":"dup","subreddit":"s","title":"t","selftext":"","author":"A","created_utc":1,"upvote_ratio":)" +
               format_double(ur) + R"(,"comments":[]})" + "\n";
    };
    write_file(dir / "one.jsonl", line(0.1));
    write_file(dir / "two.jsonl", line(0.9));
    auto r = parse_dumps({dir / "one.jsonl", dir / "two.jsonl"});
    REQUIRE(r.records.size() == 1);
    CHECK(r.records[0].upvote_ratio == 0.9);
    CHECK(r.warnings.size() == 1);
}

TEST_CASE("store round trip") {
    TempDir dir;
    SUBCASE("three records") {
        LabeledStore s;
        s.records = {with_comments(0.5, 6), with_comments(0.9, 2), with_comments(0.75, 9)};
        s.records[1].post_id = "p2";
        s.records[2].post_id = "p3";
        for (const auto& r : s.records) s.labels.push_back(label_post(r, s.label_config));
        store_write(dir / "store", s);
        auto back = store_read(dir / "store");
        CHECK(back.records == s.records);
        CHECK(back.labels == s.labels);
        CHECK(back.label_config == s.label_config);
    }
    SUBCASE("empty store") {
        store_write(dir / "empty", LabeledStore{});
        auto back = store_read(dir / "empty");
        CHECK(back.records.empty());
    }
    SUBCASE("missing store") {
        CHECK_THROWS_AS(store_read(dir / "nope"), MissingArtifactError);
    }
    SUBCASE("version mismatch names both versions") {
        store_write(dir / "v", LabeledStore{});
        auto manifest = topocontro::testing::read_file(dir / "v" / "manifest.json");
        auto pos = manifest.find("\"format_version\": 1");
        REQUIRE(pos != std::string::npos);
        manifest.replace(pos, 19, "\"format_version\": 99");
        write_file(dir / "v" / "manifest.json", manifest);
        try {
            store_read(dir / "v");
            FAIL("expected version error");
        } catch (const Error& e) {
            const std::string msg = e.what();
            CHECK(msg.find("99") != std::string::npos);
            CHECK(msg.find(std::to_string(kStoreFormatVersion)) != std::string::npos);
        }
    }
}

TEST_CASE("store round trip is lossless on randomized records") {
    Rng rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        TempDir dir;
        LabeledStore s;
        s.label_config.min_comments = 1 + static_cast<int>(rng.below(6));
        const auto n = rng.below(15);
        for (std::size_t i = 0; i < n; ++i) {
            s.records.push_back(random_record(rng, static_cast<int>(i)));
            s.labels.push_back(label_post(s.records.back(), s.label_config));
        }
        store_write(dir.path(), s);
        auto back = store_read(dir.path());
        REQUIRE(back.records == s.records);
        REQUIRE(back.labels == s.labels);
        REQUIRE(back.label_config == s.label_config);
    }
}

TEST_CASE("dataset_summary") {
    SUBCASE("ratio of 2 C to 8 NC") {
        LabeledStore s;
        for (int i = 0; i < 10; ++i) {
            s.records.push_back(with_comments(i < 2 ? 0.5 : 0.9, 5 + static_cast<std::size_t>(i)));
            s.labels.push_back(label_post(s.records.back()));
        }
        auto t = dataset_summary(s);
        CHECK(t.controversial == 2);
        CHECK(t.noncontroversial == 8);
        CHECK(t.ratio_string() == "1 : 4.00");
        CHECK(t.total_comments == 95);
        CHECK(t.median_comments == doctest::Approx(9.5));
    }
    SUBCASE("released dataset counts give 1 : 7.74") {
        SummaryTable t;
        t.controversial = 2112;
        t.noncontroversial = 16350;
        t.nc_per_c = 16350.0 / 2112.0;
        CHECK(t.ratio_string() == "1 : 7.74");
    }
    SUBCASE("empty store") {
        auto t = dataset_summary(LabeledStore{});
        CHECK(t.total == 0);
        CHECK(t.ratio_string() == "n/a");
        CHECK(t.median_comments == 0.0);
    }
    SUBCASE("excluded posts are reported") {
        LabeledStore s;
        s.records = {with_comments(0.75, 9), with_comments(0.5, 1)};
        for (const auto& r : s.records) s.labels.push_back(label_post(r));
        auto t = dataset_summary(s);
        CHECK(t.excluded == 2);
        CHECK(t.excluded_ur_gap == 1);
        CHECK(t.excluded_too_few_comments == 1);
    }
}
