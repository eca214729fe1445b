#include <cmath>
#include <cstring>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "qavlm/backend/mock_backend.hpp"
#include "qavlm/errors.hpp"
#include "qavlm/ingest/document.hpp"
#include "qavlm/kb/knowledge_base.hpp"
#include "qavlm/util.hpp"

using namespace qavlm;
using namespace qavlm::kb;

namespace {

KnowledgeEntry entry(std::string id, std::vector<double> v) {
    KnowledgeEntry e;
    e.entry_id = std::move(id);
    e.summary = "s " + e.entry_id;
    e.embedding.values = std::move(v);
    e.doc_id = "d";
    e.chunk_id = e.entry_id;
    e.context_title = "T";
    e.backend_id = "b";
    return e;
}

}  // namespace

TEST_CASE("cosine similarity on hand-checked vectors") {
    CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{1, 0}) == doctest::Approx(1.0));
    CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == doctest::Approx(0.0));
    CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{-2, 0}) == doctest::Approx(-1.0));
    // (1,2,3).(4,5,6) = 32; |a| = sqrt 14, |b| = sqrt 77
    CHECK(cosine_similarity(std::vector<double>{1, 2, 3}, std::vector<double>{4, 5, 6}) ==
          doctest::Approx(32.0 / std::sqrt(14.0 * 77.0)));
    // Scaling does not change the angle.
    CHECK(cosine_similarity(std::vector<double>{3, 4}, std::vector<double>{30, 40}) == doctest::Approx(1.0));
}

TEST_CASE("cosine rejects mismatched dims and zero vectors") {
    CHECK_THROWS_AS(cosine_similarity(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 2}), DegenerateVectorError);
}

TEST_CASE("cosine stays within [-1, 1] for random vectors") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 500; ++i) {
        auto a = testing::random_vector(rng, 16), b = testing::random_vector(rng, 16);
        double s = cosine_similarity(a, b);
        CHECK(s >= -1.0);
        CHECK(s <= 1.0);
        CHECK(s == doctest::Approx(testing::naive_cosine(a, b)).epsilon(1e-12));
    }
}

TEST_CASE("retrieval agrees with the brute-force oracle") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 30; ++trial) {
        CAPTURE(trial);
        auto db = testing::random_database(rng, 1 + trial * 7, 32);
        auto q = testing::random_vector(rng, 32);
        for (std::size_t n : {1u, 3u, 5u, 1000u}) {
            auto hits = retrieve(db, Embedding{q}, n, ScanMode::serial);
            auto oracle = testing::brute_force_top_n(db, q, n);
            REQUIRE(hits.size() == oracle.size());
            for (std::size_t i = 0; i < hits.size(); ++i) {
                CHECK(hits[i].entry->entry_id == oracle[i].entry_id);
                CHECK(hits[i].similarity == doctest::Approx(oracle[i].similarity).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("ties are broken by ascending entry id") {
    KnowledgeDatabase db;
    db.dim = 2;
    db.entries = {entry("c", {1, 0}), entry("a", {2, 0}), entry("b", {0, 1}), entry("aa", {5, 0})};
    auto hits = retrieve(db, Embedding{{1, 0}}, 3, ScanMode::serial);
    REQUIRE(hits.size() == 3);
    CHECK(hits[0].entry->entry_id == "a");
    CHECK(hits[1].entry->entry_id == "aa");
    CHECK(hits[2].entry->entry_id == "c");
}

TEST_CASE("retrieval preconditions") {
    KnowledgeDatabase empty;
    empty.dim = 2;
    CHECK_THROWS_AS(retrieve(empty, Embedding{{1, 0}}, 5), EmptyDatabaseError);
    KnowledgeDatabase db;
    db.dim = 2;
    db.entries = {entry("a", {1, 0})};
    CHECK_THROWS_AS(retrieve(db, Embedding{{1, 0}}, 0), PreconditionError);
    CHECK_THROWS_AS(retrieve(db, Embedding{{1, 0, 0}}, 1), DimensionError);
    CHECK(retrieve(db, Embedding{{1, 0}}, 5).size() == 1);
}

TEST_CASE("serial and parallel scans agree bit for bit") {
    std::mt19937_64 rng(1234);
    for (std::size_t size : {1u, 2u, 17u, 300u, 2001u}) {
        auto db = testing::random_database(rng, size, 128);
        auto q = testing::random_vector(rng, 128);
        auto a = similarity_scan_serial(db, q);
        auto b = similarity_scan_parallel(db, q);
        REQUIRE(a.size() == b.size());
        CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
    }
}

TEST_CASE("database round trips through JSON Lines") {
    std::mt19937_64 rng(5);
    auto db = testing::random_database(rng, 12, 8);
    auto parsed = parse_database(serialize_database(db));
    CHECK(parsed == db);
    CHECK(fingerprint(parsed) == fingerprint(db));
    auto copy = db;
    copy.created_at = "2030-01-01T00:00:00.000Z";
    CHECK(fingerprint(copy) == fingerprint(db));
    copy.entries[3].summary += " changed";
    CHECK(fingerprint(copy) != fingerprint(db));
}

TEST_CASE("database corruption is reported with line numbers") {
    std::mt19937_64 rng(6);
    auto db = testing::random_database(rng, 4, 4);
    auto text = serialize_database(db);
    std::vector<std::string> lines;
    std::size_t pos = 0;
    for (std::size_t nl; (nl = text.find('\n', pos)) != std::string::npos; pos = nl + 1)
        lines.push_back(text.substr(pos, nl - pos));
    auto with_line = [&](std::size_t idx, const std::string& replacement) {
        auto copy = lines;
        copy[idx] = replacement;
        return util::join(copy, "\n") + "\n";
    };
    auto expect_line = [](const std::string& body, const std::string& prefix) {
        try {
            parse_database(body);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).rfind(prefix, 0) == 0);
        }
    };
    SUBCASE("truncated line") { expect_line(with_line(3, lines[3].substr(0, 20)), "line 4:"); }
    SUBCASE("dim mismatch") {
        auto j = nlohmann::json::parse(lines[2]);
        j["embedding"].push_back(0.5);
        expect_line(with_line(2, j.dump()), "line 3:");
    }
    SUBCASE("duplicate id") { expect_line(with_line(4, lines[1]), "line 5:"); }
    SUBCASE("missing header") { CHECK_THROWS_AS(parse_database(""), ParseError); }
}

TEST_CASE("build_database summarizes and embeds every chunk") {
    auto doc = ingest::parse_document(util::read_file(testing::fixture_path("article.json")));
    auto chunks = ingest::chunk_document(doc, {512, 2});
    ingest::ContextMap contexts{{doc.doc_id, ingest::extract_context(doc)}};
    backend::MockScript script;
    script.dim = 16;
    script.rules.push_back({backend::MockRule::Match::substring, "<chunk>", "S: {{section:chunk}}", {}, {}});
    backend::MockBackend mock(script);
    auto result = build_database(chunks, contexts, mock);
    CHECK(result.failures.empty());
    REQUIRE(result.db.size() == chunks.size());
    CHECK(result.db.dim == 16);
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        const auto& e = result.db.entries[i];
        CHECK(e.entry_id == chunks[i].chunk_id);
        CHECK(e.summary == "S: " + chunks[i].body);
        CHECK(e.embedding == mock.embedding_for(e.summary));
        CHECK(e.context_title == doc.title);
    }
    CHECK(mock.chat_calls() == chunks.size());
    CHECK(mock.embed_calls() == chunks.size());
    CHECK_NOTHROW(result.db.validate());
}

TEST_CASE("build_database reports failing chunks and skips them") {
    auto doc = ingest::parse_document(util::read_file(testing::fixture_path("article.json")));
    auto chunks = ingest::chunk_document(doc, {512, 2});
    ingest::ContextMap contexts{{doc.doc_id, ingest::extract_context(doc)}};
    backend::MockScript script;
    script.dim = 8;
    // Figure chunks get an empty summary.
    script.rules.push_back({backend::MockRule::Match::substring, "The excerpt is a figure", "  ", {}, {}});
    script.rules.push_back({backend::MockRule::Match::any, "", "fine", {}, {}});
    backend::MockBackend mock(script);
    auto result = build_database(chunks, contexts, mock);
    std::size_t figures = 0;
    for (const auto& c : chunks) figures += c.kind == ingest::ChunkKind::figure;
    CHECK(figures == 3);
    CHECK(result.failures.size() == figures);
    CHECK(result.db.size() == chunks.size() - figures);

    backend::MockScript all_bad;
    all_bad.rules.push_back({backend::MockRule::Match::any, "", "", {}, {}});
    backend::MockBackend bad(all_bad);
    CHECK_THROWS_AS(build_database(chunks, contexts, bad), EmptyDatabaseError);
}
