#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "qavlm/errors.hpp"
#include "qavlm/ingest/document.hpp"
#include "qavlm/util.hpp"

using namespace qavlm;
using namespace qavlm::ingest;
using nlohmann::json;

namespace {

SourceDocument article() {
    return parse_document(util::read_file(testing::fixture_path("article.json")));
}

std::string doc_with(const json& elements) {
    return json{{"doc_id", "d"}, {"title", "T"}, {"elements", elements}}.dump();
}

std::string error_of(const std::string& raw) {
    try {
        parse_document(raw);
    } catch (const InputError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("article fixture parses with derived section paths") {
    auto doc = article();
    REQUIRE(doc.elements.size() == 40);
    CHECK(doc.elements[1].section_path == std::vector<std::string>{"Abstract"});
    CHECK(doc.elements[8].section_path ==
          std::vector<std::string>{"2. Materials and methods", "2.1 Deposition setup"});
    // A level-1 heading pops the level-2 subsection.
    CHECK(doc.elements[33].section_path == std::vector<std::string>{"4. Discussion"});
    for (std::size_t i = 0; i < doc.elements.size(); ++i) CHECK(doc.elements[i].index == i);
}

TEST_CASE("context holds abstract and contiguous conclusion paragraphs") {
    auto doc = article();
    auto ctx = extract_context(doc);
    CHECK(ctx.title == doc.title);
    CHECK(ctx.abstract_text == doc.elements[1].text);
    CHECK(ctx.conclusion_text == doc.elements[38].text + "\n\n" + doc.elements[39].text);
    CHECK(ctx.warnings.empty());
}

TEST_CASE("missing abstract or conclusion yields warnings, not errors") {
    auto doc = parse_document(doc_with(json::array({{{"kind", "paragraph"}, {"text", "only text"}}})));
    auto ctx = extract_context(doc);
    CHECK(ctx.abstract_text.empty());
    CHECK(ctx.conclusion_text.empty());
    CHECK(ctx.warnings.size() == 2);
}

TEST_CASE("article segments into the hand-derived chunk layout") {
    auto doc = article();
    auto chunks = chunk_document(doc, {512, 2});
    const std::vector<std::vector<std::size_t>> expected = {
        {0, 1},   {2, 3, 4, 5}, {6},  {7, 8, 9},  {10}, {11}, {12, 13, 14}, {15, 16, 17},
        {18},     {19},         {20}, {21, 22, 23}, {24}, {25}, {26, 27, 28}, {29},
        {30},     {31},         {32, 33, 34}, {35}, {36}, {37, 38, 39}};
    REQUIRE(chunks.size() == expected.size());
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        CAPTURE(i);
        CHECK(chunks[i].element_indices == expected[i]);
    }
    CHECK(chunks[0].chunk_id == "bead-geometry-2022:0000");
    CHECK(chunks[21].chunk_id == "bead-geometry-2022:0021");
    CHECK(chunks[4].kind == ChunkKind::table);
    CHECK(chunks[8].kind == ChunkKind::figure);
    CHECK(chunks[1].body == doc.elements[2].text + "\n\n" + doc.elements[3].text + "\n\n" +
                                doc.elements[4].text + "\n\n" + doc.elements[5].text);
}

TEST_CASE("non-text chunks carry caption and nearby paragraph") {
    auto doc = article();
    auto chunks = chunk_document(doc, {512, 2});
    // Table body at 11 takes the table caption at 10.
    CHECK(chunks[5].attached_caption == doc.elements[10].text);
    CHECK(chunks[5].nearby_paragraph == doc.elements[9].text);
    // The caption chunk itself attaches its own text.
    CHECK(chunks[4].attached_caption == doc.elements[10].text);
    // Table at 30: caption one before, nearest paragraph two before.
    CHECK(chunks[16].attached_caption == doc.elements[29].text);
    CHECK(chunks[16].nearby_paragraph == doc.elements[28].text);
    // Figure caption chunk at 35.
    CHECK(chunks[19].attached_caption == doc.elements[35].text);
    CHECK(chunks[19].nearby_paragraph == doc.elements[34].text);
    // Text chunks never carry either field.
    CHECK_FALSE(chunks[1].attached_caption.has_value());
    CHECK_FALSE(chunks[1].nearby_paragraph.has_value());
}

TEST_CASE("caption association respects the window and the section") {
    auto make = [](std::size_t gap) {
        json e = json::array({{{"kind", "heading"}, {"text", "S"}},
                              {{"kind", "table-caption"}, {"text", "Table 1. caption"}}});
        for (std::size_t i = 0; i < gap; ++i) e.push_back({{"kind", "heading"}, {"text", "H"}, {"level", 2}});
        e.push_back({{"kind", "table"}, {"text", "a | b"}});
        return parse_document(json{{"doc_id", "d"}, {"title", "T"}, {"elements", e}}.dump());
    };
    SUBCASE("distance 2 with window 2 associates when sections agree") {
        json e = json::array({{{"kind", "table-caption"}, {"text", "Table 1. caption"}},
                              {{"kind", "paragraph"}, {"text", "p"}},
                              {{"kind", "table"}, {"text", "a | b"}}});
        auto doc = parse_document(doc_with(e));
        auto chunks = chunk_document(doc, {512, 2});
        CHECK(chunks.back().attached_caption == "Table 1. caption");
        CHECK(chunks.back().nearby_paragraph == "p");
    }
    SUBCASE("distance 3 with window 2 does not associate") {
        json e = json::array({{{"kind", "table-caption"}, {"text", "Table 1. caption"}},
                              {{"kind", "paragraph"}, {"text", "p1"}},
                              {{"kind", "paragraph"}, {"text", "p2"}},
                              {{"kind", "table"}, {"text", "a | b"}}});
        auto doc = parse_document(doc_with(e));
        auto chunks = chunk_document(doc, {512, 2});
        CHECK_FALSE(chunks.back().attached_caption.has_value());
        CHECK(chunks.back().nearby_paragraph == "p2");
    }
    SUBCASE("a caption in another section is ignored") {
        auto doc = make(1);
        auto chunks = chunk_document(doc, {512, 2});
        CHECK_FALSE(chunks.back().attached_caption.has_value());
    }
    SUBCASE("ties prefer the preceding caption") {
        json e = json::array({{{"kind", "table-caption"}, {"text", "before"}},
                              {{"kind", "table"}, {"text", "a | b"}},
                              {{"kind", "table-caption"}, {"text", "after"}}});
        auto chunks = chunk_document(parse_document(doc_with(e)), {512, 2});
        CHECK(chunks[1].attached_caption == "before");
    }
    SUBCASE("figure captions are not attached to tables") {
        json e = json::array({{{"kind", "figure-caption"}, {"text", "Figure 1."}},
                              {{"kind", "table"}, {"text", "a | b"}}});
        auto chunks = chunk_document(parse_document(doc_with(e)), {512, 2});
        CHECK_FALSE(chunks[1].attached_caption.has_value());
    }
}

TEST_CASE("segmentation properties hold on generated documents") {
    std::mt19937_64 rng(20240611);
    for (int trial = 0; trial < 200; ++trial) {
        CAPTURE(trial);
        std::uniform_int_distribution<std::size_t> n_d(1, 60), b_d(1, 200);
        auto raw = testing::random_document(rng, "g" + std::to_string(trial), n_d(rng), 80);
        auto doc = parse_document(raw.dump());
        const std::size_t budget = b_d(rng);
        auto chunks = chunk_document(doc, {budget, 2});

        std::vector<std::size_t> covered;
        for (std::size_t c = 0; c < chunks.size(); ++c) {
            const auto& ch = chunks[c];
            covered.insert(covered.end(), ch.element_indices.begin(), ch.element_indices.end());
            // Within-chunk indices are consecutive.
            for (std::size_t k = 1; k < ch.element_indices.size(); ++k)
                CHECK(ch.element_indices[k] == ch.element_indices[k - 1] + 1);
            if (ch.kind == ChunkKind::text) {
                CHECK((ch.approx_size <= budget || ch.element_indices.size() == 1));
                for (std::size_t k = 1; k < ch.element_indices.size(); ++k)
                    CHECK(doc.elements[ch.element_indices[k]].kind == ElementKind::paragraph);
            } else {
                CHECK(ch.element_indices.size() == 1);
            }
            std::size_t tokens = 0;
            for (auto i : ch.element_indices) tokens += util::count_tokens(doc.elements[i].text);
            CHECK(ch.approx_size == tokens);
        }
        // Every element exactly once, in document order.
        REQUIRE(covered.size() == doc.elements.size());
        for (std::size_t i = 0; i < covered.size(); ++i) CHECK(covered[i] == i);
    }
}

TEST_CASE("chunk JSON Lines round trip") {
    auto chunks = chunk_document(article(), {64, 2});
    auto text = write_chunks_jsonl(chunks);
    CHECK(read_chunks_jsonl(text) == chunks);
}

TEST_CASE("corrupt chunk line reports its line number") {
    auto chunks = chunk_document(article(), {512, 2});
    auto text = write_chunks_jsonl(chunks);
    auto second = text.find('\n') + 1;
    text.insert(second, "{not json\n");
    try {
        read_chunks_jsonl(text);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).rfind("line 2:", 0) == 0);
    }
}

TEST_CASE("document validation names the offending field") {
    CHECK_THROWS_AS(parse_document(doc_with(json::array())), EmptyDocumentError);
    auto msg = error_of(doc_with(json::array({{{"kind", "paragraph"}, {"text", "ok"}},
                                              {{"kind", "paragraph"}, {"text", "   "}}})));
    CHECK(msg.find("elements[1].text") != std::string::npos);
    msg = error_of(doc_with(json::array({{{"kind", "sidebar"}, {"text", "x"}}})));
    CHECK(msg.find("elements[0].kind") != std::string::npos);
    msg = error_of("{\n\"doc_id\": \"d\",\n\"title\": ,\n}");
    CHECK(msg.rfind("line 3:", 0) == 0);
    CHECK_THROWS_AS(segment(article(), 0), PreconditionError);
}

TEST_CASE("explicit section_path is used verbatim") {
    auto doc = parse_document(doc_with(json::array(
        {{{"kind", "heading"}, {"text", "Intro"}},
         {{"kind", "paragraph"}, {"text", "x"}, {"section_path", {"Custom", "Path"}}}})));
    CHECK(doc.elements[1].section_path == std::vector<std::string>{"Custom", "Path"});
}
