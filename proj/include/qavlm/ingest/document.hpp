#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace qavlm::ingest {

enum class ElementKind { heading, paragraph, figure_caption, table, table_caption };
std::string_view to_string(ElementKind kind);
ElementKind element_kind_from_string(std::string_view s);

struct DocumentElement {
    std::size_t index = 0;
    ElementKind kind = ElementKind::paragraph;
    std::string text;
    // Titles of the enclosing headings, outermost first. A heading's own
    // title is not part of its path.
    std::vector<std::string> section_path;
};

struct SourceDocument {
    std::string doc_id;
    std::string title;
    std::vector<DocumentElement> elements;
};

struct DocumentContext {
    std::string title;
    std::string abstract_text;
    std::string conclusion_text;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
    static DocumentContext from_json(const nlohmann::json& j);
};

enum class ChunkKind { text, figure, table };
std::string_view to_string(ChunkKind kind);
ChunkKind chunk_kind_from_string(std::string_view s);

struct Chunk {
    std::string chunk_id;
    std::string doc_id;
    ChunkKind kind = ChunkKind::text;
    std::string body;
    std::optional<std::string> attached_caption;
    std::optional<std::string> nearby_paragraph;
    std::vector<std::size_t> element_indices;
    std::size_t approx_size = 0;

    nlohmann::json to_json() const;
    static Chunk from_json(const nlohmann::json& j);
    friend bool operator==(const Chunk&, const Chunk&) = default;
};

struct SegmentOptions {
    std::size_t budget = 512;
    std::size_t window = 2;
};

// Element file:
//   {"doc_id": "...", "title": "...",
//    "elements": [{"kind": "heading", "text": "...", "level": 1,
//                  "section_path": ["..."]}, ...]}
// "section_path" is used verbatim when present; otherwise it is derived from
// heading nesting ("level" defaults to 1).
SourceDocument parse_document(std::string_view raw);

DocumentContext extract_context(const SourceDocument& doc);

// Greedy heading-aware chunker. Consecutive paragraphs of one section are
// packed until the next one would push the chunk past `budget` tokens; a
// heading always opens a new chunk; captions and tables are single-element
// chunks of kind figure/table.
std::vector<Chunk> segment(const SourceDocument& doc, std::size_t budget);

// Attaches the nearest matching caption (within ±window, same section) and
// the nearest preceding paragraph (within window) to figure/table chunks.
// Text chunks are returned unchanged.
Chunk enrich_nontext(const Chunk& chunk, const SourceDocument& doc, std::size_t window);

// parse -> segment -> enrich for one document.
std::vector<Chunk> chunk_document(const SourceDocument& doc, const SegmentOptions& options);

// Chunk output is JSON Lines. Read errors name the offending line.
std::string write_chunks_jsonl(const std::vector<Chunk>& chunks);
std::vector<Chunk> read_chunks_jsonl(std::string_view text);

using ContextMap = std::map<std::string, DocumentContext>;
nlohmann::json contexts_to_json(const ContextMap& contexts);
ContextMap contexts_from_json(const nlohmann::json& j);

}  // namespace qavlm::ingest
