#include "qavlm/ingest/document.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <sstream>

#include "qavlm/errors.hpp"
#include "qavlm/util.hpp"

namespace qavlm::ingest {

using nlohmann::json;

std::string_view to_string(ElementKind kind) {
    switch (kind) {
        case ElementKind::heading: return "heading";
        case ElementKind::paragraph: return "paragraph";
        case ElementKind::figure_caption: return "figure-caption";
        case ElementKind::table: return "table";
        case ElementKind::table_caption: return "table-caption";
    }
    return "paragraph";
}

ElementKind element_kind_from_string(std::string_view s) {
    if (s == "heading") return ElementKind::heading;
    if (s == "paragraph") return ElementKind::paragraph;
    if (s == "figure-caption") return ElementKind::figure_caption;
    if (s == "table") return ElementKind::table;
    if (s == "table-caption") return ElementKind::table_caption;
    throw ParseError("unknown element kind '" + std::string(s) + "'");
}

std::string_view to_string(ChunkKind kind) {
    switch (kind) {
        case ChunkKind::text: return "text";
        case ChunkKind::figure: return "figure";
        case ChunkKind::table: return "table";
    }
    return "text";
}

ChunkKind chunk_kind_from_string(std::string_view s) {
    if (s == "text") return ChunkKind::text;
    if (s == "figure") return ChunkKind::figure;
    if (s == "table") return ChunkKind::table;
    throw ParseError("unknown chunk kind '" + std::string(s) + "'");
}

json DocumentContext::to_json() const {
    return {{"title", title},
            {"abstract_text", abstract_text},
            {"conclusion_text", conclusion_text},
            {"warnings", warnings}};
}

DocumentContext DocumentContext::from_json(const json& j) {
    DocumentContext c;
    c.title = j.at("title").get<std::string>();
    c.abstract_text = j.at("abstract_text").get<std::string>();
    c.conclusion_text = j.at("conclusion_text").get<std::string>();
    c.warnings = j.value("warnings", std::vector<std::string>{});
    return c;
}

namespace {

json optional_to_json(const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); }

std::optional<std::string> optional_from_json(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<std::string>();
}

}  // namespace

json Chunk::to_json() const {
    return {{"chunk_id", chunk_id},
            {"doc_id", doc_id},
            {"kind", std::string(to_string(kind))},
            {"body", body},
            {"attached_caption", optional_to_json(attached_caption)},
            {"nearby_paragraph", optional_to_json(nearby_paragraph)},
            {"element_indices", element_indices},
            {"approx_size", approx_size}};
}

Chunk Chunk::from_json(const json& j) {
    Chunk c;
    c.chunk_id = j.at("chunk_id").get<std::string>();
    c.doc_id = j.at("doc_id").get<std::string>();
    c.kind = chunk_kind_from_string(j.at("kind").get<std::string>());
    c.body = j.at("body").get<std::string>();
    c.attached_caption = optional_from_json(j, "attached_caption");
    c.nearby_paragraph = optional_from_json(j, "nearby_paragraph");
    c.element_indices = j.at("element_indices").get<std::vector<std::size_t>>();
    c.approx_size = j.at("approx_size").get<std::size_t>();
    if (c.chunk_id.empty() || c.doc_id.empty()) throw ParseError("chunk_id/doc_id empty");
    if (c.element_indices.empty()) throw ParseError("chunk has no element_indices");
    return c;
}

SourceDocument parse_document(std::string_view raw) {
    json j;
    try {
        j = json::parse(raw);
    } catch (const json::parse_error& e) {
        throw ParseError(e.what(), util::line_of_offset(raw, e.byte));
    }
    if (!j.is_object()) throw ParseError("document: top level must be an object");

    auto string_field = [](const json& obj, const char* key, const std::string& where) {
        if (!obj.contains(key) || !obj.at(key).is_string()) {
            throw ParseError(where + key + ": missing or not a string");
        }
        return obj.at(key).get<std::string>();
    };

    SourceDocument doc;
    doc.doc_id = util::trim(string_field(j, "doc_id", ""));
    doc.title = util::trim(string_field(j, "title", ""));
    if (doc.doc_id.empty()) throw ParseError("doc_id: empty");
    if (doc.title.empty()) throw ParseError("title: empty");
    if (!j.contains("elements") || !j["elements"].is_array()) {
        throw ParseError("elements: missing or not an array");
    }
    const auto& elements = j["elements"];
    if (elements.empty()) throw EmptyDocumentError("document '" + doc.doc_id + "' has no elements");

    struct Open {
        int level;
        std::string title;
    };
    std::vector<Open> stack;

    for (std::size_t i = 0; i < elements.size(); ++i) {
        const auto& e = elements[i];
        const std::string where = "elements[" + std::to_string(i) + "].";
        if (!e.is_object()) throw ParseError(where.substr(0, where.size() - 1) + ": not an object");

        DocumentElement el;
        el.index = i;
        el.kind = [&] {
            try {
                return element_kind_from_string(string_field(e, "kind", where));
            } catch (const ParseError& pe) {
                throw ParseError(where + "kind: " + pe.what());
            }
        }();
        el.text = string_field(e, "text", where);
        if (util::trim(el.text).empty()) throw ParseError(where + "text: empty after trimming");

        int level = 1;
        if (e.contains("level")) {
            if (!e["level"].is_number_integer() || e["level"].get<int>() < 1) {
                throw ParseError(where + "level: must be a positive integer");
            }
            level = e["level"].get<int>();
        }

        if (e.contains("section_path")) {
            const auto& sp = e["section_path"];
            if (!sp.is_array()) throw ParseError(where + "section_path: not an array");
            for (const auto& s : sp) {
                if (!s.is_string()) throw ParseError(where + "section_path: non-string entry");
                el.section_path.push_back(s.get<std::string>());
            }
            if (el.kind == ElementKind::heading) {
                stack.clear();
                int depth = 0;
                for (const auto& t : el.section_path) stack.push_back({++depth, t});
                stack.push_back({depth + 1, util::trim(el.text)});
            }
        } else {
            if (el.kind == ElementKind::heading) {
                while (!stack.empty() && stack.back().level >= level) stack.pop_back();
            }
            for (const auto& o : stack) el.section_path.push_back(o.title);
            if (el.kind == ElementKind::heading) stack.push_back({level, util::trim(el.text)});
        }
        doc.elements.push_back(std::move(el));
    }
    return doc;
}

namespace {

// "5. Conclusions" -> "Conclusions"
std::string strip_numbering(std::string_view title) {
    std::size_t i = 0;
    while (i < title.size() && (std::isdigit(static_cast<unsigned char>(title[i])) ||
                                title[i] == '.' || title[i] == ')' ||
                                std::isspace(static_cast<unsigned char>(title[i])))) {
        ++i;
    }
    return std::string(title.substr(i));
}

std::optional<std::string> section_text(const SourceDocument& doc,
                                        const std::vector<std::string_view>& prefixes) {
    const auto& els = doc.elements;
    for (std::size_t i = 0; i < els.size(); ++i) {
        if (els[i].kind != ElementKind::heading) continue;
        const std::string name = strip_numbering(util::trim(els[i].text));
        const bool hit = std::any_of(prefixes.begin(), prefixes.end(),
                                     [&](std::string_view p) { return util::istarts_with(name, p); });
        if (!hit) continue;
        std::vector<std::string> parts;
        for (std::size_t j = i + 1; j < els.size() && els[j].kind == ElementKind::paragraph; ++j) {
            parts.push_back(els[j].text);
        }
        return util::join(parts, "\n\n");
    }
    return std::nullopt;
}

}  // namespace

DocumentContext extract_context(const SourceDocument& doc) {
    DocumentContext ctx;
    ctx.title = doc.title;
    if (auto a = section_text(doc, {"abstract"})) {
        ctx.abstract_text = *a;
        if (a->empty()) ctx.warnings.push_back("abstract heading has no paragraphs");
    } else {
        ctx.warnings.push_back("no abstract section found");
    }
    if (auto c = section_text(doc, {"conclusion"})) {
        ctx.conclusion_text = *c;
        if (c->empty()) ctx.warnings.push_back("conclusion heading has no paragraphs");
    } else {
        ctx.warnings.push_back("no conclusion section found");
    }
    return ctx;
}

namespace {

std::string make_chunk_id(const std::string& doc_id, std::size_t ordinal) {
    char buf[32];
    std::snprintf(buf, sizeof buf, ":%04zu", ordinal);
    return doc_id + buf;
}

}  // namespace

std::vector<Chunk> segment(const SourceDocument& doc, std::size_t budget) {
    if (budget < 1) throw PreconditionError("chunk budget must be >= 1");

    std::vector<Chunk> out;
    std::vector<std::size_t> open;  // element indices of the text chunk being built
    std::vector<std::string> open_key;
    std::size_t open_size = 0;

    auto emit = [&](ChunkKind kind, const std::vector<std::size_t>& indices) {
        Chunk c;
        c.chunk_id = make_chunk_id(doc.doc_id, out.size());
        c.doc_id = doc.doc_id;
        c.kind = kind;
        std::vector<std::string> texts;
        for (auto i : indices) texts.push_back(doc.elements[i].text);
        c.body = util::join(texts, "\n\n");
        c.element_indices = indices;
        c.approx_size = util::count_tokens(c.body);
        out.push_back(std::move(c));
    };
    auto flush = [&] {
        if (!open.empty()) emit(ChunkKind::text, open);
        open.clear();
        open_size = 0;
    };
    auto start = [&](std::size_t index, std::vector<std::string> key, std::size_t size) {
        open = {index};
        open_key = std::move(key);
        open_size = size;
    };

    for (const auto& el : doc.elements) {
        const std::size_t tokens = util::count_tokens(el.text);
        switch (el.kind) {
            case ElementKind::heading: {
                flush();
                auto key = el.section_path;
                key.push_back(util::trim(el.text));
                start(el.index, std::move(key), tokens);
                break;
            }
            case ElementKind::paragraph:
                if (!open.empty() && open_key == el.section_path && open_size + tokens <= budget) {
                    open.push_back(el.index);
                    open_size += tokens;
                } else {
                    flush();
                    start(el.index, el.section_path, tokens);
                }
                break;
            case ElementKind::figure_caption:
                flush();
                emit(ChunkKind::figure, {el.index});
                break;
            case ElementKind::table:
            case ElementKind::table_caption:
                flush();
                emit(ChunkKind::table, {el.index});
                break;
        }
    }
    flush();
    return out;
}

Chunk enrich_nontext(const Chunk& chunk, const SourceDocument& doc, std::size_t window) {
    if (chunk.kind == ChunkKind::text) return chunk;
    Chunk out = chunk;
    out.attached_caption.reset();
    out.nearby_paragraph.reset();

    const std::size_t self = chunk.element_indices.front();
    if (self >= doc.elements.size()) {
        throw PreconditionError("chunk " + chunk.chunk_id + " points outside its document");
    }
    const auto& anchor = doc.elements[self];
    const ElementKind caption_kind =
        chunk.kind == ChunkKind::figure ? ElementKind::figure_caption : ElementKind::table_caption;

    const std::size_t lo = self >= window ? self - window : 0;
    const std::size_t hi = std::min(doc.elements.size() - 1, self + window);

    // Distance 0 first, then each distance preceding-before-following.
    std::optional<std::size_t> caption;
    for (std::size_t d = 0; d <= window && !caption; ++d) {
        for (std::size_t j : {self - std::min(d, self), self + d}) {
            if (j < lo || j > hi) continue;
            if (d > 0 && j == self) continue;
            const auto& el = doc.elements[j];
            if (el.kind == caption_kind && el.section_path == anchor.section_path) {
                caption = j;
                break;
            }
        }
    }
    if (caption) out.attached_caption = doc.elements[*caption].text;

    for (std::size_t j = self; j > lo;) {
        --j;
        if (doc.elements[j].kind == ElementKind::paragraph) {
            out.nearby_paragraph = doc.elements[j].text;
            break;
        }
    }
    return out;
}

std::vector<Chunk> chunk_document(const SourceDocument& doc, const SegmentOptions& options) {
    auto chunks = segment(doc, options.budget);
    for (auto& c : chunks) c = enrich_nontext(c, doc, options.window);
    return chunks;
}

std::string write_chunks_jsonl(const std::vector<Chunk>& chunks) {
    std::string out;
    for (const auto& c : chunks) {
        out += c.to_json().dump();
        out += '\n';
    }
    return out;
}

std::vector<Chunk> read_chunks_jsonl(std::string_view text) {
    std::vector<Chunk> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        const std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (util::trim(line).empty()) continue;
        try {
            out.push_back(Chunk::from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw ParseError(std::string("chunk file: ") + e.what(), line_no);
        } catch (const ParseError& e) {
            throw ParseError(std::string("chunk file: ") + e.what(), line_no);
        }
    }
    return out;
}

json contexts_to_json(const ContextMap& contexts) {
    json j = json::object();
    for (const auto& [doc_id, ctx] : contexts) j[doc_id] = ctx.to_json();
    return j;
}

ContextMap contexts_from_json(const json& j) {
    ContextMap out;
    try {
        for (const auto& [doc_id, ctx] : j.items()) out[doc_id] = DocumentContext::from_json(ctx);
    } catch (const json::exception& e) {
        throw ParseError(std::string("context file: ") + e.what());
    }
    return out;
}

}  // namespace qavlm::ingest
