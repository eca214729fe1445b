#include "qavlm/kb/knowledge_base.hpp"

#include <set>
#include <sstream>

#include "qavlm/errors.hpp"
#include "qavlm/log.hpp"
#include "qavlm/parallel.hpp"
#include "qavlm/util.hpp"

namespace qavlm::kb {

using nlohmann::json;

json KnowledgeEntry::to_json() const {
    return {{"entry_id", entry_id},   {"summary", summary},
            {"embedding", embedding.values}, {"doc_id", doc_id},
            {"chunk_id", chunk_id},   {"context_title", context_title},
            {"backend_id", backend_id}};
}

KnowledgeEntry KnowledgeEntry::from_json(const json& j) {
    KnowledgeEntry e;
    e.entry_id = j.at("entry_id").get<std::string>();
    e.summary = j.at("summary").get<std::string>();
    e.embedding.values = j.at("embedding").get<std::vector<double>>();
    e.doc_id = j.at("doc_id").get<std::string>();
    e.chunk_id = j.at("chunk_id").get<std::string>();
    e.context_title = j.at("context_title").get<std::string>();
    e.backend_id = j.at("backend_id").get<std::string>();
    return e;
}

void KnowledgeDatabase::validate() const {
    std::set<std::string> ids;
    for (const auto& e : entries) {
        if (!ids.insert(e.entry_id).second) {
            throw DataIntegrityError("duplicate entry_id '" + e.entry_id + "'");
        }
        if (util::trim(e.summary).empty()) {
            throw DataIntegrityError("entry '" + e.entry_id + "' has an empty summary");
        }
        try {
            validate_embedding(e.embedding, dim);
        } catch (const Error& err) {
            throw DataIntegrityError("entry '" + e.entry_id + "': " + err.what());
        }
    }
}

namespace {

std::string_view passage_kind(ingest::ChunkKind kind) {
    switch (kind) {
        case ingest::ChunkKind::table: return "a table from the article";
        case ingest::ChunkKind::figure: return "a figure description from the article";
        default: return "a passage from the article";
    }
}

void tagged(std::ostringstream& os, std::string_view tag, std::string_view body) {
    os << '<' << tag << ">\n" << body << "\n</" << tag << ">\n";
}

}  // namespace

std::string build_summary_prompt(const ingest::Chunk& chunk, const ingest::DocumentContext& ctx) {
    std::ostringstream os;
    os << "You are building a knowledge base from a journal article. First read the article "
          "context (title, abstract and conclusion), then summarize the excerpt that follows.\n\n";
    tagged(os, "title", ctx.title);
    tagged(os, "abstract", ctx.abstract_text);
    tagged(os, "conclusion", ctx.conclusion_text);
    os << "\nThe excerpt is " << passage_kind(chunk.kind) << ".\n";
    tagged(os, "chunk", chunk.body);
    if (chunk.kind != ingest::ChunkKind::text) {
        if (chunk.attached_caption) tagged(os, "caption", *chunk.attached_caption);
        if (chunk.nearby_paragraph) tagged(os, "nearby", *chunk.nearby_paragraph);
    }
    os << "\nWrite a concise, self-contained summary of the knowledge this excerpt contributes, "
          "interpreted in the context of the article. Reply with the summary only.";
    return os.str();
}

std::string summarize_chunk(const ingest::Chunk& chunk, const ingest::DocumentContext& ctx,
                            backend::Backend& backend) {
    if (util::trim(chunk.body).empty()) throw PreconditionError("chunk " + chunk.chunk_id + " is empty");
    auto request = backend.make_request({{backend::Role::user, build_summary_prompt(chunk, ctx), {}}});
    std::string summary = util::trim(backend.chat(request));
    if (summary.empty()) {
        throw DegenerateOutputError("empty summary for chunk " + chunk.chunk_id);
    }
    return summary;
}

Embedding embed(std::string_view text, backend::Backend& backend,
                std::optional<std::size_t> expected_dim) {
    if (text.empty()) throw PreconditionError("cannot embed empty text");
    Embedding e = backend.embed_text(text);
    validate_embedding(e, expected_dim.value_or(backend.embed_dim()));
    return e;
}

BuildResult build_database(const std::vector<ingest::Chunk>& chunks,
                           const ingest::ContextMap& contexts, backend::Backend& backend,
                           const BuildOptions& options) {
    if (chunks.empty()) throw PreconditionError("build_database: no chunks");

    std::vector<std::optional<KnowledgeEntry>> slots(chunks.size());
    std::vector<std::string> errors(chunks.size());
    const std::size_t dim = backend.embed_dim();
    const std::size_t workers =
        options.max_in_flight ? options.max_in_flight : backend.max_in_flight();

    parallel_for(chunks.size(), workers, [&](std::size_t i) {
        const auto& chunk = chunks[i];
        try {
            const auto ctx = contexts.find(chunk.doc_id);
            if (ctx == contexts.end()) {
                throw DataIntegrityError("no document context for doc '" + chunk.doc_id + "'");
            }
            KnowledgeEntry e;
            e.entry_id = chunk.chunk_id;
            e.summary = summarize_chunk(chunk, ctx->second, backend);
            e.embedding = embed(e.summary, backend, dim);
            e.doc_id = chunk.doc_id;
            e.chunk_id = chunk.chunk_id;
            e.context_title = ctx->second.title;
            e.backend_id = backend.id();
            slots[i] = std::move(e);
        } catch (const std::exception& ex) {
            errors[i] = ex.what();
        }
    });

    BuildResult result;
    result.db.dim = dim;
    result.db.created_at = util::utc_timestamp();
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        if (slots[i]) {
            result.db.entries.push_back(std::move(*slots[i]));
        } else {
            log::warn("skipping chunk " + chunks[i].chunk_id + ": " + errors[i]);
            result.failures.push_back({chunks[i].chunk_id, errors[i]});
        }
    }
    if (result.db.entries.empty()) {
        throw EmptyDatabaseError("every chunk failed; first error: " + result.failures.front().reason);
    }
    result.db.validate();
    return result;
}

namespace {

std::string entry_lines(const KnowledgeDatabase& db) {
    std::string out;
    for (const auto& e : db.entries) {
        out += e.to_json().dump();
        out += '\n';
    }
    return out;
}

}  // namespace

std::string serialize_database(const KnowledgeDatabase& db) {
    const json header = {{"dim", db.dim}, {"created_at", db.created_at}};
    return header.dump() + "\n" + entry_lines(db);
}

KnowledgeDatabase parse_database(std::string_view text) {
    KnowledgeDatabase db;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool have_header = false;
    std::set<std::string> ids;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        const std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (util::trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("knowledge base: corrupt line: ") + e.what(), line_no);
        }
        try {
            if (!have_header) {
                db.dim = j.at("dim").get<std::size_t>();
                db.created_at = j.at("created_at").get<std::string>();
                if (db.dim < 1) throw ParseError("knowledge base: dim must be >= 1", line_no);
                have_header = true;
                continue;
            }
            auto entry = KnowledgeEntry::from_json(j);
            if (entry.embedding.dim() != db.dim) {
                throw ParseError("knowledge base: entry '" + entry.entry_id + "' has dim " +
                                     std::to_string(entry.embedding.dim()) + ", header says " +
                                     std::to_string(db.dim),
                                 line_no);
            }
            if (!ids.insert(entry.entry_id).second) {
                throw ParseError("knowledge base: duplicate entry_id '" + entry.entry_id + "'",
                                 line_no);
            }
            db.entries.push_back(std::move(entry));
        } catch (const json::exception& e) {
            throw ParseError(std::string("knowledge base: ") + e.what(), line_no);
        }
    }
    if (!have_header) throw ParseError("knowledge base: missing header line");
    try {
        db.validate();
    } catch (const Error& e) {
        throw ParseError(std::string("knowledge base: ") + e.what());
    }
    return db;
}

void save_database(const KnowledgeDatabase& db, const std::filesystem::path& path) {
    util::write_file_atomic(path, serialize_database(db));
}

KnowledgeDatabase load_database(const std::filesystem::path& path) {
    return parse_database(util::read_file(path));
}

std::string fingerprint(const KnowledgeDatabase& db) {
    return util::sha256_hex("dim=" + std::to_string(db.dim) + "\n" + entry_lines(db));
}

}  // namespace qavlm::kb
