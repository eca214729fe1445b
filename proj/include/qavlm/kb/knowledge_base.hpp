#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "qavlm/backend/backend.hpp"
#include "qavlm/embedding.hpp"
#include "qavlm/ingest/document.hpp"

namespace qavlm::kb {

struct KnowledgeEntry {
    std::string entry_id;
    std::string summary;
    Embedding embedding;
    std::string doc_id;
    std::string chunk_id;
    std::string context_title;
    std::string backend_id;

    nlohmann::json to_json() const;
    static KnowledgeEntry from_json(const nlohmann::json& j);
    friend bool operator==(const KnowledgeEntry&, const KnowledgeEntry&) = default;
};

struct KnowledgeDatabase {
    std::vector<KnowledgeEntry> entries;
    std::size_t dim = 0;
    std::string created_at;

    bool empty() const noexcept { return entries.empty(); }
    std::size_t size() const noexcept { return entries.size(); }
    // Unique ids, shared dim, finite non-zero vectors, non-empty summaries.
    void validate() const;
    friend bool operator==(const KnowledgeDatabase&, const KnowledgeDatabase&) = default;
};

struct RetrievalHit {
    const KnowledgeEntry* entry = nullptr;
    double similarity = 0.0;
};

// dot(a, b) / (|a| |b|), clamped to [-1, 1].
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(const Embedding& a, const Embedding& b);

enum class ScanMode { serial, parallel };

// Cosine of `query` against every entry, in entry order. The parallel kernel
// splits entries across OpenMP threads; each similarity is still computed by
// one thread in the same order, so both kernels agree bit for bit.
std::vector<double> similarity_scan_serial(const KnowledgeDatabase& db,
                                           std::span<const double> query);
std::vector<double> similarity_scan_parallel(const KnowledgeDatabase& db,
                                             std::span<const double> query);

// Top min(n, |db|) hits by similarity descending, ties by ascending entry_id.
std::vector<RetrievalHit> select_top(const KnowledgeDatabase& db, std::span<const double> scores,
                                     std::size_t n);

std::vector<RetrievalHit> retrieve(const KnowledgeDatabase& db, const Embedding& query,
                                   std::size_t n, ScanMode mode = ScanMode::parallel);
// Embeds `query` with the backend first.
std::vector<RetrievalHit> retrieve(const KnowledgeDatabase& db, std::string_view query,
                                   std::size_t n, backend::Backend& backend);

inline constexpr std::size_t kDefaultTopN = 5;

std::string build_summary_prompt(const ingest::Chunk& chunk, const ingest::DocumentContext& ctx);
std::string summarize_chunk(const ingest::Chunk& chunk, const ingest::DocumentContext& ctx,
                            backend::Backend& backend);

// Embeds non-empty text; checks the result against expected_dim when given.
Embedding embed(std::string_view text, backend::Backend& backend,
                std::optional<std::size_t> expected_dim = std::nullopt);

struct BuildOptions {
    // 0 means "use the backend's in-flight limit".
    std::size_t max_in_flight = 0;
};

struct BuildFailure {
    std::string chunk_id;
    std::string reason;
};

struct BuildResult {
    KnowledgeDatabase db;
    std::vector<BuildFailure> failures;
};

// One entry per chunk, in chunk order. Chunks that fail are reported and
// skipped; if every chunk fails, throws EmptyDatabaseError.
BuildResult build_database(const std::vector<ingest::Chunk>& chunks,
                           const ingest::ContextMap& contexts, backend::Backend& backend,
                           const BuildOptions& options = {});

// JSON Lines: header {"dim", "created_at"} then one entry per line.
std::string serialize_database(const KnowledgeDatabase& db);
KnowledgeDatabase parse_database(std::string_view text);
void save_database(const KnowledgeDatabase& db, const std::filesystem::path& path);
KnowledgeDatabase load_database(const std::filesystem::path& path);

// SHA-256 over dim and the entry lines; created_at does not contribute.
std::string fingerprint(const KnowledgeDatabase& db);

}  // namespace qavlm::kb
