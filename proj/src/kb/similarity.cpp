#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "qavlm/errors.hpp"
#include "qavlm/kb/knowledge_base.hpp"

namespace qavlm::kb {

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionError("cosine of vectors with dims " + std::to_string(a.size()) + " and " +
                             std::to_string(b.size()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw DegenerateVectorError("cosine of a zero-norm vector");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double cosine_similarity(const Embedding& a, const Embedding& b) {
    return cosine_similarity(a.view(), b.view());
}

std::vector<double> similarity_scan_serial(const KnowledgeDatabase& db,
                                           std::span<const double> query) {
    std::vector<double> scores(db.entries.size());
    for (std::size_t i = 0; i < db.entries.size(); ++i) {
        scores[i] = cosine_similarity(db.entries[i].embedding.view(), query);
    }
    return scores;
}

std::vector<double> similarity_scan_parallel(const KnowledgeDatabase& db,
                                             std::span<const double> query) {
    const auto n = static_cast<std::int64_t>(db.entries.size());
    std::vector<double> scores(db.entries.size());
    for (const auto& e : db.entries) {
        if (e.embedding.dim() != query.size()) {
            throw DimensionError("query dim " + std::to_string(query.size()) +
                                 " does not match entry " + e.entry_id);
        }
    }
    bool degenerate = false;
#pragma omp parallel for schedule(static) reduction(|| : degenerate)
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& v = db.entries[static_cast<std::size_t>(i)].embedding.values;
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t k = 0; k < v.size(); ++k) {
            dot += v[k] * query[k];
            na += v[k] * v[k];
            nb += query[k] * query[k];
        }
        if (na == 0.0 || nb == 0.0) {
            degenerate = true;
            continue;
        }
        scores[static_cast<std::size_t>(i)] =
            std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
    }
    if (degenerate) throw DegenerateVectorError("cosine of a zero-norm vector");
    return scores;
}

std::vector<RetrievalHit> select_top(const KnowledgeDatabase& db, std::span<const double> scores,
                                     std::size_t n) {
    if (scores.size() != db.entries.size()) throw PreconditionError("score count mismatch");
    std::vector<std::size_t> order(db.entries.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t k = std::min(n, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return db.entries[a].entry_id < db.entries[b].entry_id;
                      });
    std::vector<RetrievalHit> hits;
    hits.reserve(k);
    for (std::size_t i = 0; i < k; ++i) hits.push_back({&db.entries[order[i]], scores[order[i]]});
    return hits;
}

std::vector<RetrievalHit> retrieve(const KnowledgeDatabase& db, const Embedding& query,
                                   std::size_t n, ScanMode mode) {
    if (n < 1) throw PreconditionError("retrieve: n must be >= 1");
    if (db.empty()) throw EmptyDatabaseError("retrieve: knowledge database is empty");
    if (query.dim() != db.dim) {
        throw DimensionError("query dim " + std::to_string(query.dim()) + " vs database dim " +
                             std::to_string(db.dim));
    }
    const auto scores = mode == ScanMode::parallel ? similarity_scan_parallel(db, query.view())
                                                   : similarity_scan_serial(db, query.view());
    return select_top(db, scores, n);
}

std::vector<RetrievalHit> retrieve(const KnowledgeDatabase& db, std::string_view query,
                                   std::size_t n, backend::Backend& backend) {
    if (n < 1) throw PreconditionError("retrieve: n must be >= 1");
    if (db.empty()) throw EmptyDatabaseError("retrieve: knowledge database is empty");
    return retrieve(db, embed(query, backend, db.dim), n);
}

}  // namespace qavlm::kb
