#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qavlm/backend/backend.hpp"
#include "qavlm/kb/knowledge_base.hpp"

namespace qavlm::extract {

// Human-authored queries. "{domain}" and "{feature}" are filled in before
// retrieval; each required placeholder must appear exactly once.
struct QueryTemplates {
    std::string feature_query;
    std::string measure_template;
    std::string range_template;
    std::string domain_label;

    static QueryTemplates defaults();
    static QueryTemplates from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    void validate() const;

    std::string feature_question() const;
    std::string measure_question(const std::string& feature) const;
    std::string range_question(const std::string& feature) const;
};

struct HitRef {
    std::string entry_id;
    double similarity = 0.0;
    friend bool operator==(const HitRef&, const HitRef&) = default;
};

struct SupportingHits {
    std::vector<HitRef> feature_query;
    std::vector<HitRef> measure_query;
    std::vector<HitRef> range_query;
    friend bool operator==(const SupportingHits&, const SupportingHits&) = default;
};

struct FeatureKnowledge {
    std::string feature_name;
    std::string measure_query;
    std::string range_query;
    std::string measurement_procedure;
    std::string good_range;
    SupportingHits supporting_hits;
    std::vector<std::string> warnings;
    friend bool operator==(const FeatureKnowledge&, const FeatureKnowledge&) = default;
};

struct KnowledgeBrief {
    std::string domain_label;
    std::vector<FeatureKnowledge> features;
    std::string raw_feature_answer;
    std::string generated_at;
    std::string kb_fingerprint;

    nlohmann::json to_json() const;
    static KnowledgeBrief from_json(const nlohmann::json& j);
    static KnowledgeBrief load(const std::filesystem::path& path);
};

struct FeatureQueryResult {
    std::vector<std::string> features;
    std::string raw_answer;
    std::vector<HitRef> hits;
};

// Splits a delimited feature list ("a; b; c", one per line, or bulleted),
// trims and drops case-insensitive duplicates keeping the first spelling.
// Returns nullopt when the text reads as prose rather than a list.
std::optional<std::vector<std::string>> parse_feature_list(std::string_view text);

// Stage 1: retrieve for the feature question, answer it from the retrieved
// summaries, then have the backend restate the answer as a delimited list.
// One stricter reformat attempt is made before ExtractionFormatError.
FeatureQueryResult run_feature_query(const kb::KnowledgeDatabase& db,
                                     const QueryTemplates& templates, backend::Backend& backend,
                                     std::size_t n = kb::kDefaultTopN);

// Stages 2 and 3: measurement and good-range questions per feature. The
// 2 x |features| calls are independent and run concurrently; output order
// follows `features`. A failing feature gets empty fields and a warning.
std::vector<FeatureKnowledge> run_followup_queries(const kb::KnowledgeDatabase& db,
                                                   const QueryTemplates& templates,
                                                   backend::Backend& backend,
                                                   const std::vector<std::string>& features,
                                                   std::size_t n = kb::kDefaultTopN,
                                                   const std::vector<HitRef>& feature_hits = {},
                                                   std::size_t max_in_flight = 0);

KnowledgeBrief build_brief(const kb::KnowledgeDatabase& db, const QueryTemplates& templates,
                           backend::Backend& backend, std::size_t n = kb::kDefaultTopN);

// Warning text when the brief was distilled from a different database.
std::optional<std::string> staleness_warning(const KnowledgeBrief& brief,
                                             const kb::KnowledgeDatabase& db);

// Plain-text rendering inlined into assessment prompts.
std::string render_brief(const KnowledgeBrief& brief);

}  // namespace qavlm::extract
