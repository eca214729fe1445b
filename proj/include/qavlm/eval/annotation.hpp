#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "qavlm/assess/assessment.hpp"
#include "qavlm/eval/ablation.hpp"

namespace qavlm::eval {

inline constexpr int kCoreParameterCount = 4;

struct AnnotationRecord {
    std::string sample_id;
    std::string config;
    std::string backend_id;
    bool validity = false;
    int omitted_relevant = 0;
    int included_irrelevant = 0;
    std::string annotator_id;
    std::string annotated_at;

    // E_i: omitted relevant plus included irrelevant features.
    int errors() const noexcept { return omitted_relevant + included_irrelevant; }

    nlohmann::json to_json() const;
    static AnnotationRecord from_json(const nlohmann::json& j);
};

// JSON Lines. An unterminated, unreadable final line (an interrupted write)
// is dropped with a warning; any other bad line is a ParseError.
std::vector<AnnotationRecord> parse_annotations(std::string_view text);
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path);

// Keeps the latest annotated_at per (backend, sample, config, annotator);
// on equal timestamps the later record in input order wins.
std::vector<AnnotationRecord> latest_annotations(const std::vector<AnnotationRecord>& records);

struct AnnotateSummary {
    std::size_t total = 0;
    std::size_t already_done = 0;
    std::size_t added = 0;
    std::size_t revised = 0;
    bool quit_early = false;
};

// Terminal annotation loop. For each response not yet annotated by
// `annotator_id` it shows the image path, the response text and the
// core-parameter checklist, then reads validity (y/n), the omitted-relevant
// count and the included-irrelevant count. "r <k>" revises record k, "q"
// quits. Every record is appended and flushed as soon as it is complete.
AnnotateSummary annotate_interactive(const std::vector<RunRecord>& records,
                                     const assess::FeatureVocabulary& vocabulary,
                                     const std::filesystem::path& annotation_path,
                                     const std::string& annotator_id, std::istream& in,
                                     std::ostream& out);

}  // namespace qavlm::eval
