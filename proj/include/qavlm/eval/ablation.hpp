#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "qavlm/assess/assessment.hpp"

namespace qavlm::eval {

struct Sample {
    std::string sample_id;
    std::filesystem::path image;
    assess::Verdict ground_truth = assess::Verdict::indeterminate;
};

// {"samples": [{"sample_id", "image", "ground_truth": "good"|"bad"}],
//  "reference_image": path}. Relative paths resolve against the manifest's
// directory.
struct Manifest {
    std::vector<Sample> samples;
    std::filesystem::path reference_image;

    static Manifest parse(std::string_view text, const std::filesystem::path& base_dir = {});
    static Manifest load(const std::filesystem::path& path);
    std::map<std::string, assess::Verdict> ground_truth() const;
};

struct AblationOptions {
    std::string run_id;            // defaults to the backend id
    std::size_t max_in_flight = 0; // 0: backend limit
    assess::FeatureVocabulary vocabulary = assess::FeatureVocabulary::defaults();
    assess::AssessmentPrompts prompts = assess::AssessmentPrompts::defaults();
};

struct AblationFailure {
    std::string sample_id;
    std::string config;
    std::string reason;
};

struct AblationSummary {
    std::filesystem::path run_dir;
    std::size_t written = 0;
    std::size_t skipped = 0;
    std::vector<AblationFailure> failures;
};

// runs/<run_id>/<config>/<sample_id>.json
std::filesystem::path record_path(const std::filesystem::path& runs_root, const std::string& run_id,
                                  assess::AblationConfig config, const std::string& sample_id);

// Assesses every (sample, config) pair and writes one record per pair.
// Pairs whose record already exists are skipped, so an interrupted run can be
// resumed. Failures are collected (and written to failures.jsonl) without
// stopping the run.
AblationSummary run_ablation(const Manifest& manifest,
                             const std::set<assess::AblationConfig>& configs,
                             const extract::KnowledgeBrief* brief,
                             const assess::ImageInput* reference, backend::Backend& backend,
                             const std::filesystem::path& runs_root,
                             const AblationOptions& options = {});

struct RunRecord {
    std::string run_id;
    assess::AssessmentResponse response;
    std::string image;
    std::filesystem::path path;
};

// Reads every record under runs_root (a directory of runs, or one run
// directory), sorted by run id, config order, then sample id.
std::vector<RunRecord> load_run_records(const std::filesystem::path& runs_root);

}  // namespace qavlm::eval
