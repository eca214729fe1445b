#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "qavlm/assess/assessment.hpp"
#include "qavlm/eval/ablation.hpp"
#include "qavlm/eval/annotation.hpp"

namespace qavlm::eval {

// Mean of the expert validity judgments (0/1).
double compute_validity(std::span<const AnnotationRecord> records);

// R = max(0, 4 - E) for one response.
int relevance_score(int errors);

// Mean of R over the records.
double compute_relevance(std::span<const AnnotationRecord> records);

// Fraction of verdicts equal to ground truth. Indeterminate counts as wrong.
double compute_conclusion_correctness(std::span<const assess::AssessmentResponse> responses,
                                      const std::map<std::string, assess::Verdict>& truth);

struct ExcludedSample {
    std::string sample_id;
    std::string reason;
};

struct MetricsCell {
    std::string backend_id;
    std::string config;
    double validity = 0.0;
    double relevance = 0.0;
    double conclusion_correctness = 0.0;
    std::size_t n_samples = 0;
    std::vector<ExcludedSample> excluded;
};

struct MetricsReport {
    std::string annotator_id;
    std::vector<MetricsCell> cells;

    nlohmann::json to_json() const;
};

// One cell per (run id, config) present in `records`. All three means use
// the same samples: those with both a response and an annotation by
// `annotator_id`. Other manifest samples are listed as excluded.
MetricsReport compute_metrics(const std::vector<RunRecord>& records,
                              const std::vector<AnnotationRecord>& annotations,
                              const Manifest& manifest, const std::string& annotator_id);

}  // namespace qavlm::eval
