#include "qavlm/eval/metrics.hpp"

#include <algorithm>
#include <set>

#include "qavlm/errors.hpp"

namespace qavlm::eval {

using nlohmann::json;

double compute_validity(std::span<const AnnotationRecord> records) {
    if (records.empty()) throw NoDataError("validity: no annotation records");
    long valid = 0;
    for (const auto& r : records) valid += r.validity ? 1 : 0;
    return static_cast<double>(valid) / static_cast<double>(records.size());
}

int relevance_score(int errors) { return std::max(0, kCoreParameterCount - errors); }

double compute_relevance(std::span<const AnnotationRecord> records) {
    if (records.empty()) throw NoDataError("relevance: no annotation records");
    long total = 0;
    for (const auto& r : records) total += relevance_score(r.errors());
    return static_cast<double>(total) / static_cast<double>(records.size());
}

double compute_conclusion_correctness(std::span<const assess::AssessmentResponse> responses,
                                      const std::map<std::string, assess::Verdict>& truth) {
    if (responses.empty()) throw NoDataError("conclusion correctness: no responses");
    long correct = 0;
    for (const auto& r : responses) {
        auto it = truth.find(r.sample_id);
        if (it == truth.end()) {
            throw DataIntegrityError("sample '" + r.sample_id + "' is not in the manifest");
        }
        if (r.verdict != assess::Verdict::indeterminate && r.verdict == it->second) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(responses.size());
}

json MetricsReport::to_json() const {
    json cs = json::array();
    for (const auto& c : cells) {
        json ex = json::array();
        for (const auto& e : c.excluded) ex.push_back({{"sample_id", e.sample_id}, {"reason", e.reason}});
        cs.push_back({{"backend_id", c.backend_id},
                      {"config", c.config},
                      {"validity", c.validity},
                      {"relevance", c.relevance},
                      {"conclusion_correctness", c.conclusion_correctness},
                      {"n_samples", c.n_samples},
                      {"excluded", ex}});
    }
    return {{"annotator_id", annotator_id}, {"cells", cs}};
}

MetricsReport compute_metrics(const std::vector<RunRecord>& records,
                              const std::vector<AnnotationRecord>& annotations,
                              const Manifest& manifest, const std::string& annotator_id) {
    if (records.empty()) throw NoDataError("no assessment responses");
    if (annotations.empty()) throw NoDataError("no annotations");
    const auto truth = manifest.ground_truth();
    for (const auto& r : records) {
        if (!truth.contains(r.response.sample_id)) {
            throw DataIntegrityError("response for sample '" + r.response.sample_id +
                                     "' is not in the manifest");
        }
    }
    std::vector<AnnotationRecord> mine;
    for (const auto& a : latest_annotations(annotations)) {
        if (a.annotator_id == annotator_id) mine.push_back(a);
    }
    if (mine.empty()) throw NoDataError("no annotations by annotator '" + annotator_id + "'");

    MetricsReport report;
    report.annotator_id = annotator_id;

    // Cells in record order: run id, then config order.
    std::vector<std::pair<std::string, assess::AblationConfig>> keys;
    for (const auto& r : records) {
        std::pair key{r.run_id, r.response.config};
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
    }

    for (const auto& [run_id, config] : keys) {
        const std::string config_name(assess::to_string(config));
        MetricsCell cell;
        cell.backend_id = run_id;
        cell.config = config_name;
        std::vector<assess::AssessmentResponse> responses;
        std::vector<AnnotationRecord> notes;
        for (const auto& s : manifest.samples) {
            auto resp = std::find_if(records.begin(), records.end(), [&](const RunRecord& r) {
                return r.run_id == run_id && r.response.config == config &&
                       r.response.sample_id == s.sample_id;
            });
            auto note = std::find_if(mine.begin(), mine.end(), [&](const AnnotationRecord& a) {
                return a.backend_id == run_id && a.config == config_name &&
                       a.sample_id == s.sample_id;
            });
            if (resp == records.end()) {
                cell.excluded.push_back({s.sample_id, "no response"});
            } else if (note == mine.end()) {
                cell.excluded.push_back({s.sample_id, "not annotated"});
            } else {
                responses.push_back(resp->response);
                notes.push_back(*note);
            }
        }
        cell.n_samples = responses.size();
        if (cell.n_samples == 0) continue;
        cell.validity = compute_validity(notes);
        cell.relevance = compute_relevance(notes);
        cell.conclusion_correctness = compute_conclusion_correctness(responses, truth);
        report.cells.push_back(std::move(cell));
    }
    if (report.cells.empty()) throw NoDataError("no (backend, config) cell has annotated responses");
    return report;
}

}  // namespace qavlm::eval
