#pragma once

#include <optional>
#include <string>

#include "json.hpp"
#include "qavlm/eval/metrics.hpp"

namespace qavlm::eval {

// A comparison column not produced by this harness (e.g. a conventional ML
// classifier that only reports correctness). Missing values print as NA.
struct ExternalBaseline {
    std::string name;
    std::optional<double> validity;
    std::optional<double> relevance;
    std::optional<double> conclusion_correctness;
};

// Round half away from zero to `decimals` places, fixed notation.
std::string format_half_up(double value, int decimals = 2);

std::string column_label(const MetricsCell& cell);

std::string render_markdown(const MetricsReport& report,
                            const std::optional<ExternalBaseline>& baseline = std::nullopt);
std::string render_csv(const MetricsReport& report,
                       const std::optional<ExternalBaseline>& baseline = std::nullopt);
// Full-precision values for machines.
nlohmann::json render_sidecar(const MetricsReport& report,
                              const std::optional<ExternalBaseline>& baseline = std::nullopt);

}  // namespace qavlm::eval
