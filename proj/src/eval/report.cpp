#include "qavlm/eval/report.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "qavlm/assess/assessment.hpp"

namespace qavlm::eval {

using nlohmann::json;

std::string format_half_up(double value, int decimals) {
    const double scale = std::pow(10.0, decimals);
    // The epsilon absorbs binary representation error in values such as
    // 1.005, which are meant to sit exactly on the half.
    const double scaled = std::floor(std::fabs(value) * scale + 0.5 + 1e-9);
    const double rounded = std::copysign(scaled / scale, value);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, rounded == 0.0 ? 0.0 : rounded);
    return buf;
}

namespace {

std::string config_label(const std::string& config) {
    if (config == "full") return "QA-VLM";
    if (config == "knowledge_only") return "Knowledge-equipped only";
    if (config == "reference_only") return "With reference only";
    if (config == "generic") return "Generic VLM";
    return config;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

Table build_table(const MetricsReport& report, const std::optional<ExternalBaseline>& baseline) {
    Table t;
    t.header.push_back("Metric");
    for (const auto& c : report.cells) t.header.push_back(column_label(c));
    if (baseline) t.header.push_back(baseline->name);

    auto na_or = [](const std::optional<double>& v) { return v ? format_half_up(*v) : "NA"; };
    auto row = [&](const std::string& name, double MetricsCell::*field,
                   const std::optional<double>& external) {
        std::vector<std::string> r{name};
        for (const auto& c : report.cells) r.push_back(format_half_up(c.*field));
        if (baseline) r.push_back(na_or(external));
        t.rows.push_back(std::move(r));
    };
    row("Validity", &MetricsCell::validity, baseline ? baseline->validity : std::nullopt);
    row("Knowledge relevance (max 4)", &MetricsCell::relevance,
        baseline ? baseline->relevance : std::nullopt);
    row("Conclusion correctness", &MetricsCell::conclusion_correctness,
        baseline ? baseline->conclusion_correctness : std::nullopt);
    return t;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string column_label(const MetricsCell& cell) {
    return cell.backend_id + ": " + config_label(cell.config);
}

std::string render_markdown(const MetricsReport& report,
                            const std::optional<ExternalBaseline>& baseline) {
    const Table t = build_table(report, baseline);
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
        os << '|';
        for (const auto& c : cells) os << ' ' << c << " |";
        os << '\n';
    };
    line(t.header);
    os << '|';
    for (std::size_t i = 0; i < t.header.size(); ++i) os << (i == 0 ? " --- |" : " ---: |");
    os << '\n';
    for (const auto& r : t.rows) line(r);
    return os.str();
}

std::string render_csv(const MetricsReport& report, const std::optional<ExternalBaseline>& baseline) {
    const Table t = build_table(report, baseline);
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << csv_field(cells[i]);
        os << '\n';
    };
    line(t.header);
    for (const auto& r : t.rows) line(r);
    return os.str();
}

json render_sidecar(const MetricsReport& report, const std::optional<ExternalBaseline>& baseline) {
    json j = report.to_json();
    for (std::size_t i = 0; i < report.cells.size(); ++i) {
        j["cells"][i]["label"] = column_label(report.cells[i]);
    }
    if (baseline) {
        auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
        j["baseline"] = {{"name", baseline->name},
                         {"validity", opt(baseline->validity)},
                         {"relevance", opt(baseline->relevance)},
                         {"conclusion_correctness", opt(baseline->conclusion_correctness)}};
    }
    return j;
}

}  // namespace qavlm::eval
