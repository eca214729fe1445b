#include "qavlm/extract/knowledge_extraction.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "qavlm/errors.hpp"
#include "qavlm/log.hpp"
#include "qavlm/parallel.hpp"
#include "qavlm/util.hpp"

namespace qavlm::extract {

using nlohmann::json;

namespace {
constexpr std::string_view kDomain = "{domain}";
constexpr std::string_view kFeature = "{feature}";
constexpr std::size_t kMaxWordsPerFeature = 8;
}  // namespace

QueryTemplates QueryTemplates::defaults() {
    return {
        "What features are commonly used to distinguish good and bad prints in {domain} "
        "manufacturing?",
        "how to measure {feature} for {domain}",
        "what range of {feature}s are considered good for {domain}",
        "DED-LW",
    };
}

QueryTemplates QueryTemplates::from_json(const json& j) {
    QueryTemplates t;
    try {
        t.feature_query = j.at("feature_query").get<std::string>();
        t.measure_template = j.at("measure_template").get<std::string>();
        t.range_template = j.at("range_template").get<std::string>();
        t.domain_label = j.at("domain_label").get<std::string>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("templates: ") + e.what());
    }
    t.validate();
    return t;
}

json QueryTemplates::to_json() const {
    return {{"feature_query", feature_query},
            {"measure_template", measure_template},
            {"range_template", range_template},
            {"domain_label", domain_label}};
}

void QueryTemplates::validate() const {
    auto require_once = [](const std::string& tmpl, std::string_view ph, const char* name) {
        const auto n = util::count_occurrences(tmpl, ph);
        if (n != 1) {
            throw ConfigurationError(std::string("template ") + name + " must contain " +
                                     std::string(ph) + " exactly once (found " +
                                     std::to_string(n) + ")");
        }
    };
    require_once(feature_query, kDomain, "feature_query");
    if (util::count_occurrences(feature_query, kFeature) != 0) {
        throw ConfigurationError("template feature_query must not contain {feature}");
    }
    require_once(measure_template, kDomain, "measure_template");
    require_once(measure_template, kFeature, "measure_template");
    require_once(range_template, kDomain, "range_template");
    require_once(range_template, kFeature, "range_template");
    if (util::trim(domain_label).empty()) throw ConfigurationError("domain_label is empty");
}

std::string QueryTemplates::feature_question() const {
    std::string q = feature_query;
    util::replace_all(q, kDomain, domain_label);
    return q;
}

std::string QueryTemplates::measure_question(const std::string& feature) const {
    std::string q = measure_template;
    util::replace_all(q, kFeature, feature);
    util::replace_all(q, kDomain, domain_label);
    return q;
}

std::string QueryTemplates::range_question(const std::string& feature) const {
    std::string q = range_template;
    util::replace_all(q, kFeature, feature);
    util::replace_all(q, kDomain, domain_label);
    return q;
}

namespace {

json hits_to_json(const std::vector<HitRef>& hits) {
    json a = json::array();
    for (const auto& h : hits) a.push_back({{"entry_id", h.entry_id}, {"similarity", h.similarity}});
    return a;
}

std::vector<HitRef> hits_from_json(const json& a) {
    std::vector<HitRef> out;
    for (const auto& h : a) {
        out.push_back({h.at("entry_id").get<std::string>(), h.at("similarity").get<double>()});
    }
    return out;
}

std::vector<HitRef> to_refs(const std::vector<kb::RetrievalHit>& hits) {
    std::vector<HitRef> out;
    out.reserve(hits.size());
    for (const auto& h : hits) out.push_back({h.entry->entry_id, h.similarity});
    return out;
}

std::string grounded_question_prompt(const std::vector<kb::RetrievalHit>& hits,
                                     const std::string& question, bool concise) {
    std::ostringstream os;
    os << "Answer the question using only the knowledge summaries provided below. Do not rely "
          "on outside knowledge; if the summaries do not cover it, say so.\n\n<summaries>\n";
    for (const auto& h : hits) os << '[' << h.entry->entry_id << "] " << h.entry->summary << '\n';
    os << "</summaries>\n\n<question>\n" << question << "\n</question>\n";
    if (concise) os << "\nGive a concise answer suitable for use as an assessment criterion.";
    return os.str();
}

std::string format_prompt(const std::string& answer) {
    return "Rewrite the answer below as a single line that lists only the feature names, "
           "separated by semicolons, with no other text.\n\n<answer>\n" +
           answer + "\n</answer>";
}

std::string strict_format_prompt(const std::string& answer) {
    return "STRICT FORMAT. Your previous reply could not be read as a list. Reply with exactly "
           "one line of feature names separated by semicolons, for example "
           "`feature one; feature two`. No sentences and no explanations.\n\n<answer>\n" +
           answer + "\n</answer>";
}

std::string ask(backend::Backend& backend, const std::string& prompt) {
    return backend.chat(backend.make_request({{backend::Role::user, prompt, {}}}));
}

std::string strip_item(std::string item) {
    item = util::trim(item);
    std::size_t i = 0;
    while (i < item.size() && (item[i] == '-' || item[i] == '*' || item[i] == '+')) ++i;
    if (i == 0) {
        std::size_t d = 0;
        while (d < item.size() && std::isdigit(static_cast<unsigned char>(item[d]))) ++d;
        if (d > 0 && d < item.size() && (item[d] == '.' || item[d] == ')')) i = d + 1;
    }
    item = util::trim(std::string_view(item).substr(i));
    while (!item.empty() && (item.back() == '.' || item.back() == ',')) item.pop_back();
    return util::trim(item);
}

}  // namespace

std::optional<std::vector<std::string>> parse_feature_list(std::string_view text) {
    std::string body = util::trim(text);
    if (util::istarts_with(body, "features:")) body = util::trim(std::string_view(body).substr(9));

    std::vector<std::string> items;
    std::string current;
    for (char c : body) {
        if (c == ';' || c == '\n') {
            items.push_back(current);
            current.clear();
        } else {
            current += c;
        }
    }
    items.push_back(current);

    std::vector<std::string> out;
    std::set<std::string> seen;
    for (auto& raw : items) {
        std::string item = strip_item(raw);
        if (item.empty()) continue;
        if (util::count_tokens(item) > kMaxWordsPerFeature || item.find(". ") != std::string::npos) {
            return std::nullopt;
        }
        if (seen.insert(util::to_lower(item)).second) out.push_back(item);
    }
    return out;
}

FeatureQueryResult run_feature_query(const kb::KnowledgeDatabase& db,
                                     const QueryTemplates& templates, backend::Backend& backend,
                                     std::size_t n) {
    if (db.empty()) throw EmptyDatabaseError("feature query: knowledge database is empty");
    templates.validate();
    const std::string question = templates.feature_question();
    const auto hits = kb::retrieve(db, question, n, backend);

    FeatureQueryResult result;
    result.hits = to_refs(hits);
    result.raw_answer = util::trim(ask(backend, grounded_question_prompt(hits, question, false)));
    if (result.raw_answer.empty()) throw DegenerateOutputError("empty answer to feature query");

    auto parsed = parse_feature_list(ask(backend, format_prompt(result.raw_answer)));
    if (!parsed) {
        log::info("feature list was not delimited; retrying with strict format");
        parsed = parse_feature_list(ask(backend, strict_format_prompt(result.raw_answer)));
    }
    if (!parsed) {
        throw ExtractionFormatError("feature list could not be parsed after a reformat retry");
    }
    if (parsed->empty()) throw NoFeaturesError("feature query produced no features");
    result.features = std::move(*parsed);
    return result;
}

std::vector<FeatureKnowledge> run_followup_queries(const kb::KnowledgeDatabase& db,
                                                   const QueryTemplates& templates,
                                                   backend::Backend& backend,
                                                   const std::vector<std::string>& features,
                                                   std::size_t n,
                                                   const std::vector<HitRef>& feature_hits,
                                                   std::size_t max_in_flight) {
    if (features.empty()) throw PreconditionError("follow-up queries need at least one feature");
    templates.validate();

    std::vector<FeatureKnowledge> out(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        out[i].feature_name = features[i];
        out[i].measure_query = templates.measure_question(features[i]);
        out[i].range_query = templates.range_question(features[i]);
        out[i].supporting_hits.feature_query = feature_hits;
    }

    struct Outcome {
        std::string answer;
        std::vector<HitRef> hits;
        std::string error;
    };
    std::vector<Outcome> outcomes(features.size() * 2);

    // Task 2i is feature i's measurement question, 2i+1 its range question.
    parallel_for(outcomes.size(), max_in_flight ? max_in_flight : backend.max_in_flight(),
                 [&](std::size_t t) {
                     const auto& fk = out[t / 2];
                     const std::string& question = t % 2 == 0 ? fk.measure_query : fk.range_query;
                     try {
                         const auto hits = kb::retrieve(db, question, n, backend);
                         outcomes[t].hits = to_refs(hits);
                         outcomes[t].answer =
                             util::trim(ask(backend, grounded_question_prompt(hits, question, true)));
                         if (outcomes[t].answer.empty()) throw DegenerateOutputError("empty answer");
                     } catch (const std::exception& e) {
                         outcomes[t].answer.clear();
                         outcomes[t].error = e.what();
                     }
                 });

    for (std::size_t i = 0; i < features.size(); ++i) {
        auto& fk = out[i];
        const auto& measure = outcomes[2 * i];
        const auto& range = outcomes[2 * i + 1];
        fk.measurement_procedure = measure.answer;
        fk.supporting_hits.measure_query = measure.hits;
        fk.good_range = range.answer;
        fk.supporting_hits.range_query = range.hits;
        if (!measure.error.empty()) {
            fk.warnings.push_back("measurement query failed: " + measure.error);
        }
        if (!range.error.empty()) fk.warnings.push_back("range query failed: " + range.error);
        for (const auto& w : fk.warnings) log::warn(fk.feature_name + ": " + w);
    }
    return out;
}

KnowledgeBrief build_brief(const kb::KnowledgeDatabase& db, const QueryTemplates& templates,
                           backend::Backend& backend, std::size_t n) {
    const auto stage1 = run_feature_query(db, templates, backend, n);
    KnowledgeBrief brief;
    brief.domain_label = templates.domain_label;
    brief.raw_feature_answer = stage1.raw_answer;
    brief.features =
        run_followup_queries(db, templates, backend, stage1.features, n, stage1.hits);
    brief.generated_at = util::utc_timestamp();
    brief.kb_fingerprint = kb::fingerprint(db);
    return brief;
}

json KnowledgeBrief::to_json() const {
    json fs = json::array();
    for (const auto& f : features) {
        fs.push_back({{"feature_name", f.feature_name},
                      {"measure_query", f.measure_query},
                      {"range_query", f.range_query},
                      {"measurement_procedure", f.measurement_procedure},
                      {"good_range", f.good_range},
                      {"supporting_hits",
                       {{"feature_query", hits_to_json(f.supporting_hits.feature_query)},
                        {"measure_query", hits_to_json(f.supporting_hits.measure_query)},
                        {"range_query", hits_to_json(f.supporting_hits.range_query)}}},
                      {"warnings", f.warnings}});
    }
    return {{"domain_label", domain_label},
            {"features", fs},
            {"raw_feature_answer", raw_feature_answer},
            {"generated_at", generated_at},
            {"kb_fingerprint", kb_fingerprint}};
}

KnowledgeBrief KnowledgeBrief::from_json(const json& j) {
    KnowledgeBrief b;
    try {
        b.domain_label = j.value("domain_label", "");
        b.raw_feature_answer = j.at("raw_feature_answer").get<std::string>();
        b.generated_at = j.at("generated_at").get<std::string>();
        b.kb_fingerprint = j.at("kb_fingerprint").get<std::string>();
        for (const auto& f : j.at("features")) {
            FeatureKnowledge fk;
            fk.feature_name = f.at("feature_name").get<std::string>();
            fk.measure_query = f.value("measure_query", "");
            fk.range_query = f.value("range_query", "");
            fk.measurement_procedure = f.at("measurement_procedure").get<std::string>();
            fk.good_range = f.at("good_range").get<std::string>();
            const auto& sh = f.at("supporting_hits");
            fk.supporting_hits.feature_query = hits_from_json(sh.at("feature_query"));
            fk.supporting_hits.measure_query = hits_from_json(sh.at("measure_query"));
            fk.supporting_hits.range_query = hits_from_json(sh.at("range_query"));
            fk.warnings = f.value("warnings", std::vector<std::string>{});
            if (fk.feature_name.empty()) throw ParseError("brief: empty feature_name");
            b.features.push_back(std::move(fk));
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("brief: ") + e.what());
    }
    if (b.features.empty()) throw ParseError("brief: no features");
    return b;
}

KnowledgeBrief KnowledgeBrief::load(const std::filesystem::path& path) {
    const std::string text = util::read_file(path);
    try {
        return from_json(json::parse(text));
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what(), util::line_of_offset(text, e.byte));
    }
}

std::optional<std::string> staleness_warning(const KnowledgeBrief& brief,
                                             const kb::KnowledgeDatabase& db) {
    const std::string current = kb::fingerprint(db);
    if (current == brief.kb_fingerprint) return std::nullopt;
    return "brief was distilled from knowledge base " + brief.kb_fingerprint.substr(0, 12) +
           " but the current one is " + current.substr(0, 12) + "; consider re-running extract";
}

std::string render_brief(const KnowledgeBrief& brief) {
    std::ostringstream os;
    os << "Quality assessment knowledge";
    if (!brief.domain_label.empty()) os << " for " << brief.domain_label;
    os << ":\n";
    for (std::size_t i = 0; i < brief.features.size(); ++i) {
        const auto& f = brief.features[i];
        os << "\n" << i + 1 << ". Feature: " << f.feature_name << "\n";
        os << "   How to measure: "
           << (f.measurement_procedure.empty() ? "(not available)" : f.measurement_procedure)
           << "\n";
        os << "   Good range: " << (f.good_range.empty() ? "(not available)" : f.good_range)
           << "\n";
    }
    return os.str();
}

}  // namespace qavlm::extract
