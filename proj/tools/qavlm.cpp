#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qavlm/assess/assessment.hpp"
#include "qavlm/backend/factory.hpp"
#include "qavlm/errors.hpp"
#include "qavlm/eval/ablation.hpp"
#include "qavlm/eval/annotation.hpp"
#include "qavlm/eval/metrics.hpp"
#include "qavlm/eval/report.hpp"
#include "qavlm/extract/knowledge_extraction.hpp"
#include "qavlm/ingest/document.hpp"
#include "qavlm/kb/knowledge_base.hpp"
#include "qavlm/log.hpp"
#include "qavlm/util.hpp"

namespace fs = std::filesystem;
using namespace qavlm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Globals {
    std::string backend;
    std::string cache_dir;
    int verbose = 0;
    bool quiet = false;
    std::optional<std::uint64_t> seed;
};

backend::BackendPtr open_backend(const Globals& g) {
    if (g.backend.empty()) throw ConfigurationError("--backend is required for this command");
    return backend::make_backend(g.backend, g.cache_dir, g.seed);
}

nlohmann::json read_json_file(const fs::path& path) {
    std::string raw = util::read_file(path);
    try {
        return nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what(),
                         util::line_of_offset(raw, e.byte > 0 ? e.byte - 1 : 0));
    }
}

fs::path context_sidecar(const fs::path& chunks_path) {
    return fs::path(chunks_path.string() + ".context.json");
}

std::set<assess::AblationConfig> parse_configs(const std::string& spec) {
    std::set<assess::AblationConfig> out;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = util::trim(item);
        if (item.empty()) continue;
        if (item == "all") {
            out.insert(assess::kAllConfigs.begin(), assess::kAllConfigs.end());
        } else {
            out.insert(assess::config_from_string(item));
        }
    }
    if (out.empty()) throw ConfigurationError("--configs selects no configuration");
    return out;
}

// ---- ingest ----------------------------------------------------------------

struct IngestArgs {
    std::vector<std::string> inputs;
    std::size_t budget = 512;
    std::size_t window = 2;
    std::string out = "chunks.jsonl";
};

int cmd_ingest(const IngestArgs& a) {
    if (a.budget == 0) throw PreconditionError("--budget must be at least 1");
    std::vector<ingest::Chunk> all;
    ingest::ContextMap contexts;
    std::set<std::string> seen;
    for (const auto& input : a.inputs) {
        std::string raw = util::read_file(input);
        ingest::SourceDocument doc;
        try {
            doc = ingest::parse_document(raw);
        } catch (const InputError& e) {
            throw InputError(input + ": " + e.what());
        }
        if (!seen.insert(doc.doc_id).second)
            throw InputError(input + ": duplicate doc_id '" + doc.doc_id + "'");
        auto ctx = ingest::extract_context(doc);
        for (const auto& w : ctx.warnings) log::warn(doc.doc_id + ": " + w);
        auto chunks = ingest::chunk_document(doc, {a.budget, a.window});
        all.insert(all.end(), chunks.begin(), chunks.end());
        contexts.emplace(doc.doc_id, std::move(ctx));
    }
    util::write_file_atomic(a.out, ingest::write_chunks_jsonl(all));
    util::write_file_atomic(context_sidecar(a.out), ingest::contexts_to_json(contexts).dump(2) + "\n");
    std::printf("ingest documents=%zu chunks=%zu out=%s\n", contexts.size(), all.size(),
                a.out.c_str());
    return kExitOk;
}

// ---- build-kb ----------------------------------------------------------------

struct BuildKbArgs {
    std::string chunks;
    std::string contexts;
    std::string out = "kb.jsonl";
};

int cmd_build_kb(const Globals& g, const BuildKbArgs& a) {
    auto chunks = ingest::read_chunks_jsonl(util::read_file(a.chunks));
    if (chunks.empty()) throw NoDataError(a.chunks + ": no chunks");
    fs::path ctx_path = a.contexts.empty() ? context_sidecar(a.chunks) : fs::path(a.contexts);
    auto contexts = ingest::contexts_from_json(read_json_file(ctx_path));
    auto be = open_backend(g);
    auto result = kb::build_database(chunks, contexts, *be);
    for (const auto& f : result.failures) log::warn("chunk " + f.chunk_id + ": " + f.reason);
    kb::save_database(result.db, a.out);
    std::printf("build-kb entries=%zu failed=%zu dim=%zu fingerprint=%s out=%s\n",
                result.db.size(), result.failures.size(), result.db.dim,
                kb::fingerprint(result.db).substr(0, 16).c_str(), a.out.c_str());
    return kExitOk;
}

// ---- extract -----------------------------------------------------------------

struct ExtractArgs {
    std::string kb;
    std::string templates;
    std::string out = "brief.json";
    std::string text_out;
    std::size_t top_n = kb::kDefaultTopN;
};

int cmd_extract(const Globals& g, const ExtractArgs& a) {
    if (a.top_n == 0) throw PreconditionError("--top-n must be at least 1");
    auto db = kb::load_database(a.kb);
    auto templates = a.templates.empty() ? extract::QueryTemplates::defaults()
                                         : extract::QueryTemplates::from_json(read_json_file(a.templates));
    templates.validate();
    auto be = open_backend(g);
    auto brief = extract::build_brief(db, templates, *be, a.top_n);
    std::size_t warned = 0;
    for (const auto& f : brief.features) warned += !f.warnings.empty();
    util::write_file_atomic(a.out, brief.to_json().dump(2) + "\n");
    if (!a.text_out.empty()) util::write_file_atomic(a.text_out, extract::render_brief(brief));
    std::printf("extract features=%zu incomplete=%zu out=%s\n", brief.features.size(), warned,
                a.out.c_str());
    return kExitOk;
}

// ---- assess ------------------------------------------------------------------

struct AssessArgs {
    std::string image;
    std::string config = "full";
    std::string brief;
    std::string reference;
    std::string kb;
    std::string prompts;
    std::string out;
};

int cmd_assess(const Globals& g, const AssessArgs& a) {
    auto config = assess::config_from_string(a.config);
    if (assess::needs_brief(config) && a.brief.empty())
        throw ConfigurationError("--config " + a.config + " requires --brief");
    if (assess::needs_reference(config) && a.reference.empty())
        throw ConfigurationError("--config " + a.config + " requires --reference");

    std::optional<extract::KnowledgeBrief> brief;
    if (!a.brief.empty() && assess::needs_brief(config)) {
        brief = extract::KnowledgeBrief::load(a.brief);
        if (!a.kb.empty()) {
            auto db = kb::load_database(a.kb);
            if (auto w = extract::staleness_warning(*brief, db)) log::warn(*w);
        }
    }
    std::optional<assess::ImageInput> reference;
    if (!a.reference.empty() && assess::needs_reference(config))
        reference = assess::ImageInput::load(a.reference, assess::ImageRole::reference);
    auto target = assess::ImageInput::load(a.image, assess::ImageRole::target);
    auto prompts = a.prompts.empty() ? assess::AssessmentPrompts::defaults()
                                     : assess::AssessmentPrompts::from_json(read_json_file(a.prompts));

    auto chain = assess::build_prompt_chain(config, brief ? &*brief : nullptr,
                                            reference ? &*reference : nullptr, target, prompts);
    auto be = open_backend(g);
    auto response = assess::run_assessment(chain, *be, fs::path(a.image).stem().string());
    if (!a.out.empty()) {
        auto j = response.to_json();
        j["chain"] = chain.to_json();
        util::write_file_atomic(a.out, j.dump(2) + "\n");
    } else {
        std::cout << response.raw_text << "\n";
    }
    std::printf("assess config=%s verdict=%s features=%zu\n", a.config.c_str(),
                std::string(assess::to_string(response.verdict)).c_str(),
                response.mentioned_features.size());
    return kExitOk;
}

// ---- ablate ------------------------------------------------------------------

struct AblateArgs {
    std::string manifest;
    std::string configs = "all";
    std::string brief;
    std::string runs = "runs";
    std::string run_id;
    std::string prompts;
    std::string vocabulary;
    std::size_t max_in_flight = 0;
};

int cmd_ablate(const Globals& g, const AblateArgs& a) {
    auto manifest = eval::Manifest::load(a.manifest);
    auto configs = parse_configs(a.configs);
    bool want_brief = false, want_reference = false;
    for (auto c : configs) {
        want_brief |= assess::needs_brief(c);
        want_reference |= assess::needs_reference(c);
    }
    std::optional<extract::KnowledgeBrief> brief;
    if (want_brief) {
        if (a.brief.empty()) throw ConfigurationError("selected configurations require --brief");
        brief = extract::KnowledgeBrief::load(a.brief);
    }
    std::optional<assess::ImageInput> reference;
    if (want_reference) {
        if (manifest.reference_image.empty())
            throw ConfigurationError("selected configurations require reference_image in the manifest");
        reference = assess::ImageInput::load(manifest.reference_image, assess::ImageRole::reference,
                                             "reference");
    }
    eval::AblationOptions opts;
    opts.run_id = a.run_id;
    opts.max_in_flight = a.max_in_flight;
    if (!a.prompts.empty()) opts.prompts = assess::AssessmentPrompts::from_json(read_json_file(a.prompts));
    if (!a.vocabulary.empty())
        opts.vocabulary = assess::FeatureVocabulary::from_json(read_json_file(a.vocabulary));

    auto be = open_backend(g);
    auto summary = eval::run_ablation(manifest, configs, brief ? &*brief : nullptr,
                                      reference ? &*reference : nullptr, *be, a.runs, opts);
    for (const auto& f : summary.failures)
        log::warn(f.config + "/" + f.sample_id + ": " + f.reason);
    std::printf("ablate written=%zu skipped=%zu failed=%zu run_dir=%s\n", summary.written,
                summary.skipped, summary.failures.size(), summary.run_dir.string().c_str());
    return summary.failures.empty() ? kExitOk : kExitFailure;
}

// ---- annotate ----------------------------------------------------------------

struct AnnotateArgs {
    std::string runs = "runs";
    std::string out = "annotations.jsonl";
    std::string annotator;
    std::string vocabulary;
};

int cmd_annotate(const AnnotateArgs& a) {
    if (util::trim(a.annotator).empty()) throw PreconditionError("--annotator must not be empty");
    auto records = eval::load_run_records(a.runs);
    if (records.empty()) throw NoDataError(a.runs + ": no assessment records");
    auto vocab = a.vocabulary.empty() ? assess::FeatureVocabulary::defaults()
                                      : assess::FeatureVocabulary::from_json(read_json_file(a.vocabulary));
    auto s = eval::annotate_interactive(records, vocab, a.out, a.annotator, std::cin, std::cout);
    std::printf("annotate total=%zu already_done=%zu added=%zu revised=%zu complete=%s\n", s.total,
                s.already_done, s.added, s.revised,
                (s.already_done + s.added == s.total) ? "yes" : "no");
    return kExitOk;
}

// ---- report ------------------------------------------------------------------

struct ReportArgs {
    std::string annotations = "annotations.jsonl";
    std::string runs = "runs";
    std::string manifest;
    std::string annotator;
    std::string format = "md,csv";
    std::string out = "report";
    std::string baseline_name;
    std::optional<double> baseline_validity;
    std::optional<double> baseline_relevance;
    std::optional<double> baseline_correctness;
};

int cmd_report(const ReportArgs& a) {
    auto annotations = eval::load_annotations(a.annotations);
    if (annotations.empty()) throw NoDataError(a.annotations + ": no annotations");
    auto records = eval::load_run_records(a.runs);
    if (records.empty()) throw NoDataError(a.runs + ": no assessment records");
    auto manifest = eval::Manifest::load(a.manifest);

    std::string annotator = a.annotator;
    if (annotator.empty()) {
        std::set<std::string> ids;
        for (const auto& r : annotations) ids.insert(r.annotator_id);
        if (ids.size() > 1)
            throw PreconditionError("annotations come from several annotators; pass --annotator");
        annotator = *ids.begin();
    }
    auto report = eval::compute_metrics(records, annotations, manifest, annotator);

    std::optional<eval::ExternalBaseline> baseline;
    if (!a.baseline_name.empty()) {
        baseline = eval::ExternalBaseline{a.baseline_name, a.baseline_validity,
                                          a.baseline_relevance, a.baseline_correctness};
    } else if (a.baseline_validity || a.baseline_relevance || a.baseline_correctness) {
        throw PreconditionError("baseline values need --baseline-name");
    }

    std::set<std::string> formats;
    std::stringstream ss(a.format);
    std::string f;
    while (std::getline(ss, f, ',')) {
        f = util::trim(f);
        if (f != "md" && f != "csv") throw PreconditionError("unknown --format '" + f + "'");
        formats.insert(f);
    }
    if (formats.count("md")) util::write_file_atomic(a.out + ".md", eval::render_markdown(report, baseline));
    if (formats.count("csv")) util::write_file_atomic(a.out + ".csv", eval::render_csv(report, baseline));
    util::write_file_atomic(a.out + ".json", eval::render_sidecar(report, baseline).dump(2) + "\n");

    std::size_t excluded = 0;
    for (const auto& c : report.cells) excluded += c.excluded.size();
    std::printf("report cells=%zu excluded=%zu annotator=%s out=%s\n", report.cells.size(), excluded,
                annotator.c_str(), a.out.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge-grounded visual quality assessment"};
    app.require_subcommand(1);
    Globals g;
    std::uint64_t seed = 0;
    app.add_option("--backend", g.backend, "Backend configuration file (JSON)");
    app.add_option("--cache-dir", g.cache_dir, "Response cache directory");
    auto* seed_opt = app.add_option("--seed", seed, "Seed override for the mock backend");
    app.add_flag("-v,--verbose", g.verbose, "More log output (repeatable)");
    app.add_flag("-q,--quiet", g.quiet, "Errors only");

    IngestArgs ingest_args;
    auto* ingest = app.add_subcommand("ingest", "Segment documents into chunks");
    ingest->add_option("-i,--input", ingest_args.inputs, "Document element file")->required();
    ingest->add_option("--budget", ingest_args.budget, "Approximate tokens per text chunk");
    ingest->add_option("--window", ingest_args.window, "Caption association window");
    ingest->add_option("-o,--out", ingest_args.out, "Chunk file (JSON Lines)");

    BuildKbArgs kb_args;
    auto* build_kb = app.add_subcommand("build-kb", "Summarize and embed chunks");
    build_kb->add_option("--chunks", kb_args.chunks)->required();
    build_kb->add_option("--contexts", kb_args.contexts, "Defaults to <chunks>.context.json");
    build_kb->add_option("-o,--out", kb_args.out);

    ExtractArgs ex_args;
    auto* extract = app.add_subcommand("extract", "Distill a knowledge brief from the database");
    extract->add_option("--kb", ex_args.kb)->required();
    extract->add_option("--templates", ex_args.templates, "Query templates (JSON)");
    extract->add_option("--top-n", ex_args.top_n);
    extract->add_option("-o,--out", ex_args.out);
    extract->add_option("--text-out", ex_args.text_out, "Also write the rendered brief");

    AssessArgs as_args;
    auto* assess_cmd = app.add_subcommand("assess", "Assess one image");
    assess_cmd->add_option("--image", as_args.image)->required();
    assess_cmd->add_option("--config", as_args.config)
        ->check(CLI::IsMember({"full", "knowledge_only", "reference_only", "generic"}));
    assess_cmd->add_option("--brief", as_args.brief);
    assess_cmd->add_option("--reference", as_args.reference);
    assess_cmd->add_option("--kb", as_args.kb, "Warn when the brief was built from another database");
    assess_cmd->add_option("--prompts", as_args.prompts);
    assess_cmd->add_option("-o,--out", as_args.out);

    AblateArgs ab_args;
    auto* ablate = app.add_subcommand("ablate", "Run the configuration matrix over a manifest");
    ablate->add_option("--manifest", ab_args.manifest)->required();
    ablate->add_option("--configs", ab_args.configs, "Comma list or 'all'");
    ablate->add_option("--brief", ab_args.brief);
    ablate->add_option("--runs", ab_args.runs);
    ablate->add_option("--run-id", ab_args.run_id);
    ablate->add_option("--prompts", ab_args.prompts);
    ablate->add_option("--vocabulary", ab_args.vocabulary);
    ablate->add_option("--max-in-flight", ab_args.max_in_flight);

    AnnotateArgs an_args;
    auto* annotate = app.add_subcommand("annotate", "Record expert judgments");
    annotate->add_option("--runs", an_args.runs);
    annotate->add_option("-o,--out", an_args.out);
    annotate->add_option("--annotator", an_args.annotator)->required();
    annotate->add_option("--vocabulary", an_args.vocabulary);

    ReportArgs rp_args;
    auto* report = app.add_subcommand("report", "Compute metrics and render the comparison table");
    report->add_option("--annotations", rp_args.annotations);
    report->add_option("--runs", rp_args.runs);
    report->add_option("--manifest", rp_args.manifest)->required();
    report->add_option("--annotator", rp_args.annotator);
    report->add_option("--format", rp_args.format);
    report->add_option("-o,--out", rp_args.out, "Output prefix");
    report->add_option("--baseline-name", rp_args.baseline_name);
    report->add_option("--baseline-validity", rp_args.baseline_validity);
    report->add_option("--baseline-relevance", rp_args.baseline_relevance);
    report->add_option("--baseline-correctness", rp_args.baseline_correctness);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }
    if (*seed_opt) g.seed = seed;
    log::set_level(g.quiet ? log::Level::quiet
                   : g.verbose >= 2 ? log::Level::debug
                   : g.verbose == 1 ? log::Level::info
                                    : log::Level::warn);

    try {
        if (*ingest) return cmd_ingest(ingest_args);
        if (*build_kb) return cmd_build_kb(g, kb_args);
        if (*extract) return cmd_extract(g, ex_args);
        if (*assess_cmd) return cmd_assess(g, as_args);
        if (*ablate) return cmd_ablate(g, ab_args);
        if (*annotate) return cmd_annotate(an_args);
        if (*report) return cmd_report(rp_args);
    } catch (const InputError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitFailure;
    }
    return kExitFailure;
}
