#include "qavlm/assess/assessment.hpp"

#include <algorithm>
#include <chrono>
#include <regex>

#include "qavlm/errors.hpp"
#include "qavlm/util.hpp"

namespace qavlm::assess {

using nlohmann::json;

std::string_view to_string(ImageRole role) {
    return role == ImageRole::reference ? "reference" : "target";
}

namespace {
constexpr std::array<std::string_view, 3> kMediaTypes = {"image/png", "image/jpeg", "image/webp"};

std::string sniff_media_type(const std::string& bytes, const std::filesystem::path& path) {
    if (bytes.size() >= 8 && bytes.compare(0, 8, "\x89PNG\r\n\x1a\n") == 0) return "image/png";
    if (bytes.size() >= 3 && bytes.compare(0, 3, "\xFF\xD8\xFF") == 0) return "image/jpeg";
    if (bytes.size() >= 12 && bytes.compare(0, 4, "RIFF") == 0 && bytes.compare(8, 4, "WEBP") == 0) {
        return "image/webp";
    }
    const std::string ext = util::to_lower(path.extension().string());
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".webp") return "image/webp";
    return {};
}
}  // namespace

bool is_allowed_media_type(std::string_view media_type) {
    return std::find(kMediaTypes.begin(), kMediaTypes.end(), media_type) != kMediaTypes.end();
}

ImageInput ImageInput::load(const std::filesystem::path& path, ImageRole role,
                            std::string image_id) {
    ImageInput img;
    img.bytes = util::read_file(path);
    img.media_type = sniff_media_type(img.bytes, path);
    img.role = role;
    img.image_id = image_id.empty() ? path.filename().string() : std::move(image_id);
    img.validate();
    return img;
}

void ImageInput::validate() const {
    if (bytes.empty()) throw InputError("image '" + image_id + "' is empty");
    if (!is_allowed_media_type(media_type)) {
        throw InputError("image '" + image_id + "' has unsupported media type '" + media_type + "'");
    }
}

std::string_view to_string(AblationConfig config) {
    switch (config) {
        case AblationConfig::generic: return "generic";
        case AblationConfig::knowledge_only: return "knowledge_only";
        case AblationConfig::reference_only: return "reference_only";
        case AblationConfig::full: return "full";
    }
    return "generic";
}

AblationConfig config_from_string(std::string_view s) {
    for (auto c : kAllConfigs) {
        if (s == to_string(c)) return c;
    }
    throw InputError("unknown configuration '" + std::string(s) +
                     "' (expected generic, knowledge_only, reference_only or full)");
}

bool needs_brief(AblationConfig config) {
    return config == AblationConfig::knowledge_only || config == AblationConfig::full;
}

bool needs_reference(AblationConfig config) {
    return config == AblationConfig::reference_only || config == AblationConfig::full;
}

std::string_view to_string(TurnPurpose purpose) {
    switch (purpose) {
        case TurnPurpose::instruction: return "instruction";
        case TurnPurpose::grounding: return "grounding";
        case TurnPurpose::assessment: return "assessment";
    }
    return "assessment";
}

bool PromptChain::has_brief() const {
    return std::any_of(turns.begin(), turns.end(),
                       [](const PromptTurn& t) { return t.carries_knowledge; });
}

bool PromptChain::has_reference() const { return count_images(ImageRole::reference) > 0; }

bool PromptChain::has_grounding_turn() const {
    return std::any_of(turns.begin(), turns.end(),
                       [](const PromptTurn& t) { return t.purpose == TurnPurpose::grounding; });
}

std::size_t PromptChain::count_images(ImageRole role) const {
    std::size_t n = 0;
    for (const auto& t : turns) {
        n += static_cast<std::size_t>(std::count_if(
            t.images.begin(), t.images.end(), [&](const ImageInput& i) { return i.role == role; }));
    }
    return n;
}

json PromptChain::to_json() const {
    json ts = json::array();
    for (const auto& t : turns) {
        json imgs = json::array();
        for (const auto& i : t.images) {
            imgs.push_back({{"image_id", i.image_id},
                            {"role", std::string(to_string(i.role))},
                            {"media_type", i.media_type},
                            {"bytes", i.bytes.size()},
                            {"sha256", util::sha256_hex(i.bytes)}});
        }
        ts.push_back({{"role", std::string(backend::to_string(t.role))},
                      {"purpose", std::string(to_string(t.purpose))},
                      {"carries_knowledge", t.carries_knowledge},
                      {"text", t.text},
                      {"images", imgs}});
    }
    return {{"config", std::string(to_string(config))}, {"temperature", temperature}, {"turns", ts}};
}

AssessmentPrompts AssessmentPrompts::defaults() {
    AssessmentPrompts p;
    p.system =
        "You are a print quality inspector for metal additive manufacturing. You are shown "
        "optical images of single-bead cross-sections and judge whether each print is of good "
        "quality.";
    p.generic_question =
        "Assess the print quality of the bead shown in the attached cross-section image. "
        "Explain your reasoning and decide whether it is a good or a bad print.";
    p.knowledge_question =
        "Using the quality assessment knowledge above, assess the bead shown in the attached "
        "cross-section image. For each feature, apply its measurement procedure to the image, "
        "compare the result with its good range, and then decide whether the print is of good "
        "quality.";
    p.reference_question =
        "The first attached image is an expert-selected reference: the cross-section of a bead "
        "printed with the desired quality. The second attached image is the print to assess. "
        "Compare the second image with the reference and decide whether it is of good quality.";
    p.grounding_instruction =
        "The attached image is an expert-selected reference: the cross-section of a bead printed "
        "with the desired quality. Before assessing any other print, apply the knowledge above "
        "to this reference step by step. For each feature, follow its measurement procedure on "
        "the image, state the value you observe and where on the image you measured it, and "
        "explain how it compares with the good range. Do not give a verdict yet.";
    p.grounded_assessment =
        "Now assess the attached target bead cross-section. Apply the same features and "
        "measurement procedures exactly as you did on the reference image, compare each "
        "measured value with its good range and with the reference, and decide whether the "
        "print is of good quality.";
    p.verdict_instruction =
        "Finish your reply with a final line that reads exactly `VERDICT: GOOD` or "
        "`VERDICT: BAD`.";
    return p;
}

AssessmentPrompts AssessmentPrompts::from_json(const json& j) {
    AssessmentPrompts p = defaults();
    try {
        p.system = j.value("system", p.system);
        p.generic_question = j.value("generic_question", p.generic_question);
        p.knowledge_question = j.value("knowledge_question", p.knowledge_question);
        p.reference_question = j.value("reference_question", p.reference_question);
        p.grounding_instruction = j.value("grounding_instruction", p.grounding_instruction);
        p.grounded_assessment = j.value("grounded_assessment", p.grounded_assessment);
        p.verdict_instruction = j.value("verdict_instruction", p.verdict_instruction);
    } catch (const json::exception& e) {
        throw ParseError(std::string("prompts: ") + e.what());
    }
    return p;
}

json AssessmentPrompts::to_json() const {
    return {{"system", system},
            {"generic_question", generic_question},
            {"knowledge_question", knowledge_question},
            {"reference_question", reference_question},
            {"grounding_instruction", grounding_instruction},
            {"grounded_assessment", grounded_assessment},
            {"verdict_instruction", verdict_instruction}};
}

namespace {

std::string knowledge_block(const extract::KnowledgeBrief& brief) {
    return "<knowledge>\n" + extract::render_brief(brief) + "</knowledge>\n\n";
}

}  // namespace

PromptChain build_prompt_chain(AblationConfig config, const extract::KnowledgeBrief* brief,
                               const ImageInput* reference, const ImageInput& target,
                               const AssessmentPrompts& prompts) {
    const std::string name(to_string(config));
    if (needs_brief(config) && !brief) {
        throw ConfigurationError("configuration " + name + " needs a knowledge brief");
    }
    if (!needs_brief(config) && brief) {
        throw ConfigurationError("configuration " + name + " must not receive a knowledge brief");
    }
    if (needs_reference(config) && !reference) {
        throw ConfigurationError("configuration " + name + " needs a reference image");
    }
    if (!needs_reference(config) && reference) {
        throw ConfigurationError("configuration " + name + " must not receive a reference image");
    }
    target.validate();
    if (target.role != ImageRole::target) throw ConfigurationError("target image has reference role");
    if (reference) {
        reference->validate();
        if (reference->role != ImageRole::reference) {
            throw ConfigurationError("reference image has target role");
        }
    }

    PromptChain chain;
    chain.config = config;
    chain.turns.push_back({backend::Role::system, TurnPurpose::instruction, prompts.system, {}, false});
    const std::string verdict = "\n\n" + prompts.verdict_instruction;

    switch (config) {
        case AblationConfig::generic:
            chain.turns.push_back({backend::Role::user, TurnPurpose::assessment,
                                   prompts.generic_question + verdict, {target}, false});
            break;
        case AblationConfig::knowledge_only:
            chain.turns.push_back({backend::Role::user, TurnPurpose::assessment,
                                   knowledge_block(*brief) + prompts.knowledge_question + verdict,
                                   {target}, true});
            break;
        case AblationConfig::reference_only:
            chain.turns.push_back({backend::Role::user, TurnPurpose::assessment,
                                   prompts.reference_question + verdict, {*reference, target},
                                   false});
            break;
        case AblationConfig::full:
            chain.turns.push_back({backend::Role::user, TurnPurpose::grounding,
                                   knowledge_block(*brief) + prompts.grounding_instruction,
                                   {*reference}, true});
            chain.turns.push_back({backend::Role::user, TurnPurpose::assessment,
                                   prompts.grounded_assessment + verdict, {target}, false});
            break;
    }
    return chain;
}

std::string_view to_string(Verdict v) {
    switch (v) {
        case Verdict::good: return "good";
        case Verdict::bad: return "bad";
        case Verdict::indeterminate: return "indeterminate";
    }
    return "indeterminate";
}

Verdict verdict_from_string(std::string_view s) {
    if (s == "good") return Verdict::good;
    if (s == "bad") return Verdict::bad;
    if (s == "indeterminate") return Verdict::indeterminate;
    throw ParseError("unknown verdict '" + std::string(s) + "'");
}

Verdict parse_verdict(std::string_view text) {
    static const std::regex tag(R"(verdict\s*:[\s*_`]*(good|bad)\b)", std::regex::icase);
    std::size_t end = text.size();
    while (true) {
        const std::size_t nl = end == 0 ? std::string_view::npos : text.rfind('\n', end - 1);
        const std::size_t begin = nl == std::string_view::npos ? 0 : nl + 1;
        const std::string line(text.substr(begin, end - begin));
        std::optional<Verdict> last;
        for (std::sregex_iterator it(line.begin(), line.end(), tag), stop; it != stop; ++it) {
            last = util::iequals((*it)[1].str(), "good") ? Verdict::good : Verdict::bad;
        }
        if (last) return *last;
        if (nl == std::string_view::npos) break;
        end = nl;
    }
    return Verdict::indeterminate;
}

FeatureVocabulary FeatureVocabulary::defaults() {
    return {{
        {"bead height", {"height of the bead", "deposit height"}},
        {"bead width", {"width of the bead", "deposit width"}},
        {"fusion zone depth", {"depth of the fusion zone", "fusion depth", "penetration depth",
                               "depth of penetration"}},
        {"fusion zone area", {"area of the fusion zone", "fusion area", "fused area"}},
        {"aspect ratio", {}},
        {"dilution", {}},
    }};
}

FeatureVocabulary FeatureVocabulary::from_json(const json& j) {
    FeatureVocabulary v;
    try {
        for (const auto& e : j.at("entries")) {
            v.entries.push_back({e.at("name").get<std::string>(),
                                 e.value("aliases", std::vector<std::string>{})});
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("vocabulary: ") + e.what());
    }
    if (v.entries.empty()) throw ParseError("vocabulary: no entries");
    return v;
}

json FeatureVocabulary::to_json() const {
    json es = json::array();
    for (const auto& e : entries) es.push_back({{"name", e.name}, {"aliases", e.aliases}});
    return {{"entries", es}};
}

std::vector<std::string> detect_features(std::string_view text, const FeatureVocabulary& vocab) {
    if (vocab.entries.empty()) throw PreconditionError("feature vocabulary is empty");
    const std::string haystack = util::to_lower(text);
    std::vector<std::pair<std::size_t, std::string>> found;
    for (const auto& entry : vocab.entries) {
        std::size_t first = std::string::npos;
        auto consider = [&](const std::string& term) {
            if (term.empty()) return;
            const auto pos = haystack.find(util::to_lower(term));
            if (pos != std::string::npos) first = std::min(first, pos);
        };
        consider(entry.name);
        for (const auto& alias : entry.aliases) consider(alias);
        if (first != std::string::npos) found.emplace_back(first, entry.name);
    }
    std::stable_sort(found.begin(), found.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::string> out;
    for (auto& [pos, name] : found) out.push_back(std::move(name));
    return out;
}

json AssessmentResponse::to_json() const {
    return {{"sample_id", sample_id},
            {"config", std::string(to_string(config))},
            {"raw_text", raw_text},
            {"verdict", std::string(to_string(verdict))},
            {"mentioned_features", mentioned_features},
            {"backend_id", backend_id},
            {"timing", {{"latency_ms", latency_ms}, {"completed_at", completed_at}}}};
}

AssessmentResponse AssessmentResponse::from_json(const json& j) {
    AssessmentResponse r;
    try {
        r.sample_id = j.at("sample_id").get<std::string>();
        r.config = config_from_string(j.at("config").get<std::string>());
        r.raw_text = j.at("raw_text").get<std::string>();
        r.verdict = verdict_from_string(j.at("verdict").get<std::string>());
        r.mentioned_features = j.at("mentioned_features").get<std::vector<std::string>>();
        r.backend_id = j.at("backend_id").get<std::string>();
        if (j.contains("timing")) {
            r.latency_ms = j["timing"].value("latency_ms", 0.0);
            r.completed_at = j["timing"].value("completed_at", "");
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("assessment response: ") + e.what());
    }
    return r;
}

AssessmentResponse run_assessment(const PromptChain& chain, backend::Backend& backend,
                                  const std::string& sample_id, const FeatureVocabulary& vocab) {
    if (chain.temperature != 0.0) throw PreconditionError("prompt chain temperature must be 0");
    if (chain.turns.empty()) throw PreconditionError("prompt chain has no turns");
    if (!backend.supports_images()) {
        throw PreconditionError("backend " + backend.id() + " does not accept images");
    }

    const auto started = std::chrono::steady_clock::now();
    std::vector<backend::Message> history;
    std::string reply;
    for (const auto& turn : chain.turns) {
        backend::Message m{turn.role, turn.text, {}};
        for (const auto& img : turn.images) {
            m.images.push_back({img.media_type, util::base64_encode(img.bytes)});
        }
        history.push_back(std::move(m));
        if (turn.role != backend::Role::user) continue;
        reply = backend.chat(backend.make_request(history));
        history.push_back({backend::Role::assistant, reply, {}});
    }
    const std::chrono::duration<double, std::milli> elapsed =
        std::chrono::steady_clock::now() - started;

    AssessmentResponse r;
    r.sample_id = sample_id;
    r.config = chain.config;
    r.raw_text = reply;
    r.verdict = parse_verdict(reply);
    r.mentioned_features = detect_features(reply, vocab);
    r.backend_id = backend.id();
    r.latency_ms = elapsed.count();
    r.completed_at = util::utc_timestamp();
    return r;
}

}  // namespace qavlm::assess
