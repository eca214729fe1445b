#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "qavlm/backend/backend.hpp"
#include "qavlm/extract/knowledge_extraction.hpp"

namespace qavlm::assess {

enum class ImageRole { reference, target };
std::string_view to_string(ImageRole role);

struct ImageInput {
    std::string image_id;
    std::string bytes;
    std::string media_type;
    ImageRole role = ImageRole::target;

    // Media type from magic bytes, falling back to the file extension.
    static ImageInput load(const std::filesystem::path& path, ImageRole role,
                           std::string image_id = {});
    void validate() const;
};

bool is_allowed_media_type(std::string_view media_type);

enum class AblationConfig { generic, knowledge_only, reference_only, full };
std::string_view to_string(AblationConfig config);
AblationConfig config_from_string(std::string_view s);
inline constexpr std::array<AblationConfig, 4> kAllConfigs = {
    AblationConfig::full, AblationConfig::knowledge_only, AblationConfig::reference_only,
    AblationConfig::generic};
bool needs_brief(AblationConfig config);
bool needs_reference(AblationConfig config);

enum class TurnPurpose { instruction, grounding, assessment };
std::string_view to_string(TurnPurpose purpose);

struct PromptTurn {
    backend::Role role = backend::Role::user;
    TurnPurpose purpose = TurnPurpose::assessment;
    std::string text;
    std::vector<ImageInput> images;
    bool carries_knowledge = false;
};

struct PromptChain {
    AblationConfig config = AblationConfig::generic;
    std::vector<PromptTurn> turns;
    double temperature = 0.0;

    bool has_brief() const;
    bool has_reference() const;
    bool has_grounding_turn() const;
    std::size_t count_images(ImageRole role) const;

    // Audit form. Images are recorded by id, role, media type, size and
    // SHA-256 rather than by payload.
    nlohmann::json to_json() const;
};

// Editable prompt wording. The defaults paraphrase a reference-guided
// grounding chain: apply the knowledge to a good reference first, then
// assess the target with that understanding.
struct AssessmentPrompts {
    std::string system;
    std::string generic_question;
    std::string knowledge_question;
    std::string reference_question;
    std::string grounding_instruction;
    std::string grounded_assessment;
    std::string verdict_instruction;

    static AssessmentPrompts defaults();
    static AssessmentPrompts from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// brief / reference may be null. Each config requires exactly its own
// inputs; anything missing or extra is a ConfigurationError.
PromptChain build_prompt_chain(AblationConfig config, const extract::KnowledgeBrief* brief,
                               const ImageInput* reference, const ImageInput& target,
                               const AssessmentPrompts& prompts = AssessmentPrompts::defaults());

enum class Verdict { good, bad, indeterminate };
std::string_view to_string(Verdict v);
Verdict verdict_from_string(std::string_view s);

// Scans lines from the last one upward for "VERDICT: GOOD|BAD"
// (case-insensitive); the first hit wins, so the last tag in the text governs.
Verdict parse_verdict(std::string_view text);

struct VocabularyEntry {
    std::string name;
    std::vector<std::string> aliases;
};

struct FeatureVocabulary {
    std::vector<VocabularyEntry> entries;

    // The four core bead-geometry parameters plus the derivative metrics.
    static FeatureVocabulary defaults();
    static FeatureVocabulary from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// Case-insensitive substring match on names and aliases. Canonical names in
// order of first appearance, each at most once.
std::vector<std::string> detect_features(std::string_view text, const FeatureVocabulary& vocab);

struct AssessmentResponse {
    std::string sample_id;
    AblationConfig config = AblationConfig::generic;
    std::string raw_text;
    Verdict verdict = Verdict::indeterminate;
    std::vector<std::string> mentioned_features;
    std::string backend_id;
    double latency_ms = 0.0;
    std::string completed_at;

    // latency_ms and completed_at live under "timing".
    nlohmann::json to_json() const;
    static AssessmentResponse from_json(const nlohmann::json& j);
};

// Runs the turns in order as one conversation: every user turn is sent with
// the history so far and the reply is appended. The final reply is parsed.
AssessmentResponse run_assessment(const PromptChain& chain, backend::Backend& backend,
                                  const std::string& sample_id,
                                  const FeatureVocabulary& vocab = FeatureVocabulary::defaults());

}  // namespace qavlm::assess
