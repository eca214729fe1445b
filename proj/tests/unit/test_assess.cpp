#include <mutex>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "qavlm/assess/assessment.hpp"
#include "qavlm/errors.hpp"
#include "qavlm/util.hpp"

using namespace qavlm;
using namespace qavlm::assess;

namespace {

ImageInput image(ImageRole role, std::string id = "img") {
    return ImageInput::load(testing::fixture_path(role == ImageRole::reference ? "images/reference.png"
                                                                                : "images/s01.png"),
                            role, std::move(id));
}

extract::KnowledgeBrief brief() {
    extract::KnowledgeBrief b;
    b.domain_label = "DED-LW";
    extract::FeatureKnowledge f;
    f.feature_name = "bead height";
    f.measurement_procedure = "from substrate to crown";
    f.good_range = "1 to 3 mm";
    b.features.push_back(f);
    return b;
}

// Records every request and answers from a fixed list.
class RecordingBackend final : public backend::Backend {
public:
    explicit RecordingBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {}
    std::string id() const override { return "rec"; }
    std::string chat_model() const override { return "rec-chat"; }
    std::string embed_model() const override { return "rec-embed"; }
    std::size_t embed_dim() const override { return 2; }
    std::size_t max_in_flight() const override { return 1; }
    std::string chat(const backend::ChatRequest& r) override {
        std::lock_guard lock(m_);
        requests.push_back(r);
        return replies_.at(requests.size() - 1);
    }
    Embedding embed_text(std::string_view) override { return Embedding{{1, 0}}; }
    std::vector<backend::ChatRequest> requests;

private:
    std::mutex m_;
    std::vector<std::string> replies_;
};

}  // namespace

TEST_CASE("configuration matrix: inputs and turn structure") {
    auto b = brief();
    auto ref = image(ImageRole::reference, "ref");
    auto target = image(ImageRole::target, "t");
    for (auto config : kAllConfigs) {
        CAPTURE(to_string(config));
        const bool nb = needs_brief(config), nr = needs_reference(config);
        auto chain = build_prompt_chain(config, nb ? &b : nullptr, nr ? &ref : nullptr, target);
        CHECK(chain.has_brief() == nb);
        CHECK(chain.has_reference() == nr);
        CHECK(chain.has_grounding_turn() == (config == AblationConfig::full));
        CHECK(chain.count_images(ImageRole::target) == 1);
        CHECK(chain.count_images(ImageRole::reference) == (nr ? 1u : 0u));
        CHECK(chain.temperature == 0.0);
        REQUIRE(chain.turns.size() >= 2);
        CHECK(chain.turns.front().role == backend::Role::system);
        CHECK(chain.turns.front().images.empty());
        CHECK(chain.turns.back().purpose == TurnPurpose::assessment);
        CHECK(chain.turns.back().text.find("VERDICT: GOOD") != std::string::npos);
        // The target is always the last image of the last turn.
        CHECK(chain.turns.back().images.back().role == ImageRole::target);

        // Every combination of wrong inputs is refused.
        for (int mask = 0; mask < 4; ++mask) {
            const bool give_b = mask & 1, give_r = mask & 2;
            if (give_b == nb && give_r == nr) continue;
            CHECK_THROWS_AS(build_prompt_chain(config, give_b ? &b : nullptr, give_r ? &ref : nullptr, target),
                            ConfigurationError);
        }
    }
    CHECK(needs_brief(AblationConfig::full));
    CHECK(needs_reference(AblationConfig::full));
    CHECK_FALSE(needs_brief(AblationConfig::reference_only));
    CHECK_FALSE(needs_reference(AblationConfig::knowledge_only));
}

TEST_CASE("full chain grounds on the reference before seeing the target") {
    auto b = brief();
    auto ref = image(ImageRole::reference, "ref");
    auto target = image(ImageRole::target, "t");
    auto chain = build_prompt_chain(AblationConfig::full, &b, &ref, target);
    REQUIRE(chain.turns.size() == 3);
    const auto& grounding = chain.turns[1];
    CHECK(grounding.purpose == TurnPurpose::grounding);
    CHECK(grounding.carries_knowledge);
    REQUIRE(grounding.images.size() == 1);
    CHECK(grounding.images[0].role == ImageRole::reference);
    CHECK(grounding.text.find("<knowledge>") != std::string::npos);
    CHECK(grounding.text.find("bead height") != std::string::npos);
    CHECK(grounding.text.find("VERDICT") == std::string::npos);
    CHECK(chain.turns[2].images.size() == 1);

    auto reordered = build_prompt_chain(AblationConfig::reference_only, nullptr, &ref, target);
    REQUIRE(reordered.turns[1].images.size() == 2);
    CHECK(reordered.turns[1].images[0].role == ImageRole::reference);
}

TEST_CASE("prompt chain JSON carries image digests, not payloads") {
    auto target = image(ImageRole::target, "t");
    auto j = build_prompt_chain(AblationConfig::generic, nullptr, nullptr, target).to_json();
    auto img = j["turns"][1]["images"][0];
    CHECK(img["sha256"] == util::sha256_hex(target.bytes));
    CHECK(img["bytes"] == target.bytes.size());
    CHECK(j.dump().find(util::base64_encode(target.bytes).substr(0, 40)) == std::string::npos);
}

TEST_CASE("run_assessment carries the conversation forward") {
    auto b = brief();
    auto ref = image(ImageRole::reference, "ref");
    auto target = image(ImageRole::target, "t");
    auto chain = build_prompt_chain(AblationConfig::full, &b, &ref, target);
    RecordingBackend rec({"reference looks fine", "Bead height is low.\nVERDICT: BAD"});
    auto response = run_assessment(chain, rec, "s01");
    REQUIRE(rec.requests.size() == 2);
    const auto& second = rec.requests[1];
    REQUIRE(second.messages.size() == 4);
    CHECK(second.messages[0].role == backend::Role::system);
    CHECK(second.messages[2].role == backend::Role::assistant);
    CHECK(second.messages[2].text == "reference looks fine");
    CHECK(second.messages[3].images.size() == 1);
    CHECK(response.verdict == Verdict::bad);
    CHECK(response.raw_text == "Bead height is low.\nVERDICT: BAD");
    CHECK(response.mentioned_features == std::vector<std::string>{"bead height"});
    CHECK(response.backend_id == "rec");
    CHECK(response.sample_id == "s01");
    CHECK(response.config == AblationConfig::full);
    auto back = AssessmentResponse::from_json(response.to_json());
    CHECK(back.raw_text == response.raw_text);
    CHECK(back.verdict == response.verdict);
    CHECK(response.to_json().contains("timing"));
}

TEST_CASE("verdict parsing: fixed cases") {
    CHECK(parse_verdict("VERDICT: GOOD") == Verdict::good);
    CHECK(parse_verdict("blah\nverdict: bad") == Verdict::bad);
    CHECK(parse_verdict("**Verdict:** Good") == Verdict::good);
    CHECK(parse_verdict("Verdict: `BAD`") == Verdict::bad);
    CHECK(parse_verdict("VERDICT: GOOD\nOn reflection...\nVERDICT: BAD") == Verdict::bad);
    CHECK(parse_verdict("VERDICT: BAD then VERDICT: GOOD") == Verdict::good);
    CHECK(parse_verdict("The print is good.") == Verdict::indeterminate);
    CHECK(parse_verdict("VERDICT: GOODNESS") == Verdict::indeterminate);
    CHECK(parse_verdict("Verdict - good") == Verdict::indeterminate);
    CHECK(parse_verdict("") == Verdict::indeterminate);
}

TEST_CASE("verdict parsing: generated responses") {
    std::mt19937_64 rng(4242);
    const std::vector<std::string> words = {"the", "bead", "is", "good", "bad", "height", "verdict",
                                            "looks", "fine", "poor", "fusion", "GOOD", "BAD", ":"};
    std::uniform_int_distribution<std::size_t> wd(0, words.size() - 1), len(0, 40), lines(1, 6);
    for (int trial = 0; trial < 500; ++trial) {
        std::string text;
        for (std::size_t l = lines(rng); l > 0; --l) {
            for (std::size_t w = len(rng); w > 0; --w) text += words[wd(rng)] + " ";
            text += "\n";
        }
        // Oracle: no "verdict:" tag in the prose means the appended tag decides.
        const bool tagless = util::to_lower(text).find("verdict :") == std::string::npos &&
                             util::to_lower(text).find("verdict:") == std::string::npos;
        const bool good = rng() & 1;
        std::string full = text + (good ? "VERDICT: GOOD" : "VERDICT: BAD");
        if (rng() & 1) full += "\n";
        CAPTURE(full);
        CHECK(parse_verdict(full) == (good ? Verdict::good : Verdict::bad));
        if (tagless) CHECK(parse_verdict(text) == Verdict::indeterminate);
    }
}

TEST_CASE("feature detection: names, aliases and order of appearance") {
    auto vocab = FeatureVocabulary::defaults();
    CHECK(detect_features("The penetration depth is shallow but the Bead Height is fine.", vocab) ==
          std::vector<std::string>{"fusion zone depth", "bead height"});
    CHECK(detect_features("width of the bead and bead width", vocab) == std::vector<std::string>{"bead width"});
    CHECK(detect_features("nothing relevant", vocab).empty());
    CHECK_THROWS_AS(detect_features("x", FeatureVocabulary{}), PreconditionError);
    auto round = FeatureVocabulary::from_json(vocab.to_json());
    CHECK(round.entries.size() == vocab.entries.size());
}

TEST_CASE("image loading sniffs and validates media types") {
    auto png = image(ImageRole::target);
    CHECK(png.media_type == "image/png");
    CHECK(is_allowed_media_type("image/jpeg"));
    CHECK(is_allowed_media_type("image/webp"));
    CHECK_FALSE(is_allowed_media_type("image/gif"));
    auto dir = std::filesystem::temp_directory_path() / "qavlm_img";
    std::filesystem::create_directories(dir);
    util::write_file_atomic(dir / "x.gif", "GIF89a....");
    CHECK_THROWS_AS(ImageInput::load(dir / "x.gif", ImageRole::target), InputError);
    util::write_file_atomic(dir / "photo.bin", std::string("\xFF\xD8\xFF\xE0rest", 8));
    CHECK(ImageInput::load(dir / "photo.bin", ImageRole::target).media_type == "image/jpeg");
    CHECK_THROWS_AS(ImageInput::load(dir / "missing.png", ImageRole::target), InputError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("config names round trip") {
    for (auto c : kAllConfigs) CHECK(config_from_string(to_string(c)) == c);
    CHECK_THROWS_AS(config_from_string("everything"), InputError);
}
