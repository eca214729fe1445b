#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "qavlm/backend/backend.hpp"

namespace qavlm::backend {

// One scripted reply. Rules are tried in script order against the text of
// the last user message; the first live rule that matches wins.
struct MockRule {
    enum class Match { exact, substring, any };
    Match match = Match::substring;
    std::string pattern;
    // Reply text. "{{prompt}}" expands to the matched user text and
    // "{{section:NAME}}" to the trimmed text between <NAME> and </NAME>.
    std::string reply;
    // When set, the call throws this failure instead of replying:
    // transport | timeout | auth | server | malformed.
    std::optional<std::string> error;
    // Rule goes dead after matching this many times.
    std::optional<int> times;
};

struct MockScript {
    std::string backend_id = "mock";
    std::string chat_model = "mock-chat";
    std::string embed_model = "mock-embed";
    std::size_t dim = 1024;
    std::uint64_t seed = 0;
    std::size_t max_in_flight = 4;
    std::string fallback_reply = "MOCK: no scripted reply for this prompt.";
    // Each call sleeps a pseudo-random 0..jitter_ms derived from its content,
    // which scrambles completion order under concurrency.
    int jitter_ms = 0;
    std::vector<MockRule> rules;
    // Texts whose embedding is derived from a fixed seed instead of the text
    // hash; two texts sharing a seed get identical vectors.
    std::map<std::string, std::uint64_t> embedding_seeds;

    static MockScript from_json(const nlohmann::json& j);
    static MockScript load(const std::filesystem::path& path);
};

struct MockCall {
    enum class Kind { chat, embed };
    Kind kind;
    std::string text;  // last user text, or the embedded text
    std::size_t started;
    std::size_t finished;
    bool matched;
};

// Fully deterministic offline backend. Embeddings are a seeded hash of the
// text expanded to `dim` values and unit-normalized.
class MockBackend final : public Backend {
public:
    explicit MockBackend(MockScript script);

    std::string id() const override { return script_.backend_id; }
    std::string chat_model() const override { return script_.chat_model; }
    std::string embed_model() const override { return script_.embed_model; }
    std::size_t embed_dim() const override { return script_.dim; }
    std::size_t max_in_flight() const override { return script_.max_in_flight; }

    std::string chat(const ChatRequest& request) override;
    Embedding embed_text(std::string_view text) override;

    std::vector<MockCall> calls() const;
    std::vector<std::string> misses() const;
    std::size_t chat_calls() const noexcept { return chat_calls_; }
    std::size_t embed_calls() const noexcept { return embed_calls_; }
    std::size_t peak_in_flight() const { return limiter_.peak(); }

    // The vector the mock would return for `text` (no call is logged).
    Embedding embedding_for(std::string_view text) const;

private:
    std::size_t begin_call();
    void end_call(MockCall::Kind kind, std::string text, std::size_t started, bool matched);
    void jitter(std::string_view key) const;

    MockScript script_;
    std::vector<int> rule_hits_;
    InFlightLimiter limiter_;
    mutable std::mutex mutex_;
    std::size_t clock_ = 0;
    std::vector<MockCall> calls_;
    std::vector<std::string> misses_;
    std::atomic<std::size_t> chat_calls_{0};
    std::atomic<std::size_t> embed_calls_{0};
};

// Expands "{{prompt}}" and "{{section:NAME}}" in a reply template.
std::string expand_reply(std::string_view reply_template, std::string_view prompt);

}  // namespace qavlm::backend
