#pragma once

#include <atomic>

#include "qavlm/backend/backend.hpp"

namespace qavlm::backend {

// Chat-completions style JSON-over-HTTP client.
//
//   POST {base_url}/chat/completions   reads choices[0].message.content
//   POST {base_url}/embeddings         reads data[0].embedding
//
// Retries transport errors, timeouts and 5xx with full-jitter exponential
// backoff; 4xx is never retried. The bearer token comes from the environment
// variable named by api_key_env.
class HttpBackend final : public Backend {
public:
    explicit HttpBackend(BackendConfig config);

    std::string id() const override { return config_.backend_id; }
    std::string chat_model() const override { return config_.chat_model; }
    std::string embed_model() const override { return config_.embed_model; }
    std::size_t embed_dim() const override { return config_.embed_dim; }
    std::size_t max_in_flight() const override { return config_.max_in_flight; }

    std::string chat(const ChatRequest& request) override;
    Embedding embed_text(std::string_view text) override;

    const BackendConfig& config() const noexcept { return config_; }
    // Total HTTP attempts made so far, including retries.
    std::size_t attempts() const noexcept { return attempts_; }
    std::size_t peak_in_flight() const { return limiter_.peak(); }

private:
    nlohmann::json post(const std::string& path, const std::string& body);
    nlohmann::json post_once(const std::string& path, const std::string& body);

    BackendConfig config_;
    std::string scheme_host_port_;
    std::string path_prefix_;
    std::string api_key_;
    InFlightLimiter limiter_;
    std::atomic<std::size_t> attempts_{0};
};

}  // namespace qavlm::backend
