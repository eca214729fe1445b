#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>

#include "qavlm/backend/backend.hpp"

namespace qavlm::backend {

// Content-addressed cache key: SHA-256 over backend id, model and the
// canonical request body, as lowercase hex.
std::string chat_cache_key(std::string_view backend_id, const ChatRequest& request);
std::string embed_cache_key(std::string_view backend_id, std::string_view model,
                            std::string_view text);

// Decorator storing completions and vectors as one JSON file per key under
// cache_dir. Identical concurrent misses are collapsed into one upstream
// call. Unreadable entries are treated as misses and rewritten.
class CachedBackend final : public Backend {
public:
    CachedBackend(BackendPtr inner, std::filesystem::path cache_dir);

    std::string id() const override { return inner_->id(); }
    std::string chat_model() const override { return inner_->chat_model(); }
    std::string embed_model() const override { return inner_->embed_model(); }
    std::size_t embed_dim() const override { return inner_->embed_dim(); }
    std::size_t max_in_flight() const override { return inner_->max_in_flight(); }
    bool supports_images() const override { return inner_->supports_images(); }

    std::string chat(const ChatRequest& request) override;
    Embedding embed_text(std::string_view text) override;

    std::size_t hits() const noexcept { return hits_; }
    std::size_t misses() const noexcept { return misses_; }
    std::size_t corrupt_entries() const noexcept { return corrupt_; }
    std::filesystem::path path_for(const std::string& key) const;

private:
    std::shared_ptr<std::mutex> key_lock(const std::string& key);
    std::optional<nlohmann::json> lookup(const std::string& key, std::string_view kind);
    void store(const std::string& key, const nlohmann::json& entry);

    BackendPtr inner_;
    std::filesystem::path dir_;
    std::mutex locks_mutex_;
    std::map<std::string, std::weak_ptr<std::mutex>> locks_;
    std::atomic<std::size_t> hits_{0};
    std::atomic<std::size_t> misses_{0};
    std::atomic<std::size_t> corrupt_{0};
};

}  // namespace qavlm::backend
