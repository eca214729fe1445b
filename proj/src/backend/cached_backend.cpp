#include "qavlm/backend/cached_backend.hpp"

#include "qavlm/log.hpp"
#include "qavlm/util.hpp"

namespace qavlm::backend {

using nlohmann::json;
namespace fs = std::filesystem;

std::string chat_cache_key(std::string_view backend_id, const ChatRequest& request) {
    std::string material(backend_id);
    material += '\n';
    material += request.model;
    material += '\n';
    material += canonical_body(request);
    return util::sha256_hex(material);
}

std::string embed_cache_key(std::string_view backend_id, std::string_view model,
                            std::string_view text) {
    const json body = {{"kind", "embedding"}, {"input", std::string(text)}};
    std::string material(backend_id);
    material += '\n';
    material += model;
    material += '\n';
    material += body.dump();
    return util::sha256_hex(material);
}

CachedBackend::CachedBackend(BackendPtr inner, fs::path cache_dir)
    : inner_(std::move(inner)), dir_(std::move(cache_dir)) {
    if (!inner_) throw PreconditionError("cached backend needs an inner backend");
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) {
        throw ConfigurationError("cache dir " + dir_.string() + " is not writable");
    }
}

fs::path CachedBackend::path_for(const std::string& key) const { return dir_ / (key + ".json"); }

std::shared_ptr<std::mutex> CachedBackend::key_lock(const std::string& key) {
    std::lock_guard lock(locks_mutex_);
    auto& slot = locks_[key];
    if (auto existing = slot.lock()) return existing;
    auto fresh = std::make_shared<std::mutex>();
    slot = fresh;
    return fresh;
}

std::optional<json> CachedBackend::lookup(const std::string& key, std::string_view kind) {
    const fs::path p = path_for(key);
    if (!fs::exists(p)) return std::nullopt;
    try {
        json entry = json::parse(util::read_file(p));
        if (entry.at("kind").get<std::string>() != kind) throw std::runtime_error("kind mismatch");
        return entry;
    } catch (const std::exception& e) {
        ++corrupt_;
        log::warn("cache entry " + p.string() + " is unreadable (" + e.what() +
                  "); treating as a miss");
        return std::nullopt;
    }
}

void CachedBackend::store(const std::string& key, const json& entry) {
    util::write_file_atomic(path_for(key), entry.dump());
}

std::string CachedBackend::chat(const ChatRequest& request) {
    const std::string key = chat_cache_key(inner_->id(), request);
    auto guard = key_lock(key);
    std::lock_guard lock(*guard);
    if (auto entry = lookup(key, "chat")) {
        try {
            auto text = entry->at("text").get<std::string>();
            ++hits_;
            return text;
        } catch (const json::exception&) {
            ++corrupt_;
        }
    }
    ++misses_;
    std::string text = inner_->chat(request);
    store(key, {{"kind", "chat"}, {"backend_id", inner_->id()}, {"text", text}});
    return text;
}

Embedding CachedBackend::embed_text(std::string_view text) {
    if (text.empty()) throw PreconditionError("cannot embed empty text");
    const std::string key = embed_cache_key(inner_->id(), inner_->embed_model(), text);
    auto guard = key_lock(key);
    std::lock_guard lock(*guard);
    if (auto entry = lookup(key, "embedding")) {
        try {
            Embedding e{entry->at("values").get<std::vector<double>>()};
            validate_embedding(e, inner_->embed_dim());
            ++hits_;
            return e;
        } catch (const std::exception& ex) {
            ++corrupt_;
            log::warn(std::string("cached embedding rejected: ") + ex.what());
        }
    }
    ++misses_;
    Embedding e = inner_->embed_text(text);
    store(key, {{"kind", "embedding"}, {"backend_id", inner_->id()}, {"values", e.values}});
    return e;
}

}  // namespace qavlm::backend
