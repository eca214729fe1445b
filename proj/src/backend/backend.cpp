#include "qavlm/backend/backend.hpp"

#include <algorithm>
#include <regex>

namespace qavlm::backend {

using nlohmann::json;

std::string_view to_string(Role role) {
    switch (role) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

Role role_from_string(std::string_view s) {
    if (s == "system") return Role::system;
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    throw InputError("unknown message role '" + std::string(s) + "'");
}

json to_wire_json(const ChatRequest& request) {
    json messages = json::array();
    for (const auto& m : request.messages) {
        json content = json::array();
        content.push_back({{"type", "text"}, {"text", m.text}});
        for (const auto& img : m.images) {
            content.push_back(
                {{"type", "image_url"},
                 {"image_url", {{"url", "data:" + img.media_type + ";base64," + img.data_base64}}}});
        }
        messages.push_back({{"role", std::string(to_string(m.role))}, {"content", content}});
    }
    return {{"model", request.model},
            {"temperature", request.temperature},
            {"messages", messages}};
}

std::string canonical_body(const ChatRequest& request) { return to_wire_json(request).dump(); }

std::string last_user_text(const ChatRequest& request) {
    auto it = std::find_if(request.messages.rbegin(), request.messages.rend(),
                           [](const Message& m) { return m.role == Role::user; });
    return it == request.messages.rend() ? std::string() : it->text;
}

std::string_view to_string(FailureKind kind) {
    switch (kind) {
        case FailureKind::transport: return "transport";
        case FailureKind::timeout: return "timeout";
        case FailureKind::auth: return "auth";
        case FailureKind::http_status: return "http_status";
        case FailureKind::malformed_response: return "malformed_response";
    }
    return "transport";
}

BackendError::BackendError(FailureKind kind, const std::string& what, int status)
    : Error(std::string(to_string(kind)) + (status ? " (HTTP " + std::to_string(status) + ")" : "") +
            ": " + what),
      kind_(kind),
      status_(status) {}

bool BackendError::retryable() const noexcept {
    switch (kind_) {
        case FailureKind::transport:
        case FailureKind::timeout: return true;
        case FailureKind::http_status: return status_ >= 500;
        default: return false;
    }
}

BackendConfig BackendConfig::from_json(const json& j) {
    BackendConfig c;
    try {
        c.backend_id = j.at("backend_id").get<std::string>();
        c.base_url = j.value("base_url", "");
        c.chat_model = j.value("chat_model", "");
        c.embed_model = j.value("embed_model", "");
        c.api_key_env = j.value("api_key_env", "");
        c.timeout_s = j.value("timeout_s", c.timeout_s);
        c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
        c.max_retries = j.value("max_retries", c.max_retries);
        c.embed_dim = j.value("embed_dim", c.embed_dim);
        c.backoff_base_s = j.value("backoff_base_s", c.backoff_base_s);
    } catch (const json::exception& e) {
        throw ConfigurationError(std::string("backend config: ") + e.what());
    }
    return c;
}

json BackendConfig::to_json() const {
    return {{"backend_id", backend_id},   {"base_url", base_url},
            {"chat_model", chat_model},   {"embed_model", embed_model},
            {"api_key_env", api_key_env}, {"timeout_s", timeout_s},
            {"max_in_flight", max_in_flight}, {"max_retries", max_retries},
            {"embed_dim", embed_dim},     {"backoff_base_s", backoff_base_s}};
}

void BackendConfig::validate() const {
    static const std::regex url(R"(^https?://[A-Za-z0-9.\-]+(:[0-9]{1,5})?(/.*)?$)");
    if (backend_id.empty()) throw ConfigurationError("backend_id is empty");
    if (!std::regex_match(base_url, url)) {
        throw ConfigurationError("base_url is not a well-formed http(s) URL: '" + base_url + "'");
    }
    if (!(timeout_s > 0)) throw ConfigurationError("timeout_s must be positive");
    if (max_in_flight < 1) throw ConfigurationError("max_in_flight must be >= 1");
    if (max_retries < 0) throw ConfigurationError("max_retries must be >= 0");
    if (embed_dim < 1) throw ConfigurationError("embed_dim must be >= 1");
    if (backoff_base_s < 0) throw ConfigurationError("backoff_base_s must be >= 0");
}

InFlightLimiter::InFlightLimiter(std::size_t limit) : limit_(std::max<std::size_t>(limit, 1)) {}

std::size_t InFlightLimiter::peak() const {
    std::lock_guard lock(mutex_);
    return peak_;
}

void InFlightLimiter::acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return current_ < limit_; });
    ++current_;
    peak_ = std::max(peak_, current_);
}

void InFlightLimiter::release() {
    {
        std::lock_guard lock(mutex_);
        --current_;
    }
    cv_.notify_one();
}

InFlightLimiter::Slot::Slot(InFlightLimiter& owner) : owner_(owner) { owner_.acquire(); }
InFlightLimiter::Slot::~Slot() { owner_.release(); }

ChatRequest Backend::make_request(std::vector<Message> messages) const {
    ChatRequest r;
    r.model = chat_model();
    r.messages = std::move(messages);
    return r;
}

}  // namespace qavlm::backend
