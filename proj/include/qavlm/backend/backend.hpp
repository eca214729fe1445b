#pragma once

#include <condition_variable>
#include <cstddef>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "qavlm/embedding.hpp"
#include "qavlm/errors.hpp"

namespace qavlm::backend {

enum class Role { system, user, assistant };
std::string_view to_string(Role role);
Role role_from_string(std::string_view s);

struct ImagePart {
    std::string media_type;
    std::string data_base64;
};

struct Message {
    Role role = Role::user;
    std::string text;
    std::vector<ImagePart> images;
};

// One chat-completions call. Temperature is pinned to zero for every model.
struct ChatRequest {
    std::string model;
    std::vector<Message> messages;
    double temperature = 0.0;
};

// Wire body in chat-completions shape. nlohmann::json keeps object keys
// sorted, so dumping the same logical request always yields the same bytes.
nlohmann::json to_wire_json(const ChatRequest& request);
std::string canonical_body(const ChatRequest& request);
// Text of the final user message, or empty if there is none.
std::string last_user_text(const ChatRequest& request);

enum class FailureKind { transport, timeout, auth, http_status, malformed_response };
std::string_view to_string(FailureKind kind);

class BackendError : public Error {
public:
    BackendError(FailureKind kind, const std::string& what, int status = 0);
    FailureKind kind() const noexcept { return kind_; }
    int status() const noexcept { return status_; }
    // Transport failures, timeouts and 5xx are transient; everything else is not.
    bool retryable() const noexcept;

private:
    FailureKind kind_;
    int status_;
};

class TransportError : public BackendError {
public:
    explicit TransportError(const std::string& what)
        : BackendError(FailureKind::transport, what) {}
};

class TimeoutError : public BackendError {
public:
    explicit TimeoutError(const std::string& what) : BackendError(FailureKind::timeout, what) {}
};

class AuthError : public BackendError {
public:
    AuthError(const std::string& what, int status)
        : BackendError(FailureKind::auth, what, status) {}
};

class HttpStatusError : public BackendError {
public:
    HttpStatusError(const std::string& what, int status)
        : BackendError(FailureKind::http_status, what, status) {}
};

class MalformedResponseError : public BackendError {
public:
    explicit MalformedResponseError(const std::string& what)
        : BackendError(FailureKind::malformed_response, what) {}
};

struct BackendConfig {
    std::string backend_id;
    std::string base_url;
    std::string chat_model;
    std::string embed_model;
    std::string api_key_env;
    double timeout_s = 120.0;
    std::size_t max_in_flight = 4;
    int max_retries = 3;
    std::size_t embed_dim = 1024;
    double backoff_base_s = 0.5;

    static BackendConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    // Throws ConfigurationError.
    void validate() const;
};

// Blocks callers once `limit` requests are outstanding. Records the peak
// concurrency it has observed.
class InFlightLimiter {
public:
    explicit InFlightLimiter(std::size_t limit);

    class Slot {
    public:
        explicit Slot(InFlightLimiter& owner);
        ~Slot();
        Slot(const Slot&) = delete;
        Slot& operator=(const Slot&) = delete;

    private:
        InFlightLimiter& owner_;
    };

    std::size_t limit() const noexcept { return limit_; }
    std::size_t peak() const;

private:
    void acquire();
    void release();

    std::size_t limit_;
    std::size_t current_ = 0;
    std::size_t peak_ = 0;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
};

// Chat + embedding service contract. Implementations are safe to call from
// any number of threads.
class Backend {
public:
    virtual ~Backend() = default;

    virtual std::string id() const = 0;
    virtual std::string chat_model() const = 0;
    virtual std::string embed_model() const = 0;
    virtual std::size_t embed_dim() const = 0;
    virtual std::size_t max_in_flight() const = 0;
    virtual bool supports_images() const { return true; }

    virtual std::string chat(const ChatRequest& request) = 0;
    virtual Embedding embed_text(std::string_view text) = 0;

    ChatRequest make_request(std::vector<Message> messages) const;
};

using BackendPtr = std::shared_ptr<Backend>;

}  // namespace qavlm::backend
