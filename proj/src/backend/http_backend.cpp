#include "qavlm/backend/http_backend.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>

#include "httplib.h"

#include "qavlm/backend/retry.hpp"

namespace qavlm::backend {

using nlohmann::json;

namespace {

void split_url(const std::string& url, std::string& scheme_host_port, std::string& prefix) {
    const auto scheme_end = url.find("://");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        scheme_host_port = url;
        prefix.clear();
    } else {
        scheme_host_port = url.substr(0, path_start);
        prefix = url.substr(path_start);
        while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    }
}

template <typename Rep, typename Period>
std::pair<time_t, time_t> to_sec_usec(std::chrono::duration<Rep, Period> d) {
    const auto us = std::chrono::duration_cast<std::chrono::microseconds>(d).count();
    return {static_cast<time_t>(us / 1000000), static_cast<time_t>(us % 1000000)};
}

}  // namespace

HttpBackend::HttpBackend(BackendConfig config)
    : config_(std::move(config)), limiter_(config_.max_in_flight) {
    config_.validate();
    split_url(config_.base_url, scheme_host_port_, path_prefix_);
    if (!config_.api_key_env.empty()) {
        const char* key = std::getenv(config_.api_key_env.c_str());
        if (!key || !*key) {
            throw ConfigurationError("environment variable " + config_.api_key_env +
                                     " is not set");
        }
        api_key_ = key;
    }
}

json HttpBackend::post_once(const std::string& path, const std::string& body) {
    ++attempts_;
    httplib::Client client(scheme_host_port_);
    const auto [sec, usec] = to_sec_usec(std::chrono::duration<double>(config_.timeout_s));
    client.set_connection_timeout(sec, usec);
    client.set_read_timeout(sec, usec);
    client.set_write_timeout(sec, usec);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    const auto started = std::chrono::steady_clock::now();
    auto res = client.Post(path_prefix_ + path, headers, body, "application/json");
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;

    if (!res) {
        const auto err = res.error();
        if (err == httplib::Error::ConnectionTimeout ||
            (err == httplib::Error::Read && elapsed.count() >= 0.9 * config_.timeout_s)) {
            throw TimeoutError("no response from " + config_.base_url + " within " +
                               std::to_string(config_.timeout_s) + " s");
        }
        throw TransportError(httplib::to_string(err) + " talking to " + config_.base_url);
    }
    const int status = res->status;
    if (status == 401 || status == 403) {
        throw AuthError("rejected credentials for " + config_.backend_id, status);
    }
    if (status < 200 || status >= 300) {
        throw HttpStatusError("request to " + path + " failed", status);
    }
    try {
        return json::parse(res->body);
    } catch (const json::parse_error& e) {
        throw MalformedResponseError(std::string("response is not JSON: ") + e.what());
    }
}

json HttpBackend::post(const std::string& path, const std::string& body) {
    InFlightLimiter::Slot slot(limiter_);
    const RetryPolicy policy{config_.max_retries, config_.backoff_base_s};
    return with_retries(policy, [&] { return post_once(path, body); });
}

std::string HttpBackend::chat(const ChatRequest& request) {
    if (request.temperature != 0.0) throw PreconditionError("chat temperature must be 0");
    if (request.messages.empty()) throw PreconditionError("chat request has no messages");
    const json response = post("/chat/completions", canonical_body(request));
    try {
        const auto& content = response.at("choices").at(0).at("message").at("content");
        return content.get<std::string>();
    } catch (const json::exception& e) {
        throw MalformedResponseError(std::string("missing choices[0].message.content: ") +
                                     e.what());
    }
}

Embedding HttpBackend::embed_text(std::string_view text) {
    if (text.empty()) throw PreconditionError("cannot embed empty text");
    const json body = {{"model", config_.embed_model}, {"input", std::string(text)}};
    const json response = post("/embeddings", body.dump());
    Embedding e;
    try {
        e.values = response.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const json::exception& ex) {
        throw MalformedResponseError(std::string("missing data[0].embedding: ") + ex.what());
    }
    validate_embedding(e, config_.embed_dim);
    return e;
}

}  // namespace qavlm::backend
