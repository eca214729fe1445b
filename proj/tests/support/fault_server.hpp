#pragma once

// Local HTTP server that replays scripted responses, for exercising the HTTP
// backend's failure handling.

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace qavlm::testing {

struct ScriptedResponse {
    int status = 200;
    std::string body;
    int delay_ms = 0;
};

class FaultServer {
public:
    FaultServer();
    ~FaultServer();
    FaultServer(const FaultServer&) = delete;
    FaultServer& operator=(const FaultServer&) = delete;

    // Responses for `path` are served in order; the last one repeats.
    void script(const std::string& path, std::vector<ScriptedResponse> responses);

    std::string base_url() const;
    std::size_t requests(const std::string& path) const;
    std::size_t peak_concurrency() const { return peak_; }
    std::string last_authorization() const;
    std::string last_body(const std::string& path) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::atomic<int> active_{0};
    std::atomic<std::size_t> peak_{0};
};

std::string chat_body(const std::string& content);
std::string embedding_body(const std::vector<double>& values);

}  // namespace qavlm::testing
