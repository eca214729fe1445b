#include <cstdlib>
#include <thread>

#include "doctest.h"
#include "fault_server.hpp"
#include "qavlm/backend/http_backend.hpp"
#include "qavlm/errors.hpp"

using namespace qavlm;
using namespace qavlm::backend;
using qavlm::testing::FaultServer;
using qavlm::testing::ScriptedResponse;

namespace {

BackendConfig config_for(const FaultServer& server) {
    BackendConfig c;
    c.backend_id = "remote";
    c.base_url = server.base_url();
    c.chat_model = "vlm";
    c.embed_model = "embedder";
    c.timeout_s = 2.0;
    c.max_retries = 3;
    c.backoff_base_s = 0.01;
    c.embed_dim = 3;
    return c;
}

ChatRequest ask(const Backend& b, const std::string& text) {
    return b.make_request({{Role::user, text, {}}});
}

}  // namespace

TEST_CASE("http: successful chat and embedding") {
    FaultServer server;
    server.script("/v1/chat/completions", {{200, qavlm::testing::chat_body("hello"), 0}});
    server.script("/v1/embeddings", {{200, qavlm::testing::embedding_body({0.1, 0.2, 0.3}), 0}});
    HttpBackend b(config_for(server));
    CHECK(b.chat(ask(b, "hi")) == "hello");
    auto sent = nlohmann::json::parse(server.last_body("/v1/chat/completions"));
    CHECK(sent["model"] == "vlm");
    CHECK(sent["temperature"] == 0.0);
    auto e = b.embed_text("text");
    CHECK(e.values == std::vector<double>{0.1, 0.2, 0.3});
    auto sent_embed = nlohmann::json::parse(server.last_body("/v1/embeddings"));
    CHECK(sent_embed["model"] == "embedder");
    CHECK(sent_embed["input"] == "text");
}

TEST_CASE("http: 5xx is retried until success") {
    FaultServer server;
    server.script("/v1/chat/completions",
                  {{500, "{}", 0}, {503, "{}", 0}, {200, qavlm::testing::chat_body("ok"), 0}});
    HttpBackend b(config_for(server));
    CHECK(b.chat(ask(b, "x")) == "ok");
    CHECK(server.requests("/v1/chat/completions") == 3);
    CHECK(b.attempts() == 3);
}

TEST_CASE("http: persistent 5xx gives up after max_retries + 1 attempts") {
    FaultServer server;
    server.script("/v1/chat/completions", {{502, "{}", 0}});
    auto cfg = config_for(server);
    cfg.max_retries = 2;
    HttpBackend b(cfg);
    try {
        b.chat(ask(b, "x"));
        FAIL("expected HttpStatusError");
    } catch (const HttpStatusError& e) {
        CHECK(e.status() == 502);
    }
    CHECK(server.requests("/v1/chat/completions") == 3);
}

TEST_CASE("http: 401 and 400 are not retried") {
    FaultServer server;
    server.script("/v1/chat/completions", {{401, "{}", 0}});
    server.script("/v1/embeddings", {{400, "{}", 0}});
    HttpBackend b(config_for(server));
    CHECK_THROWS_AS(b.chat(ask(b, "x")), AuthError);
    CHECK(server.requests("/v1/chat/completions") == 1);
    CHECK_THROWS_AS(b.embed_text("x"), HttpStatusError);
    CHECK(server.requests("/v1/embeddings") == 1);
}

TEST_CASE("http: slow server surfaces as a timeout") {
    FaultServer server;
    server.script("/v1/chat/completions", {{200, qavlm::testing::chat_body("late"), 700}});
    auto cfg = config_for(server);
    cfg.timeout_s = 0.2;
    cfg.max_retries = 1;
    HttpBackend b(cfg);
    CHECK_THROWS_AS(b.chat(ask(b, "x")), TimeoutError);
    CHECK(server.requests("/v1/chat/completions") == 2);
}

TEST_CASE("http: malformed bodies and wrong dimensions") {
    FaultServer server;
    server.script("/v1/chat/completions", {{200, "not json", 0}});
    server.script("/v1/embeddings", {{200, qavlm::testing::embedding_body({1.0, 2.0}), 0}});
    HttpBackend b(config_for(server));
    CHECK_THROWS_AS(b.chat(ask(b, "x")), MalformedResponseError);
    CHECK_THROWS_AS(b.embed_text("x"), DimensionError);

    FaultServer shape;
    shape.script("/v1/chat/completions", {{200, R"({"choices": []})", 0}});
    HttpBackend c(config_for(shape));
    CHECK_THROWS_AS(c.chat(ask(c, "x")), MalformedResponseError);
}

TEST_CASE("http: refused connection is a transport error") {
    BackendConfig cfg;
    cfg.backend_id = "nowhere";
    cfg.base_url = "http://127.0.0.1:1/v1";
    cfg.max_retries = 1;
    cfg.backoff_base_s = 0.0;
    cfg.timeout_s = 1.0;
    HttpBackend b(cfg);
    CHECK_THROWS_AS(b.chat(ask(b, "x")), TransportError);
    CHECK(b.attempts() == 2);
}

TEST_CASE("http: api key comes from the named environment variable") {
    FaultServer server;
    server.script("/v1/chat/completions", {{200, qavlm::testing::chat_body("ok"), 0}});
    auto cfg = config_for(server);
    cfg.api_key_env = "QAVLM_TEST_KEY_UNSET";
    ::unsetenv("QAVLM_TEST_KEY_UNSET");
    CHECK_THROWS_AS(HttpBackend{cfg}, ConfigurationError);
    ::setenv("QAVLM_TEST_KEY", "sekret", 1);
    cfg.api_key_env = "QAVLM_TEST_KEY";
    HttpBackend b(cfg);
    b.chat(ask(b, "x"));
    CHECK(server.last_authorization() == "Bearer sekret");
}

TEST_CASE("http: config validation") {
    BackendConfig c;
    c.backend_id = "x";
    c.base_url = "ftp://example.com";
    CHECK_THROWS_AS(c.validate(), ConfigurationError);
    c.base_url = "https://api.example.com/v1";
    CHECK_NOTHROW(c.validate());
    c.max_in_flight = 0;
    CHECK_THROWS_AS(c.validate(), ConfigurationError);
    CHECK_THROWS_AS(BackendConfig::from_json(nlohmann::json{{"base_url", "http://a"}}), ConfigurationError);
}

TEST_CASE("http: in-flight requests are capped") {
    FaultServer server;
    server.script("/v1/chat/completions", {{200, qavlm::testing::chat_body("ok"), 40}});
    auto cfg = config_for(server);
    cfg.max_in_flight = 2;
    HttpBackend b(cfg);
    {
        std::vector<std::jthread> threads;
        for (int i = 0; i < 8; ++i) threads.emplace_back([&] { b.chat(ask(b, "x")); });
    }
    CHECK(b.peak_in_flight() <= 2);
    CHECK(server.peak_concurrency() <= 2);
    CHECK(server.requests("/v1/chat/completions") == 8);
}
