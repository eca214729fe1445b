#include "qavlm/backend/mock_backend.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include "qavlm/log.hpp"
#include "qavlm/util.hpp"

namespace qavlm::backend {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

MockRule::Match parse_match(const std::string& s) {
    if (s == "exact") return MockRule::Match::exact;
    if (s == "substring") return MockRule::Match::substring;
    if (s == "any") return MockRule::Match::any;
    throw ParseError("mock script: unknown match kind '" + s + "'");
}

bool rule_matches(const MockRule& rule, std::string_view text) {
    switch (rule.match) {
        case MockRule::Match::exact: return text == rule.pattern;
        case MockRule::Match::substring: return text.find(rule.pattern) != std::string_view::npos;
        case MockRule::Match::any: return true;
    }
    return false;
}

[[noreturn]] void throw_injected(const std::string& kind) {
    if (kind == "transport") throw TransportError("injected transport failure");
    if (kind == "timeout") throw TimeoutError("injected timeout");
    if (kind == "auth") throw AuthError("injected auth failure", 401);
    if (kind == "server") throw HttpStatusError("injected server error", 500);
    if (kind == "malformed") throw MalformedResponseError("injected malformed response");
    throw ParseError("mock script: unknown error kind '" + kind + "'");
}

}  // namespace

MockScript MockScript::from_json(const json& j) {
    MockScript s;
    try {
        s.backend_id = j.value("backend_id", s.backend_id);
        s.chat_model = j.value("chat_model", s.chat_model);
        s.embed_model = j.value("embed_model", s.embed_model);
        s.dim = j.value("dim", s.dim);
        s.seed = j.value("seed", s.seed);
        s.max_in_flight = j.value("max_in_flight", s.max_in_flight);
        s.fallback_reply = j.value("fallback_reply", s.fallback_reply);
        s.jitter_ms = j.value("jitter_ms", s.jitter_ms);
        for (const auto& r : j.value("replies", json::array())) {
            MockRule rule;
            rule.match = parse_match(r.value("match", "substring"));
            rule.pattern = r.value("pattern", "");
            rule.reply = r.value("reply", "");
            if (r.contains("error") && !r["error"].is_null()) {
                rule.error = r["error"].get<std::string>();
            }
            if (r.contains("times") && !r["times"].is_null()) rule.times = r["times"].get<int>();
            s.rules.push_back(std::move(rule));
        }
        for (const auto& [text, seed] : j.value("embedding_seeds", json::object()).items()) {
            s.embedding_seeds[text] = seed.get<std::uint64_t>();
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("mock script: ") + e.what());
    }
    if (s.dim < 1) throw ParseError("mock script: dim must be >= 1");
    return s;
}

MockScript MockScript::load(const std::filesystem::path& path) {
    const std::string text = util::read_file(path);
    try {
        return from_json(json::parse(text));
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what(), util::line_of_offset(text, e.byte));
    }
}

std::string expand_reply(std::string_view reply_template, std::string_view prompt) {
    std::string out(reply_template);
    util::replace_all(out, "{{prompt}}", prompt);
    static constexpr std::string_view open = "{{section:";
    std::size_t pos = 0;
    while ((pos = out.find(open, pos)) != std::string::npos) {
        const auto close = out.find("}}", pos);
        if (close == std::string::npos) break;
        const std::string name = out.substr(pos + open.size(), close - pos - open.size());
        const std::string tag_open = "<" + name + ">";
        const std::string tag_close = "</" + name + ">";
        std::string body;
        const auto b = prompt.find(tag_open);
        if (b != std::string_view::npos) {
            const auto e = prompt.find(tag_close, b + tag_open.size());
            body = util::trim(prompt.substr(b + tag_open.size(),
                                            (e == std::string_view::npos ? prompt.size() : e) -
                                                b - tag_open.size()));
        }
        out.replace(pos, close + 2 - pos, body);
        pos += body.size();
    }
    return out;
}

MockBackend::MockBackend(MockScript script)
    : script_(std::move(script)),
      rule_hits_(script_.rules.size(), 0),
      limiter_(script_.max_in_flight) {}

std::size_t MockBackend::begin_call() {
    std::lock_guard lock(mutex_);
    return clock_++;
}

void MockBackend::end_call(MockCall::Kind kind, std::string text, std::size_t started,
                           bool matched) {
    std::lock_guard lock(mutex_);
    calls_.push_back({kind, std::move(text), started, clock_++, matched});
}

void MockBackend::jitter(std::string_view key) const {
    if (script_.jitter_ms <= 0) return;
    std::uint64_t state = util::fnv1a64(key) ^ script_.seed;
    const auto ms = splitmix64(state) % static_cast<std::uint64_t>(script_.jitter_ms + 1);
    std::this_thread::sleep_for(std::chrono::milliseconds(ms));
}

std::string MockBackend::chat(const ChatRequest& request) {
    if (request.temperature != 0.0) throw PreconditionError("chat temperature must be 0");
    InFlightLimiter::Slot slot(limiter_);
    ++chat_calls_;
    const std::size_t started = begin_call();
    const std::string prompt = last_user_text(request);

    std::optional<std::size_t> hit;
    {
        std::lock_guard lock(mutex_);
        for (std::size_t i = 0; i < script_.rules.size(); ++i) {
            const auto& rule = script_.rules[i];
            if (rule.times && rule_hits_[i] >= *rule.times) continue;
            if (rule_matches(rule, prompt)) {
                ++rule_hits_[i];
                hit = i;
                break;
            }
        }
        if (!hit) misses_.push_back(prompt);
    }
    jitter(prompt);
    end_call(MockCall::Kind::chat, prompt, started, hit.has_value());

    if (!hit) {
        log::debug("mock backend: unmatched prompt, using fallback reply");
        return script_.fallback_reply;
    }
    const auto& rule = script_.rules[*hit];
    if (rule.error) throw_injected(*rule.error);
    return expand_reply(rule.reply, prompt);
}

Embedding MockBackend::embedding_for(std::string_view text) const {
    std::uint64_t base = util::fnv1a64(text);
    if (auto it = script_.embedding_seeds.find(std::string(text));
        it != script_.embedding_seeds.end()) {
        base = it->second;
    }
    std::uint64_t mix = script_.seed;
    std::uint64_t state = base ^ splitmix64(mix);
    Embedding e;
    e.values.resize(script_.dim);
    double norm2 = 0.0;
    for (auto& v : e.values) {
        // 53 random bits -> [-1, 1)
        v = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-52 - 1.0;
        norm2 += v * v;
    }
    if (norm2 == 0.0) {
        e.values[0] = 1.0;
        norm2 = 1.0;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& v : e.values) v *= inv;
    return e;
}

Embedding MockBackend::embed_text(std::string_view text) {
    if (text.empty()) throw PreconditionError("cannot embed empty text");
    InFlightLimiter::Slot slot(limiter_);
    ++embed_calls_;
    const std::size_t started = begin_call();
    Embedding e = embedding_for(text);
    end_call(MockCall::Kind::embed, std::string(text), started, true);
    return e;
}

std::vector<MockCall> MockBackend::calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

std::vector<std::string> MockBackend::misses() const {
    std::lock_guard lock(mutex_);
    return misses_;
}

}  // namespace qavlm::backend
