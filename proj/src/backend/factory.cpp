#include "qavlm/backend/factory.hpp"

#include "qavlm/backend/cached_backend.hpp"
#include "qavlm/backend/http_backend.hpp"
#include "qavlm/backend/mock_backend.hpp"
#include "qavlm/util.hpp"

namespace qavlm::backend {

using nlohmann::json;

BackendPtr make_backend(const std::filesystem::path& config_path,
                        const std::filesystem::path& cache_dir,
                        std::optional<std::uint64_t> seed_override) {
    const std::string text = util::read_file(config_path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(config_path.string() + ": " + e.what(),
                         util::line_of_offset(text, e.byte));
    }
    const std::string type = j.value("type", "http");
    BackendPtr backend;
    if (type == "mock") {
        MockScript script;
        if (j.contains("script")) {
            script = MockScript::load(config_path.parent_path() / j["script"].get<std::string>());
        } else {
            script = MockScript::from_json(j);
        }
        if (j.contains("backend_id")) script.backend_id = j["backend_id"].get<std::string>();
        if (seed_override) script.seed = *seed_override;
        backend = std::make_shared<MockBackend>(std::move(script));
    } else if (type == "http") {
        backend = std::make_shared<HttpBackend>(BackendConfig::from_json(j));
    } else {
        throw ConfigurationError("unknown backend type '" + type + "'");
    }
    if (!cache_dir.empty()) backend = std::make_shared<CachedBackend>(backend, cache_dir);
    return backend;
}

}  // namespace qavlm::backend
