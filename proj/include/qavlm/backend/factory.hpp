#pragma once

#include <filesystem>
#include <optional>

#include "qavlm/backend/backend.hpp"

namespace qavlm::backend {

// Builds a backend from a JSON config file. {"type": "http", ...BackendConfig}
// gives an HttpBackend; {"type": "mock", "script": "path"} a MockBackend whose
// script path is resolved against the config's directory. A non-empty
// cache_dir wraps the result in a CachedBackend.
BackendPtr make_backend(const std::filesystem::path& config_path,
                        const std::filesystem::path& cache_dir = {},
                        std::optional<std::uint64_t> seed_override = std::nullopt);

}  // namespace qavlm::backend
