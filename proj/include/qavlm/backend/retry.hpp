#pragma once

#include <chrono>
#include <cstdint>
#include <random>
#include <thread>

#include "qavlm/backend/backend.hpp"

namespace qavlm::backend {

struct RetryPolicy {
    int max_retries = 3;
    double backoff_base_s = 0.5;
};

// Full-jitter exponential backoff: sleep uniform(0, base * 2^attempt).
inline std::chrono::duration<double> backoff_delay(const RetryPolicy& policy, int attempt,
                                                   std::uint64_t salt) {
    std::mt19937_64 rng(salt + static_cast<std::uint64_t>(attempt));
    const double cap = policy.backoff_base_s * static_cast<double>(1ULL << attempt);
    std::uniform_real_distribution<double> dist(0.0, cap);
    return std::chrono::duration<double>(dist(rng));
}

// Calls fn() until it succeeds or throws a non-retryable error. At most
// max_retries + 1 attempts; `attempts` receives the count actually made.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn, int* attempts = nullptr) {
    const std::uint64_t salt = std::random_device{}();
    for (int attempt = 0;; ++attempt) {
        if (attempts) *attempts = attempt + 1;
        try {
            return fn();
        } catch (const BackendError& e) {
            if (!e.retryable() || attempt >= policy.max_retries) throw;
        }
        std::this_thread::sleep_for(backoff_delay(policy, attempt, salt));
    }
}

}  // namespace qavlm::backend
