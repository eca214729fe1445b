#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace qavlm {

// Fixed-length real vector produced by an embedding model. Values are kept
// exactly as the backend returned them (not normalized).
struct Embedding {
    std::vector<double> values;

    std::size_t dim() const noexcept { return values.size(); }
    std::span<const double> view() const noexcept { return values; }

    friend bool operator==(const Embedding&, const Embedding&) = default;
};

// Throws DimensionError / DegenerateVectorError on empty or non-finite input.
void validate_embedding(const Embedding& e, std::size_t expected_dim);

}  // namespace qavlm
