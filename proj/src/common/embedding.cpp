#include "qavlm/embedding.hpp"

#include <cmath>
#include <string>

#include "qavlm/errors.hpp"

namespace qavlm {

void validate_embedding(const Embedding& e, std::size_t expected_dim) {
    if (e.dim() != expected_dim) {
        throw DimensionError("embedding has dim " + std::to_string(e.dim()) + ", expected " +
                             std::to_string(expected_dim));
    }
    double norm2 = 0.0;
    for (double v : e.values) {
        if (!std::isfinite(v)) throw DegenerateVectorError("embedding has a non-finite value");
        norm2 += v * v;
    }
    if (norm2 == 0.0) throw DegenerateVectorError("embedding has zero norm");
}

}  // namespace qavlm
