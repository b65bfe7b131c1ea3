#pragma once

#include <cstdint>
#include <vector>

#include "fishcore/error.hpp"

namespace fishcore {

/**
 * Residual vector quantizer baseline: staged nearest-neighbor quantization
 * of successive residuals against explicit per-stage codebooks.
 */
struct RvqConfig {
    int stages = 1;
    int codewords_per_stage = 1;
    int dim = 1;
    // (stage, codeword, dim), row-major.
    std::vector<double> codebooks;

    void validate() const;

    const double* codeword(int stage, int index) const {
        return codebooks.data() +
               (static_cast<size_t>(stage) * codewords_per_stage + index) * dim;
    }
};

// vectors: (count, dim) row-major. Returns (count, stages) stage indices;
// ties resolve to the lowest codeword index.
std::vector<int32_t> rvq_encode(const std::vector<double>& vectors, int count,
                                const RvqConfig& config);

// Sums the selected codewords of the first `use_stages` stages
// (use_stages <= 0 means all).
std::vector<double> rvq_decode(const std::vector<int32_t>& stage_indices, int count,
                               const RvqConfig& config, int use_stages = 0);

} // namespace fishcore
