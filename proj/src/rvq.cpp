#include "fishcore/rvq.hpp"

#include <cmath>
#include <cstddef>

namespace fishcore {

void RvqConfig::validate() const {
    if (stages < 1) throw ConfigError("rvq: stages must be >= 1");
    if (codewords_per_stage < 1) throw ConfigError("rvq: codewords_per_stage must be >= 1");
    if (dim < 1) throw ConfigError("rvq: dim must be >= 1");
    const size_t expected =
        static_cast<size_t>(stages) * codewords_per_stage * dim;
    if (codebooks.size() != expected) {
        throw ConfigError("rvq: codebook storage does not match (stages, codewords, dim)");
    }
    for (double v : codebooks) {
        if (!std::isfinite(v)) throw ConfigError("rvq: codebook entries must be finite");
    }
}

std::vector<int32_t> rvq_encode(const std::vector<double>& vectors, int count,
                                const RvqConfig& config) {
    config.validate();
    if (count < 0 || vectors.size() != static_cast<size_t>(count) * config.dim) {
        throw ShapeError("rvq_encode: vector storage does not match (count, dim)");
    }
    for (double v : vectors) {
        if (!std::isfinite(v)) throw DomainError("rvq_encode: inputs must be finite");
    }

    std::vector<int32_t> out(static_cast<size_t>(count) * config.stages, 0);
    std::vector<double> residual(config.dim);
#pragma omp parallel for firstprivate(residual) if (count >= 256)
    for (int n = 0; n < count; ++n) {
        const double* v = vectors.data() + static_cast<size_t>(n) * config.dim;
        for (int d = 0; d < config.dim; ++d) residual[d] = v[d];
        for (int s = 0; s < config.stages; ++s) {
            int best = 0;
            double best_dist = 0.0;
            for (int c = 0; c < config.codewords_per_stage; ++c) {
                const double* cw = config.codeword(s, c);
                double dist = 0.0;
                for (int d = 0; d < config.dim; ++d) {
                    const double diff = residual[d] - cw[d];
                    dist += diff * diff;
                }
                if (c == 0 || dist < best_dist) { // strict < keeps the lowest index on ties
                    best = c;
                    best_dist = dist;
                }
            }
            out[static_cast<size_t>(n) * config.stages + s] = best;
            const double* cw = config.codeword(s, best);
            for (int d = 0; d < config.dim; ++d) residual[d] -= cw[d];
        }
    }
    return out;
}

std::vector<double> rvq_decode(const std::vector<int32_t>& stage_indices, int count,
                               const RvqConfig& config, int use_stages) {
    config.validate();
    if (count < 0 || stage_indices.size() != static_cast<size_t>(count) * config.stages) {
        throw ShapeError("rvq_decode: index storage does not match (count, stages)");
    }
    if (use_stages <= 0 || use_stages > config.stages) use_stages = config.stages;
    for (int32_t idx : stage_indices) {
        if (idx < 0 || idx >= config.codewords_per_stage) {
            throw DataError("rvq_decode: stage index out of range");
        }
    }

    std::vector<double> out(static_cast<size_t>(count) * config.dim, 0.0);
#pragma omp parallel for if (count >= 256)
    for (int n = 0; n < count; ++n) {
        double* v = out.data() + static_cast<size_t>(n) * config.dim;
        for (int s = 0; s < use_stages; ++s) {
            const int32_t idx = stage_indices[static_cast<size_t>(n) * config.stages + s];
            const double* cw = config.codeword(s, idx);
            for (int d = 0; d < config.dim; ++d) v[d] += cw[d];
        }
    }
    return out;
}

} // namespace fishcore
