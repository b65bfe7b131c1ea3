#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fishcore/tensor.hpp"

namespace fishcore {

/**
 * Grouped finite scalar quantizer configuration.
 *
 * Channels are split into `groups` contiguous blocks of levels.size()
 * dimensions each. Every dimension is quantized onto an implicit grid of
 * levels[i] points in [-1, 1]; the per-group codebook is the product grid,
 * so nothing is learned or stored. `hop` is the downsample factor applied
 * before quantization in the codec pipeline.
 */
struct GfsqConfig {
    int groups = 1;
    std::vector<int> levels;
    int hop = 1;

    int dims_per_group() const { return static_cast<int>(levels.size()); }

    // Channel count a grouped tensor must carry: groups * dims_per_group().
    int grouped_channels() const { return groups * dims_per_group(); }

    // Throws ConfigError on even or undersized levels, non-positive groups/hop,
    // or a codebook too large to index with int32.
    void validate() const;
};

// Product of the level counts: the size of each group's implicit codebook.
int64_t codebook_size(const GfsqConfig& config);

// JSON document {"groups":int, "levels":[int...], "hop":int}.
std::string gfsq_config_to_json(const GfsqConfig& config);
GfsqConfig gfsq_config_from_json(const std::string& text);

/**
 * Integer codebook indices of shape (batch, groups, frames) plus the
 * configuration that interprets them.
 */
struct CodeGrid {
    int batch = 0;
    int groups = 0;
    int frames = 0;
    std::vector<int32_t> indices;
    GfsqConfig config;

    CodeGrid() = default;
    CodeGrid(int b, int g, int l, GfsqConfig cfg);

    int32_t& at(int b, int g, int l) {
        return indices[(static_cast<size_t>(b) * groups + g) * frames + l];
    }
    int32_t at(int b, int g, int l) const {
        return indices[(static_cast<size_t>(b) * groups + g) * frames + l];
    }

    bool empty() const { return indices.empty(); }

    // Throws DataError if any index falls outside [0, codebook_size).
    void validate() const;
};

template <typename T>
struct FsqResult {
    int level_index; // in [0, levels)
    T value;         // grid point in [-1, 1]
};

/**
 * Quantizes one scalar onto an odd-sized grid: with h = (levels-1)/2, the
 * bounded value tanh(value) is assigned to the grid point q/h (q in
 * [-h, h]) whose own image tanh(q/h) is nearest, ties resolving half away
 * from zero; the result is level_index = q + h and value = q / h. Because
 * the cell boundaries sit at midpoints between consecutive grid images,
 * every exact grid point maps back to its own cell, making quantization
 * idempotent and index round trips exact for every level count.
 * Deterministic and odd-symmetric.
 */
template <typename T>
FsqResult<T> fsq_quantize_dim(T value, int levels);

// Per-cell mixed-radix encode: channels packed with dimension 0 least
// significant. Input channels must equal config.grouped_channels().
template <typename T>
CodeGrid gfsq_encode(const FrameTensorT<T>& latent, const GfsqConfig& config);

// Exact inverse of the grid mapping: unpacks each index to per-dimension
// levels and maps them to (d - h) / h, groups concatenated along channels.
template <typename T = float>
FrameTensorT<T> gfsq_decode(const CodeGrid& codes);

// Fraction of each group's codebook observed in `codes`, in [0, 1].
std::vector<double> utilization(const CodeGrid& codes);

namespace ref {
// Serial one-scalar-at-a-time mirrors used by parity tests and the benchmark.
template <typename T>
CodeGrid gfsq_encode(const FrameTensorT<T>& latent, const GfsqConfig& config);
template <typename T = float>
FrameTensorT<T> gfsq_decode(const CodeGrid& codes);
} // namespace ref

} // namespace fishcore
