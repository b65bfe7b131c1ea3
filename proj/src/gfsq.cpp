#include "fishcore/gfsq.hpp"

#include "fishcore/kernels.hpp"

#include <cmath>
#include <cstddef>
#include <limits>
#include <unordered_set>

#include <json.hpp>

namespace fishcore {

void GfsqConfig::validate() const {
    if (groups < 1) throw ConfigError("gfsq: groups must be positive");
    if (hop < 1) throw ConfigError("gfsq: hop must be positive");
    if (levels.empty()) throw ConfigError("gfsq: levels must be non-empty");
    int64_t size = 1;
    for (int l : levels) {
        if (l < 3) throw ConfigError("gfsq: every level count must be >= 3");
        if (l % 2 == 0) throw ConfigError("gfsq: even level counts are not supported");
        if (size > std::numeric_limits<int32_t>::max() / l) {
            throw ConfigError("gfsq: codebook size exceeds int32 range");
        }
        size *= l;
    }
}

int64_t codebook_size(const GfsqConfig& config) {
    config.validate();
    int64_t size = 1;
    for (int l : config.levels) size *= l;
    return size;
}

std::string gfsq_config_to_json(const GfsqConfig& config) {
    nlohmann::json j;
    j["groups"] = config.groups;
    j["levels"] = config.levels;
    j["hop"] = config.hop;
    return j.dump();
}

GfsqConfig gfsq_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("gfsq config: invalid JSON: ") + e.what());
    }
    GfsqConfig config;
    try {
        config.groups = j.at("groups").get<int>();
        config.levels = j.at("levels").get<std::vector<int>>();
        config.hop = j.at("hop").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("gfsq config: missing or mistyped field: ") + e.what());
    }
    config.validate();
    return config;
}

CodeGrid::CodeGrid(int b, int g, int l, GfsqConfig cfg)
    : batch(b), groups(g), frames(l), config(std::move(cfg)) {
    if (b <= 0 || g <= 0 || l <= 0) throw ShapeError("CodeGrid: dimensions must be positive");
    if (g != config.groups) throw ShapeError("CodeGrid: group count does not match config");
    indices.assign(static_cast<size_t>(b) * g * l, 0);
}

void CodeGrid::validate() const {
    config.validate();
    const int64_t size = codebook_size(config);
    for (int32_t idx : indices) {
        if (idx < 0 || idx >= size) {
            throw DataError("CodeGrid: index " + std::to_string(idx) + " outside codebook of " +
                            std::to_string(size));
        }
    }
}

namespace {

// One dimension's quantization table: the level boundaries, expressed as
// tanh-space midpoints between consecutive grid images tanh(q/h). Placing
// the boundaries at these midpoints (rather than uniformly) makes every
// exact grid point q/h the strict interior of its own cell, so re-encoding
// a decoded value recovers the original level for every level count.
template <typename T>
struct FsqDimTable {
    int levels = 0;
    T half = T(1);
    std::vector<T> mids; // levels-1 ascending boundaries in tanh space
};

template <typename T>
FsqDimTable<T> fsq_dim_table(int levels) {
    const int h = (levels - 1) / 2;
    FsqDimTable<T> table;
    table.levels = levels;
    table.half = static_cast<T>(h);
    table.mids.reserve(static_cast<size_t>(levels) - 1);
    for (int q = -h; q < h; ++q) {
        const T lo = std::tanh(static_cast<T>(q) / table.half);
        const T hi = std::tanh(static_cast<T>(q + 1) / table.half);
        table.mids.push_back((lo + hi) / T(2));
    }
    return table;
}

// Scalar grid quantizer with validation already done by the caller: the
// cell whose grid image is nearest to tanh(value), ties resolving half
// away from zero (a tie on a negative boundary keeps the lower cell, on a
// positive boundary the upper one).
template <typename T>
inline int fsq_cell_index(T value, const FsqDimTable<T>& table) {
    const T t = std::tanh(value);
    for (size_t j = 0; j < table.mids.size(); ++j) {
        const T mid = table.mids[j];
        if (t < mid || (t == mid && mid < T(0))) return static_cast<int>(j);
    }
    return table.levels - 1;
}

} // namespace

template <typename T>
FsqResult<T> fsq_quantize_dim(T value, int levels) {
    if (levels < 3 || levels % 2 == 0) {
        throw ConfigError("fsq: level count must be odd and >= 3");
    }
    if (!std::isfinite(static_cast<double>(value))) {
        throw DomainError("fsq: value must be finite");
    }
    const auto table = fsq_dim_table<T>(levels);
    const int index = fsq_cell_index(value, table);
    const T q = static_cast<T>(index - (levels - 1) / 2);
    return {index, q / table.half};
}

template FsqResult<float> fsq_quantize_dim<float>(float, int);
template FsqResult<double> fsq_quantize_dim<double>(double, int);

template <typename T>
CodeGrid gfsq_encode(const FrameTensorT<T>& latent, const GfsqConfig& config) {
    config.validate();
    if (latent.channels != config.grouped_channels()) {
        throw ShapeError("gfsq_encode: expected " + std::to_string(config.grouped_channels()) +
                         " channels, got " + std::to_string(latent.channels));
    }
    if (!latent.all_finite()) throw DomainError("gfsq_encode: latent contains non-finite values");

    const int dims = config.dims_per_group();
    std::vector<FsqDimTable<T>> tables;
    std::vector<int32_t> places(dims);
    int32_t place = 1;
    for (int i = 0; i < dims; ++i) {
        tables.push_back(fsq_dim_table<T>(config.levels[i]));
        places[i] = place;
        place *= config.levels[i];
    }

    CodeGrid codes(latent.batch, config.groups, latent.length, config);
    const int cells = latent.batch * config.groups * latent.length;
#pragma omp parallel for if (static_cast<std::ptrdiff_t>(cells) * dims >= kernels::kOmpGrain)
    for (int cell = 0; cell < cells; ++cell) {
        const int l = cell % latent.length;
        const int g = (cell / latent.length) % config.groups;
        const int b = cell / (latent.length * config.groups);
        int32_t packed = 0;
        for (int i = 0; i < dims; ++i) {
            const T v = latent.at(b, g * dims + i, l);
            packed += places[i] * fsq_cell_index(v, tables[i]);
        }
        codes.indices[cell] = packed;
    }
    return codes;
}

template CodeGrid gfsq_encode<float>(const FrameTensorT<float>&, const GfsqConfig&);
template CodeGrid gfsq_encode<double>(const FrameTensorT<double>&, const GfsqConfig&);

template <typename T>
FrameTensorT<T> gfsq_decode(const CodeGrid& codes) {
    if (codes.empty()) throw DataError("gfsq_decode: empty code grid");
    codes.validate();
    const GfsqConfig& config = codes.config;
    const int dims = config.dims_per_group();

    FrameTensorT<T> out(codes.batch, config.grouped_channels(), codes.frames);
    const int cells = codes.batch * codes.groups * codes.frames;
#pragma omp parallel for if (static_cast<std::ptrdiff_t>(cells) * dims >= kernels::kOmpGrain)
    for (int cell = 0; cell < cells; ++cell) {
        const int l = cell % codes.frames;
        const int g = (cell / codes.frames) % codes.groups;
        const int b = cell / (codes.frames * codes.groups);
        int32_t rest = codes.indices[cell];
        for (int i = 0; i < dims; ++i) {
            const int level = rest % config.levels[i];
            rest /= config.levels[i];
            const int h = (config.levels[i] - 1) / 2;
            out.at(b, g * dims + i, l) = static_cast<T>(level - h) / static_cast<T>(h);
        }
    }
    return out;
}

template FrameTensorT<float> gfsq_decode<float>(const CodeGrid&);
template FrameTensorT<double> gfsq_decode<double>(const CodeGrid&);

std::vector<double> utilization(const CodeGrid& codes) {
    if (codes.empty()) throw DomainError("utilization: empty code grid");
    codes.validate();
    const int64_t size = codebook_size(codes.config);
    std::vector<double> out(codes.groups, 0.0);

    for (int g = 0; g < codes.groups; ++g) {
        int64_t distinct = 0;
        if (size <= (int64_t(1) << 24)) {
            std::vector<uint8_t> seen(static_cast<size_t>(size), 0);
            for (int b = 0; b < codes.batch; ++b) {
                for (int l = 0; l < codes.frames; ++l) {
                    uint8_t& slot = seen[static_cast<size_t>(codes.at(b, g, l))];
                    distinct += (slot == 0);
                    slot = 1;
                }
            }
        } else {
            std::unordered_set<int32_t> seen;
            for (int b = 0; b < codes.batch; ++b)
                for (int l = 0; l < codes.frames; ++l) seen.insert(codes.at(b, g, l));
            distinct = static_cast<int64_t>(seen.size());
        }
        out[g] = static_cast<double>(distinct) / static_cast<double>(size);
    }
    return out;
}

namespace ref {

template <typename T>
CodeGrid gfsq_encode(const FrameTensorT<T>& latent, const GfsqConfig& config) {
    config.validate();
    if (latent.channels != config.grouped_channels()) {
        throw ShapeError("gfsq_encode: channel count does not match config");
    }
    const int dims = config.dims_per_group();
    CodeGrid codes(latent.batch, config.groups, latent.length, config);
    for (int b = 0; b < latent.batch; ++b) {
        for (int g = 0; g < config.groups; ++g) {
            for (int l = 0; l < latent.length; ++l) {
                int32_t packed = 0;
                int32_t place = 1;
                for (int i = 0; i < dims; ++i) {
                    const auto cell =
                        fishcore::fsq_quantize_dim<T>(latent.at(b, g * dims + i, l),
                                                      config.levels[i]);
                    packed += place * cell.level_index;
                    place *= config.levels[i];
                }
                codes.at(b, g, l) = packed;
            }
        }
    }
    return codes;
}

template CodeGrid gfsq_encode<float>(const FrameTensorT<float>&, const GfsqConfig&);
template CodeGrid gfsq_encode<double>(const FrameTensorT<double>&, const GfsqConfig&);

template <typename T>
FrameTensorT<T> gfsq_decode(const CodeGrid& codes) {
    codes.validate();
    const GfsqConfig& config = codes.config;
    const int dims = config.dims_per_group();
    FrameTensorT<T> out(codes.batch, config.grouped_channels(), codes.frames);
    for (int b = 0; b < codes.batch; ++b) {
        for (int g = 0; g < codes.groups; ++g) {
            for (int l = 0; l < codes.frames; ++l) {
                int32_t rest = codes.at(b, g, l);
                for (int i = 0; i < dims; ++i) {
                    const int level = rest % config.levels[i];
                    rest /= config.levels[i];
                    const int h = (config.levels[i] - 1) / 2;
                    out.at(b, g * dims + i, l) =
                        static_cast<T>(level - h) / static_cast<T>(h);
                }
            }
        }
    }
    return out;
}

template FrameTensorT<float> gfsq_decode<float>(const CodeGrid&);
template FrameTensorT<double> gfsq_decode<double>(const CodeGrid&);

} // namespace ref

} // namespace fishcore
