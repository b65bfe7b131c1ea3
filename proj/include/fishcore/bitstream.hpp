#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fishcore/gfsq.hpp"

namespace fishcore {

// .ffc code stream layout (all multi-byte fields little-endian):
//   magic "FFC1" | version u8=1 | groups u8 | hop u16 | dims_per_group u8 |
//   levels dims_per_group x u8 | original_len u32 | frame_count u32 |
//   payload: frame-major, group-minor indices, each ceil(log2(codebook)) bits,
//   LSB-first within bytes, final partial byte zero-padded.
//
// .ffm model file layout:
//   magic "FFM1" | version u8=1 | records until end of file, each
//   name_len u16 | name bytes | dtype u8 (0 = f32) | rank u8 |
//   rank x dim u32 | prod(dims) x f32 payload.

inline constexpr char kCodeStreamMagic[4] = {'F', 'F', 'C', '1'};
inline constexpr char kModelFileMagic[4] = {'F', 'F', 'M', '1'};
inline constexpr uint8_t kFormatVersion = 1;

// Bits each packed index occupies: ceil(log2(codebook_size)).
int bits_per_index(const GfsqConfig& config);

// Exact payload size, excluding the header, in bits.
int64_t payload_bits(const CodeGrid& codes);

// Header size in bytes for a given config.
int header_bytes(const GfsqConfig& config);

// Streams carry a single utterance: codes.batch must be 1.
std::vector<uint8_t> pack_codes(const CodeGrid& codes, uint32_t original_len);

struct UnpackedCodes {
    CodeGrid codes;
    uint32_t original_len = 0;
};

UnpackedCodes unpack_codes(const std::vector<uint8_t>& bytes);

/**
 * One named weight record: a row-major float tensor.
 */
struct NamedTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;

    NamedTensor() = default;
    NamedTensor(std::string n, std::vector<int> s);

    int64_t element_count() const;
};

std::vector<uint8_t> save_model(const std::vector<NamedTensor>& weights);
std::vector<NamedTensor> load_model(const std::vector<uint8_t>& bytes);

// File convenience wrappers; missing/unwritable paths throw Error.
void write_file(const std::string& path, const std::vector<uint8_t>& bytes);
std::vector<uint8_t> read_file(const std::string& path);

} // namespace fishcore
