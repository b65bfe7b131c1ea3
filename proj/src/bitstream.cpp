#include "fishcore/bitstream.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <unordered_set>

namespace fishcore {

namespace {

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

// Bounds-checked little-endian reader.
struct Reader {
    const std::vector<uint8_t>& bytes;
    size_t pos = 0;
    std::string what;

    Reader(const std::vector<uint8_t>& b, std::string context)
        : bytes(b), what(std::move(context)) {}

    void need(size_t n) const {
        if (pos + n > bytes.size()) {
            throw LengthError(what + ": truncated at byte " + std::to_string(pos));
        }
    }
    uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(bytes[pos]) |
                     static_cast<uint16_t>(bytes[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    void raw(void* dst, size_t n) {
        need(n);
        std::memcpy(dst, bytes.data() + pos, n);
        pos += n;
    }
};

} // namespace

int bits_per_index(const GfsqConfig& config) {
    const int64_t size = codebook_size(config);
    int bits = 1;
    while ((int64_t(1) << bits) < size) ++bits;
    return bits;
}

int64_t payload_bits(const CodeGrid& codes) {
    return static_cast<int64_t>(codes.batch) * codes.groups * codes.frames *
           bits_per_index(codes.config);
}

int header_bytes(const GfsqConfig& config) {
    return 4 + 1 + 1 + 2 + 1 + config.dims_per_group() + 4 + 4;
}

std::vector<uint8_t> pack_codes(const CodeGrid& codes, uint32_t original_len) {
    codes.validate();
    const GfsqConfig& config = codes.config;
    if (codes.batch != 1) {
        throw DataError("pack_codes: a code stream carries one utterance (batch must be 1)");
    }
    if (config.groups > 255 || config.dims_per_group() > 255 || config.hop > 65535) {
        throw FormatError("pack_codes: config does not fit the v1 header fields");
    }
    for (int l : config.levels) {
        if (l > 255) throw FormatError("pack_codes: level counts above 255 are not serializable");
    }
    const uint32_t expected_frames =
        static_cast<uint32_t>((static_cast<uint64_t>(original_len) + config.hop - 1) / config.hop);
    if (static_cast<uint32_t>(codes.frames) != expected_frames) {
        throw DataError("pack_codes: frame count " + std::to_string(codes.frames) +
                        " does not match ceil(original_len/hop) = " +
                        std::to_string(expected_frames));
    }

    std::vector<uint8_t> out;
    out.reserve(static_cast<size_t>(header_bytes(config)) +
                static_cast<size_t>((payload_bits(codes) + 7) / 8));
    out.insert(out.end(), kCodeStreamMagic, kCodeStreamMagic + 4);
    out.push_back(kFormatVersion);
    out.push_back(static_cast<uint8_t>(config.groups));
    put_u16(out, static_cast<uint16_t>(config.hop));
    out.push_back(static_cast<uint8_t>(config.dims_per_group()));
    for (int l : config.levels) out.push_back(static_cast<uint8_t>(l));
    put_u32(out, original_len);
    put_u32(out, static_cast<uint32_t>(codes.frames));

    const int bits = bits_per_index(config);
    const size_t payload_start = out.size();
    out.resize(payload_start + static_cast<size_t>((payload_bits(codes) + 7) / 8), 0);
    uint8_t* payload = out.data() + payload_start;

    size_t bitpos = 0;
    for (int l = 0; l < codes.frames; ++l) {
        for (int g = 0; g < codes.groups; ++g) {
            const uint32_t value = static_cast<uint32_t>(codes.at(0, g, l));
            for (int j = 0; j < bits; ++j, ++bitpos) {
                if ((value >> j) & 1u) payload[bitpos >> 3] |= uint8_t(1) << (bitpos & 7);
            }
        }
    }
    return out;
}

UnpackedCodes unpack_codes(const std::vector<uint8_t>& bytes) {
    Reader r(bytes, "code stream");
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kCodeStreamMagic, 4) != 0) {
        throw FormatError("code stream: bad magic");
    }
    const uint8_t version = r.u8();
    if (version != kFormatVersion) {
        throw FormatError("code stream: unsupported version " + std::to_string(version));
    }

    GfsqConfig config;
    config.groups = r.u8();
    config.hop = r.u16();
    const int dims = r.u8();
    config.levels.resize(dims);
    for (int i = 0; i < dims; ++i) config.levels[i] = r.u8();
    const uint32_t original_len = r.u32();
    const uint32_t frame_count = r.u32();

    try {
        config.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("code stream: invalid config in header: ") + e.what());
    }
    if (frame_count == 0) throw FormatError("code stream: zero frames");
    const uint64_t expected_frames =
        (static_cast<uint64_t>(original_len) + config.hop - 1) / config.hop;
    if (frame_count != expected_frames) {
        throw FormatError("code stream: frame count inconsistent with original length and hop");
    }

    const int bits = bits_per_index(config);
    const uint64_t total_bits =
        static_cast<uint64_t>(frame_count) * config.groups * bits;
    const size_t payload_len = static_cast<size_t>((total_bits + 7) / 8);
    if (bytes.size() < r.pos + payload_len) {
        throw LengthError("code stream: payload truncated");
    }
    if (bytes.size() > r.pos + payload_len) {
        throw LengthError("code stream: trailing bytes after payload");
    }
    const uint8_t* payload = bytes.data() + r.pos;

    UnpackedCodes result;
    result.original_len = original_len;
    result.codes = CodeGrid(1, config.groups, static_cast<int>(frame_count), config);

    const int64_t size = codebook_size(config);
    size_t bitpos = 0;
    for (uint32_t l = 0; l < frame_count; ++l) {
        for (int g = 0; g < config.groups; ++g) {
            uint32_t value = 0;
            for (int j = 0; j < bits; ++j, ++bitpos) {
                value |= static_cast<uint32_t>((payload[bitpos >> 3] >> (bitpos & 7)) & 1u) << j;
            }
            if (value >= static_cast<uint64_t>(size)) {
                throw DataError("code stream: index " + std::to_string(value) +
                                " outside codebook of " + std::to_string(size));
            }
            result.codes.at(0, g, static_cast<int>(l)) = static_cast<int32_t>(value);
        }
    }
    return result;
}

NamedTensor::NamedTensor(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
    values.assign(static_cast<size_t>(element_count()), 0.0f);
}

int64_t NamedTensor::element_count() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::vector<uint8_t> save_model(const std::vector<NamedTensor>& weights) {
    std::unordered_set<std::string> names;
    for (const NamedTensor& t : weights) {
        if (!names.insert(t.name).second) {
            throw FormatError("model file: duplicate record name '" + t.name + "'");
        }
        if (t.name.empty() || t.name.size() > 65535) {
            throw FormatError("model file: record name length out of range");
        }
        if (t.shape.empty() || t.shape.size() > 255) {
            throw FormatError("model file: record '" + t.name + "' rank out of range");
        }
        for (int d : t.shape) {
            if (d < 1) throw FormatError("model file: record '" + t.name + "' has dim < 1");
        }
        if (t.element_count() != static_cast<int64_t>(t.values.size())) {
            throw FormatError("model file: record '" + t.name +
                              "' value count does not match its shape");
        }
        for (float v : t.values) {
            if (!std::isfinite(v)) {
                throw DomainError("model file: record '" + t.name + "' has non-finite values");
            }
        }
    }

    std::vector<uint8_t> out;
    out.insert(out.end(), kModelFileMagic, kModelFileMagic + 4);
    out.push_back(kFormatVersion);
    for (const NamedTensor& t : weights) {
        put_u16(out, static_cast<uint16_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        out.push_back(0); // dtype f32
        out.push_back(static_cast<uint8_t>(t.shape.size()));
        for (int d : t.shape) put_u32(out, static_cast<uint32_t>(d));
        const size_t payload_start = out.size();
        out.resize(payload_start + t.values.size() * 4);
        std::memcpy(out.data() + payload_start, t.values.data(), t.values.size() * 4);
    }
    return out;
}

std::vector<NamedTensor> load_model(const std::vector<uint8_t>& bytes) {
    Reader r(bytes, "model file");
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kModelFileMagic, 4) != 0) throw FormatError("model file: bad magic");
    const uint8_t version = r.u8();
    if (version != kFormatVersion) {
        throw FormatError("model file: unsupported version " + std::to_string(version));
    }

    std::vector<NamedTensor> out;
    std::unordered_set<std::string> names;
    while (r.pos < bytes.size()) {
        const uint16_t name_len = r.u16();
        NamedTensor t;
        t.name.resize(name_len);
        r.raw(t.name.data(), name_len);
        r.what = "model file record '" + t.name + "'";
        if (!names.insert(t.name).second) {
            throw FormatError("model file: duplicate record name '" + t.name + "'");
        }
        const uint8_t dtype = r.u8();
        if (dtype != 0) {
            throw FormatError("model file: record '" + t.name + "' has unsupported dtype " +
                              std::to_string(dtype));
        }
        const uint8_t rank = r.u8();
        if (rank == 0) throw FormatError("model file: record '" + t.name + "' has rank 0");
        t.shape.resize(rank);
        int64_t count = 1;
        for (int i = 0; i < rank; ++i) {
            const uint32_t d = r.u32();
            if (d == 0 || count > std::numeric_limits<int64_t>::max() / d) {
                throw FormatError("model file: record '" + t.name + "' has invalid dims");
            }
            t.shape[i] = static_cast<int>(d);
            count *= d;
        }
        t.values.resize(static_cast<size_t>(count));
        r.raw(t.values.data(), static_cast<size_t>(count) * 4);
        for (float v : t.values) {
            if (std::isnan(v)) {
                throw FormatError("model file: record '" + t.name + "' contains NaN");
            }
        }
        out.push_back(std::move(t));
    }
    return out;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("write to '" + path + "' failed");
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw Error("cannot open '" + path + "' for reading");
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    if (size > 0) f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw Error("read from '" + path + "' failed");
    return bytes;
}

} // namespace fishcore
