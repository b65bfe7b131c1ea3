#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "fishcore/bitstream.hpp"
#include "fishcore/error.hpp"
#include "fishcore/gfsq.hpp"
#include "fishcore/rng.hpp"

using namespace fishcore;

namespace {

GfsqConfig make_config(int groups, std::vector<int> levels, int hop = 1) {
    GfsqConfig c;
    c.groups = groups;
    c.levels = std::move(levels);
    c.hop = hop;
    c.validate();
    return c;
}

CodeGrid random_codes(const GfsqConfig& config, int frames, Rng& rng) {
    CodeGrid codes(1, config.groups, frames, config);
    const auto size = static_cast<uint64_t>(codebook_size(config));
    for (auto& k : codes.indices) k = static_cast<int32_t>(rng.below(size));
    return codes;
}

} // namespace

TEST_CASE("index width is the ceiling log of the codebook size") {
    CHECK(bits_per_index(make_config(1, {3, 5, 5})) == 7); // 75 codewords
    CHECK(bits_per_index(make_config(1, {3, 3})) == 4);    // 9 codewords
    CHECK(bits_per_index(make_config(1, {3})) == 2);
}

TEST_CASE("header size follows the declared field widths") {
    // magic 4 + version 1 + groups 1 + hop 2 + dims 1 + levels d + len 4 + frames 4.
    CHECK(header_bytes(make_config(2, {3, 3})) == 19);
    CHECK(header_bytes(make_config(2, {3, 5, 5})) == 20);
}

TEST_CASE("payload bits follow the accounting formula exactly") {
    const auto config = make_config(2, {3, 5, 5}, 2);
    Rng rng(41);
    const int frames = 13;
    const auto codes = random_codes(config, frames, rng);
    CHECK(payload_bits(codes) == static_cast<int64_t>(1) * 2 * frames * 7);

    // One frame of two 7-bit indices packs into exactly two payload bytes.
    const auto one = random_codes(config, 1, rng);
    const auto bytes = pack_codes(one, 2);
    CHECK(static_cast<int>(bytes.size()) == header_bytes(config) + 2);
}

TEST_CASE("pack and unpack are exact inverses") {
    const auto config = make_config(3, {3, 3}, 4);
    Rng rng(42);
    const int original_len = 41; // 11 frames at hop 4
    const auto codes = random_codes(config, 11, rng);

    const auto bytes = pack_codes(codes, original_len);
    const auto back = unpack_codes(bytes);
    CHECK(back.original_len == static_cast<uint32_t>(original_len));
    CHECK(back.codes.indices == codes.indices);
    CHECK(back.codes.config.groups == config.groups);
    CHECK(back.codes.config.levels == config.levels);
    CHECK(back.codes.config.hop == config.hop);

    // Repacking the unpacked grid reproduces the byte stream bit for bit.
    CHECK(pack_codes(back.codes, back.original_len) == bytes);
}

TEST_CASE("pack validates the frame accounting and batch") {
    const auto config = make_config(1, {3}, 4);
    Rng rng(43);
    const auto codes = random_codes(config, 11, rng);
    // 11 frames at hop 4 cover original lengths 41..44 only.
    CHECK_THROWS_AS(pack_codes(codes, 20), DataError);

    CodeGrid batched(2, 1, 4, config);
    CHECK_THROWS_AS(pack_codes(batched, 16), DataError);
}

TEST_CASE("corrupt streams are rejected without partial results") {
    const auto config = make_config(2, {3, 5, 5}, 1);
    Rng rng(44);
    auto bytes = pack_codes(random_codes(config, 5, rng), 5);

    auto bad_magic = bytes;
    bad_magic[0] ^= 0xff;
    CHECK_THROWS_AS(unpack_codes(bad_magic), FormatError);

    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(unpack_codes(truncated), LengthError);

    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(unpack_codes(trailing), LengthError);
}

TEST_CASE("out-of-range indices surface as data errors after unpack") {
    // 75 codewords in 7 bits leaves indices 75..127 representable but invalid.
    const auto config = make_config(1, {3, 5, 5}, 1);
    CodeGrid codes(1, 1, 1, config);
    codes.at(0, 0, 0) = 0;
    auto bytes = pack_codes(codes, 1);
    bytes[static_cast<size_t>(header_bytes(config))] = 100;
    CHECK_THROWS_AS(unpack_codes(bytes), DataError);
}

TEST_CASE("randomized round-trip fuzz") {
    Rng rng(45);
    const int odd_levels[] = {3, 5, 7, 9};
    for (int iter = 0; iter < 1000; ++iter) {
        GfsqConfig config;
        config.groups = 1 + static_cast<int>(rng.below(4));
        const int dims = 1 + static_cast<int>(rng.below(3));
        for (int d = 0; d < dims; ++d) {
            config.levels.push_back(odd_levels[rng.below(4)]);
        }
        config.hop = 1 + static_cast<int>(rng.below(4));
        config.validate();

        const int frames = 1 + static_cast<int>(rng.below(50));
        // Any original length that rounds up to `frames` blocks is valid.
        const int slack = static_cast<int>(rng.below(static_cast<uint64_t>(config.hop)));
        const uint32_t original_len =
            static_cast<uint32_t>(frames * config.hop - slack);

        const auto codes = random_codes(config, frames, rng);
        const auto bytes = pack_codes(codes, original_len);
        const auto back = unpack_codes(bytes);

        REQUIRE(back.codes.indices == codes.indices);
        REQUIRE(back.original_len == original_len);
        REQUIRE(pack_codes(back.codes, back.original_len) == bytes);
    }
}

TEST_CASE("model files round trip bit for bit") {
    Rng rng(46);
    std::vector<NamedTensor> weights;
    weights.emplace_back("layer.weight", std::vector<int>{4, 3});
    weights.emplace_back("layer.bias", std::vector<int>{4});
    for (auto& t : weights) {
        for (auto& v : t.values) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    }

    const auto bytes = save_model(weights);
    const auto loaded = load_model(bytes);
    REQUIRE(loaded.size() == weights.size());
    for (size_t i = 0; i < weights.size(); ++i) {
        CHECK(loaded[i].name == weights[i].name);
        CHECK(loaded[i].shape == weights[i].shape);
        CHECK(loaded[i].values == weights[i].values);
    }
    CHECK(save_model(loaded) == bytes);
}

TEST_CASE("empty weight sets load back as empty") {
    const auto bytes = save_model({});
    CHECK(load_model(bytes).empty());
}

TEST_CASE("model file validation") {
    NamedTensor t("w", {2, 2});
    t.values = {1.0f, 2.0f, 3.0f, 4.0f};

    SUBCASE("duplicate names are rejected") {
        CHECK_THROWS_AS(save_model({t, t}), FormatError);
    }
    SUBCASE("non-finite values are rejected on save") {
        auto bad = t;
        bad.values[1] = std::numeric_limits<float>::infinity();
        CHECK_THROWS_AS(save_model({bad}), DomainError);
    }
    SUBCASE("NaN payloads are rejected on load") {
        auto bytes = save_model({t});
        const float nan = std::numeric_limits<float>::quiet_NaN();
        std::memcpy(bytes.data() + bytes.size() - sizeof(float), &nan, sizeof(float));
        CHECK_THROWS_AS(load_model(bytes), FormatError);
    }
    SUBCASE("truncated record payloads name the record") {
        auto bytes = save_model({t});
        bytes.resize(bytes.size() - 6);
        try {
            load_model(bytes);
            FAIL("expected a length error");
        } catch (const LengthError& e) {
            CHECK(std::string(e.what()).find("'w'") != std::string::npos);
        }
    }
    SUBCASE("bad magic is rejected") {
        auto bytes = save_model({t});
        bytes[1] ^= 0x01;
        CHECK_THROWS_AS(load_model(bytes), FormatError);
    }
}

TEST_CASE("file helpers round trip and report missing paths") {
    const std::string path = "/tmp/fishcore_test_bitstream.bin";
    const std::vector<uint8_t> payload{1, 2, 3, 250};
    write_file(path, payload);
    CHECK(read_file(path) == payload);
    CHECK_THROWS_AS(read_file("/tmp/fishcore_nonexistent_path.bin"), Error);
}
