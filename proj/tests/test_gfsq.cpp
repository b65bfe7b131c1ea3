#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "fishcore/error.hpp"
#include "fishcore/gfsq.hpp"
#include "fishcore/rng.hpp"
#include "fishcore/tensor.hpp"

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

} // namespace

TEST_CASE("scalar quantization anchor points") {
    auto r = fsq_quantize_dim(0.0, 5);
    CHECK(r.level_index == 2);
    CHECK(r.value == 0.0);

    r = fsq_quantize_dim(10.0, 3);
    CHECK(r.level_index == 2);
    CHECK(r.value == 1.0);

    r = fsq_quantize_dim(-10.0, 3);
    CHECK(r.level_index == 0);
    CHECK(r.value == -1.0);
}

TEST_CASE("scalar quantization rejects bad inputs") {
    CHECK_THROWS_AS(fsq_quantize_dim(std::numeric_limits<double>::quiet_NaN(), 3), DomainError);
    CHECK_THROWS_AS(fsq_quantize_dim(std::numeric_limits<double>::infinity(), 3), DomainError);
    CHECK_THROWS_AS(fsq_quantize_dim(0.5, 4), ConfigError);
    CHECK_THROWS_AS(fsq_quantize_dim(0.5, 1), ConfigError);
}

TEST_CASE("scalar quantization is odd-symmetric and bounded") {
    Rng rng(7);
    for (int levels : {3, 5, 7, 9}) {
        for (int i = 0; i < 2000; ++i) {
            const double v = rng.uniform(-6.0, 6.0);
            const auto pos = fsq_quantize_dim(v, levels);
            const auto neg = fsq_quantize_dim(-v, levels);
            CHECK(neg.value == -pos.value);
            CHECK(neg.level_index == levels - 1 - pos.level_index);
            CHECK(pos.value >= -1.0);
            CHECK(pos.value <= 1.0);
        }
    }
}

TEST_CASE("codebook size is the product of the level counts") {
    CHECK(codebook_size(make_config(1, {3})) == 3);
    CHECK(codebook_size(make_config(1, {3, 5, 5})) == 75);
    CHECK(codebook_size(make_config(2, {3, 3})) == 9);
}

TEST_CASE("config validation rejects malformed level lists") {
    GfsqConfig c;
    c.groups = 1;
    c.levels = {4};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.levels = {};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.levels = {3};
    c.groups = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.groups = 1;
    c.hop = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("grouped encode packs dimensions with dimension 0 least significant") {
    // A zero group slice maps every dimension to the center level 1:
    // k = 1 + 1*3 = 4 for levels [3,3].
    const auto config = make_config(2, {3, 3});
    FrameTensor z(1, 4, 1); // all zeros
    const CodeGrid codes = gfsq_encode(z, config);
    CHECK(codes.batch == 1);
    CHECK(codes.groups == 2);
    CHECK(codes.frames == 1);
    CHECK(codes.at(0, 0, 0) == 4);
    CHECK(codes.at(0, 1, 0) == 4);

    // A saturating scalar hits the top level.
    const auto single = make_config(1, {3});
    FrameTensor s(1, 1, 1);
    s.at(0, 0, 0) = 10.0f;
    CHECK(gfsq_encode(s, single).at(0, 0, 0) == 2);
}

TEST_CASE("grouped encode shape law and channel mismatch") {
    const auto config = make_config(2, {3, 3});
    FrameTensor z(2, 4, 7);
    const CodeGrid codes = gfsq_encode(z, config);
    CHECK(codes.batch == 2);
    CHECK(codes.groups == 2);
    CHECK(codes.frames == 7);

    FrameTensor bad(2, 5, 7);
    CHECK_THROWS_AS(gfsq_encode(bad, config), ShapeError);
}

TEST_CASE("decode of the center index restores the zero vector") {
    const auto config = make_config(1, {3, 3});
    CodeGrid codes(1, 1, 1, config);
    codes.at(0, 0, 0) = 4;
    const FrameTensor z = gfsq_decode(codes);
    CHECK(z.channels == 2);
    CHECK(z.at(0, 0, 0) == 0.0f);
    CHECK(z.at(0, 1, 0) == 0.0f);
}

TEST_CASE("encode of decode is the identity over the whole codebook") {
    const auto config = make_config(1, {3, 5, 5});
    const int size = static_cast<int>(codebook_size(config));
    CodeGrid codes(1, 1, size, config);
    for (int k = 0; k < size; ++k) codes.at(0, 0, k) = k;

    const FrameTensor grid = gfsq_decode(codes);
    const CodeGrid back = gfsq_encode(grid, config);
    for (int k = 0; k < size; ++k) CHECK(back.at(0, 0, k) == k);
}

TEST_CASE("round trips match the scalar grid exactly") {
    const auto config = make_config(2, {3, 5});
    Rng rng(21);
    FrameTensor z(2, 4, 50);
    for (auto& v : z.data) v = static_cast<float>(rng.uniform(-4.0, 4.0));

    const FrameTensor recon = gfsq_decode(gfsq_encode(z, config));
    for (int b = 0; b < z.batch; ++b) {
        for (int g = 0; g < 2; ++g) {
            for (int d = 0; d < 2; ++d) {
                const int c = g * 2 + d;
                for (int l = 0; l < z.length; ++l) {
                    const auto q = fsq_quantize_dim(z.at(b, c, l), config.levels[d]);
                    CHECK(recon.at(b, c, l) == q.value);
                }
            }
        }
    }
}

TEST_CASE("decode then encode is idempotent on random valid grids") {
    const auto config = make_config(3, {3, 3});
    Rng rng(22);
    CodeGrid codes(2, 3, 40, config);
    for (auto& k : codes.indices) k = static_cast<int32_t>(rng.below(9));

    const CodeGrid back = gfsq_encode(gfsq_decode(codes), config);
    CHECK(back.indices == codes.indices);
}

TEST_CASE("decode rejects out-of-range indices") {
    const auto config = make_config(1, {3});
    CodeGrid codes(1, 1, 1, config);
    codes.at(0, 0, 0) = 3;
    CHECK_THROWS_AS(gfsq_decode(codes), DataError);
}

TEST_CASE("utilization counts distinct indices per group") {
    const auto config = make_config(1, {3, 3});

    CodeGrid full(1, 1, 9, config);
    for (int k = 0; k < 9; ++k) full.at(0, 0, k) = k;
    CHECK(utilization(full)[0] == 1.0);

    CodeGrid partial(1, 1, 12, config);
    for (int l = 0; l < 12; ++l) partial.at(0, 0, l) = l % 6;
    CHECK(utilization(partial)[0] == doctest::Approx(6.0 / 9.0).epsilon(1e-9));

    CodeGrid empty;
    CHECK_THROWS_AS(utilization(empty), DomainError);
}

TEST_CASE("uniform random latents use nearly the whole codebook") {
    const auto config = make_config(2, {3, 3});
    Rng rng(23);
    FrameTensor z(1, 4, 20000);
    for (auto& v : z.data) v = static_cast<float>(rng.uniform(-3.0, 3.0));

    const auto per_group = utilization(gfsq_encode(z, config));
    REQUIRE(per_group.size() == 2);
    for (double u : per_group) CHECK(u >= 0.99);
}

TEST_CASE("config JSON round trip") {
    const auto config = make_config(2, {3, 5, 7}, 4);
    const GfsqConfig back = gfsq_config_from_json(gfsq_config_to_json(config));
    CHECK(back.groups == config.groups);
    CHECK(back.levels == config.levels);
    CHECK(back.hop == config.hop);

    CHECK_THROWS_AS(gfsq_config_from_json("not json"), FormatError);
    CHECK_THROWS_AS(gfsq_config_from_json("{\"groups\":1}"), FormatError);
}

TEST_CASE("parallel encode and decode match the serial reference bit for bit") {
    const auto config = make_config(2, {3, 5});
    Rng rng(24);
    FrameTensor z(3, 4, 333);
    for (auto& v : z.data) v = static_cast<float>(rng.uniform(-4.0, 4.0));

    const CodeGrid a = gfsq_encode(z, config);
    const CodeGrid b = ref::gfsq_encode(z, config);
    CHECK(a.indices == b.indices);

    const FrameTensor da = gfsq_decode(a);
    const FrameTensor db = ref::gfsq_decode(a);
    CHECK(da.data == db.data);
}
