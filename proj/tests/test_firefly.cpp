#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "fishcore/bitstream.hpp"
#include "fishcore/error.hpp"
#include "fishcore/firefly.hpp"
#include "fishcore/gfsq.hpp"
#include "fishcore/rng.hpp"
#include "fishcore/tensor.hpp"

using namespace fishcore;

namespace {

FrameTensorD random_tensor(int b, int c, int l, Rng& rng, double scale = 1.0) {
    FrameTensorD x(b, c, l);
    for (auto& v : x.data) v = scale * rng.uniform(-1.0, 1.0);
    return x;
}

double max_rel_diff(const FrameTensorD& a, const FrameTensorD& b) {
    REQUIRE(a.same_shape(b));
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double denom = std::max({std::abs(a.data[i]), std::abs(b.data[i]), 1.0});
        m = std::max(m, std::abs(a.data[i] - b.data[i]) / denom);
    }
    return m;
}

GfsqConfig make_gfsq(int groups, std::vector<int> levels, int hop) {
    GfsqConfig g;
    g.groups = groups;
    g.levels = std::move(levels);
    g.hop = hop;
    return g;
}

} // namespace

TEST_CASE("separable conv with a box filter matches the direct evaluation") {
    DwsConv1d<double> conv(1, 1, 3, 1, "t");
    conv.depthwise_weight().value = {1.0, 1.0, 1.0};
    conv.pointwise_weight().value = {1.0};
    conv.pointwise_bias().value = {0.0};

    FrameTensorD x(1, 1, 3);
    x.data = {1.0, 2.0, 3.0};
    const FrameTensorD y = conv.apply(x);
    CHECK(y.data == std::vector<double>{3.0, 6.0, 5.0});
}

TEST_CASE("unit impulse depthwise kernel with identity pointwise is the identity") {
    DwsConv1d<double> conv(2, 2, 3, 1, "t");
    conv.depthwise_weight().value = {0.0, 1.0, 0.0, 0.0, 1.0, 0.0};
    conv.pointwise_weight().value = {1.0, 0.0, 0.0, 1.0};

    Rng rng(51);
    const FrameTensorD x = random_tensor(2, 2, 9, rng);
    const FrameTensorD y = conv.apply(x);
    CHECK(y.data == x.data);
}

TEST_CASE("separable weight count is depthwise plus pointwise") {
    DwsConv1d<double> conv(8, 16, 3, 1, "t");
    CHECK(conv.weight_count() == 8 * 3 + 8 * 16);
    CHECK(conv.depthwise_weight().value.size() == 24);
    CHECK(conv.pointwise_weight().value.size() == 128);
}

TEST_CASE("impulse response support spans exactly the receptive field") {
    Rng rng(52);
    for (const auto [kernel, dilation] : {std::pair{3, 1}, {3, 4}, {5, 2}, {7, 3}}) {
        DwsConv1d<double> conv(1, 1, kernel, dilation, "t");
        conv.init_random(rng);
        const int rf = conv.receptive_field();
        CHECK(rf == dilation * (kernel - 1) + 1);

        const int len = 2 * rf + 11;
        const int center = len / 2;
        FrameTensorD x(1, 1, len);
        x.at(0, 0, center) = 1.0;
        const FrameTensorD y = conv.apply(x);

        int lo = len, hi = -1;
        for (int t = 0; t < len; ++t) {
            if (y.at(0, 0, t) != 0.0) {
                lo = std::min(lo, t);
                hi = std::max(hi, t);
            }
        }
        // Random taps are nonzero with probability one, so the support must
        // reach both ends of the window.
        CHECK(hi - lo + 1 == rf);
        CHECK(lo == center - (rf - 1) / 2);
    }
}

TEST_CASE("residual blocks are the identity at initialization") {
    Rng rng(53);
    ResBlock<double> block(3, 3, 2, "t");
    block.init_random(rng); // conv1 random, conv2 zero

    const FrameTensorD x = random_tensor(2, 3, 17, rng);
    const FrameTensorD y = block.apply(x);
    CHECK(y.data == x.data);
}

TEST_CASE("parallel block is the identity at initialization") {
    Rng rng(54);
    ParallelBlock<double> block(4, ParallelBlockSpec{}, "t");
    block.init_random(rng);

    const FrameTensorD x = random_tensor(1, 4, 33, rng);
    const FrameTensorD y = block.apply(x);
    CHECK(max_rel_diff(y, x) <= 1e-12);
}

TEST_CASE("parallel block output is the mean of its branch outputs") {
    Rng rng(55);
    ParallelBlock<double> block(3, ParallelBlockSpec{}, "t");
    block.init_random(rng);
    // Give the zero-initialized second convs real weights so the branches
    // genuinely differ.
    for (int i = 0; i < ParallelBlock<double>::kBranches; ++i) {
        block.branch(i).conv2().init_random(rng);
    }

    const FrameTensorD x = random_tensor(2, 3, 21, rng);
    const FrameTensorD y = block.apply(x);

    FrameTensorD mean(x.batch, x.channels, x.length);
    for (int i = 0; i < ParallelBlock<double>::kBranches; ++i) {
        const FrameTensorD bi = block.branch(i).apply(x);
        for (size_t j = 0; j < mean.data.size(); ++j) mean.data[j] += bi.data[j];
    }
    for (auto& v : mean.data) v /= 3.0;

    CHECK(max_rel_diff(y, mean) <= 1e-12);
}

TEST_CASE("parallel block averages hand-built constant-offset branches") {
    // With conv1 left at zero, branch i reduces to x + bias_i, so the block
    // must produce x + mean(bias).
    ParallelBlock<double> block(1, ParallelBlockSpec{}, "t");
    const double offsets[3] = {0.0, 0.75, 1.5};
    for (int i = 0; i < 3; ++i) {
        block.branch(i).conv2().pointwise_bias().value = {offsets[i]};
    }

    Rng rng(56);
    const FrameTensorD x = random_tensor(1, 1, 13, rng);
    const FrameTensorD y = block.apply(x);
    for (int t = 0; t < x.length; ++t) {
        CHECK(y.at(0, 0, t) == doctest::Approx(x.at(0, 0, t) + 0.75).epsilon(1e-12));
    }
}

TEST_CASE("reference downsampling mean-pools with zero padding") {
    FrameTensorD x(1, 1, 4);
    x.data = {1.0, 3.0, 5.0, 7.0};
    const FrameTensorD y = f_down_reference(x, 2);
    CHECK(y.length == 2);
    CHECK(y.data == std::vector<double>{2.0, 6.0});

    // hop 1 is the identity.
    CHECK(f_down_reference(x, 1).data == x.data);

    // Seven samples at hop 3: the tail block is padded with zeros.
    FrameTensorD z(1, 1, 7);
    z.data = {3.0, 6.0, 9.0, 1.0, 2.0, 3.0, 12.0};
    const FrameTensorD zd = f_down_reference(z, 3);
    CHECK(zd.length == 3);
    CHECK(zd.data == std::vector<double>{6.0, 2.0, 4.0});
    CHECK(downsampled_len(7, 3) == 3);
}

TEST_CASE("reference upsampling repeats frames and truncates") {
    FrameTensorD x(1, 1, 2);
    x.data = {2.0, 6.0};
    const FrameTensorD y = f_up_reference(x, 2, 4);
    CHECK(y.data == std::vector<double>{2.0, 2.0, 6.0, 6.0});

    FrameTensorD three(1, 1, 3);
    three.data = {1.0, 2.0, 3.0};
    CHECK(f_up_reference(three, 3, 7).length == 7);

    CHECK_THROWS_AS(f_up_reference(three, 3, 10), DomainError);
}

TEST_CASE("reference round trip restores constant signals") {
    FrameTensorD x(1, 2, 8);
    for (int c = 0; c < 2; ++c) {
        for (int t = 0; t < 8; ++t) x.at(0, c, t) = 0.5 + c;
    }
    const FrameTensorD back = f_up_reference(f_down_reference(x, 2), 2, 8);
    CHECK(back.data == x.data);
}

TEST_CASE("reference resampling is linear") {
    Rng rng(57);
    const FrameTensorD x = random_tensor(1, 2, 19, rng);
    const FrameTensorD y = random_tensor(1, 2, 19, rng);
    const double a = 0.7, b = -1.3;

    FrameTensorD mix(1, 2, 19);
    for (size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * x.data[i] + b * y.data[i];

    for (int hop : {2, 3}) {
        const FrameTensorD down_mix = f_down_reference(mix, hop);
        const FrameTensorD dx = f_down_reference(x, hop);
        const FrameTensorD dy = f_down_reference(y, hop);
        FrameTensorD expect(1, 2, down_mix.length);
        for (size_t i = 0; i < expect.data.size(); ++i) {
            expect.data[i] = a * dx.data[i] + b * dy.data[i];
        }
        CHECK(max_rel_diff(down_mix, expect) <= 1e-12);

        const int target = down_mix.length * hop;
        const FrameTensorD up_mix = f_up_reference(down_mix, hop, target);
        const FrameTensorD ux = f_up_reference(dx, hop, target);
        const FrameTensorD uy = f_up_reference(dy, hop, target);
        FrameTensorD expect_up(1, 2, target);
        for (size_t i = 0; i < expect_up.data.size(); ++i) {
            expect_up.data[i] = a * ux.data[i] + b * uy.data[i];
        }
        CHECK(max_rel_diff(up_mix, expect_up) <= 1e-12);
    }
}

TEST_CASE("conv-mode resamplers honor the length laws") {
    Rng rng(58);
    Downsampler<double> down(2, 3, ResampleMode::kConv, 7, "t");
    down.init_random(rng);
    Upsampler<double> up(2, 3, ResampleMode::kConv, 7, "t");
    up.init_random(rng);

    const FrameTensorD x = random_tensor(1, 2, 20, rng);
    const FrameTensorD z = down.apply(x);
    CHECK(z.length == 7); // ceil(20 / 3)

    const FrameTensorD y = up.apply(z, 20);
    CHECK(y.length == 20);
    CHECK(y.all_finite());

    CHECK_THROWS_AS(up.apply(z, 22), DomainError);
}

TEST_CASE("identity codec reduces to the bare quantizer") {
    CodecModelConfig config;
    config.in_channels = 2;
    config.hidden = 0;
    config.gfsq = make_gfsq(2, {3}, 1);
    CodecModel model(config);

    Rng rng(59);
    FrameTensor z(1, 2, 40);
    for (auto& v : z.data) v = static_cast<float>(rng.uniform(-3.0, 3.0));

    const CodeGrid direct = gfsq_encode(z, config.gfsq);
    const CodeGrid through = model.encode(z);
    CHECK(through.indices == direct.indices);

    const FrameTensor recon = model.decode(through, z.length);
    const FrameTensor grid = gfsq_decode(direct);
    CHECK(recon.data == grid.data);
}

TEST_CASE("codec shape law under downsampling") {
    CodecModelConfig config;
    config.in_channels = 2;
    config.hidden = 0;
    config.gfsq = make_gfsq(2, {3}, 4);
    CodecModel model(config);

    FrameTensor z(1, 2, 100);
    const CodeGrid codes = model.encode(z);
    CHECK(codes.frames == 25);
    CHECK(model.decode(codes, 100).length == 100);
}

TEST_CASE("codec with conv stacks keeps the end-to-end length contract") {
    CodecModelConfig config;
    config.in_channels = 1;
    config.hidden = 6;
    config.blocks = 1;
    config.kernel = 3;
    config.gfsq = make_gfsq(2, {3, 3}, 3);
    CodecModel model(config);
    Rng rng(60);
    model.init_random(rng);

    FrameTensor z(2, 1, 50);
    for (auto& v : z.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    const CodeGrid codes = model.encode(z);
    CHECK(codes.frames == 17); // ceil(50 / 3)
    const FrameTensor recon = model.decode(codes, 50);
    CHECK(recon.batch == 2);
    CHECK(recon.channels == 1);
    CHECK(recon.length == 50);
    CHECK(recon.all_finite());

    // Mismatched quantizer settings are refused at decode.
    CodeGrid other = codes;
    other.config.hop = 2;
    CHECK_THROWS_AS(model.decode(other, 50), ShapeError);
}

TEST_CASE("codec config JSON round trip") {
    CodecModelConfig config;
    config.in_channels = 1;
    config.hidden = 8;
    config.blocks = 2;
    config.kernel = 7;
    config.block_spec.kernels = {3, 5, 3};
    config.block_spec.dilations = {1, 2, 4};
    config.resample = ResampleMode::kConv;
    config.resample_kernel = 5;
    config.gfsq = make_gfsq(2, {3, 5}, 2);

    const CodecModelConfig back = codec_config_from_json(codec_config_to_json(config));
    CHECK(back.in_channels == config.in_channels);
    CHECK(back.hidden == config.hidden);
    CHECK(back.blocks == config.blocks);
    CHECK(back.kernel == config.kernel);
    CHECK(back.block_spec.kernels == config.block_spec.kernels);
    CHECK(back.block_spec.dilations == config.block_spec.dilations);
    CHECK(back.resample == config.resample);
    CHECK(back.resample_kernel == config.resample_kernel);
    CHECK(back.gfsq.levels == config.gfsq.levels);

    CHECK_THROWS_AS(codec_config_from_json("{}"), FormatError);
}

TEST_CASE("codec weights survive the model-file round trip") {
    CodecModelConfig config;
    config.in_channels = 1;
    config.hidden = 4;
    config.blocks = 1;
    config.kernel = 3;
    config.gfsq = make_gfsq(1, {3, 3}, 2);

    CodecModel model(config);
    Rng rng(61);
    model.init_random(rng);

    FrameTensor z(1, 1, 30);
    for (auto& v : z.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const CodeGrid before = model.encode(z);

    auto tensors = codec_export_tensors(model);
    CodecModel restored(config);
    codec_import_tensors(restored, tensors);
    CHECK(restored.encode(z).indices == before.indices);

    tensors.pop_back();
    CodecModel incomplete(config);
    CHECK_THROWS_AS(codec_import_tensors(incomplete, tensors), FormatError);
}
