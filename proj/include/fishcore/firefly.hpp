#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "fishcore/gfsq.hpp"
#include "fishcore/param.hpp"
#include "fishcore/rng.hpp"
#include "fishcore/tensor.hpp"

namespace fishcore {

// ---------------------------------------------------------------------------
// Depthwise-separable 1-D convolution, stride 1, zero "same" padding.
//
// Stage 1 (depthwise): each channel is filtered independently with its own
// k-tap kernel at the given dilation.  No bias.
// Stage 2 (pointwise): a 1x1 convolution mixing channels, with bias.
//
// Weight count is c_in*k + c_in*c_out, which is what makes the separable
// form cheaper than a dense conv (c_in*c_out*k).
// ---------------------------------------------------------------------------
template <typename T>
class DwsConv1d {
public:
    DwsConv1d(int c_in, int c_out, int kernel, int dilation, const std::string& name);

    // Pure inference path; does not touch caches and is safe to call
    // concurrently on a const model.
    FrameTensorT<T> apply(const FrameTensorT<T>& x) const;

    // Training path: same result as apply() but records the activations
    // needed by backward().
    FrameTensorT<T> forward(const FrameTensorT<T>& x);

    // Accumulates parameter gradients and returns d loss / d input.
    // Must follow a forward() with matching shapes.
    FrameTensorT<T> backward(const FrameTensorT<T>& dy);

    void init_random(Rng& rng);
    // Sets every weight and bias to zero (output is identically zero).
    void init_zero();

    void collect_params(ParamRefs<T>& out);

    int in_channels() const { return c_in_; }
    int out_channels() const { return c_out_; }
    int kernel() const { return kernel_; }
    int dilation() const { return dilation_; }
    // Span of input samples that can influence one output sample.
    int receptive_field() const { return dilation_ * (kernel_ - 1) + 1; }
    int64_t weight_count() const {
        return static_cast<int64_t>(c_in_) * kernel_ +
               static_cast<int64_t>(c_in_) * c_out_;
    }

    Param<T>& depthwise_weight() { return dw_weight_; }
    Param<T>& pointwise_weight() { return pw_weight_; }
    Param<T>& pointwise_bias() { return pw_bias_; }

private:
    int c_in_ = 0;
    int c_out_ = 0;
    int kernel_ = 0;
    int dilation_ = 1;
    Param<T> dw_weight_; // (c_in, k)
    Param<T> pw_weight_; // (c_out, c_in)
    Param<T> pw_bias_;   // (c_out)
    FrameTensorT<T> cached_input_;
    FrameTensorT<T> cached_mid_; // depthwise output, pointwise input
};

// ---------------------------------------------------------------------------
// Residual block: y = x + conv2(silu(conv1(x))).
//
// conv1 carries the block's kernel/dilation; conv2 is a kernel-size-k,
// dilation-1 conv whose weights start at zero so a freshly built block is an
// exact identity map.
// ---------------------------------------------------------------------------
template <typename T>
class ResBlock {
public:
    ResBlock(int channels, int kernel, int dilation, const std::string& name);

    FrameTensorT<T> apply(const FrameTensorT<T>& x) const;
    FrameTensorT<T> forward(const FrameTensorT<T>& x);
    FrameTensorT<T> backward(const FrameTensorT<T>& dy);

    void init_random(Rng& rng); // conv1 random, conv2 stays zero
    void collect_params(ParamRefs<T>& out);

    int channels() const { return conv1_.in_channels(); }
    int receptive_field() const;

    DwsConv1d<T>& conv1() { return conv1_; }
    DwsConv1d<T>& conv2() { return conv2_; }

private:
    DwsConv1d<T> conv1_;
    DwsConv1d<T> conv2_;
    FrameTensorT<T> cached_pre_act_; // conv1 output, before silu
};

// ---------------------------------------------------------------------------
// Parallel block: the elementwise mean of exactly three residual branches,
// each with its own kernel size and dilation so they see the signal at
// different scales.
// ---------------------------------------------------------------------------
struct ParallelBlockSpec {
    std::array<int, 3> kernels{3, 3, 3};
    std::array<int, 3> dilations{1, 3, 9};
};

template <typename T>
class ParallelBlock {
public:
    ParallelBlock(int channels, const ParallelBlockSpec& spec, const std::string& name);

    FrameTensorT<T> apply(const FrameTensorT<T>& x) const;
    FrameTensorT<T> forward(const FrameTensorT<T>& x);
    FrameTensorT<T> backward(const FrameTensorT<T>& dy);

    void init_random(Rng& rng);
    void collect_params(ParamRefs<T>& out);

    static constexpr int kBranches = 3;
    ResBlock<T>& branch(int i) { return branches_[static_cast<size_t>(i)]; }

private:
    std::vector<ResBlock<T>> branches_;
};

// ---------------------------------------------------------------------------
// Temporal resampling by an integer factor r (the codec hop).
//
// Reference mode is parameter-free and linear: f_down mean-pools each block
// of r samples (right-padding with zeros to a multiple of r) and f_up
// repeats each frame r times, truncated to the requested length.  Conv mode
// replaces the pooling with a learned strided depthwise conv and the repeat
// with its exact adjoint (a transposed depthwise conv).
// ---------------------------------------------------------------------------
template <typename T>
FrameTensorT<T> f_down_reference(const FrameTensorT<T>& x, int hop);

template <typename T>
FrameTensorT<T> f_up_reference(const FrameTensorT<T>& x, int hop, int target_len);

// Number of frames produced by f_down for an input of length len.
int64_t downsampled_len(int64_t len, int hop);

enum class ResampleMode { kReference, kConv };

template <typename T>
class Downsampler {
public:
    Downsampler(int channels, int hop, ResampleMode mode, int kernel, const std::string& name);

    FrameTensorT<T> apply(const FrameTensorT<T>& x) const;
    FrameTensorT<T> forward(const FrameTensorT<T>& x);
    FrameTensorT<T> backward(const FrameTensorT<T>& dy);

    void init_random(Rng& rng);
    void collect_params(ParamRefs<T>& out);

    int hop() const { return hop_; }
    ResampleMode mode() const { return mode_; }

private:
    int channels_ = 0;
    int hop_ = 1;
    ResampleMode mode_ = ResampleMode::kReference;
    int kernel_ = 0;
    Param<T> weight_; // (channels, kernel), conv mode only
    FrameTensorT<T> cached_padded_;
    int cached_input_len_ = 0;
};

template <typename T>
class Upsampler {
public:
    Upsampler(int channels, int hop, ResampleMode mode, int kernel, const std::string& name);

    FrameTensorT<T> apply(const FrameTensorT<T>& x, int target_len) const;
    FrameTensorT<T> forward(const FrameTensorT<T>& x, int target_len);
    FrameTensorT<T> backward(const FrameTensorT<T>& dy);

    void init_random(Rng& rng);
    void collect_params(ParamRefs<T>& out);

    int hop() const { return hop_; }
    ResampleMode mode() const { return mode_; }

private:
    int channels_ = 0;
    int hop_ = 1;
    ResampleMode mode_ = ResampleMode::kReference;
    int kernel_ = 0;
    Param<T> weight_; // (channels, kernel), conv mode only
    FrameTensorT<T> cached_input_;
    int cached_target_len_ = 0;
};

// ---------------------------------------------------------------------------
// Codec model: conv encoder -> f_down -> grouped quantizer -> f_up -> conv
// decoder.  With hidden == 0 the conv stacks vanish and, in reference
// resampling mode with hop 1, encode/decode reduce exactly to the bare
// quantizer pair.
// ---------------------------------------------------------------------------
struct CodecModelConfig {
    int in_channels = 1;
    int hidden = 0; // 0 = no conv stacks (identity codec around the quantizer)
    int blocks = 1; // ParallelBlocks per stack when hidden > 0
    int kernel = 5; // kernel for the in/out projection convs
    ParallelBlockSpec block_spec;
    ResampleMode resample = ResampleMode::kReference;
    int resample_kernel = 0; // conv mode only; 0 = 2*hop+1
    GfsqConfig gfsq;

    void validate() const;
};

CodecModelConfig codec_config_from_json(const std::string& text);
std::string codec_config_to_json(const CodecModelConfig& config);

template <typename T>
class CodecModelT {
public:
    explicit CodecModelT(const CodecModelConfig& config);

    const CodecModelConfig& config() const { return config_; }

    void init_random(Rng& rng);

    // Inference paths (pure).
    FrameTensorT<T> encode_latent(const FrameTensorT<T>& x) const;
    CodeGrid encode(const FrameTensorT<T>& x) const;
    FrameTensorT<T> decode(const CodeGrid& codes, int target_len) const;

    // Training path: full round trip through the quantizer with the
    // straight-through surrogate recorded for backward().
    FrameTensorT<T> forward_train(const FrameTensorT<T>& x, CodeGrid* codes_out = nullptr);
    void backward(const FrameTensorT<T>& d_recon);

    ParamRefs<T> params();
    void zero_grads();

private:
    FrameTensorT<T> encoder_pure(const FrameTensorT<T>& x) const;
    FrameTensorT<T> decoder_pure(const FrameTensorT<T>& z, int target_len) const;
    FrameTensorT<T> encoder_train(const FrameTensorT<T>& x);
    FrameTensorT<T> decoder_train(const FrameTensorT<T>& z, int target_len);

    CodecModelConfig config_;
    std::vector<DwsConv1d<T>> enc_convs_;       // in-proj, out-proj (empty when hidden == 0)
    std::vector<ParallelBlock<T>> enc_blocks_;
    Downsampler<T> down_;
    Upsampler<T> up_;
    std::vector<DwsConv1d<T>> dec_convs_;
    std::vector<ParallelBlock<T>> dec_blocks_;
    FrameTensorT<T> cached_ste_factor_; // d tanh / d latent at the quantizer input
};

using CodecModel = CodecModelT<float>;
using CodecModelD = CodecModelT<double>;

// Model file round trip: every parameter as one named tensor (values cast to
// 32-bit on save).
template <typename T>
std::vector<struct NamedTensor> codec_export_tensors(CodecModelT<T>& model);

template <typename T>
void codec_import_tensors(CodecModelT<T>& model, const std::vector<struct NamedTensor>& tensors);

} // namespace fishcore
