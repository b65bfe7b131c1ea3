#include "fishcore/firefly.hpp"

#include <cmath>

#include <json.hpp>

#include "fishcore/error.hpp"
#include "fishcore/kernels.hpp"
#include "fishcore/model_io.hpp"

namespace fishcore {

namespace {

void check_conv_geometry(int c_in, int c_out, int kernel, int dilation) {
    if (c_in < 1 || c_out < 1) {
        throw ConfigError("conv: channel counts must be positive");
    }
    if (kernel < 1 || kernel % 2 == 0) {
        throw ConfigError("conv: kernel size must be odd and positive, got " +
                          std::to_string(kernel));
    }
    if (dilation < 1) {
        throw ConfigError("conv: dilation must be positive, got " + std::to_string(dilation));
    }
}

template <typename T>
void check_input(const FrameTensorT<T>& x, int channels, const char* who) {
    if (x.channels != channels) {
        throw ShapeError(std::string(who) + ": expected " + std::to_string(channels) +
                         " channels, got " + std::to_string(x.channels));
    }
}

} // namespace

// ---------------------------------------------------------------------------
// DwsConv1d
// ---------------------------------------------------------------------------

template <typename T>
DwsConv1d<T>::DwsConv1d(int c_in, int c_out, int kernel, int dilation, const std::string& name)
    : c_in_(c_in), c_out_(c_out), kernel_(kernel), dilation_(dilation) {
    check_conv_geometry(c_in, c_out, kernel, dilation);
    dw_weight_ = Param<T>(name + ".depthwise.weight", {c_in, kernel});
    pw_weight_ = Param<T>(name + ".pointwise.weight", {c_out, c_in});
    pw_bias_ = Param<T>(name + ".pointwise.bias", {c_out});
}

template <typename T>
FrameTensorT<T> DwsConv1d<T>::apply(const FrameTensorT<T>& x) const {
    check_input(x, c_in_, "DwsConv1d");
    FrameTensorT<T> mid(x.batch, c_in_, x.length);
    kernels::depthwise_conv1d(x.data.data(), x.batch * c_in_, c_in_, x.length,
                              dw_weight_.value.data(), kernel_, dilation_, mid.data.data());
    FrameTensorT<T> y(x.batch, c_out_, x.length);
    kernels::pointwise_conv1d(mid.data.data(), x.batch, c_in_, x.length,
                              pw_weight_.value.data(), pw_bias_.value.data(), c_out_,
                              y.data.data());
    return y;
}

template <typename T>
FrameTensorT<T> DwsConv1d<T>::forward(const FrameTensorT<T>& x) {
    check_input(x, c_in_, "DwsConv1d");
    cached_input_ = x;
    cached_mid_ = FrameTensorT<T>(x.batch, c_in_, x.length);
    kernels::depthwise_conv1d(x.data.data(), x.batch * c_in_, c_in_, x.length,
                              dw_weight_.value.data(), kernel_, dilation_,
                              cached_mid_.data.data());
    FrameTensorT<T> y(x.batch, c_out_, x.length);
    kernels::pointwise_conv1d(cached_mid_.data.data(), x.batch, c_in_, x.length,
                              pw_weight_.value.data(), pw_bias_.value.data(), c_out_,
                              y.data.data());
    return y;
}

template <typename T>
FrameTensorT<T> DwsConv1d<T>::backward(const FrameTensorT<T>& dy) {
    if (cached_input_.size() == 0) {
        throw TrainError("DwsConv1d::backward called before forward");
    }
    const int batch = cached_input_.batch;
    const int len = cached_input_.length;
    if (dy.batch != batch || dy.channels != c_out_ || dy.length != len) {
        throw ShapeError("DwsConv1d::backward: gradient shape does not match forward output");
    }

    FrameTensorT<T> d_mid(batch, c_in_, len);
    kernels::pointwise_conv1d_grad_input(dy.data.data(), batch, c_in_, len,
                                         pw_weight_.value.data(), c_out_, d_mid.data.data());
    kernels::pointwise_conv1d_grad_weight(cached_mid_.data.data(), dy.data.data(), batch, c_in_,
                                          len, c_out_, pw_weight_.grad.data(),
                                          pw_bias_.grad.data());

    FrameTensorT<T> dx(batch, c_in_, len);
    kernels::depthwise_conv1d_grad_input(d_mid.data.data(), batch * c_in_, c_in_, len,
                                         dw_weight_.value.data(), kernel_, dilation_,
                                         dx.data.data());
    kernels::depthwise_conv1d_grad_weight(cached_input_.data.data(), d_mid.data.data(), batch,
                                          c_in_, len, kernel_, dilation_,
                                          dw_weight_.grad.data());
    return dx;
}

template <typename T>
void DwsConv1d<T>::init_random(Rng& rng) {
    const T dw_scale = T(1) / std::sqrt(static_cast<T>(kernel_));
    for (T& v : dw_weight_.value) v = static_cast<T>(rng.normal(0.0, 1.0)) * dw_scale;
    const T pw_scale = T(1) / std::sqrt(static_cast<T>(c_in_));
    for (T& v : pw_weight_.value) v = static_cast<T>(rng.normal(0.0, 1.0)) * pw_scale;
    std::fill(pw_bias_.value.begin(), pw_bias_.value.end(), T(0));
}

template <typename T>
void DwsConv1d<T>::init_zero() {
    std::fill(dw_weight_.value.begin(), dw_weight_.value.end(), T(0));
    std::fill(pw_weight_.value.begin(), pw_weight_.value.end(), T(0));
    std::fill(pw_bias_.value.begin(), pw_bias_.value.end(), T(0));
}

template <typename T>
void DwsConv1d<T>::collect_params(ParamRefs<T>& out) {
    out.push_back(&dw_weight_);
    out.push_back(&pw_weight_);
    out.push_back(&pw_bias_);
}

// ---------------------------------------------------------------------------
// ResBlock
// ---------------------------------------------------------------------------

template <typename T>
ResBlock<T>::ResBlock(int channels, int kernel, int dilation, const std::string& name)
    : conv1_(channels, channels, kernel, dilation, name + ".conv1"),
      conv2_(channels, channels, kernel, 1, name + ".conv2") {
    // conv2 weights start at zero (Param zero-fills), so the block is an
    // exact identity until training moves it.
}

template <typename T>
FrameTensorT<T> ResBlock<T>::apply(const FrameTensorT<T>& x) const {
    FrameTensorT<T> pre = conv1_.apply(x);
    for (T& v : pre.data) v = kernels::silu(v);
    FrameTensorT<T> branch = conv2_.apply(pre);
    for (size_t i = 0; i < branch.data.size(); ++i) branch.data[i] += x.data[i];
    return branch;
}

template <typename T>
FrameTensorT<T> ResBlock<T>::forward(const FrameTensorT<T>& x) {
    cached_pre_act_ = conv1_.forward(x);
    FrameTensorT<T> act = cached_pre_act_;
    for (T& v : act.data) v = kernels::silu(v);
    FrameTensorT<T> y = conv2_.forward(act);
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += x.data[i];
    return y;
}

template <typename T>
FrameTensorT<T> ResBlock<T>::backward(const FrameTensorT<T>& dy) {
    FrameTensorT<T> d_act = conv2_.backward(dy);
    for (size_t i = 0; i < d_act.data.size(); ++i) {
        d_act.data[i] *= kernels::silu_grad(cached_pre_act_.data[i]);
    }
    FrameTensorT<T> dx = conv1_.backward(d_act);
    for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dy.data[i];
    return dx;
}

template <typename T>
void ResBlock<T>::init_random(Rng& rng) {
    conv1_.init_random(rng);
    conv2_.init_zero();
}

template <typename T>
void ResBlock<T>::collect_params(ParamRefs<T>& out) {
    conv1_.collect_params(out);
    conv2_.collect_params(out);
}

template <typename T>
int ResBlock<T>::receptive_field() const {
    return conv1_.receptive_field() + conv2_.receptive_field() - 1;
}

// ---------------------------------------------------------------------------
// ParallelBlock
// ---------------------------------------------------------------------------

template <typename T>
ParallelBlock<T>::ParallelBlock(int channels, const ParallelBlockSpec& spec,
                                const std::string& name) {
    branches_.reserve(kBranches);
    for (int i = 0; i < kBranches; ++i) {
        branches_.emplace_back(channels, spec.kernels[static_cast<size_t>(i)],
                               spec.dilations[static_cast<size_t>(i)],
                               name + ".branch" + std::to_string(i));
    }
}

template <typename T>
FrameTensorT<T> ParallelBlock<T>::apply(const FrameTensorT<T>& x) const {
    FrameTensorT<T> sum = branches_[0].apply(x);
    for (size_t b = 1; b < branches_.size(); ++b) {
        FrameTensorT<T> y = branches_[b].apply(x);
        for (size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += y.data[i];
    }
    const T scale = T(1) / static_cast<T>(kBranches);
    for (T& v : sum.data) v *= scale;
    return sum;
}

template <typename T>
FrameTensorT<T> ParallelBlock<T>::forward(const FrameTensorT<T>& x) {
    FrameTensorT<T> sum = branches_[0].forward(x);
    for (size_t b = 1; b < branches_.size(); ++b) {
        FrameTensorT<T> y = branches_[b].forward(x);
        for (size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += y.data[i];
    }
    const T scale = T(1) / static_cast<T>(kBranches);
    for (T& v : sum.data) v *= scale;
    return sum;
}

template <typename T>
FrameTensorT<T> ParallelBlock<T>::backward(const FrameTensorT<T>& dy) {
    FrameTensorT<T> scaled = dy;
    const T scale = T(1) / static_cast<T>(kBranches);
    for (T& v : scaled.data) v *= scale;
    FrameTensorT<T> dx = branches_[0].backward(scaled);
    for (size_t b = 1; b < branches_.size(); ++b) {
        FrameTensorT<T> d = branches_[b].backward(scaled);
        for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += d.data[i];
    }
    return dx;
}

template <typename T>
void ParallelBlock<T>::init_random(Rng& rng) {
    for (auto& b : branches_) b.init_random(rng);
}

template <typename T>
void ParallelBlock<T>::collect_params(ParamRefs<T>& out) {
    for (auto& b : branches_) b.collect_params(out);
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

int64_t downsampled_len(int64_t len, int hop) {
    return (len + hop - 1) / hop;
}

template <typename T>
FrameTensorT<T> f_down_reference(const FrameTensorT<T>& x, int hop) {
    if (hop < 1) throw ConfigError("f_down: hop must be positive");
    const int len_down = static_cast<int>(downsampled_len(x.length, hop));
    FrameTensorT<T> y(x.batch, x.channels, len_down);
    const T inv = T(1) / static_cast<T>(hop);
    for (int b = 0; b < x.batch; ++b) {
        for (int c = 0; c < x.channels; ++c) {
            const T* xr = x.row(b, c);
            T* yr = y.row(b, c);
            for (int u = 0; u < len_down; ++u) {
                T acc = T(0);
                const int hi = std::min((u + 1) * hop, x.length);
                for (int s = u * hop; s < hi; ++s) acc += xr[s];
                yr[u] = acc * inv; // zeros pad the final partial block
            }
        }
    }
    return y;
}

template <typename T>
FrameTensorT<T> f_up_reference(const FrameTensorT<T>& x, int hop, int target_len) {
    if (hop < 1) throw ConfigError("f_up: hop must be positive");
    if (target_len < 1) throw DomainError("f_up: target length must be positive");
    const int64_t full = static_cast<int64_t>(x.length) * hop;
    if (target_len > full) {
        throw DomainError("f_up: target length " + std::to_string(target_len) +
                          " exceeds frames*hop = " + std::to_string(full));
    }
    FrameTensorT<T> y(x.batch, x.channels, target_len);
    for (int b = 0; b < x.batch; ++b) {
        for (int c = 0; c < x.channels; ++c) {
            const T* xr = x.row(b, c);
            T* yr = y.row(b, c);
            for (int t = 0; t < target_len; ++t) yr[t] = xr[t / hop];
        }
    }
    return y;
}

namespace {

// Taps that make the strided conv reproduce the mean pool (and the transposed
// conv the repeat): weight 1/hop resp. 1 on the block [k/2, k/2 + hop).
template <typename T>
void fill_resample_taps(std::vector<T>& w, int channels, int k, int hop, T tap, Rng& rng,
                        T noise) {
    const int kh = k / 2;
    for (int c = 0; c < channels; ++c) {
        for (int j = 0; j < k; ++j) {
            T v = (j >= kh && j < kh + hop) ? tap : T(0);
            w[static_cast<size_t>(c) * k + j] = v + static_cast<T>(rng.normal(0.0, 1.0)) * noise;
        }
    }
}

} // namespace

template <typename T>
Downsampler<T>::Downsampler(int channels, int hop, ResampleMode mode, int kernel,
                            const std::string& name)
    : channels_(channels), hop_(hop), mode_(mode), kernel_(kernel) {
    if (channels < 1) throw ConfigError("Downsampler: channels must be positive");
    if (hop < 1) throw ConfigError("Downsampler: hop must be positive");
    if (mode == ResampleMode::kConv) {
        if (kernel < hop || kernel % 2 == 0) {
            throw ConfigError("Downsampler: conv kernel must be odd and cover one hop");
        }
        weight_ = Param<T>(name + ".weight", {channels, kernel});
    }
}

template <typename T>
FrameTensorT<T> Downsampler<T>::apply(const FrameTensorT<T>& x) const {
    check_input(x, channels_, "Downsampler");
    if (mode_ == ResampleMode::kReference) return f_down_reference(x, hop_);
    const int len_down = static_cast<int>(downsampled_len(x.length, hop_));
    const int len_pad = len_down * hop_;
    FrameTensorT<T> padded(x.batch, channels_, len_pad);
    for (int b = 0; b < x.batch; ++b) {
        for (int c = 0; c < channels_; ++c) {
            std::copy(x.row(b, c), x.row(b, c) + x.length, padded.row(b, c));
        }
    }
    FrameTensorT<T> y(x.batch, channels_, len_down);
    kernels::strided_dw_conv1d(padded.data.data(), x.batch * channels_, channels_, len_pad,
                               weight_.value.data(), kernel_, hop_, len_down, y.data.data());
    return y;
}

template <typename T>
FrameTensorT<T> Downsampler<T>::forward(const FrameTensorT<T>& x) {
    check_input(x, channels_, "Downsampler");
    cached_input_len_ = x.length;
    if (mode_ == ResampleMode::kReference) {
        cached_padded_ = FrameTensorT<T>();
        return f_down_reference(x, hop_);
    }
    const int len_down = static_cast<int>(downsampled_len(x.length, hop_));
    const int len_pad = len_down * hop_;
    cached_padded_ = FrameTensorT<T>(x.batch, channels_, len_pad);
    for (int b = 0; b < x.batch; ++b) {
        for (int c = 0; c < channels_; ++c) {
            std::copy(x.row(b, c), x.row(b, c) + x.length, cached_padded_.row(b, c));
        }
    }
    FrameTensorT<T> y(x.batch, channels_, len_down);
    kernels::strided_dw_conv1d(cached_padded_.data.data(), x.batch * channels_, channels_,
                               len_pad, weight_.value.data(), kernel_, hop_, len_down,
                               y.data.data());
    return y;
}

template <typename T>
FrameTensorT<T> Downsampler<T>::backward(const FrameTensorT<T>& dy) {
    if (cached_input_len_ == 0) {
        throw TrainError("Downsampler::backward called before forward");
    }
    const int len = cached_input_len_;
    const int len_down = static_cast<int>(downsampled_len(len, hop_));
    if (dy.channels != channels_ || dy.length != len_down) {
        throw ShapeError("Downsampler::backward: gradient shape does not match forward output");
    }
    FrameTensorT<T> dx(dy.batch, channels_, len);
    if (mode_ == ResampleMode::kReference) {
        const T inv = T(1) / static_cast<T>(hop_);
        for (int b = 0; b < dy.batch; ++b) {
            for (int c = 0; c < channels_; ++c) {
                const T* dyr = dy.row(b, c);
                T* dxr = dx.row(b, c);
                for (int s = 0; s < len; ++s) dxr[s] = dyr[s / hop_] * inv;
            }
        }
        return dx;
    }
    const int len_pad = len_down * hop_;
    FrameTensorT<T> dpad(dy.batch, channels_, len_pad);
    kernels::strided_dw_conv1d_grad_input(dy.data.data(), dy.batch * channels_, channels_,
                                          len_pad, weight_.value.data(), kernel_, hop_,
                                          len_down, dpad.data.data());
    kernels::strided_dw_conv1d_grad_weight(cached_padded_.data.data(), dy.data.data(), dy.batch,
                                           channels_, len_pad, kernel_, hop_, len_down,
                                           weight_.grad.data());
    for (int b = 0; b < dy.batch; ++b) {
        for (int c = 0; c < channels_; ++c) {
            std::copy(dpad.row(b, c), dpad.row(b, c) + len, dx.row(b, c));
        }
    }
    return dx;
}

template <typename T>
void Downsampler<T>::init_random(Rng& rng) {
    if (mode_ != ResampleMode::kConv) return;
    fill_resample_taps(weight_.value, channels_, kernel_, hop_,
                       T(1) / static_cast<T>(hop_), rng, T(0.01));
}

template <typename T>
void Downsampler<T>::collect_params(ParamRefs<T>& out) {
    if (mode_ == ResampleMode::kConv) out.push_back(&weight_);
}

template <typename T>
Upsampler<T>::Upsampler(int channels, int hop, ResampleMode mode, int kernel,
                        const std::string& name)
    : channels_(channels), hop_(hop), mode_(mode), kernel_(kernel) {
    if (channels < 1) throw ConfigError("Upsampler: channels must be positive");
    if (hop < 1) throw ConfigError("Upsampler: hop must be positive");
    if (mode == ResampleMode::kConv) {
        if (kernel < hop || kernel % 2 == 0) {
            throw ConfigError("Upsampler: conv kernel must be odd and cover one hop");
        }
        weight_ = Param<T>(name + ".weight", {channels, kernel});
    }
}

template <typename T>
FrameTensorT<T> Upsampler<T>::apply(const FrameTensorT<T>& x, int target_len) const {
    check_input(x, channels_, "Upsampler");
    if (mode_ == ResampleMode::kReference) return f_up_reference(x, hop_, target_len);
    if (target_len < 1) throw DomainError("Upsampler: target length must be positive");
    const int len_up = x.length * hop_;
    if (target_len > len_up) {
        throw DomainError("Upsampler: target length " + std::to_string(target_len) +
                          " exceeds frames*hop = " + std::to_string(len_up));
    }
    FrameTensorT<T> full(x.batch, channels_, len_up);
    kernels::transposed_dw_conv1d(x.data.data(), x.batch * channels_, channels_, x.length,
                                  weight_.value.data(), kernel_, hop_, full.data.data());
    if (target_len == len_up) return full;
    FrameTensorT<T> y(x.batch, channels_, target_len);
    for (int b = 0; b < x.batch; ++b) {
        for (int c = 0; c < channels_; ++c) {
            std::copy(full.row(b, c), full.row(b, c) + target_len, y.row(b, c));
        }
    }
    return y;
}

template <typename T>
FrameTensorT<T> Upsampler<T>::forward(const FrameTensorT<T>& x, int target_len) {
    cached_input_ = x;
    cached_target_len_ = target_len;
    return apply(x, target_len);
}

template <typename T>
FrameTensorT<T> Upsampler<T>::backward(const FrameTensorT<T>& dy) {
    if (cached_input_.size() == 0) {
        throw TrainError("Upsampler::backward called before forward");
    }
    if (dy.channels != channels_ || dy.length != cached_target_len_) {
        throw ShapeError("Upsampler::backward: gradient shape does not match forward output");
    }
    const int len_down = cached_input_.length;
    FrameTensorT<T> dx(dy.batch, channels_, len_down);
    if (mode_ == ResampleMode::kReference) {
        for (int b = 0; b < dy.batch; ++b) {
            for (int c = 0; c < channels_; ++c) {
                const T* dyr = dy.row(b, c);
                T* dxr = dx.row(b, c);
                for (int u = 0; u < len_down; ++u) {
                    T acc = T(0);
                    const int hi = std::min((u + 1) * hop_, cached_target_len_);
                    for (int t = u * hop_; t < hi; ++t) acc += dyr[t];
                    dxr[u] = acc;
                }
            }
        }
        return dx;
    }
    const int len_up = len_down * hop_;
    FrameTensorT<T> dfull(dy.batch, channels_, len_up);
    for (int b = 0; b < dy.batch; ++b) {
        for (int c = 0; c < channels_; ++c) {
            std::copy(dy.row(b, c), dy.row(b, c) + cached_target_len_, dfull.row(b, c));
        }
    }
    kernels::transposed_dw_conv1d_grad_input(dfull.data.data(), dy.batch * channels_, channels_,
                                             len_down, weight_.value.data(), kernel_, hop_,
                                             dx.data.data());
    kernels::transposed_dw_conv1d_grad_weight(cached_input_.data.data(), dfull.data.data(),
                                              dy.batch, channels_, len_down, kernel_, hop_,
                                              weight_.grad.data());
    return dx;
}

template <typename T>
void Upsampler<T>::init_random(Rng& rng) {
    if (mode_ != ResampleMode::kConv) return;
    fill_resample_taps(weight_.value, channels_, kernel_, hop_, T(1), rng, T(0.01));
}

template <typename T>
void Upsampler<T>::collect_params(ParamRefs<T>& out) {
    if (mode_ == ResampleMode::kConv) out.push_back(&weight_);
}

// ---------------------------------------------------------------------------
// CodecModelConfig
// ---------------------------------------------------------------------------

void CodecModelConfig::validate() const {
    if (in_channels < 1) throw ConfigError("codec: in_channels must be positive");
    if (hidden < 0) throw ConfigError("codec: hidden must be non-negative");
    if (hidden > 0 && blocks < 1) throw ConfigError("codec: blocks must be positive");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("codec: kernel must be odd");
    for (int k : block_spec.kernels) {
        if (k < 1 || k % 2 == 0) throw ConfigError("codec: branch kernels must be odd");
    }
    for (int d : block_spec.dilations) {
        if (d < 1) throw ConfigError("codec: branch dilations must be positive");
    }
    if (resample_kernel != 0 && (resample_kernel < 1 || resample_kernel % 2 == 0)) {
        throw ConfigError("codec: resample_kernel must be odd (or 0 for the default)");
    }
    gfsq.validate();
    if (hidden == 0 && in_channels != gfsq.grouped_channels()) {
        throw ConfigError("codec: without conv stacks, in_channels must equal groups * dims");
    }
}

namespace {

int resolved_resample_kernel(const CodecModelConfig& config) {
    return config.resample_kernel > 0 ? config.resample_kernel : 2 * config.gfsq.hop + 1;
}

} // namespace

CodecModelConfig codec_config_from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("codec config: invalid JSON: ") + e.what());
    }
    CodecModelConfig config;
    try {
        config.in_channels = doc.at("in_channels").get<int>();
        config.hidden = doc.at("hidden").get<int>();
        config.blocks = doc.value("blocks", 1);
        config.kernel = doc.value("kernel", 5);
        if (doc.contains("branch_kernels")) {
            auto ks = doc.at("branch_kernels").get<std::vector<int>>();
            auto ds = doc.at("branch_dilations").get<std::vector<int>>();
            if (ks.size() != 3 || ds.size() != 3) {
                throw FormatError("codec config: branch lists must have exactly 3 entries");
            }
            std::copy(ks.begin(), ks.end(), config.block_spec.kernels.begin());
            std::copy(ds.begin(), ds.end(), config.block_spec.dilations.begin());
        }
        const std::string mode = doc.value("resample", std::string("reference"));
        if (mode == "reference") {
            config.resample = ResampleMode::kReference;
        } else if (mode == "conv") {
            config.resample = ResampleMode::kConv;
        } else {
            throw FormatError("codec config: resample must be \"reference\" or \"conv\"");
        }
        config.resample_kernel = doc.value("resample_kernel", 0);
        const auto& g = doc.at("gfsq");
        config.gfsq.groups = g.at("groups").get<int>();
        config.gfsq.levels = g.at("levels").get<std::vector<int>>();
        config.gfsq.hop = g.at("hop").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("codec config: ") + e.what());
    }
    config.validate();
    return config;
}

std::string codec_config_to_json(const CodecModelConfig& config) {
    nlohmann::json doc;
    doc["in_channels"] = config.in_channels;
    doc["hidden"] = config.hidden;
    doc["blocks"] = config.blocks;
    doc["kernel"] = config.kernel;
    doc["branch_kernels"] = config.block_spec.kernels;
    doc["branch_dilations"] = config.block_spec.dilations;
    doc["resample"] = config.resample == ResampleMode::kConv ? "conv" : "reference";
    doc["resample_kernel"] = config.resample_kernel;
    doc["gfsq"] = {{"groups", config.gfsq.groups},
                   {"levels", config.gfsq.levels},
                   {"hop", config.gfsq.hop}};
    return doc.dump(2);
}

// ---------------------------------------------------------------------------
// CodecModelT
// ---------------------------------------------------------------------------

template <typename T>
CodecModelT<T>::CodecModelT(const CodecModelConfig& config)
    : config_(config),
      down_(config.gfsq.grouped_channels(), config.gfsq.hop, config.resample,
            config.resample == ResampleMode::kConv ? resolved_resample_kernel(config) : 0,
            "encoder.down"),
      up_(config.gfsq.grouped_channels(), config.gfsq.hop, config.resample,
          config.resample == ResampleMode::kConv ? resolved_resample_kernel(config) : 0,
          "decoder.up") {
    config_.validate();
    const int latent_channels = config_.gfsq.grouped_channels();
    if (config_.hidden > 0) {
        enc_convs_.emplace_back(config_.in_channels, config_.hidden, config_.kernel, 1,
                                "encoder.in_proj");
        for (int i = 0; i < config_.blocks; ++i) {
            enc_blocks_.emplace_back(config_.hidden, config_.block_spec,
                                     "encoder.block" + std::to_string(i));
        }
        enc_convs_.emplace_back(config_.hidden, latent_channels, config_.kernel, 1,
                                "encoder.out_proj");
        dec_convs_.emplace_back(latent_channels, config_.hidden, config_.kernel, 1,
                                "decoder.in_proj");
        for (int i = 0; i < config_.blocks; ++i) {
            dec_blocks_.emplace_back(config_.hidden, config_.block_spec,
                                     "decoder.block" + std::to_string(i));
        }
        dec_convs_.emplace_back(config_.hidden, config_.in_channels, config_.kernel, 1,
                                "decoder.out_proj");
    }
}

template <typename T>
void CodecModelT<T>::init_random(Rng& rng) {
    for (auto& c : enc_convs_) c.init_random(rng);
    for (auto& b : enc_blocks_) b.init_random(rng);
    down_.init_random(rng);
    up_.init_random(rng);
    for (auto& c : dec_convs_) c.init_random(rng);
    for (auto& b : dec_blocks_) b.init_random(rng);
}

template <typename T>
FrameTensorT<T> CodecModelT<T>::encoder_pure(const FrameTensorT<T>& x) const {
    check_input(x, config_.in_channels, "codec encode");
    if (enc_convs_.empty()) return down_.apply(x);
    FrameTensorT<T> h = enc_convs_.front().apply(x);
    for (const auto& b : enc_blocks_) h = b.apply(h);
    h = enc_convs_.back().apply(h);
    return down_.apply(h);
}

template <typename T>
FrameTensorT<T> CodecModelT<T>::decoder_pure(const FrameTensorT<T>& z, int target_len) const {
    FrameTensorT<T> h = up_.apply(z, target_len);
    if (dec_convs_.empty()) return h;
    h = dec_convs_.front().apply(h);
    for (const auto& b : dec_blocks_) h = b.apply(h);
    return dec_convs_.back().apply(h);
}

template <typename T>
FrameTensorT<T> CodecModelT<T>::encoder_train(const FrameTensorT<T>& x) {
    check_input(x, config_.in_channels, "codec encode");
    if (enc_convs_.empty()) return down_.forward(x);
    FrameTensorT<T> h = enc_convs_.front().forward(x);
    for (auto& b : enc_blocks_) h = b.forward(h);
    h = enc_convs_.back().forward(h);
    return down_.forward(h);
}

template <typename T>
FrameTensorT<T> CodecModelT<T>::decoder_train(const FrameTensorT<T>& z, int target_len) {
    FrameTensorT<T> h = up_.forward(z, target_len);
    if (dec_convs_.empty()) return h;
    h = dec_convs_.front().forward(h);
    for (auto& b : dec_blocks_) h = b.forward(h);
    return dec_convs_.back().forward(h);
}

template <typename T>
FrameTensorT<T> CodecModelT<T>::encode_latent(const FrameTensorT<T>& x) const {
    return encoder_pure(x);
}

template <typename T>
CodeGrid CodecModelT<T>::encode(const FrameTensorT<T>& x) const {
    return gfsq_encode(encoder_pure(x), config_.gfsq);
}

template <typename T>
FrameTensorT<T> CodecModelT<T>::decode(const CodeGrid& codes, int target_len) const {
    if (codes.groups != config_.gfsq.groups || codes.config.levels != config_.gfsq.levels ||
        codes.config.hop != config_.gfsq.hop) {
        throw ShapeError("codec decode: code grid does not match the model's quantizer");
    }
    FrameTensorT<T> z = gfsq_decode<T>(codes);
    return decoder_pure(z, target_len);
}

template <typename T>
FrameTensorT<T> CodecModelT<T>::forward_train(const FrameTensorT<T>& x, CodeGrid* codes_out) {
    FrameTensorT<T> latent = encoder_train(x);
    CodeGrid codes = gfsq_encode(latent, config_.gfsq);
    FrameTensorT<T> q = gfsq_decode<T>(codes);
    // Straight-through surrogate: treat the grid snap as identity in
    // tanh(latent), so only the tanh slope flows back.
    cached_ste_factor_ = FrameTensorT<T>(latent.batch, latent.channels, latent.length);
    for (size_t i = 0; i < latent.data.size(); ++i) {
        const T th = std::tanh(latent.data[i]);
        cached_ste_factor_.data[i] = T(1) - th * th;
    }
    if (codes_out) *codes_out = std::move(codes);
    return decoder_train(q, x.length);
}

template <typename T>
void CodecModelT<T>::backward(const FrameTensorT<T>& d_recon) {
    if (cached_ste_factor_.size() == 0) {
        throw TrainError("codec backward called before forward_train");
    }
    FrameTensorT<T> d = d_recon;
    if (!dec_convs_.empty()) {
        d = dec_convs_.back().backward(d);
        for (auto it = dec_blocks_.rbegin(); it != dec_blocks_.rend(); ++it) {
            d = it->backward(d);
        }
        d = dec_convs_.front().backward(d);
    }
    FrameTensorT<T> dq = up_.backward(d);
    for (size_t i = 0; i < dq.data.size(); ++i) dq.data[i] *= cached_ste_factor_.data[i];
    FrameTensorT<T> dh = down_.backward(dq);
    if (!enc_convs_.empty()) {
        dh = enc_convs_.back().backward(dh);
        for (auto it = enc_blocks_.rbegin(); it != enc_blocks_.rend(); ++it) {
            dh = it->backward(dh);
        }
        dh = enc_convs_.front().backward(dh);
    }
}

template <typename T>
ParamRefs<T> CodecModelT<T>::params() {
    ParamRefs<T> out;
    if (!enc_convs_.empty()) {
        enc_convs_.front().collect_params(out);
        for (auto& b : enc_blocks_) b.collect_params(out);
        enc_convs_.back().collect_params(out);
    }
    down_.collect_params(out);
    up_.collect_params(out);
    if (!dec_convs_.empty()) {
        dec_convs_.front().collect_params(out);
        for (auto& b : dec_blocks_) b.collect_params(out);
        dec_convs_.back().collect_params(out);
    }
    return out;
}

template <typename T>
void CodecModelT<T>::zero_grads() {
    for (Param<T>* p : params()) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Model file round trip
// ---------------------------------------------------------------------------

template <typename T>
std::vector<NamedTensor> codec_export_tensors(CodecModelT<T>& model) {
    return export_params(model.params());
}

template <typename T>
void codec_import_tensors(CodecModelT<T>& model, const std::vector<NamedTensor>& tensors) {
    import_params(model.params(), tensors);
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

template class DwsConv1d<float>;
template class DwsConv1d<double>;
template class ResBlock<float>;
template class ResBlock<double>;
template class ParallelBlock<float>;
template class ParallelBlock<double>;
template class Downsampler<float>;
template class Downsampler<double>;
template class Upsampler<float>;
template class Upsampler<double>;
template class CodecModelT<float>;
template class CodecModelT<double>;

template FrameTensorT<float> f_down_reference(const FrameTensorT<float>&, int);
template FrameTensorT<double> f_down_reference(const FrameTensorT<double>&, int);
template FrameTensorT<float> f_up_reference(const FrameTensorT<float>&, int, int);
template FrameTensorT<double> f_up_reference(const FrameTensorT<double>&, int, int);

template std::vector<NamedTensor> codec_export_tensors(CodecModelT<float>&);
template std::vector<NamedTensor> codec_export_tensors(CodecModelT<double>&);
template void codec_import_tensors(CodecModelT<float>&, const std::vector<NamedTensor>&);
template void codec_import_tensors(CodecModelT<double>&, const std::vector<NamedTensor>&);

} // namespace fishcore
