#include "fishcore/train.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "fishcore/error.hpp"
#include "fishcore/kernels.hpp"
#include "fishcore/rng.hpp"

namespace fishcore {

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(lr_max > 0.0)) throw ConfigError("train config: lr_max must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw ConfigError("train config: betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("train config: eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("train config: weight_decay must be non-negative");
    if (warmup_steps < 0) throw ConfigError("train config: warmup_steps must be non-negative");
    if (total_steps < 1) throw ConfigError("train config: total_steps must be positive");
    if (warmup_steps >= total_steps) {
        throw ConfigError("train config: warmup_steps must be smaller than total_steps");
    }
    if (!(final_lr_ratio > 0.0) || final_lr_ratio > 1.0) {
        throw ConfigError("train config: final_lr_ratio must lie in (0, 1]");
    }
    if (batch_items < 1) throw ConfigError("train config: batch_items must be positive");
    if (log_every < 1) throw ConfigError("train config: log_every must be positive");
}

std::string train_config_to_json(const TrainConfig& config) {
    nlohmann::json doc;
    doc["lr_max"] = config.lr_max;
    doc["beta1"] = config.beta1;
    doc["beta2"] = config.beta2;
    doc["eps"] = config.eps;
    doc["weight_decay"] = config.weight_decay;
    doc["warmup_steps"] = config.warmup_steps;
    doc["total_steps"] = config.total_steps;
    doc["final_lr_ratio"] = config.final_lr_ratio;
    doc["batch_items"] = config.batch_items;
    doc["seed"] = config.seed;
    doc["log_every"] = config.log_every;
    return doc.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("train config: invalid JSON: ") + e.what());
    }
    TrainConfig config;
    try {
        config.lr_max = doc.value("lr_max", config.lr_max);
        config.beta1 = doc.value("beta1", config.beta1);
        config.beta2 = doc.value("beta2", config.beta2);
        config.eps = doc.value("eps", config.eps);
        config.weight_decay = doc.value("weight_decay", config.weight_decay);
        config.warmup_steps = doc.value("warmup_steps", config.warmup_steps);
        config.total_steps = doc.value("total_steps", config.total_steps);
        config.final_lr_ratio = doc.value("final_lr_ratio", config.final_lr_ratio);
        config.batch_items = doc.value("batch_items", config.batch_items);
        config.seed = doc.value("seed", config.seed);
        config.log_every = doc.value("log_every", config.log_every);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("train config: ") + e.what());
    }
    config.validate();
    return config;
}

double lr_at(int64_t step, const TrainConfig& config) {
    config.validate();
    if (step < 0) throw DomainError("lr_at: step must be non-negative");
    if (step >= config.total_steps) return config.lr_min(); // clamp past the end
    if (step < config.warmup_steps) {
        return config.lr_max * static_cast<double>(step) /
               static_cast<double>(config.warmup_steps);
    }
    const double span = static_cast<double>(config.total_steps - config.warmup_steps);
    const double t = static_cast<double>(step - config.warmup_steps) / span;
    const double lr_min = config.lr_min();
    return lr_min + 0.5 * (config.lr_max - lr_min) * (1.0 + std::cos(M_PI * t));
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

template <typename T>
void OptStateT<T>::init_for(const ParamRefs<T>& params) {
    step = 0;
    m.clear();
    v.clear();
    m.reserve(params.size());
    v.reserve(params.size());
    for (const Param<T>* p : params) {
        m.emplace_back(p->value.size(), T(0));
        v.emplace_back(p->value.size(), T(0));
    }
}

template <typename T>
void adamw_step(const ParamRefs<T>& params, OptStateT<T>& state, double lr,
                const TrainConfig& config) {
    config.validate();
    if (lr < 0.0) throw TrainError("adamw: learning rate must be non-negative");
    if (!state.initialized()) state.init_for(params);
    if (state.m.size() != params.size()) {
        throw TrainError("adamw: optimizer state does not match the parameter list");
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));

    for (size_t pi = 0; pi < params.size(); ++pi) {
        Param<T>& p = *params[pi];
        std::vector<T>& m = state.m[pi];
        std::vector<T>& v = state.v[pi];
        if (m.size() != p.value.size()) {
            throw TrainError("adamw: moment shape mismatch for \"" + p.name + "\"");
        }
        for (T g : p.grad) {
            if (!std::isfinite(static_cast<double>(g))) {
                throw TrainError("adamw: non-finite gradient in \"" + p.name + "\"");
            }
        }
        const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(p.value.size());
#pragma omp parallel for if (n >= kernels::kOmpGrain)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            const double g = static_cast<double>(p.grad[static_cast<size_t>(i)]);
            double w = static_cast<double>(p.value[static_cast<size_t>(i)]);
            // Decoupled decay first, then the moment update.
            w -= lr * config.weight_decay * w;
            double mi = config.beta1 * static_cast<double>(m[static_cast<size_t>(i)]) +
                        (1.0 - config.beta1) * g;
            double vi = config.beta2 * static_cast<double>(v[static_cast<size_t>(i)]) +
                        (1.0 - config.beta2) * g * g;
            m[static_cast<size_t>(i)] = static_cast<T>(mi);
            v[static_cast<size_t>(i)] = static_cast<T>(vi);
            const double m_hat = mi / bc1;
            const double v_hat = vi / bc2;
            w -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
            p.value[static_cast<size_t>(i)] = static_cast<T>(w);
        }
    }
}

// ---------------------------------------------------------------------------
// SteQuantizer
// ---------------------------------------------------------------------------

template <typename T>
SteQuantizer<T>::SteQuantizer(GfsqConfig config) : config_(std::move(config)) {
    config_.validate();
}

template <typename T>
FrameTensorT<T> SteQuantizer<T>::forward(const FrameTensorT<T>& latent, CodeGrid* codes_out) {
    CodeGrid codes = gfsq_encode(latent, config_);
    FrameTensorT<T> q = gfsq_decode<T>(codes);
    cached_factor_ = FrameTensorT<T>(latent.batch, latent.channels, latent.length);
    for (size_t i = 0; i < latent.data.size(); ++i) {
        const T th = std::tanh(latent.data[i]);
        cached_factor_.data[i] = T(1) - th * th;
    }
    if (codes_out) *codes_out = std::move(codes);
    return q;
}

template <typename T>
FrameTensorT<T> SteQuantizer<T>::backward(const FrameTensorT<T>& dy) const {
    if (cached_factor_.size() == 0) {
        throw TrainError("SteQuantizer::backward called before forward");
    }
    if (!dy.same_shape(cached_factor_)) {
        throw ShapeError("SteQuantizer::backward: gradient shape does not match forward input");
    }
    FrameTensorT<T> dz = dy;
    for (size_t i = 0; i < dz.data.size(); ++i) dz.data[i] *= cached_factor_.data[i];
    return dz;
}

template <typename T>
FrameTensorT<T> SteQuantizer<T>::surrogate(const FrameTensorT<T>& latent) const {
    if (latent.channels != config_.grouped_channels()) {
        throw ShapeError("SteQuantizer: latent channels do not match groups * dims");
    }
    FrameTensorT<T> y = latent;
    for (T& v : y.data) v = std::tanh(v);
    return y;
}

// ---------------------------------------------------------------------------
// Losses and verification
// ---------------------------------------------------------------------------

template <typename T>
double mse_loss(const FrameTensorT<T>& pred, const FrameTensorT<T>& target,
                FrameTensorT<T>* d_pred) {
    if (!pred.same_shape(target)) {
        throw ShapeError("mse_loss: prediction and target shapes differ");
    }
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    double acc = 0.0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const double d = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
        acc += d * d;
    }
    if (d_pred) {
        *d_pred = FrameTensorT<T>(pred.batch, pred.channels, pred.length);
        for (size_t i = 0; i < pred.data.size(); ++i) {
            const double d =
                static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
            d_pred->data[i] = static_cast<T>(2.0 * d * inv_n);
        }
    }
    return acc * inv_n;
}

double grad_check(const ScalarFn& f, const std::vector<double>& point,
                  const std::vector<double>& analytic_grad, double h) {
    if (point.size() != analytic_grad.size()) {
        throw ShapeError("grad_check: gradient size does not match the point");
    }
    if (!(h > 0.0)) throw DomainError("grad_check: step size must be positive");
    std::vector<double> x = point;
    double max_rel = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double f_plus = f(x);
        x[i] = saved - h;
        const double f_minus = f(x);
        x[i] = saved;
        if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
            throw DomainError("grad_check: function returned a non-finite value");
        }
        const double numeric = (f_plus - f_minus) / (2.0 * h);
        const double analytic = analytic_grad[i];
        const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::fabs(analytic - numeric) / denom);
    }
    return max_rel;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

void SynthSpec::validate() const {
    if (num_signals < 1) throw ConfigError("synth: num_signals must be positive");
    if (length < 1) throw ConfigError("synth: length must be positive");
    if (num_tones < 0) throw ConfigError("synth: num_tones must be non-negative");
}

template <typename T>
std::vector<FrameTensorT<T>> synth_dataset(const SynthSpec& spec) {
    spec.validate();
    std::vector<FrameTensorT<T>> items(static_cast<size_t>(spec.num_signals));
#pragma omp parallel for if (spec.num_signals >= 16)
    for (int i = 0; i < spec.num_signals; ++i) {
        Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(i)));
        FrameTensorT<T> x(1, 1, spec.length);
        std::vector<double> buf(static_cast<size_t>(spec.length), 0.0);
        // Tones span low rumble up to a third of the window's Nyquist rate, so
        // neighboring samples decorrelate and codecs see broadband content.
        const double max_cycles = std::max(4.0, spec.length / 6.0);
        for (int tone = 0; tone < spec.num_tones; ++tone) {
            const double amp = rng.uniform(0.5, 1.0);
            const double freq = rng.uniform(1.0, max_cycles);
            const double phase = rng.uniform(0.0, 2.0 * M_PI);
            for (int t = 0; t < spec.length; ++t) {
                buf[static_cast<size_t>(t)] +=
                    amp * std::sin(2.0 * M_PI * freq * t / spec.length + phase);
            }
        }
        double peak = 0.0;
        for (double v : buf) peak = std::max(peak, std::fabs(v));
        const double scale = peak > 0.0 ? 1.0 / peak : 0.0;
        for (int t = 0; t < spec.length; ++t) {
            x.data[static_cast<size_t>(t)] = static_cast<T>(buf[static_cast<size_t>(t)] * scale);
        }
        items[static_cast<size_t>(i)] = std::move(x);
    }
    return items;
}

// ---------------------------------------------------------------------------
// Codec training loop
// ---------------------------------------------------------------------------

namespace {

double min_utilization(const CodeGrid& codes) {
    const std::vector<double> per_group = utilization(codes);
    double lo = 1.0;
    for (double u : per_group) lo = std::min(lo, u);
    return lo;
}

} // namespace

template <typename T>
TrainResult train_codec(const std::vector<FrameTensorT<T>>& dataset, CodecModelT<T>& model,
                        const TrainConfig& config, std::ostream* csv) {
    config.validate();
    if (dataset.empty()) throw ConfigError("train: dataset is empty");
    const int channels = dataset.front().channels;
    const int length = dataset.front().length;
    for (const auto& item : dataset) {
        if (item.batch != 1 || item.channels != channels || item.length != length) {
            throw ShapeError("train: all dataset items must share one shape with batch 1");
        }
    }

    const int batch_items = std::min<int>(config.batch_items, static_cast<int>(dataset.size()));
    FrameTensorT<T> batch(batch_items, channels, length);
    ParamRefs<T> params = model.params();
    if (params.empty()) {
        throw ConfigError("train: the model has no trainable parameters");
    }
    OptStateT<T> state;
    state.init_for(params);

    TrainResult result;
    if (csv) *csv << "step,lr,loss,utilization\n";

    const size_t row = static_cast<size_t>(channels) * length;
    for (int64_t step = 0; step < config.total_steps; ++step) {
        for (int j = 0; j < batch_items; ++j) {
            const size_t item =
                static_cast<size_t>((step * batch_items + j) % static_cast<int64_t>(dataset.size()));
            std::copy(dataset[item].data.begin(), dataset[item].data.end(),
                      batch.data.begin() + static_cast<std::ptrdiff_t>(row * j));
        }

        CodeGrid codes;
        FrameTensorT<T> recon = model.forward_train(batch, &codes);
        FrameTensorT<T> d_recon;
        const double loss = mse_loss(recon, batch, &d_recon);
        if (!std::isfinite(loss)) {
            throw TrainError("train: loss diverged at step " + std::to_string(step));
        }
        if (step == 0) result.initial_loss = loss;

        const double lr = lr_at(step, config);
        if (step % config.log_every == 0 || step == config.total_steps - 1) {
            TrainPoint point{step, lr, loss, min_utilization(codes)};
            result.curve.push_back(point);
            if (csv) {
                *csv << point.step << ',' << point.lr << ',' << point.loss << ','
                     << point.utilization << '\n';
            }
        }

        model.zero_grads();
        model.backward(d_recon);
        adamw_step(params, state, lr, config);
    }

    // Full-dataset evaluation with the trained weights: stack every item into
    // one batch so utilization counts distinct indices across the corpus.
    FrameTensorT<T> all(static_cast<int>(dataset.size()), channels, length);
    for (size_t i = 0; i < dataset.size(); ++i) {
        std::copy(dataset[i].data.begin(), dataset[i].data.end(),
                  all.data.begin() + static_cast<std::ptrdiff_t>(row * i));
    }
    CodeGrid final_codes = model.encode(all);
    FrameTensorT<T> final_recon = model.decode(final_codes, length);
    result.final_loss = mse_loss(final_recon, all);
    result.final_group_utilization = utilization(final_codes);
    result.final_utilization = 1.0;
    for (double u : result.final_group_utilization) {
        result.final_utilization = std::min(result.final_utilization, u);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

template struct OptStateT<float>;
template struct OptStateT<double>;
template void adamw_step(const ParamRefs<float>&, OptStateT<float>&, double,
                         const TrainConfig&);
template void adamw_step(const ParamRefs<double>&, OptStateT<double>&, double,
                         const TrainConfig&);
template class SteQuantizer<float>;
template class SteQuantizer<double>;
template double mse_loss(const FrameTensor&, const FrameTensor&, FrameTensor*);
template double mse_loss(const FrameTensorD&, const FrameTensorD&, FrameTensorD*);
template std::vector<FrameTensor> synth_dataset<float>(const SynthSpec&);
template std::vector<FrameTensorD> synth_dataset<double>(const SynthSpec&);
template TrainResult train_codec(const std::vector<FrameTensor>&, CodecModel&,
                                 const TrainConfig&, std::ostream*);
template TrainResult train_codec(const std::vector<FrameTensorD>&, CodecModelD&,
                                 const TrainConfig&, std::ostream*);

} // namespace fishcore
