#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "fishcore/firefly.hpp"
#include "fishcore/gfsq.hpp"
#include "fishcore/param.hpp"
#include "fishcore/tensor.hpp"

namespace fishcore {

// ---------------------------------------------------------------------------
// Optimizer configuration. Defaults are the full-scale training recipe; the
// toy() preset shrinks the step budget to desk scale while keeping every
// other constant.
// ---------------------------------------------------------------------------
struct TrainConfig {
    double lr_max = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 0.01;
    int64_t warmup_steps = 2000;
    int64_t total_steps = 500000;
    double final_lr_ratio = 0.1;
    int batch_items = 8; // items per step (this trainer batches whole signals)
    uint64_t seed = 0;
    int64_t log_every = 50;

    double lr_min() const { return final_lr_ratio * lr_max; }

    // Throws ConfigError when a field is out of range (e.g. final_lr_ratio
    // outside (0, 1] or warmup_steps >= total_steps).
    void validate() const;

    static TrainConfig toy() {
        TrainConfig c;
        c.total_steps = 2000;
        c.warmup_steps = 100;
        return c;
    }
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);

// Linear warmup from zero to lr_max over warmup_steps, then cosine decay to
// lr_min at total_steps; steps beyond total_steps clamp to lr_min.
double lr_at(int64_t step, const TrainConfig& config);

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay. Decay is applied first
// (w <- w - lr*wd*w), then the bias-corrected moment update.
// ---------------------------------------------------------------------------
template <typename T>
struct OptStateT {
    int64_t step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;

    bool initialized() const { return !m.empty(); }
    void init_for(const ParamRefs<T>& params);
};

using OptState = OptStateT<float>;
using OptStateD = OptStateT<double>;

// One optimizer step over `params` using the gradients they carry.
// Throws TrainError naming the parameter if a gradient is non-finite or the
// state no longer matches the parameter list.
template <typename T>
void adamw_step(const ParamRefs<T>& params, OptStateT<T>& state, double lr,
                const TrainConfig& config);

// ---------------------------------------------------------------------------
// Straight-through quantizer: forward is the exact grid round trip
// (decode(encode(z))); backward treats the rounding as identity while
// keeping the true tanh slope, so d out / d z = 1 - tanh(z)^2.
// ---------------------------------------------------------------------------
template <typename T>
class SteQuantizer {
public:
    explicit SteQuantizer(GfsqConfig config);

    FrameTensorT<T> forward(const FrameTensorT<T>& latent, CodeGrid* codes_out = nullptr);
    FrameTensorT<T> backward(const FrameTensorT<T>& dy) const;

    // The differentiable path backward() follows: tanh(z), no rounding.
    FrameTensorT<T> surrogate(const FrameTensorT<T>& latent) const;

    const GfsqConfig& config() const { return config_; }

private:
    GfsqConfig config_;
    FrameTensorT<T> cached_factor_;
};

// ---------------------------------------------------------------------------
// Losses and verification helpers.
// ---------------------------------------------------------------------------

// Mean squared error over all elements; optionally writes d loss / d pred.
template <typename T>
double mse_loss(const FrameTensorT<T>& pred, const FrameTensorT<T>& target,
                FrameTensorT<T>* d_pred = nullptr);

using ScalarFn = std::function<double(const std::vector<double>&)>;

// Central-difference check of an analytic gradient: perturbs each coordinate
// by ±h and returns the largest relative error, with the relative error
// denominator floored at max(|analytic|, |numeric|, 1e-8). Throws
// DomainError if the function returns a non-finite value.
double grad_check(const ScalarFn& f, const std::vector<double>& point,
                  const std::vector<double>& analytic_grad, double h = 1e-5);

// ---------------------------------------------------------------------------
// Synthetic corpus: sums of random sinusoids, peak-normalized to [-1, 1].
// Item i is generated from mix_seed(seed, i), so synthesis order (and any
// parallelism) cannot change the output.
// ---------------------------------------------------------------------------
struct SynthSpec {
    int num_signals = 1;
    int length = 256;
    int num_tones = 3; // 0 produces all-zero signals
    uint64_t seed = 0;

    void validate() const;
};

template <typename T = float>
std::vector<FrameTensorT<T>> synth_dataset(const SynthSpec& spec);

// ---------------------------------------------------------------------------
// Codec training loop: MSE through the straight-through bottleneck.
// ---------------------------------------------------------------------------
struct TrainPoint {
    int64_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double utilization = 0.0; // min over groups, on the step's batch
};

struct TrainResult {
    std::vector<TrainPoint> curve; // one point per log_every steps plus the last step
    double initial_loss = 0.0;     // loss of the first batch before any update
    double final_loss = 0.0;       // full-dataset MSE after training
    double final_utilization = 0.0; // min over groups across the full dataset
    std::vector<double> final_group_utilization;
};

// Deterministic given the model's initial weights: batches cycle through the
// dataset in order. Writes "step,lr,loss,utilization" CSV rows to `csv` when
// given. Throws TrainError with the step index if the loss becomes
// non-finite.
template <typename T>
TrainResult train_codec(const std::vector<FrameTensorT<T>>& dataset, CodecModelT<T>& model,
                        const TrainConfig& config, std::ostream* csv = nullptr);

} // namespace fishcore
