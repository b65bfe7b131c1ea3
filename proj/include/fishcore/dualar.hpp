#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fishcore/param.hpp"
#include "fishcore/rng.hpp"

namespace fishcore {

// ---------------------------------------------------------------------------
// Two-stack autoregressive generator: a slow transformer over text/semantic
// tokens drives a fast transformer that emits one frame's codebook indices.
// ---------------------------------------------------------------------------

struct DualArConfig {
    int model_dim = 64;
    int slow_layers = 2;
    int fast_layers = 2;
    int heads = 4;
    int text_vocab = 32;
    int semantic_vocab = 16; // includes the BOS/EOS ids below
    int num_codebooks = 2;
    int codebook_vocab = 9; // must match the paired quantizer's codebook size
    int max_seq = 128;
    int bos_id = 0;
    int eos_id = 1;

    int head_dim() const { return model_dim / heads; }
    int mlp_dim() const { return 4 * model_dim; }

    // Throws ConfigError on non-positive sizes, a model_dim not divisible by
    // heads, or BOS/EOS ids outside the semantic vocabulary.
    void validate() const;
};

std::string dualar_config_to_json(const DualArConfig& config);
DualArConfig dualar_config_from_json(const std::string& text);

// Dense row-major matrix used for hidden states and logits.
template <typename T>
struct MatT {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    MatT() = default;
    MatT(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, T(0)) {}

    T* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const T* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
    T& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    T at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
};

using Mat = MatT<float>;
using MatD = MatT<double>;

// A slow-stack input token: text ids index the first text_vocab rows of the
// shared embedding table, semantic ids the rows after them.
struct Token {
    enum class Kind : uint8_t { kText, kSemantic };
    Kind kind = Kind::kText;
    int id = 0;
};

inline Token text_token(int id) { return {Token::Kind::kText, id}; }
inline Token semantic_token(int id) { return {Token::Kind::kSemantic, id}; }

// One frame of generator output.
struct FrameCodes {
    int semantic = 0;            // semantic token the slow stack emitted
    std::vector<int32_t> codes;  // num_codebooks indices, each < codebook_vocab
};

// ---------------------------------------------------------------------------
// Weights. One pre-norm block = attention + MLP, each behind a LayerNorm;
// rotary positions are applied to queries and keys inside attention.
// ---------------------------------------------------------------------------

template <typename T>
struct BlockWeightsT {
    Param<T> ln1_gain, ln1_bias;
    Param<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Param<T> ln2_gain, ln2_bias;
    Param<T> w1, b1, w2, b2; // MLP: model_dim -> mlp_dim -> model_dim

    BlockWeightsT() = default;
    BlockWeightsT(const DualArConfig& config, const std::string& prefix);
    void collect_params(ParamRefs<T>& out);
};

template <typename T>
struct DualArWeightsT {
    DualArConfig config;

    Param<T> embed; // (text_vocab + semantic_vocab, model_dim), shared table
    std::vector<BlockWeightsT<T>> slow_blocks;
    Param<T> slow_final_gain, slow_final_bias;
    Param<T> w_tok; // (semantic_vocab, model_dim), no bias

    Param<T> cbk_embed;    // (codebook_vocab, model_dim)
    Param<T> cbk_proj_w;   // (model_dim, model_dim): input projection for
    Param<T> cbk_proj_b;   //   codebook embeddings entering the fast stack
    std::vector<BlockWeightsT<T>> fast_blocks;
    Param<T> fast_final_gain, fast_final_bias;
    Param<T> w_cbk; // (codebook_vocab, model_dim), no bias

    explicit DualArWeightsT(const DualArConfig& config);

    // Linear/embedding weights ~ N(0, 0.02^2); biases 0; norm gains 1.
    void init_random(Rng& rng);
    void zero();

    ParamRefs<T> params();

    // Row of the shared table for a validated token.
    int embed_row(const Token& token) const;
};

using DualArWeights = DualArWeightsT<float>;
using DualArWeightsD = DualArWeightsT<double>;

// Model file round trip (values stored 32-bit).
template <typename T>
std::vector<struct NamedTensor> dualar_export_tensors(DualArWeightsT<T>& weights);
template <typename T>
void dualar_import_tensors(DualArWeightsT<T>& weights,
                           const std::vector<struct NamedTensor>& tensors);

// ---------------------------------------------------------------------------
// KV cache: per-layer (heads, max_seq, head_dim) key/value buffers for both
// stacks, with one fill cursor per stack. Entries below a cursor are never
// rewritten; appending past max_seq throws CapacityError.
// ---------------------------------------------------------------------------

template <typename T>
class KvCacheT {
public:
    explicit KvCacheT(const DualArConfig& config);

    int slow_cursor() const { return slow_cursor_; }
    int fast_cursor() const { return fast_cursor_; }
    void reset();
    void reset_fast() { fast_cursor_ = 0; }

    // Buffer addressing used by the incremental forward paths.
    T* slow_k(int layer, int head) { return buf(slow_k_, layer, head); }
    T* slow_v(int layer, int head) { return buf(slow_v_, layer, head); }
    T* fast_k(int layer, int head) { return buf(fast_k_, layer, head); }
    T* fast_v(int layer, int head) { return buf(fast_v_, layer, head); }

    // Reserves the next slow/fast position, checking capacity. Returns the
    // position index; the caller fills every layer's k/v at that position
    // and then commits.
    int claim_slow();
    int claim_fast();
    void commit_slow() { ++slow_cursor_; }
    void commit_fast() { ++fast_cursor_; }

    int max_seq() const { return config_.max_seq; }
    int head_dim() const { return config_.head_dim(); }

private:
    T* buf(std::vector<std::vector<T>>& store, int layer, int head) {
        return store[static_cast<size_t>(layer)].data() +
               (static_cast<size_t>(head) * config_.max_seq) * config_.head_dim();
    }

    DualArConfig config_;
    std::vector<std::vector<T>> slow_k_, slow_v_; // [layer][(head, pos, dim)]
    std::vector<std::vector<T>> fast_k_, fast_v_;
    int slow_cursor_ = 0;
    int fast_cursor_ = 0;
};

using KvCache = KvCacheT<float>;

// ---------------------------------------------------------------------------
// Forward passes.
// ---------------------------------------------------------------------------

template <typename T>
struct SlowOutputT {
    MatT<T> hidden;       // (rows, model_dim): stack output before the final norm
    MatT<T> token_logits; // (rows, semantic_vocab)
};

using SlowOutput = SlowOutputT<float>;

// Runs the slow stack over `tokens`. Without a cache this is a full batch
// forward and returns one row per token. With a cache, only the suffix past
// cache->slow_cursor() is processed (and appended); the returned rows cover
// just that suffix. The token list always starts at position 0.
template <typename T>
SlowOutputT<T> slow_forward(const std::vector<Token>& tokens, const DualArWeightsT<T>& weights,
                            KvCacheT<T>* cache = nullptr);

// Runs the fast stack over [frame_hidden; emb(prefix[0]); ...; emb(prefix
// [g-1])] and returns the codebook logits at the last position. Without a
// cache the whole sequence is recomputed; with one, only positions past
// cache->fast_cursor() are processed. The caller resets the fast cursor at
// each new frame.
template <typename T>
std::vector<T> fast_forward(const std::vector<T>& frame_hidden,
                            const std::vector<int32_t>& prefix,
                            const DualArWeightsT<T>& weights, KvCacheT<T>* cache = nullptr);

// Rotates query/key pairs in place for one head row at absolute position
// `pos` (base 10000; an odd head_dim leaves the last element unrotated).
template <typename T>
void apply_rotary(T* head_row, int head_dim, int64_t pos);

// ---------------------------------------------------------------------------
// Sampling.
// ---------------------------------------------------------------------------

struct SamplerSpec {
    enum class Mode : uint8_t { kGreedy, kTopK };
    Mode mode = Mode::kGreedy;
    int k = 1;
    double temperature = 1.0;
    uint64_t seed = 0;

    void validate() const;
};

std::string sampler_to_json(const SamplerSpec& spec);
SamplerSpec sampler_from_json(const std::string& text);

// Greedy: argmax with lowest-index tie-break. Top-k: softmax over the k
// highest logits (ties broken toward lower indices) at the given
// temperature, sampled by inverse CDF from `rng`. NaN or +inf logits, or
// all-(-inf) logits, throw DomainError.
template <typename T>
int sample(const std::vector<T>& logits, const SamplerSpec& spec, Rng& rng);

// ---------------------------------------------------------------------------
// Generation.
// ---------------------------------------------------------------------------

struct GenerateEvent {
    enum class Kind : uint8_t { kFrameComputed, kFrameYielded };
    Kind kind = Kind::kFrameComputed;
    int frame = 0;
};

struct GenerateResult {
    std::vector<FrameCodes> frames;
    bool truncated = false; // max_frames reached before EOS
    std::vector<GenerateEvent> events; // in wall order; proves streaming
};

using FrameSink = std::function<void(const FrameCodes&)>;

// Autoregressive loop: the slow stack samples a semantic token per frame
// (stopping at eos_id); the fast stack then emits num_codebooks indices.
// Every completed frame is handed to `sink` before the next one is
// computed. Deterministic for a fixed sampler seed.
template <typename T>
GenerateResult generate(const std::vector<int>& text_ids, const DualArWeightsT<T>& weights,
                        const SamplerSpec& sampler, int max_frames,
                        const FrameSink& sink = nullptr);

// ---------------------------------------------------------------------------
// Single-head causal attention with an explicit backward pass, used by the
// gradient checks. q/k/v are (T, head_dim); probs holds the softmax rows
// needed by the backward pass.
// ---------------------------------------------------------------------------

template <typename T>
MatT<T> attention_forward(const MatT<T>& q, const MatT<T>& k, const MatT<T>& v,
                          MatT<T>* probs_out = nullptr);

template <typename T>
void attention_backward(const MatT<T>& q, const MatT<T>& k, const MatT<T>& v,
                        const MatT<T>& probs, const MatT<T>& d_out, MatT<T>& dq, MatT<T>& dk,
                        MatT<T>& dv);

} // namespace fishcore
