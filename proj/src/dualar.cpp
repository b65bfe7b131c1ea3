#include "fishcore/dualar.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "fishcore/error.hpp"
#include "fishcore/kernels.hpp"
#include "fishcore/model_io.hpp"

namespace fishcore {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void DualArConfig::validate() const {
    if (model_dim < 1) throw ConfigError("dualar config: model_dim must be positive");
    if (slow_layers < 1 || fast_layers < 1) {
        throw ConfigError("dualar config: layer counts must be positive");
    }
    if (heads < 1) throw ConfigError("dualar config: heads must be positive");
    if (model_dim % heads != 0) {
        throw ConfigError("dualar config: model_dim must be divisible by heads");
    }
    if (text_vocab < 1) throw ConfigError("dualar config: text_vocab must be positive");
    if (semantic_vocab < 1) throw ConfigError("dualar config: semantic_vocab must be positive");
    if (num_codebooks < 1) throw ConfigError("dualar config: num_codebooks must be positive");
    if (codebook_vocab < 1) throw ConfigError("dualar config: codebook_vocab must be positive");
    if (max_seq < 1) throw ConfigError("dualar config: max_seq must be positive");
    if (bos_id < 0 || bos_id >= semantic_vocab) {
        throw ConfigError("dualar config: bos_id must lie in the semantic vocabulary");
    }
    if (eos_id < 0 || eos_id >= semantic_vocab) {
        throw ConfigError("dualar config: eos_id must lie in the semantic vocabulary");
    }
}

std::string dualar_config_to_json(const DualArConfig& config) {
    nlohmann::json doc;
    doc["model_dim"] = config.model_dim;
    doc["slow_layers"] = config.slow_layers;
    doc["fast_layers"] = config.fast_layers;
    doc["heads"] = config.heads;
    doc["text_vocab"] = config.text_vocab;
    doc["semantic_vocab"] = config.semantic_vocab;
    doc["num_codebooks"] = config.num_codebooks;
    doc["codebook_vocab"] = config.codebook_vocab;
    doc["max_seq"] = config.max_seq;
    doc["bos_id"] = config.bos_id;
    doc["eos_id"] = config.eos_id;
    return doc.dump(2);
}

DualArConfig dualar_config_from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dualar config: invalid JSON: ") + e.what());
    }
    DualArConfig config;
    try {
        config.model_dim = doc.at("model_dim").get<int>();
        config.slow_layers = doc.at("slow_layers").get<int>();
        config.fast_layers = doc.at("fast_layers").get<int>();
        config.heads = doc.at("heads").get<int>();
        config.text_vocab = doc.at("text_vocab").get<int>();
        config.semantic_vocab = doc.at("semantic_vocab").get<int>();
        config.num_codebooks = doc.at("num_codebooks").get<int>();
        config.codebook_vocab = doc.at("codebook_vocab").get<int>();
        config.max_seq = doc.at("max_seq").get<int>();
        config.bos_id = doc.value("bos_id", config.bos_id);
        config.eos_id = doc.value("eos_id", config.eos_id);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dualar config: ") + e.what());
    }
    config.validate();
    return config;
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

template <typename T>
BlockWeightsT<T>::BlockWeightsT(const DualArConfig& config, const std::string& prefix) {
    const int d = config.model_dim;
    const int h = config.mlp_dim();
    ln1_gain = Param<T>(prefix + ".ln1.gain", {d});
    ln1_bias = Param<T>(prefix + ".ln1.bias", {d});
    wq = Param<T>(prefix + ".attn.wq", {d, d});
    bq = Param<T>(prefix + ".attn.bq", {d});
    wk = Param<T>(prefix + ".attn.wk", {d, d});
    bk = Param<T>(prefix + ".attn.bk", {d});
    wv = Param<T>(prefix + ".attn.wv", {d, d});
    bv = Param<T>(prefix + ".attn.bv", {d});
    wo = Param<T>(prefix + ".attn.wo", {d, d});
    bo = Param<T>(prefix + ".attn.bo", {d});
    ln2_gain = Param<T>(prefix + ".ln2.gain", {d});
    ln2_bias = Param<T>(prefix + ".ln2.bias", {d});
    w1 = Param<T>(prefix + ".mlp.w1", {h, d});
    b1 = Param<T>(prefix + ".mlp.b1", {h});
    w2 = Param<T>(prefix + ".mlp.w2", {d, h});
    b2 = Param<T>(prefix + ".mlp.b2", {d});
}

template <typename T>
void BlockWeightsT<T>::collect_params(ParamRefs<T>& out) {
    for (Param<T>* p : {&ln1_gain, &ln1_bias, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo,
                        &ln2_gain, &ln2_bias, &w1, &b1, &w2, &b2}) {
        out.push_back(p);
    }
}

template <typename T>
DualArWeightsT<T>::DualArWeightsT(const DualArConfig& cfg) : config(cfg) {
    config.validate();
    const int d = config.model_dim;
    embed = Param<T>("embed", {config.text_vocab + config.semantic_vocab, d});
    slow_blocks.reserve(static_cast<size_t>(config.slow_layers));
    for (int i = 0; i < config.slow_layers; ++i) {
        slow_blocks.emplace_back(config, "slow." + std::to_string(i));
    }
    slow_final_gain = Param<T>("slow.final.gain", {d});
    slow_final_bias = Param<T>("slow.final.bias", {d});
    w_tok = Param<T>("w_tok", {config.semantic_vocab, d});
    cbk_embed = Param<T>("cbk.embed", {config.codebook_vocab, d});
    cbk_proj_w = Param<T>("cbk.proj.weight", {d, d});
    cbk_proj_b = Param<T>("cbk.proj.bias", {d});
    fast_blocks.reserve(static_cast<size_t>(config.fast_layers));
    for (int i = 0; i < config.fast_layers; ++i) {
        fast_blocks.emplace_back(config, "fast." + std::to_string(i));
    }
    fast_final_gain = Param<T>("fast.final.gain", {d});
    fast_final_bias = Param<T>("fast.final.bias", {d});
    w_cbk = Param<T>("w_cbk", {config.codebook_vocab, d});

    // Fresh weights behave like zero() until initialized: norm gains must be
    // usable, so set them to one here.
    zero();
}

template <typename T>
void DualArWeightsT<T>::zero() {
    for (Param<T>* p : params()) std::fill(p->value.begin(), p->value.end(), T(0));
    for (Param<T>* g : {&slow_final_gain, &fast_final_gain}) {
        std::fill(g->value.begin(), g->value.end(), T(1));
    }
    for (auto* blocks : {&slow_blocks, &fast_blocks}) {
        for (BlockWeightsT<T>& b : *blocks) {
            std::fill(b.ln1_gain.value.begin(), b.ln1_gain.value.end(), T(1));
            std::fill(b.ln2_gain.value.begin(), b.ln2_gain.value.end(), T(1));
        }
    }
}

template <typename T>
void DualArWeightsT<T>::init_random(Rng& rng) {
    zero();
    const double scale = 0.02;
    auto fill = [&](Param<T>& p) {
        for (T& v : p.value) v = static_cast<T>(rng.normal(0.0, scale));
    };
    fill(embed);
    for (auto* blocks : {&slow_blocks, &fast_blocks}) {
        for (BlockWeightsT<T>& b : *blocks) {
            fill(b.wq);
            fill(b.wk);
            fill(b.wv);
            fill(b.wo);
            fill(b.w1);
            fill(b.w2);
        }
    }
    fill(w_tok);
    fill(cbk_embed);
    fill(cbk_proj_w);
    fill(w_cbk);
}

template <typename T>
ParamRefs<T> DualArWeightsT<T>::params() {
    ParamRefs<T> out;
    out.push_back(&embed);
    for (BlockWeightsT<T>& b : slow_blocks) b.collect_params(out);
    out.push_back(&slow_final_gain);
    out.push_back(&slow_final_bias);
    out.push_back(&w_tok);
    out.push_back(&cbk_embed);
    out.push_back(&cbk_proj_w);
    out.push_back(&cbk_proj_b);
    for (BlockWeightsT<T>& b : fast_blocks) b.collect_params(out);
    out.push_back(&fast_final_gain);
    out.push_back(&fast_final_bias);
    out.push_back(&w_cbk);
    return out;
}

template <typename T>
int DualArWeightsT<T>::embed_row(const Token& token) const {
    if (token.kind == Token::Kind::kText) {
        if (token.id < 0 || token.id >= config.text_vocab) {
            throw DataError("token id " + std::to_string(token.id) +
                            " outside the text vocabulary");
        }
        return token.id;
    }
    if (token.id < 0 || token.id >= config.semantic_vocab) {
        throw DataError("token id " + std::to_string(token.id) +
                        " outside the semantic vocabulary");
    }
    return config.text_vocab + token.id;
}

template <typename T>
std::vector<NamedTensor> dualar_export_tensors(DualArWeightsT<T>& weights) {
    return export_params(weights.params());
}

template <typename T>
void dualar_import_tensors(DualArWeightsT<T>& weights, const std::vector<NamedTensor>& tensors) {
    import_params(weights.params(), tensors);
}

// ---------------------------------------------------------------------------
// KV cache
// ---------------------------------------------------------------------------

template <typename T>
KvCacheT<T>::KvCacheT(const DualArConfig& config) : config_(config) {
    config_.validate();
    const size_t per_layer = static_cast<size_t>(config.heads) * config.max_seq *
                             config.head_dim();
    slow_k_.assign(static_cast<size_t>(config.slow_layers), std::vector<T>(per_layer, T(0)));
    slow_v_ = slow_k_;
    fast_k_.assign(static_cast<size_t>(config.fast_layers), std::vector<T>(per_layer, T(0)));
    fast_v_ = fast_k_;
}

template <typename T>
void KvCacheT<T>::reset() {
    slow_cursor_ = 0;
    fast_cursor_ = 0;
}

template <typename T>
int KvCacheT<T>::claim_slow() {
    if (slow_cursor_ >= config_.max_seq) {
        throw CapacityError("kv cache: slow stack is full at " +
                            std::to_string(config_.max_seq) + " positions");
    }
    return slow_cursor_;
}

template <typename T>
int KvCacheT<T>::claim_fast() {
    if (fast_cursor_ >= config_.max_seq) {
        throw CapacityError("kv cache: fast stack is full at " +
                            std::to_string(config_.max_seq) + " positions");
    }
    return fast_cursor_;
}

// ---------------------------------------------------------------------------
// Rotary positions
// ---------------------------------------------------------------------------

template <typename T>
void apply_rotary(T* head_row, int head_dim, int64_t pos) {
    const int pairs = head_dim / 2; // an odd final element stays as-is
    for (int i = 0; i < pairs; ++i) {
        const double exponent = -2.0 * i / static_cast<double>(head_dim);
        const double theta = pos * std::pow(10000.0, exponent);
        const T c = static_cast<T>(std::cos(theta));
        const T s = static_cast<T>(std::sin(theta));
        const T x0 = head_row[2 * i];
        const T x1 = head_row[2 * i + 1];
        head_row[2 * i] = x0 * c - x1 * s;
        head_row[2 * i + 1] = x0 * s + x1 * c;
    }
}

// ---------------------------------------------------------------------------
// Shared block math
// ---------------------------------------------------------------------------

namespace {

// Full-sequence pass of one pre-norm block over x (T, D), positions 0..T-1.
// This is the uncached route: no cache is read or written.
template <typename T>
void block_batch(MatT<T>& x, const BlockWeightsT<T>& w, int heads) {
    const int rows = x.rows;
    const int d = x.cols;
    const int hd = d / heads;
    const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(hd)));

    MatT<T> n1(rows, d);
    kernels::layernorm_rows(x.data.data(), rows, d, w.ln1_gain.value.data(),
                            w.ln1_bias.value.data(), n1.data.data(), static_cast<T*>(nullptr),
                            static_cast<T*>(nullptr));
    MatT<T> q(rows, d), k(rows, d), v(rows, d);
    kernels::linear_forward(n1.data.data(), rows, d, w.wq.value.data(), w.bq.value.data(), d,
                            q.data.data());
    kernels::linear_forward(n1.data.data(), rows, d, w.wk.value.data(), w.bk.value.data(), d,
                            k.data.data());
    kernels::linear_forward(n1.data.data(), rows, d, w.wv.value.data(), w.bv.value.data(), d,
                            v.data.data());
    for (int t = 0; t < rows; ++t) {
        for (int h = 0; h < heads; ++h) {
            apply_rotary(q.row(t) + h * hd, hd, t);
            apply_rotary(k.row(t) + h * hd, hd, t);
        }
    }

    MatT<T> attn(rows, d);
    const std::ptrdiff_t work =
        static_cast<std::ptrdiff_t>(heads) * rows * rows * hd;
#pragma omp parallel for collapse(2) if (work >= kernels::kOmpGrain)
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < rows; ++i) {
            // Causal row: attend to positions 0..i only.
            std::vector<T> scores(static_cast<size_t>(i) + 1);
            const T* qi = q.row(i) + h * hd;
            for (int j = 0; j <= i; ++j) {
                const T* kj = k.row(j) + h * hd;
                T acc = T(0);
                for (int e = 0; e < hd; ++e) acc += qi[e] * kj[e];
                scores[static_cast<size_t>(j)] = acc * inv_sqrt;
            }
            kernels::softmax_rows_inplace(scores.data(), 1, i + 1);
            T* out = attn.row(i) + h * hd;
            for (int e = 0; e < hd; ++e) out[e] = T(0);
            for (int j = 0; j <= i; ++j) {
                const T p = scores[static_cast<size_t>(j)];
                const T* vj = v.row(j) + h * hd;
                for (int e = 0; e < hd; ++e) out[e] += p * vj[e];
            }
        }
    }

    MatT<T> proj(rows, d);
    kernels::linear_forward(attn.data.data(), rows, d, w.wo.value.data(), w.bo.value.data(), d,
                            proj.data.data());
    for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += proj.data[i];

    MatT<T> n2(rows, d);
    kernels::layernorm_rows(x.data.data(), rows, d, w.ln2_gain.value.data(),
                            w.ln2_bias.value.data(), n2.data.data(), static_cast<T*>(nullptr),
                            static_cast<T*>(nullptr));
    const int mlp = w.w1.shape[0];
    MatT<T> a(rows, mlp);
    kernels::linear_forward(n2.data.data(), rows, d, w.w1.value.data(), w.b1.value.data(), mlp,
                            a.data.data());
    for (T& z : a.data) z = kernels::silu(z);
    MatT<T> m(rows, d);
    kernels::linear_forward(a.data.data(), rows, mlp, w.w2.value.data(), w.b2.value.data(), d,
                            m.data.data());
    for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += m.data[i];
}

// Incremental pass of one block over a single row at absolute position
// `pos`, reading and appending the given layer's cache buffers.
template <typename T>
void block_incremental(T* x_row, const BlockWeightsT<T>& w, const DualArConfig& config,
                       KvCacheT<T>& cache, bool slow_stack, int layer, int pos) {
    const int d = config.model_dim;
    const int heads = config.heads;
    const int hd = config.head_dim();
    const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(hd)));

    std::vector<T> n1(static_cast<size_t>(d));
    kernels::layernorm_rows(x_row, 1, d, w.ln1_gain.value.data(), w.ln1_bias.value.data(),
                            n1.data(), static_cast<T*>(nullptr), static_cast<T*>(nullptr));
    std::vector<T> q(static_cast<size_t>(d)), kk(static_cast<size_t>(d)),
        vv(static_cast<size_t>(d));
    kernels::linear_forward(n1.data(), 1, d, w.wq.value.data(), w.bq.value.data(), d, q.data());
    kernels::linear_forward(n1.data(), 1, d, w.wk.value.data(), w.bk.value.data(), d, kk.data());
    kernels::linear_forward(n1.data(), 1, d, w.wv.value.data(), w.bv.value.data(), d, vv.data());
    for (int h = 0; h < heads; ++h) {
        apply_rotary(q.data() + h * hd, hd, pos);
        apply_rotary(kk.data() + h * hd, hd, pos);
    }

    std::vector<T> ctx(static_cast<size_t>(d), T(0));
    for (int h = 0; h < heads; ++h) {
        T* k_buf = slow_stack ? cache.slow_k(layer, h) : cache.fast_k(layer, h);
        T* v_buf = slow_stack ? cache.slow_v(layer, h) : cache.fast_v(layer, h);
        std::copy(kk.begin() + h * hd, kk.begin() + (h + 1) * hd,
                  k_buf + static_cast<size_t>(pos) * hd);
        std::copy(vv.begin() + h * hd, vv.begin() + (h + 1) * hd,
                  v_buf + static_cast<size_t>(pos) * hd);

        std::vector<T> scores(static_cast<size_t>(pos) + 1);
        const T* qh = q.data() + h * hd;
        for (int j = 0; j <= pos; ++j) {
            const T* kj = k_buf + static_cast<size_t>(j) * hd;
            T acc = T(0);
            for (int e = 0; e < hd; ++e) acc += qh[e] * kj[e];
            scores[static_cast<size_t>(j)] = acc * inv_sqrt;
        }
        kernels::softmax_rows_inplace(scores.data(), 1, pos + 1);
        T* out = ctx.data() + h * hd;
        for (int j = 0; j <= pos; ++j) {
            const T p = scores[static_cast<size_t>(j)];
            const T* vj = v_buf + static_cast<size_t>(j) * hd;
            for (int e = 0; e < hd; ++e) out[e] += p * vj[e];
        }
    }

    std::vector<T> proj(static_cast<size_t>(d));
    kernels::linear_forward(ctx.data(), 1, d, w.wo.value.data(), w.bo.value.data(), d,
                            proj.data());
    for (int i = 0; i < d; ++i) x_row[i] += proj[static_cast<size_t>(i)];

    std::vector<T> n2(static_cast<size_t>(d));
    kernels::layernorm_rows(x_row, 1, d, w.ln2_gain.value.data(), w.ln2_bias.value.data(),
                            n2.data(), static_cast<T*>(nullptr), static_cast<T*>(nullptr));
    const int mlp = w.w1.shape[0];
    std::vector<T> a(static_cast<size_t>(mlp));
    kernels::linear_forward(n2.data(), 1, d, w.w1.value.data(), w.b1.value.data(), mlp,
                            a.data());
    for (T& z : a) z = kernels::silu(z);
    std::vector<T> m(static_cast<size_t>(d));
    kernels::linear_forward(a.data(), 1, mlp, w.w2.value.data(), w.b2.value.data(), d,
                            m.data());
    for (int i = 0; i < d; ++i) x_row[i] += m[static_cast<size_t>(i)];
}

// Final norm + vocabulary projection for one row.
template <typename T>
void project_row(const T* x_row, const Param<T>& gain, const Param<T>& bias,
                 const Param<T>& w_out, int d, int vocab, T* logits_out) {
    std::vector<T> normed(static_cast<size_t>(d));
    kernels::layernorm_rows(x_row, 1, d, gain.value.data(), bias.value.data(), normed.data(),
                            static_cast<T*>(nullptr), static_cast<T*>(nullptr));
    kernels::linear_forward(normed.data(), 1, d, w_out.value.data(),
                            static_cast<const T*>(nullptr), vocab, logits_out);
}

} // namespace

// ---------------------------------------------------------------------------
// slow_forward
// ---------------------------------------------------------------------------

template <typename T>
SlowOutputT<T> slow_forward(const std::vector<Token>& tokens, const DualArWeightsT<T>& weights,
                            KvCacheT<T>* cache) {
    const DualArConfig& config = weights.config;
    const int d = config.model_dim;
    if (tokens.empty()) throw DomainError("slow_forward: needs at least one token");

    const int start = cache ? cache->slow_cursor() : 0;
    if (static_cast<size_t>(start) > tokens.size()) {
        throw DomainError("slow_forward: token sequence is shorter than the cached prefix");
    }
    const int count = static_cast<int>(tokens.size()) - start;

    SlowOutputT<T> out;
    out.hidden = MatT<T>(count, d);
    out.token_logits = MatT<T>(count, config.semantic_vocab);
    if (count == 0) return out;

    if (!cache) {
        // Uncached route: one batch pass over the full sequence.
        const int rows = static_cast<int>(tokens.size());
        MatT<T> x(rows, d);
        for (int t = 0; t < rows; ++t) {
            const int row = weights.embed_row(tokens[static_cast<size_t>(t)]);
            const T* src = weights.embed.value.data() + static_cast<size_t>(row) * d;
            std::copy(src, src + d, x.row(t));
        }
        for (const BlockWeightsT<T>& b : weights.slow_blocks) block_batch(x, b, config.heads);
        out.hidden = x;
        for (int t = 0; t < rows; ++t) {
            project_row(x.row(t), weights.slow_final_gain, weights.slow_final_bias,
                        weights.w_tok, d, config.semantic_vocab, out.token_logits.row(t));
        }
        return out;
    }

    // Cached route: process only the new suffix, one position at a time.
    for (int idx = 0; idx < count; ++idx) {
        const int pos = cache->claim_slow();
        const Token& token = tokens[static_cast<size_t>(start + idx)];
        const int row = weights.embed_row(token);
        std::vector<T> x_row(static_cast<size_t>(d));
        const T* src = weights.embed.value.data() + static_cast<size_t>(row) * d;
        std::copy(src, src + d, x_row.begin());
        for (int layer = 0; layer < config.slow_layers; ++layer) {
            block_incremental(x_row.data(), weights.slow_blocks[static_cast<size_t>(layer)],
                              config, *cache, /*slow_stack=*/true, layer, pos);
        }
        cache->commit_slow();
        std::copy(x_row.begin(), x_row.end(), out.hidden.row(idx));
        project_row(x_row.data(), weights.slow_final_gain, weights.slow_final_bias,
                    weights.w_tok, d, config.semantic_vocab, out.token_logits.row(idx));
    }
    return out;
}

// ---------------------------------------------------------------------------
// fast_forward
// ---------------------------------------------------------------------------

namespace {

// Input row g of the fast sequence: the frame hidden at position 0, then
// projected codebook embeddings.
template <typename T>
void fast_input_row(const std::vector<T>& frame_hidden, const std::vector<int32_t>& prefix,
                    const DualArWeightsT<T>& weights, int position, T* out) {
    const int d = weights.config.model_dim;
    if (position == 0) {
        std::copy(frame_hidden.begin(), frame_hidden.end(), out);
        return;
    }
    const int32_t code = prefix[static_cast<size_t>(position - 1)];
    const T* emb = weights.cbk_embed.value.data() + static_cast<size_t>(code) * d;
    kernels::linear_forward(emb, 1, d, weights.cbk_proj_w.value.data(),
                            weights.cbk_proj_b.value.data(), d, out);
}

} // namespace

template <typename T>
std::vector<T> fast_forward(const std::vector<T>& frame_hidden,
                            const std::vector<int32_t>& prefix,
                            const DualArWeightsT<T>& weights, KvCacheT<T>* cache) {
    const DualArConfig& config = weights.config;
    const int d = config.model_dim;
    if (static_cast<int>(frame_hidden.size()) != d) {
        throw ShapeError("fast_forward: frame hidden must have model_dim elements");
    }
    if (static_cast<int>(prefix.size()) > config.num_codebooks) {
        throw DomainError("fast_forward: prefix is longer than num_codebooks");
    }
    for (int32_t c : prefix) {
        if (c < 0 || c >= config.codebook_vocab) {
            throw DataError("fast_forward: codebook index " + std::to_string(c) +
                            " out of range");
        }
    }

    const int rows = 1 + static_cast<int>(prefix.size());
    std::vector<T> logits(static_cast<size_t>(config.codebook_vocab));

    if (!cache) {
        MatT<T> x(rows, d);
        for (int t = 0; t < rows; ++t) {
            fast_input_row(frame_hidden, prefix, weights, t, x.row(t));
        }
        for (const BlockWeightsT<T>& b : weights.fast_blocks) block_batch(x, b, config.heads);
        project_row(x.row(rows - 1), weights.fast_final_gain, weights.fast_final_bias,
                    weights.w_cbk, d, config.codebook_vocab, logits.data());
        return logits;
    }

    const int start = cache->fast_cursor();
    if (start >= rows) {
        throw DomainError("fast_forward: the fast cache is already past this prefix");
    }
    std::vector<T> x_row(static_cast<size_t>(d));
    for (int idx = start; idx < rows; ++idx) {
        const int pos = cache->claim_fast();
        fast_input_row(frame_hidden, prefix, weights, idx, x_row.data());
        for (int layer = 0; layer < config.fast_layers; ++layer) {
            block_incremental(x_row.data(), weights.fast_blocks[static_cast<size_t>(layer)],
                              config, *cache, /*slow_stack=*/false, layer, pos);
        }
        cache->commit_fast();
    }
    project_row(x_row.data(), weights.fast_final_gain, weights.fast_final_bias, weights.w_cbk,
                d, config.codebook_vocab, logits.data());
    return logits;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

void SamplerSpec::validate() const {
    if (k < 1) throw ConfigError("sampler: k must be positive");
    if (mode == Mode::kTopK && !(temperature > 0.0)) {
        throw ConfigError("sampler: temperature must be positive for top_k");
    }
}

std::string sampler_to_json(const SamplerSpec& spec) {
    nlohmann::json doc;
    doc["mode"] = spec.mode == SamplerSpec::Mode::kTopK ? "top_k" : "greedy";
    doc["k"] = spec.k;
    doc["temperature"] = spec.temperature;
    doc["seed"] = spec.seed;
    return doc.dump(2);
}

SamplerSpec sampler_from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("sampler: invalid JSON: ") + e.what());
    }
    SamplerSpec spec;
    try {
        const std::string mode = doc.value("mode", std::string("greedy"));
        if (mode == "greedy") {
            spec.mode = SamplerSpec::Mode::kGreedy;
        } else if (mode == "top_k") {
            spec.mode = SamplerSpec::Mode::kTopK;
        } else {
            throw FormatError("sampler: mode must be \"greedy\" or \"top_k\"");
        }
        spec.k = doc.value("k", spec.k);
        spec.temperature = doc.value("temperature", spec.temperature);
        spec.seed = doc.value("seed", spec.seed);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("sampler: ") + e.what());
    }
    spec.validate();
    return spec;
}

template <typename T>
int sample(const std::vector<T>& logits, const SamplerSpec& spec, Rng& rng) {
    spec.validate();
    if (logits.empty()) throw DomainError("sample: empty logit vector");

    bool any_finite = false;
    for (T v : logits) {
        const double x = static_cast<double>(v);
        if (std::isnan(x) || x == std::numeric_limits<double>::infinity()) {
            throw DomainError("sample: logits must be finite (or -inf for masked entries)");
        }
        if (std::isfinite(x)) any_finite = true;
    }
    if (!any_finite) throw DomainError("sample: all logits are -infinity");

    if (spec.mode == SamplerSpec::Mode::kGreedy) {
        int best = 0;
        for (int i = 1; i < static_cast<int>(logits.size()); ++i) {
            if (logits[static_cast<size_t>(i)] > logits[static_cast<size_t>(best)]) best = i;
        }
        return best;
    }

    // Top-k: highest logits first, ties toward lower indices.
    const int vocab = static_cast<int>(logits.size());
    const int k = std::min(spec.k, vocab);
    std::vector<int> order(static_cast<size_t>(vocab));
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
        const T la = logits[static_cast<size_t>(a)];
        const T lb = logits[static_cast<size_t>(b)];
        if (la != lb) return la > lb;
        return a < b;
    });

    const double top = static_cast<double>(logits[static_cast<size_t>(order[0])]);
    std::vector<double> weights(static_cast<size_t>(k));
    double total = 0.0;
    for (int i = 0; i < k; ++i) {
        const double l = static_cast<double>(logits[static_cast<size_t>(order[i])]);
        weights[static_cast<size_t>(i)] = std::exp((l - top) / spec.temperature);
        total += weights[static_cast<size_t>(i)];
    }
    const double u = rng.uniform() * total;
    double cum = 0.0;
    for (int i = 0; i < k; ++i) {
        cum += weights[static_cast<size_t>(i)];
        if (u < cum) return order[static_cast<size_t>(i)];
    }
    return order[static_cast<size_t>(k - 1)]; // rounding edge: last candidate
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

template <typename T>
GenerateResult generate(const std::vector<int>& text_ids, const DualArWeightsT<T>& weights,
                        const SamplerSpec& sampler, int max_frames, const FrameSink& sink) {
    const DualArConfig& config = weights.config;
    sampler.validate();
    if (text_ids.empty()) throw DomainError("generate: needs at least one text token");
    if (max_frames < 1) throw DomainError("generate: max_frames must be positive");

    std::vector<Token> tokens;
    tokens.reserve(text_ids.size());
    for (int id : text_ids) tokens.push_back(text_token(id));

    KvCacheT<T> cache(config);
    Rng rng(sampler.seed);
    GenerateResult result;

    SlowOutputT<T> out = slow_forward(tokens, weights, &cache);
    std::vector<T> logits(out.token_logits.row(out.token_logits.rows - 1),
                          out.token_logits.row(out.token_logits.rows - 1) +
                              config.semantic_vocab);
    std::vector<T> frame_hidden(out.hidden.row(out.hidden.rows - 1),
                                out.hidden.row(out.hidden.rows - 1) + config.model_dim);

    while (true) {
        const int semantic = sample(logits, sampler, rng);
        if (semantic == config.eos_id) break;

        FrameCodes frame;
        frame.semantic = semantic;
        cache.reset_fast();
        for (int g = 0; g < config.num_codebooks; ++g) {
            std::vector<T> cbk_logits = fast_forward(frame_hidden, frame.codes, weights, &cache);
            frame.codes.push_back(
                static_cast<int32_t>(sample(cbk_logits, sampler, rng)));
        }

        const int frame_index = static_cast<int>(result.frames.size());
        result.events.push_back({GenerateEvent::Kind::kFrameComputed, frame_index});
        result.frames.push_back(frame);
        if (sink) sink(result.frames.back());
        result.events.push_back({GenerateEvent::Kind::kFrameYielded, frame_index});

        if (static_cast<int>(result.frames.size()) >= max_frames) {
            result.truncated = true; // no EOS seen within the budget
            break;
        }

        // Feed the semantic token back and advance the slow stack one step.
        tokens.push_back(semantic_token(semantic));
        out = slow_forward(tokens, weights, &cache);
        std::copy(out.token_logits.row(0), out.token_logits.row(0) + config.semantic_vocab,
                  logits.begin());
        std::copy(out.hidden.row(0), out.hidden.row(0) + config.model_dim,
                  frame_hidden.begin());
    }
    return result;
}

// ---------------------------------------------------------------------------
// Single-head causal attention with backward (for the gradient checks)
// ---------------------------------------------------------------------------

template <typename T>
MatT<T> attention_forward(const MatT<T>& q, const MatT<T>& k, const MatT<T>& v,
                          MatT<T>* probs_out) {
    if (q.rows != k.rows || q.rows != v.rows || q.cols != k.cols) {
        throw ShapeError("attention: q/k/v row counts (and q/k widths) must agree");
    }
    const int rows = q.rows;
    const int d = q.cols;
    const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(d)));

    MatT<T> probs(rows, rows); // row i holds p_ij for j <= i, zeros above
    MatT<T> out(rows, v.cols);
    for (int i = 0; i < rows; ++i) {
        std::vector<T> scores(static_cast<size_t>(i) + 1);
        for (int j = 0; j <= i; ++j) {
            T acc = T(0);
            for (int e = 0; e < d; ++e) acc += q.at(i, e) * k.at(j, e);
            scores[static_cast<size_t>(j)] = acc * inv_sqrt;
        }
        kernels::softmax_rows_inplace(scores.data(), 1, i + 1);
        for (int j = 0; j <= i; ++j) probs.at(i, j) = scores[static_cast<size_t>(j)];
        for (int e = 0; e < v.cols; ++e) {
            T acc = T(0);
            for (int j = 0; j <= i; ++j) acc += probs.at(i, j) * v.at(j, e);
            out.at(i, e) = acc;
        }
    }
    if (probs_out) *probs_out = std::move(probs);
    return out;
}

template <typename T>
void attention_backward(const MatT<T>& q, const MatT<T>& k, const MatT<T>& v,
                        const MatT<T>& probs, const MatT<T>& d_out, MatT<T>& dq, MatT<T>& dk,
                        MatT<T>& dv) {
    const int rows = q.rows;
    const int d = q.cols;
    const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(d)));
    dq = MatT<T>(rows, d);
    dk = MatT<T>(rows, d);
    dv = MatT<T>(rows, v.cols);

    for (int i = 0; i < rows; ++i) {
        // dv_j += p_ij * dout_i; dp_ij = dout_i . v_j
        std::vector<T> dp(static_cast<size_t>(i) + 1, T(0));
        for (int j = 0; j <= i; ++j) {
            T acc = T(0);
            for (int e = 0; e < v.cols; ++e) {
                acc += d_out.at(i, e) * v.at(j, e);
                dv.at(j, e) += probs.at(i, j) * d_out.at(i, e);
            }
            dp[static_cast<size_t>(j)] = acc;
        }
        // Softmax backward on the causal row.
        T dot = T(0);
        for (int j = 0; j <= i; ++j) dot += dp[static_cast<size_t>(j)] * probs.at(i, j);
        for (int j = 0; j <= i; ++j) {
            const T ds = probs.at(i, j) * (dp[static_cast<size_t>(j)] - dot) * inv_sqrt;
            for (int e = 0; e < d; ++e) {
                dq.at(i, e) += ds * k.at(j, e);
                dk.at(j, e) += ds * q.at(i, e);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

template struct BlockWeightsT<float>;
template struct BlockWeightsT<double>;
template struct DualArWeightsT<float>;
template struct DualArWeightsT<double>;
template class KvCacheT<float>;
template class KvCacheT<double>;

template void apply_rotary(float*, int, int64_t);
template void apply_rotary(double*, int, int64_t);

template SlowOutputT<float> slow_forward(const std::vector<Token>&, const DualArWeightsT<float>&,
                                         KvCacheT<float>*);
template SlowOutputT<double> slow_forward(const std::vector<Token>&,
                                          const DualArWeightsT<double>&, KvCacheT<double>*);
template std::vector<float> fast_forward(const std::vector<float>&, const std::vector<int32_t>&,
                                         const DualArWeightsT<float>&, KvCacheT<float>*);
template std::vector<double> fast_forward(const std::vector<double>&,
                                          const std::vector<int32_t>&,
                                          const DualArWeightsT<double>&, KvCacheT<double>*);
template int sample(const std::vector<float>&, const SamplerSpec&, Rng&);
template int sample(const std::vector<double>&, const SamplerSpec&, Rng&);
template GenerateResult generate(const std::vector<int>&, const DualArWeightsT<float>&,
                                 const SamplerSpec&, int, const FrameSink&);
template GenerateResult generate(const std::vector<int>&, const DualArWeightsT<double>&,
                                 const SamplerSpec&, int, const FrameSink&);
template MatT<float> attention_forward(const MatT<float>&, const MatT<float>&,
                                       const MatT<float>&, MatT<float>*);
template MatT<double> attention_forward(const MatT<double>&, const MatT<double>&,
                                        const MatT<double>&, MatT<double>*);
template void attention_backward(const MatT<float>&, const MatT<float>&, const MatT<float>&,
                                 const MatT<float>&, const MatT<float>&, MatT<float>&,
                                 MatT<float>&, MatT<float>&);
template void attention_backward(const MatT<double>&, const MatT<double>&, const MatT<double>&,
                                 const MatT<double>&, const MatT<double>&, MatT<double>&,
                                 MatT<double>&, MatT<double>&);

template std::vector<NamedTensor> dualar_export_tensors(DualArWeightsT<float>&);
template std::vector<NamedTensor> dualar_export_tensors(DualArWeightsT<double>&);
template void dualar_import_tensors(DualArWeightsT<float>&, const std::vector<NamedTensor>&);
template void dualar_import_tensors(DualArWeightsT<double>&, const std::vector<NamedTensor>&);

} // namespace fishcore
