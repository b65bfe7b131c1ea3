#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "fishcore/bitstream.hpp"
#include "fishcore/dualar.hpp"
#include "fishcore/error.hpp"
#include "fishcore/rng.hpp"

using namespace fishcore;

namespace {

DualArConfig toy_config() {
    DualArConfig c;
    c.model_dim = 16;
    c.slow_layers = 2;
    c.fast_layers = 2;
    c.heads = 4;
    c.text_vocab = 12;
    c.semantic_vocab = 9;
    c.num_codebooks = 3;
    c.codebook_vocab = 7;
    c.max_seq = 48;
    c.bos_id = 0;
    c.eos_id = 1;
    return c;
}

DualArWeights random_model(const DualArConfig& config, uint64_t seed) {
    DualArWeights w(config);
    Rng rng(seed);
    w.init_random(rng);
    return w;
}

std::vector<Token> text_tokens(std::initializer_list<int> ids) {
    std::vector<Token> out;
    for (int id : ids) out.push_back(text_token(id));
    return out;
}

double max_abs_row_diff(const Mat& a, const Mat& b, int row) {
    double m = 0.0;
    for (int c = 0; c < a.cols; ++c) {
        m = std::max(m, std::abs(static_cast<double>(a.at(row, c)) - b.at(row, c)));
    }
    return m;
}

} // namespace

TEST_CASE("config validation") {
    DualArConfig c = toy_config();
    c.validate();

    c.heads = 3; // 16 is not divisible by 3
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = toy_config();
    c.eos_id = 9;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = toy_config();
    const DualArConfig back = dualar_config_from_json(dualar_config_to_json(c));
    CHECK(back.model_dim == c.model_dim);
    CHECK(back.semantic_vocab == c.semantic_vocab);
    CHECK(back.num_codebooks == c.num_codebooks);
    CHECK(back.eos_id == c.eos_id);
}

TEST_CASE("slow forward shape law") {
    DualArConfig c = toy_config();
    c.model_dim = 8;
    c.heads = 2;
    c.semantic_vocab = 11;
    const DualArWeights w = random_model(c, 71);

    const SlowOutput out = slow_forward(text_tokens({1, 2, 3, 4}), w);
    CHECK(out.hidden.rows == 4);
    CHECK(out.hidden.cols == 8);
    CHECK(out.token_logits.rows == 4);
    CHECK(out.token_logits.cols == 11);
}

TEST_CASE("zero weights give all-zero logits and the tie rule picks index 0") {
    const DualArConfig c = toy_config();
    DualArWeights w(c); // freshly built weights are zero with unit norm gains

    const SlowOutput out = slow_forward(text_tokens({3, 5}), w);
    for (float v : out.token_logits.data) CHECK(v == 0.0f);

    SamplerSpec greedy;
    Rng rng(0);
    const std::vector<float> logits(out.token_logits.row(1),
                                    out.token_logits.row(1) + c.semantic_vocab);
    CHECK(sample(logits, greedy, rng) == 0);
}

TEST_CASE("token ids outside their vocabulary are rejected") {
    const DualArConfig c = toy_config();
    const DualArWeights w = random_model(c, 72);
    CHECK_THROWS_AS(slow_forward(text_tokens({c.text_vocab}), w), DataError);
    CHECK_THROWS_AS(slow_forward({semantic_token(c.semantic_vocab)}, w), DataError);
    CHECK_THROWS_AS(slow_forward({}, w), DomainError);
}

TEST_CASE("causality: later tokens cannot influence earlier logits") {
    const DualArConfig c = toy_config();
    const DualArWeights w = random_model(c, 73);

    auto tokens = text_tokens({1, 2, 3, 4, 5, 6});
    const SlowOutput base = slow_forward(tokens, w);
    tokens[4] = text_token(9);
    const SlowOutput perturbed = slow_forward(tokens, w);

    for (int r = 0; r < 4; ++r) {
        for (int col = 0; col < c.semantic_vocab; ++col) {
            CHECK(base.token_logits.at(r, col) == perturbed.token_logits.at(r, col));
        }
    }
    // The perturbed position itself must change (weights are generic).
    CHECK(max_abs_row_diff(base.token_logits, perturbed.token_logits, 4) > 0.0);
}

TEST_CASE("cached incremental slow forward matches the full recompute") {
    for (uint64_t seed : {81u, 82u, 83u}) {
        const DualArConfig c = toy_config();
        const DualArWeights w = random_model(c, seed);
        const auto tokens = text_tokens({2, 7, 1, 0, 4, 4, 8});

        const SlowOutput full = slow_forward(tokens, w);

        KvCache cache(c);
        Mat cached_logits(static_cast<int>(tokens.size()), c.semantic_vocab);
        for (size_t t = 0; t < tokens.size(); ++t) {
            const std::vector<Token> prefix(tokens.begin(), tokens.begin() + t + 1);
            const SlowOutput step = slow_forward(prefix, w, &cache);
            REQUIRE(step.token_logits.rows == 1);
            for (int col = 0; col < c.semantic_vocab; ++col) {
                cached_logits.at(static_cast<int>(t), col) = step.token_logits.at(0, col);
            }
        }

        for (int r = 0; r < full.token_logits.rows; ++r) {
            CHECK(max_abs_row_diff(full.token_logits, cached_logits, r) <= 1e-5);
            // Greedy decisions must agree exactly.
            int full_arg = 0, cached_arg = 0;
            for (int col = 1; col < c.semantic_vocab; ++col) {
                if (full.token_logits.at(r, col) > full.token_logits.at(r, full_arg))
                    full_arg = col;
                if (cached_logits.at(r, col) > cached_logits.at(r, cached_arg))
                    cached_arg = col;
            }
            CHECK(full_arg == cached_arg);
        }
    }
}

TEST_CASE("cached incremental fast forward matches the full recompute") {
    const DualArConfig c = toy_config();
    const DualArWeights w = random_model(c, 74);
    Rng rng(75);
    std::vector<float> frame_hidden(static_cast<size_t>(c.model_dim));
    for (auto& v : frame_hidden) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    KvCache cache(c);
    cache.reset_fast();
    std::vector<int32_t> prefix;
    for (int g = 0; g < c.num_codebooks; ++g) {
        const auto cached = fast_forward(frame_hidden, prefix, w, &cache);
        const auto full = fast_forward(frame_hidden, prefix, w);
        REQUIRE(cached.size() == static_cast<size_t>(c.codebook_vocab));
        for (size_t i = 0; i < cached.size(); ++i) {
            CHECK(std::abs(cached[i] - full[i]) <= 1e-5f);
        }
        prefix.push_back(static_cast<int32_t>(g % c.codebook_vocab));
    }
}

TEST_CASE("fast forward validates its inputs") {
    const DualArConfig c = toy_config();
    const DualArWeights w = random_model(c, 76);
    const std::vector<float> fh(static_cast<size_t>(c.model_dim), 0.1f);

    CHECK_THROWS_AS(fast_forward(std::vector<float>(3, 0.0f), {}, w), ShapeError);
    CHECK_THROWS_AS(fast_forward(fh, std::vector<int32_t>(c.num_codebooks + 1, 0), w),
                    DomainError);
    CHECK_THROWS_AS(fast_forward(fh, {static_cast<int32_t>(c.codebook_vocab)}, w), DataError);

    // Same inputs twice produce bit-identical logits.
    const auto a = fast_forward(fh, {1, 2}, w);
    const auto b = fast_forward(fh, {1, 2}, w);
    CHECK(a == b);
}

TEST_CASE("kv cache capacity is enforced") {
    DualArConfig c = toy_config();
    c.max_seq = 4;
    const DualArWeights w = random_model(c, 77);
    KvCache cache(c);
    const auto tokens = text_tokens({1, 2, 3, 4, 5});
    CHECK_THROWS_AS(slow_forward(tokens, w, &cache), CapacityError);
}

TEST_CASE("rotary positions") {
    std::vector<double> row{0.3, -0.7, 1.1, 0.25};
    auto copy = row;
    apply_rotary(copy.data(), 4, 0);
    CHECK(copy == row); // position 0 is the identity rotation

    apply_rotary(copy.data(), 4, 17);
    // Rotations preserve each pair's norm.
    CHECK(copy[0] * copy[0] + copy[1] * copy[1] ==
          doctest::Approx(row[0] * row[0] + row[1] * row[1]).epsilon(1e-12));
    CHECK(copy[2] * copy[2] + copy[3] * copy[3] ==
          doctest::Approx(row[2] * row[2] + row[3] * row[3]).epsilon(1e-12));

    // An odd head dimension leaves the unpaired last element alone.
    std::vector<double> odd{1.0, 2.0, 5.0};
    apply_rotary(odd.data(), 3, 9);
    CHECK(odd[2] == 5.0);
}

TEST_CASE("attention probabilities are causal and normalized") {
    Rng rng(78);
    const int T = 6, hd = 8;
    MatD q(T, hd), k(T, hd), v(T, hd);
    for (auto& x : q.data) x = rng.uniform(-1.0, 1.0);
    for (auto& x : k.data) x = rng.uniform(-1.0, 1.0);
    for (auto& x : v.data) x = rng.uniform(-1.0, 1.0);

    MatD probs;
    const MatD out = attention_forward(q, k, v, &probs);
    CHECK(out.rows == T);
    CHECK(out.cols == hd);

    for (int i = 0; i < T; ++i) {
        double sum = 0.0;
        for (int j = 0; j < T; ++j) {
            if (j > i) CHECK(probs.at(i, j) == 0.0);
            sum += probs.at(i, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    // The first position can only attend to itself.
    for (int d = 0; d < hd; ++d) {
        CHECK(out.at(0, d) == doctest::Approx(v.at(0, d)).epsilon(1e-12));
    }
}

TEST_CASE("greedy sampling breaks ties toward the lowest index") {
    SamplerSpec greedy;
    Rng rng(0);
    CHECK(sample(std::vector<double>{0.1, 0.9, 0.9}, greedy, rng) == 1);
    CHECK(sample(std::vector<double>{2.0, 2.0}, greedy, rng) == 0);
}

TEST_CASE("top-k with k = 1 is greedy for any seed") {
    Rng data_rng(79);
    for (uint64_t seed = 0; seed < 20; ++seed) {
        std::vector<double> logits(11);
        for (auto& v : logits) v = data_rng.uniform(-2.0, 2.0);

        SamplerSpec greedy;
        SamplerSpec top1;
        top1.mode = SamplerSpec::Mode::kTopK;
        top1.k = 1;
        top1.seed = seed;

        Rng ga(0), gb(seed);
        CHECK(sample(logits, greedy, ga) == sample(logits, top1, gb));
    }
}

TEST_CASE("top-k on a two-way tie splits evenly") {
    SamplerSpec spec;
    spec.mode = SamplerSpec::Mode::kTopK;
    spec.k = 2;
    spec.temperature = 1.0;
    spec.seed = 4242;

    Rng rng(spec.seed);
    const std::vector<double> logits{0.0, 0.0};
    int zeros = 0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        if (sample(logits, spec, rng) == 0) ++zeros;
    }
    const double freq = static_cast<double>(zeros) / draws;
    CHECK(freq == doctest::Approx(0.5).epsilon(0.02)); // 0.5 +/- 0.01
}

TEST_CASE("sampling rejects malformed logits") {
    SamplerSpec greedy;
    Rng rng(0);
    const double inf = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(sample(std::vector<double>{0.0, std::nan("")}, greedy, rng), DomainError);
    CHECK_THROWS_AS(sample(std::vector<double>{0.0, inf}, greedy, rng), DomainError);
    CHECK_THROWS_AS(sample(std::vector<double>{-inf, -inf}, greedy, rng), DomainError);
    CHECK_THROWS_AS(sample(std::vector<double>{}, greedy, rng), DomainError);

    // -inf entries act as masks; the rest still sample.
    CHECK(sample(std::vector<double>{-inf, 1.0}, greedy, rng) == 1);

    SamplerSpec bad;
    bad.mode = SamplerSpec::Mode::kTopK;
    bad.temperature = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.temperature = 1.0;
    bad.k = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    SamplerSpec topk;
    topk.mode = SamplerSpec::Mode::kTopK;
    topk.k = 3;
    topk.temperature = 0.8;
    topk.seed = 99;
    const SamplerSpec round = sampler_from_json(sampler_to_json(topk));
    CHECK(round.mode == SamplerSpec::Mode::kTopK);
    CHECK(round.k == 3);
    CHECK(round.temperature == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(round.seed == 99);
}

TEST_CASE("generation is deterministic and streams frame by frame") {
    const DualArConfig c = toy_config();
    const DualArWeights w = random_model(c, 91);
    SamplerSpec sampler; // greedy

    const GenerateResult a = generate({1, 2, 3}, w, sampler, 4);
    const GenerateResult b = generate({1, 2, 3}, w, sampler, 4);
    REQUIRE(a.frames.size() == b.frames.size());
    for (size_t i = 0; i < a.frames.size(); ++i) {
        CHECK(a.frames[i].semantic == b.frames[i].semantic);
        CHECK(a.frames[i].codes == b.frames[i].codes);
    }

    // Each frame carries exactly num_codebooks indices inside the vocabulary.
    for (const FrameCodes& f : a.frames) {
        CHECK(f.codes.size() == static_cast<size_t>(c.num_codebooks));
        for (int32_t code : f.codes) {
            CHECK(code >= 0);
            CHECK(code < c.codebook_vocab);
        }
    }

    if (a.frames.size() >= 2) {
        // Frame 0 must be yielded before the last frame is computed.
        int yield0 = -1, compute_last = -1;
        const int last = static_cast<int>(a.frames.size()) - 1;
        for (size_t i = 0; i < a.events.size(); ++i) {
            const auto& e = a.events[i];
            if (e.kind == GenerateEvent::Kind::kFrameYielded && e.frame == 0)
                yield0 = static_cast<int>(i);
            if (e.kind == GenerateEvent::Kind::kFrameComputed && e.frame == last)
                compute_last = static_cast<int>(i);
        }
        REQUIRE(yield0 >= 0);
        REQUIRE(compute_last >= 0);
        CHECK(yield0 < compute_last);
    }

    // The sink sees the frames in order, as they are produced.
    std::vector<int> seen;
    generate({1, 2, 3}, w, sampler, 4, [&](const FrameCodes& f) {
        seen.push_back(f.semantic);
    });
    REQUIRE(seen.size() == a.frames.size());
    for (size_t i = 0; i < seen.size(); ++i) CHECK(seen[i] == a.frames[i].semantic);
}

TEST_CASE("zero weights run to the frame budget; eos id 0 stops immediately") {
    DualArConfig c = toy_config();
    DualArWeights zero(c); // logits all zero, greedy keeps emitting token 0

    const GenerateResult full = generate({2, 3}, zero, SamplerSpec{}, 5);
    CHECK(full.frames.size() == 5);
    CHECK(full.truncated);
    for (const FrameCodes& f : full.frames) {
        CHECK(f.semantic == 0);
        for (int32_t code : f.codes) CHECK(code == 0);
    }

    c.eos_id = 0; // now the first sampled token is EOS
    DualArWeights stop(c);
    const GenerateResult empty = generate({2, 3}, stop, SamplerSpec{}, 5);
    CHECK(empty.frames.empty());
    CHECK_FALSE(empty.truncated);
}

TEST_CASE("generate validates its inputs") {
    const DualArConfig c = toy_config();
    const DualArWeights w(c);
    CHECK_THROWS_AS(generate({}, w, SamplerSpec{}, 4), DomainError);
    CHECK_THROWS_AS(generate({1}, w, SamplerSpec{}, 0), DomainError);
    CHECK_THROWS_AS(generate({c.text_vocab}, w, SamplerSpec{}, 4), DataError);
}

TEST_CASE("cached generation matches a full-recompute loop") {
    const DualArConfig c = toy_config();
    const DualArWeights w = random_model(c, 92);
    SamplerSpec greedy;

    const GenerateResult fast_path = generate({4, 0, 7}, w, greedy, 6);

    // Reference loop: no caches anywhere, everything recomputed from scratch.
    std::vector<Token> tokens = text_tokens({4, 0, 7});
    std::vector<FrameCodes> slow_path;
    Rng rng(greedy.seed);
    while (static_cast<int>(slow_path.size()) < 6) {
        const SlowOutput out = slow_forward(tokens, w);
        const int last = out.token_logits.rows - 1;
        const std::vector<float> logits(out.token_logits.row(last),
                                        out.token_logits.row(last) + c.semantic_vocab);
        const int semantic = sample(logits, greedy, rng);
        if (semantic == c.eos_id) break;

        const std::vector<float> fh(out.hidden.row(last), out.hidden.row(last) + c.model_dim);
        FrameCodes frame;
        frame.semantic = semantic;
        for (int g = 0; g < c.num_codebooks; ++g) {
            const auto cbk_logits = fast_forward(fh, frame.codes, w);
            frame.codes.push_back(static_cast<int32_t>(sample(cbk_logits, greedy, rng)));
        }
        slow_path.push_back(frame);
        tokens.push_back(semantic_token(semantic));
    }

    REQUIRE(fast_path.frames.size() == slow_path.size());
    for (size_t i = 0; i < slow_path.size(); ++i) {
        CHECK(fast_path.frames[i].semantic == slow_path[i].semantic);
        CHECK(fast_path.frames[i].codes == slow_path[i].codes);
    }
}

TEST_CASE("weights survive the model-file round trip") {
    const DualArConfig c = toy_config();
    DualArWeights w = random_model(c, 93);

    const auto bytes = save_model(dualar_export_tensors(w));
    DualArWeights restored(c);
    dualar_import_tensors(restored, load_model(bytes));

    const GenerateResult a = generate({1, 5}, w, SamplerSpec{}, 3);
    const GenerateResult b = generate({1, 5}, restored, SamplerSpec{}, 3);
    REQUIRE(a.frames.size() == b.frames.size());
    for (size_t i = 0; i < a.frames.size(); ++i) {
        CHECK(a.frames[i].semantic == b.frames[i].semantic);
        CHECK(a.frames[i].codes == b.frames[i].codes);
    }
}
