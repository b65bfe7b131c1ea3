// fishctl: command-line front end for the codec, generator, and trainer.
//
// Subcommands: synth-data, train, encode, decode, generate, stats, bench,
// init-model. Every command writes one JSON document to standard output
// (JSON-lines frame streams go to --out files) and diagnostics to standard
// error. Exit codes: 0 success, 2 missing file, 3 shape mismatch, 4 bad
// model/stream file, 1 anything else.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fishcore/bench.hpp"
#include "fishcore/bitstream.hpp"
#include "fishcore/dualar.hpp"
#include "fishcore/error.hpp"
#include "fishcore/firefly.hpp"
#include "fishcore/gfsq.hpp"
#include "fishcore/rng.hpp"
#include "fishcore/threads.hpp"
#include "fishcore/train.hpp"

using nlohmann::json;
using namespace fishcore;

namespace {

// Thrown by helpers that already printed their diagnostic and know the code.
struct ExitWith {
    int code;
};

[[noreturn]] void fail(int code, const std::string& message) {
    std::cerr << "error: " << message << "\n";
    throw ExitWith{code};
}

void require_file(const std::string& path) {
    if (!std::filesystem::exists(path)) fail(2, "no such file: " + path);
}

std::string read_text_file(const std::string& path) {
    require_file(path);
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(2, "cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return text;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(1, "cannot write " + path);
    out << text;
}

void emit(const json& doc, bool compact) {
    std::cout << (compact ? doc.dump() : doc.dump(2)) << "\n";
}

// ---------------------------------------------------------------------------
// Raw tensor files: 32-bit floats plus a "<path>.json" shape sidecar.
// ---------------------------------------------------------------------------

FrameTensor read_raw_tensor(const std::string& path) {
    require_file(path);
    const std::string sidecar_path = path + ".json";
    require_file(sidecar_path);

    int batch = 0, channels = 0, length = 0;
    try {
        const json doc = json::parse(read_text_file(sidecar_path));
        batch = doc.at("batch").get<int>();
        channels = doc.at("channels").get<int>();
        length = doc.at("length").get<int>();
    } catch (const json::exception& e) {
        fail(4, sidecar_path + ": " + e.what());
    }
    if (batch < 1 || channels < 1 || length < 1) {
        fail(3, sidecar_path + ": dimensions must be positive");
    }

    const std::vector<uint8_t> bytes = read_file(path);
    const size_t expected =
        static_cast<size_t>(batch) * channels * length * sizeof(float);
    if (bytes.size() != expected) {
        fail(3, path + ": holds " + std::to_string(bytes.size()) + " bytes, sidecar shape needs " +
                    std::to_string(expected));
    }

    FrameTensor x(batch, channels, length);
    std::memcpy(x.data.data(), bytes.data(), expected);
    return x;
}

void write_raw_tensor(const std::string& path, const FrameTensor& x) {
    std::vector<uint8_t> bytes(x.data.size() * sizeof(float));
    std::memcpy(bytes.data(), x.data.data(), bytes.size());
    write_file(path, bytes);
    json sidecar;
    sidecar["batch"] = x.batch;
    sidecar["channels"] = x.channels;
    sidecar["length"] = x.length;
    write_text_file(path + ".json", sidecar.dump(2));
}

// ---------------------------------------------------------------------------
// Model loading. A weights file "m.ffm" pairs with a "m.ffm.json" config
// sidecar; anything unreadable inside either is a bad-model failure (4).
// ---------------------------------------------------------------------------

DualArWeights load_dualar_model(const std::string& path) {
    require_file(path);
    require_file(path + ".json");
    try {
        const DualArConfig config = dualar_config_from_json(read_text_file(path + ".json"));
        DualArWeights weights(config);
        dualar_import_tensors(weights, load_model(read_file(path)));
        return weights;
    } catch (const ExitWith&) {
        throw;
    } catch (const Error& e) {
        fail(4, path + ": " + e.what());
    }
}

CodecModel load_codec_model(const std::string& config_path, const std::string& model_path) {
    const CodecModelConfig config = codec_config_from_json(read_text_file(config_path));
    CodecModel model(config);
    if (!model_path.empty()) {
        require_file(model_path);
        try {
            codec_import_tensors(model, load_model(read_file(model_path)));
        } catch (const Error& e) {
            fail(4, model_path + ": " + e.what());
        }
    }
    return model;
}

SamplerSpec parse_sampler(const std::string& arg) {
    if (arg.empty()) return SamplerSpec{};
    // Inline JSON or a path to a JSON file.
    const std::string text = arg.front() == '{' ? arg : read_text_file(arg);
    return sampler_from_json(text);
}

// ---------------------------------------------------------------------------
// Options shared by the subcommands.
// ---------------------------------------------------------------------------

struct Options {
    bool compact = false; // --json: one-line output
    bool trace = false;
    bool has_seed = false;
    uint64_t seed = 0;

    std::string config_path;
    std::string in_path;
    std::string out_path;
    std::string model_path;
    std::string data_path;
    std::string csv_path;
    std::string sampler_arg;
    std::vector<int> text_ids;
    int max_frames = 32;
    int repeats = 5;
    double fps = 50.0;
    int signals = 8;
    int length = 256;
    int tones = 3;
    int decode_length = 0; // 0 = use the stream's recorded length
    bool zero_init = false;
};

// ---------------------------------------------------------------------------
// Subcommand bodies.
// ---------------------------------------------------------------------------

int cmd_synth_data(const Options& opt) {
    SynthSpec spec;
    if (!opt.config_path.empty()) {
        try {
            const json doc = json::parse(read_text_file(opt.config_path));
            spec.num_signals = doc.value("num_signals", spec.num_signals);
            spec.length = doc.value("length", spec.length);
            spec.num_tones = doc.value("num_tones", spec.num_tones);
            spec.seed = doc.value("seed", spec.seed);
        } catch (const json::exception& e) {
            fail(1, opt.config_path + ": " + e.what());
        }
    } else {
        spec.num_signals = opt.signals;
        spec.length = opt.length;
        spec.num_tones = opt.tones;
    }
    if (opt.has_seed) spec.seed = opt.seed;
    spec.validate();

    const auto items = synth_dataset<float>(spec);
    FrameTensor stacked(spec.num_signals, 1, spec.length);
    for (size_t i = 0; i < items.size(); ++i) {
        std::copy(items[i].data.begin(), items[i].data.end(),
                  stacked.data.begin() +
                      static_cast<std::ptrdiff_t>(i * static_cast<size_t>(spec.length)));
    }
    write_raw_tensor(opt.out_path, stacked);

    json doc;
    doc["path"] = opt.out_path;
    doc["signals"] = spec.num_signals;
    doc["length"] = spec.length;
    doc["num_tones"] = spec.num_tones;
    doc["seed"] = spec.seed;
    doc["bytes"] = stacked.data.size() * sizeof(float);
    emit(doc, opt.compact);
    return 0;
}

int cmd_train(const Options& opt) {
    const FrameTensor stacked = read_raw_tensor(opt.data_path);
    std::vector<FrameTensor> dataset;
    dataset.reserve(static_cast<size_t>(stacked.batch));
    for (int b = 0; b < stacked.batch; ++b) {
        FrameTensor item(1, stacked.channels, stacked.length);
        const float* src = stacked.row(b, 0);
        std::copy(src, src + item.data.size(), item.data.begin());
        dataset.push_back(std::move(item));
    }

    CodecModelConfig codec_config;
    TrainConfig train_config;
    try {
        const json doc = json::parse(read_text_file(opt.config_path));
        codec_config = codec_config_from_json(doc.at("codec").dump());
        train_config = doc.contains("train") ? train_config_from_json(doc.at("train").dump())
                                             : TrainConfig::toy();
    } catch (const json::exception& e) {
        fail(1, opt.config_path + ": " + e.what());
    }
    if (opt.has_seed) train_config.seed = opt.seed;

    CodecModel model(codec_config);
    Rng rng(train_config.seed);
    model.init_random(rng);

    std::ofstream csv;
    if (!opt.csv_path.empty()) {
        csv.open(opt.csv_path, std::ios::trunc);
        if (!csv) fail(1, "cannot write " + opt.csv_path);
    }
    const TrainResult result =
        train_codec(dataset, model, train_config, csv.is_open() ? &csv : nullptr);

    write_file(opt.out_path, save_model(codec_export_tensors(model)));
    write_text_file(opt.out_path + ".json", codec_config_to_json(codec_config));

    json doc;
    doc["model"] = opt.out_path;
    doc["steps"] = train_config.total_steps;
    doc["initial_loss"] = result.initial_loss;
    doc["final_loss"] = result.final_loss;
    doc["final_utilization"] = result.final_utilization;
    doc["group_utilization"] = result.final_group_utilization;
    doc["curve_points"] = result.curve.size();
    emit(doc, opt.compact);
    return 0;
}

int cmd_encode(const Options& opt) {
    const FrameTensor x = read_raw_tensor(opt.in_path);
    if (x.batch != 1) {
        fail(3, opt.in_path + ": code streams carry one utterance; batch must be 1, got " +
                    std::to_string(x.batch));
    }
    CodecModel model = load_codec_model(opt.config_path, opt.model_path);

    const CodeGrid codes = model.encode(x);
    const std::vector<uint8_t> bytes =
        pack_codes(codes, static_cast<uint32_t>(x.length));
    write_file(opt.out_path, bytes);

    const double raw_bits = 32.0 * static_cast<double>(x.channels) * x.length;
    json doc;
    doc["frames"] = codes.frames;
    doc["bytes"] = bytes.size();
    doc["compression_ratio"] = raw_bits / static_cast<double>(payload_bits(codes));
    emit(doc, opt.compact);
    return 0;
}

int cmd_decode(const Options& opt) {
    require_file(opt.in_path);
    const UnpackedCodes stream = unpack_codes(read_file(opt.in_path));
    CodecModel model = load_codec_model(opt.config_path, opt.model_path);

    const int target_len =
        opt.decode_length > 0 ? opt.decode_length : static_cast<int>(stream.original_len);
    const FrameTensor x = model.decode(stream.codes, target_len);
    write_raw_tensor(opt.out_path, x);

    json doc;
    doc["frames"] = stream.codes.frames;
    doc["samples"] = target_len;
    doc["channels"] = x.channels;
    doc["path"] = opt.out_path;
    emit(doc, opt.compact);
    return 0;
}

int cmd_generate(const Options& opt) {
    DualArWeights weights = load_dualar_model(opt.model_path);
    SamplerSpec sampler = parse_sampler(opt.sampler_arg);
    if (opt.has_seed) sampler.seed = opt.seed;

    std::ofstream out(opt.out_path, std::ios::trunc);
    if (!out) fail(1, "cannot write " + opt.out_path);

    const auto t0 = std::chrono::steady_clock::now();
    int frame_idx = 0;
    const GenerateResult result =
        generate(opt.text_ids, weights, sampler, opt.max_frames, [&](const FrameCodes& frame) {
            json line;
            line["frame"] = frame_idx++;
            line["semantic"] = frame.semantic;
            line["codes"] = frame.codes;
            if (opt.trace) {
                line["t_ms"] = std::chrono::duration<double, std::milli>(
                                   std::chrono::steady_clock::now() - t0)
                                   .count();
            }
            out << line.dump() << "\n" << std::flush;
        });

    json doc;
    doc["frames"] = result.frames.size();
    doc["truncated"] = result.truncated;
    doc["path"] = opt.out_path;
    emit(doc, opt.compact);
    return 0;
}

int cmd_stats(const Options& opt) {
    require_file(opt.in_path);
    const UnpackedCodes stream = unpack_codes(read_file(opt.in_path));
    const CodeGrid& codes = stream.codes;
    const int64_t k = codebook_size(codes.config);
    const std::vector<double> util = utilization(codes);

    json groups = json::array();
    double min_util = 1.0;
    for (int g = 0; g < codes.groups; ++g) {
        std::map<int32_t, int64_t> counts;
        for (int b = 0; b < codes.batch; ++b) {
            for (int t = 0; t < codes.frames; ++t) ++counts[codes.at(b, g, t)];
        }
        const double total = static_cast<double>(codes.batch) * codes.frames;
        double entropy = 0.0;
        int32_t top_index = 0;
        int64_t top_count = 0;
        for (const auto& [index, count] : counts) {
            const double p = static_cast<double>(count) / total;
            entropy -= p * std::log2(p);
            if (count > top_count) {
                top_count = count;
                top_index = index;
            }
        }
        json entry;
        entry["group"] = g;
        entry["utilization"] = util[static_cast<size_t>(g)];
        entry["distinct"] = counts.size();
        entry["entropy_bits"] = entropy;
        entry["top_index"] = top_index;
        entry["top_count"] = top_count;
        groups.push_back(entry);
        min_util = std::min(min_util, util[static_cast<size_t>(g)]);
    }

    json doc;
    doc["frames"] = codes.frames;
    doc["groups"] = codes.groups;
    doc["codebook_size"] = k;
    doc["original_len"] = stream.original_len;
    doc["min_utilization"] = min_util;
    doc["per_group"] = groups;
    emit(doc, opt.compact);
    return 0;
}

int cmd_bench(const Options& opt) {
    DualArWeights weights = load_dualar_model(opt.model_path);
    SamplerSpec sampler = parse_sampler(opt.sampler_arg);
    if (opt.has_seed) sampler.seed = opt.seed;

    BenchReport report;
    try {
        report = run_bench(weights, opt.text_ids, sampler, opt.max_frames, opt.repeats, opt.fps);
    } catch (const DomainError& e) {
        fail(4, e.what()); // a generation that yields nothing is a failed run
    }
    emit(json::parse(bench_report_to_json(report)), opt.compact);
    return 0;
}

int cmd_init_model(const Options& opt) {
    const DualArConfig config = dualar_config_from_json(read_text_file(opt.config_path));
    DualArWeights weights(config);
    if (!opt.zero_init) {
        Rng rng(opt.seed);
        weights.init_random(rng);
    }
    const std::vector<uint8_t> bytes = save_model(dualar_export_tensors(weights));
    write_file(opt.out_path, bytes);
    write_text_file(opt.out_path + ".json", dualar_config_to_json(config));

    json doc;
    doc["model"] = opt.out_path;
    doc["tensors"] = dualar_export_tensors(weights).size();
    doc["bytes"] = bytes.size();
    emit(doc, opt.compact);
    return 0;
}

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ExitWith& e) {
        return e.code;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const LengthError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace

int main(int argc, char** argv) {
    apply_thread_cap_from_env();

    CLI::App app{"fishctl: codec, generator, and trainer front end"};
    app.require_subcommand(1);
    app.fallthrough(); // global flags (--json) may appear after the subcommand
    Options opt;

    app.add_flag("--json", opt.compact, "compact single-line JSON output");

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", opt.seed, "seed override")
            ->each([&](const std::string&) { opt.has_seed = true; });
    };

    CLI::App* synth = app.add_subcommand("synth-data", "write a synthetic signal corpus");
    synth->add_option("--out", opt.out_path, "output raw-f32 path")->required();
    synth->add_option("--config", opt.config_path, "JSON spec file");
    synth->add_option("--signals", opt.signals, "number of signals");
    synth->add_option("--length", opt.length, "samples per signal");
    synth->add_option("--tones", opt.tones, "sinusoids per signal");
    add_seed(synth);

    CLI::App* train = app.add_subcommand("train", "train a codec on a raw-f32 corpus");
    train->add_option("--data", opt.data_path, "raw-f32 corpus path")->required();
    train->add_option("--config", opt.config_path, "JSON file with codec/train sections")
        ->required();
    train->add_option("--out", opt.out_path, "output model path")->required();
    train->add_option("--csv", opt.csv_path, "training-curve CSV path");
    add_seed(train);

    CLI::App* encode = app.add_subcommand("encode", "quantize a raw-f32 signal to a code stream");
    encode->add_option("--in", opt.in_path, "raw-f32 input path")->required();
    encode->add_option("--config", opt.config_path, "codec config JSON path")->required();
    encode->add_option("--model", opt.model_path, "trained codec weights (.ffm)");
    encode->add_option("--out", opt.out_path, "output stream path")->required();

    CLI::App* decode = app.add_subcommand("decode", "reconstruct a signal from a code stream");
    decode->add_option("--in", opt.in_path, "code stream path")->required();
    decode->add_option("--config", opt.config_path, "codec config JSON path")->required();
    decode->add_option("--model", opt.model_path, "trained codec weights (.ffm)");
    decode->add_option("--out", opt.out_path, "raw-f32 output path")->required();
    decode->add_option("--length", opt.decode_length, "override the decoded sample count");

    CLI::App* generate_cmd = app.add_subcommand("generate", "stream frames from a model");
    generate_cmd->add_option("--model", opt.model_path, "model weights (.ffm)")->required();
    generate_cmd->add_option("--text", opt.text_ids, "comma-separated text token ids")
        ->required()
        ->delimiter(',');
    generate_cmd->add_option("--sampler", opt.sampler_arg, "sampler JSON (inline or a path)");
    generate_cmd->add_option("--max-frames", opt.max_frames, "frame budget");
    generate_cmd->add_option("--out", opt.out_path, "JSON-lines frame output path")->required();
    generate_cmd->add_flag("--trace", opt.trace, "timestamp every frame");
    add_seed(generate_cmd);

    CLI::App* stats = app.add_subcommand("stats", "code-stream utilization report");
    stats->add_option("--in", opt.in_path, "code stream path")->required();

    CLI::App* bench = app.add_subcommand("bench", "generation latency/throughput benchmark");
    bench->add_option("--model", opt.model_path, "model weights (.ffm)")->required();
    bench->add_option("--text", opt.text_ids, "comma-separated text token ids")
        ->required()
        ->delimiter(',');
    bench->add_option("--sampler", opt.sampler_arg, "sampler JSON (inline or a path)");
    bench->add_option("--max-frames", opt.max_frames, "frame budget per run");
    bench->add_option("--repeats", opt.repeats, "benchmark repetitions (>= 3)");
    bench->add_option("--fps", opt.fps, "frames per second of synthesized audio");
    add_seed(bench);

    CLI::App* init_model = app.add_subcommand("init-model", "write fresh generator weights");
    init_model->add_option("--config", opt.config_path, "generator config JSON path")
        ->required();
    init_model->add_option("--out", opt.out_path, "output model path")->required();
    init_model->add_flag("--zero", opt.zero_init, "all-zero weights instead of random");
    add_seed(init_model);

    CLI11_PARSE(app, argc, argv);

    if (app.got_subcommand(synth)) return run_guarded([&] { return cmd_synth_data(opt); });
    if (app.got_subcommand(train)) return run_guarded([&] { return cmd_train(opt); });
    if (app.got_subcommand(encode)) return run_guarded([&] { return cmd_encode(opt); });
    if (app.got_subcommand(decode)) return run_guarded([&] { return cmd_decode(opt); });
    if (app.got_subcommand(generate_cmd)) return run_guarded([&] { return cmd_generate(opt); });
    if (app.got_subcommand(stats)) return run_guarded([&] { return cmd_stats(opt); });
    if (app.got_subcommand(bench)) return run_guarded([&] { return cmd_bench(opt); });
    if (app.got_subcommand(init_model)) return run_guarded([&] { return cmd_init_model(opt); });
    return 1;
}
