#include "fishcore/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

#include <json.hpp>

#include "fishcore/error.hpp"

namespace fishcore {

uint64_t fnv1a64(const std::string& text) {
    uint64_t hash = 14695981039346656037ULL;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 1099511628211ULL;
    }
    return hash;
}

std::string bench_report_to_json(const BenchReport& report) {
    nlohmann::json doc;
    doc["rtf"] = report.rtf;
    doc["first_packet_ms"] = report.first_packet_ms;
    doc["total_ms"] = report.total_ms;
    doc["frames"] = report.frames;
    doc["repeats"] = report.repeats;
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(report.config_fingerprint));
    doc["config_fingerprint"] = std::string(buf);
    return doc.dump(2);
}

namespace {

struct RunSample {
    double total_ms = 0.0;
    double first_ms = 0.0;
    int frames = 0;
};

} // namespace

template <typename T>
BenchReport run_bench(const DualArWeightsT<T>& weights, const std::vector<int>& text_ids,
                      const SamplerSpec& sampler, int max_frames, int repeats,
                      double frames_per_second) {
    if (repeats < 3) throw ConfigError("bench: repeats must be at least 3");
    if (!(frames_per_second > 0.0)) {
        throw ConfigError("bench: frames_per_second must be positive");
    }

    using Clock = std::chrono::steady_clock;
    std::vector<RunSample> runs;
    runs.reserve(static_cast<size_t>(repeats));

    for (int r = 0; r < repeats; ++r) {
        RunSample run;
        const auto t0 = Clock::now();
        Clock::time_point t_first{};
        bool saw_first = false;
        GenerateResult result =
            generate(text_ids, weights, sampler, max_frames, [&](const FrameCodes&) {
                if (!saw_first) {
                    t_first = Clock::now();
                    saw_first = true;
                }
            });
        const auto t1 = Clock::now();
        if (result.frames.empty()) {
            throw DomainError("bench: generation produced no frames");
        }
        run.frames = static_cast<int>(result.frames.size());
        run.total_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        run.first_ms = std::chrono::duration<double, std::milli>(t_first - t0).count();
        runs.push_back(run);
    }

    std::sort(runs.begin(), runs.end(),
              [](const RunSample& a, const RunSample& b) { return a.total_ms < b.total_ms; });
    const RunSample& median = runs[static_cast<size_t>(repeats / 2)];

    BenchReport report;
    report.frames = median.frames;
    report.total_ms = median.total_ms;
    report.first_packet_ms = median.first_ms;
    const double audio_seconds = median.frames / frames_per_second;
    report.rtf = audio_seconds / (median.total_ms / 1000.0);
    report.repeats = repeats;
    report.config_fingerprint = fnv1a64(dualar_config_to_json(weights.config));
    return report;
}

template BenchReport run_bench(const DualArWeightsT<float>&, const std::vector<int>&,
                               const SamplerSpec&, int, int, double);
template BenchReport run_bench(const DualArWeightsT<double>&, const std::vector<int>&,
                               const SamplerSpec&, int, int, double);

} // namespace fishcore
