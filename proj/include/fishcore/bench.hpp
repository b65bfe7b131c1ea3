#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fishcore/dualar.hpp"

namespace fishcore {

// One generation benchmark result. rtf is synthesized audio seconds per
// wall-clock second given the configured frame rate; it is reported, never
// asserted against any external figure.
struct BenchReport {
    double rtf = 0.0;
    double first_packet_ms = 0.0;
    double total_ms = 0.0;
    int frames = 0;
    int repeats = 0;
    uint64_t config_fingerprint = 0;
};

std::string bench_report_to_json(const BenchReport& report);

// FNV-1a over a string; used to fingerprint configs in reports.
uint64_t fnv1a64(const std::string& text);

// Runs `generate` repeats times (sequentially, one cache per run) and
// returns the median run by total wall time. Requires repeats >= 3 and a
// generation that produces at least one frame.
template <typename T>
BenchReport run_bench(const DualArWeightsT<T>& weights, const std::vector<int>& text_ids,
                      const SamplerSpec& sampler, int max_frames, int repeats,
                      double frames_per_second);

} // namespace fishcore
