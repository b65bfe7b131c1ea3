// Microbenchmark comparing the parallel kernels against their serial
// reference mirrors. Each row reports best-of-N wall time for both
// implementations, the speedup, and the largest absolute difference between
// their outputs (a live parity check on benchmark-sized data).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "fishcore/gfsq.hpp"
#include "fishcore/kernels.hpp"
#include "fishcore/rng.hpp"
#include "fishcore/threads.hpp"

using namespace fishcore;

namespace {

constexpr int kRepeats = 5;

double time_ms(const std::function<void()>& fn) {
    using Clock = std::chrono::steady_clock;
    double best = 1e300;
    for (int r = 0; r < kRepeats; ++r) {
        const auto t0 = Clock::now();
        fn();
        const auto t1 = Clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    }
    return m;
}

std::vector<float> random_vec(size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return v;
}

void print_row(const char* name, double serial_ms, double parallel_ms, double diff) {
    std::printf("%-22s %10.3f %11.3f %9.2fx %12.3g\n", name, serial_ms, parallel_ms,
                serial_ms / parallel_ms, diff);
}

} // namespace

int main() {
    const int threads = apply_thread_cap_from_env();
    std::printf("kernel benchmark, %d thread(s), best of %d runs\n", threads, kRepeats);
    std::printf("%-22s %10s %11s %9s %12s\n", "kernel", "serial ms", "parallel ms", "speedup",
                "max |diff|");

    Rng rng(2024);

    {
        const int rows = 64, channels = 16, len = 8192, k = 5, dil = 2;
        const auto x = random_vec(static_cast<size_t>(rows) * len, rng);
        const auto w = random_vec(static_cast<size_t>(channels) * k, rng);
        std::vector<float> y_ref(x.size()), y_omp(x.size());
        const double s = time_ms([&] {
            kernels::ref::depthwise_conv1d(x.data(), rows, channels, len, w.data(), k, dil,
                                           y_ref.data());
        });
        const double p = time_ms([&] {
            kernels::depthwise_conv1d(x.data(), rows, channels, len, w.data(), k, dil,
                                      y_omp.data());
        });
        print_row("depthwise_conv1d", s, p, max_abs_diff(y_ref, y_omp));
    }

    {
        const int batch = 4, c_in = 32, c_out = 32, len = 4096;
        const auto x = random_vec(static_cast<size_t>(batch) * c_in * len, rng);
        const auto w = random_vec(static_cast<size_t>(c_out) * c_in, rng);
        const auto b = random_vec(static_cast<size_t>(c_out), rng);
        std::vector<float> y_ref(static_cast<size_t>(batch) * c_out * len);
        std::vector<float> y_omp(y_ref.size());
        const double s = time_ms([&] {
            kernels::ref::pointwise_conv1d(x.data(), batch, c_in, len, w.data(), b.data(), c_out,
                                           y_ref.data());
        });
        const double p = time_ms([&] {
            kernels::pointwise_conv1d(x.data(), batch, c_in, len, w.data(), b.data(), c_out,
                                      y_omp.data());
        });
        print_row("pointwise_conv1d", s, p, max_abs_diff(y_ref, y_omp));
    }

    {
        const int rows = 64, channels = 16, len = 8192, k = 7, stride = 4;
        const int len_down = (len + stride - 1) / stride;
        const auto x = random_vec(static_cast<size_t>(rows) * len, rng);
        const auto w = random_vec(static_cast<size_t>(channels) * k, rng);
        std::vector<float> y_ref(static_cast<size_t>(rows) * len_down);
        std::vector<float> y_omp(y_ref.size());
        const double s = time_ms([&] {
            kernels::ref::strided_dw_conv1d(x.data(), rows, channels, len, w.data(), k, stride,
                                            len_down, y_ref.data());
        });
        const double p = time_ms([&] {
            kernels::strided_dw_conv1d(x.data(), rows, channels, len, w.data(), k, stride,
                                       len_down, y_omp.data());
        });
        print_row("strided_dw_conv1d", s, p, max_abs_diff(y_ref, y_omp));
    }

    {
        const int rows = 64, channels = 16, len_down = 2048, k = 7, stride = 4;
        const auto x = random_vec(static_cast<size_t>(rows) * len_down, rng);
        const auto w = random_vec(static_cast<size_t>(channels) * k, rng);
        std::vector<float> y_ref(static_cast<size_t>(rows) * len_down * stride);
        std::vector<float> y_omp(y_ref.size());
        const double s = time_ms([&] {
            kernels::ref::transposed_dw_conv1d(x.data(), rows, channels, len_down, w.data(), k,
                                               stride, y_ref.data());
        });
        const double p = time_ms([&] {
            kernels::transposed_dw_conv1d(x.data(), rows, channels, len_down, w.data(), k,
                                          stride, y_omp.data());
        });
        print_row("transposed_dw_conv1d", s, p, max_abs_diff(y_ref, y_omp));
    }

    {
        const int m = 192, k = 192, n = 192;
        const auto a = random_vec(static_cast<size_t>(m) * k, rng);
        const auto b = random_vec(static_cast<size_t>(k) * n, rng);
        std::vector<float> c_ref(static_cast<size_t>(m) * n), c_omp(c_ref.size());
        const double s =
            time_ms([&] { kernels::ref::matmul(a.data(), m, k, b.data(), n, c_ref.data()); });
        const double p =
            time_ms([&] { kernels::matmul(a.data(), m, k, b.data(), n, c_omp.data()); });
        print_row("matmul", s, p, max_abs_diff(c_ref, c_omp));
    }

    {
        const int rows = 1024, cols = 256;
        const auto x = random_vec(static_cast<size_t>(rows) * cols, rng);
        const auto gain = random_vec(static_cast<size_t>(cols), rng);
        const auto bias = random_vec(static_cast<size_t>(cols), rng);
        std::vector<float> y_ref(x.size()), y_omp(x.size());
        const double s = time_ms([&] {
            kernels::ref::layernorm_rows(x.data(), rows, cols, gain.data(), bias.data(),
                                         y_ref.data());
        });
        const double p = time_ms([&] {
            kernels::layernorm_rows(x.data(), rows, cols, gain.data(), bias.data(), y_omp.data(),
                                    static_cast<float*>(nullptr), static_cast<float*>(nullptr));
        });
        print_row("layernorm_rows", s, p, max_abs_diff(y_ref, y_omp));
    }

    {
        const int rows = 1024, cols = 256;
        const auto x = random_vec(static_cast<size_t>(rows) * cols, rng);
        std::vector<float> y_ref(x.size());
        std::vector<float> y_omp;
        const double s = time_ms(
            [&] { kernels::ref::softmax_rows(x.data(), rows, cols, y_ref.data()); });
        const double p = time_ms([&] {
            y_omp = x; // the parallel kernel works in place
            kernels::softmax_rows_inplace(y_omp.data(), rows, cols);
        });
        print_row("softmax_rows", s, p, max_abs_diff(y_ref, y_omp));
    }

    {
        GfsqConfig config;
        config.groups = 2;
        config.levels = {3, 5};
        FrameTensor latent(2, config.grouped_channels(), 20000);
        for (auto& v : latent.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));

        CodeGrid codes_ref, codes_omp;
        const double s = time_ms([&] { codes_ref = ref::gfsq_encode(latent, config); });
        const double p = time_ms([&] { codes_omp = gfsq_encode(latent, config); });
        double diff = 0.0;
        for (size_t i = 0; i < codes_ref.indices.size(); ++i) {
            diff = std::max(diff,
                            std::abs(static_cast<double>(codes_ref.indices[i]) -
                                     codes_omp.indices[i]));
        }
        print_row("gfsq_encode", s, p, diff);

        FrameTensor dec_ref, dec_omp;
        const double sd = time_ms([&] { dec_ref = ref::gfsq_decode<float>(codes_ref); });
        const double pd = time_ms([&] { dec_omp = gfsq_decode<float>(codes_omp); });
        print_row("gfsq_decode", sd, pd, max_abs_diff(dec_ref.data, dec_omp.data));
    }

    return 0;
}
