#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

// Data-parallel inner loops shared by the codec and transformer stacks.
//
// Every parallel loop writes disjoint output elements and accumulates each
// element in a fixed serial order, so results are bit-identical for any
// thread count. fishcore::kernels::ref holds naive serial mirrors used as
// oracles by the parity tests and as the baseline in the benchmark.

namespace fishcore::kernels {

// Loops below this many output elements stay serial.
inline constexpr std::ptrdiff_t kOmpGrain = 4096;

// ---------------------------------------------------------------------------
// Depthwise 1-D convolution, zero "same" padding, dilation honored.
// x: (rows, L) where rows = B*C; w: (C, k); y: (rows, L).
// Row r uses the filter of channel r % C.
// ---------------------------------------------------------------------------

template <typename T>
void depthwise_conv1d(const T* x, int rows, int channels, int len, const T* w, int k,
                      int dilation, T* y) {
    const int kh = k / 2;
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(rows) * len;
#pragma omp parallel for if (total >= kOmpGrain)
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + static_cast<size_t>(r) * len;
        T* yr = y + static_cast<size_t>(r) * len;
        const T* wr = w + static_cast<size_t>(r % channels) * k;
        for (int t = 0; t < len; ++t) {
            T acc = T(0);
            for (int j = 0; j < k; ++j) {
                const int s = t + (j - kh) * dilation;
                if (s >= 0 && s < len) acc += wr[j] * xr[s];
            }
            yr[t] = acc;
        }
    }
}

template <typename T>
void depthwise_conv1d_grad_input(const T* dy, int rows, int channels, int len, const T* w,
                                 int k, int dilation, T* dx) {
    const int kh = k / 2;
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(rows) * len;
#pragma omp parallel for if (total >= kOmpGrain)
    for (int r = 0; r < rows; ++r) {
        const T* dyr = dy + static_cast<size_t>(r) * len;
        T* dxr = dx + static_cast<size_t>(r) * len;
        const T* wr = w + static_cast<size_t>(r % channels) * k;
        for (int s = 0; s < len; ++s) {
            T acc = T(0);
            for (int j = 0; j < k; ++j) {
                const int t = s - (j - kh) * dilation;
                if (t >= 0 && t < len) acc += wr[j] * dyr[t];
            }
            dxr[s] = acc;
        }
    }
}

// Accumulates into dw (C, k); batch b strides rows by `channels`.
template <typename T>
void depthwise_conv1d_grad_weight(const T* x, const T* dy, int batch, int channels, int len,
                                  int k, int dilation, T* dw) {
    const int kh = k / 2;
#pragma omp parallel for if (static_cast<std::ptrdiff_t>(channels) * k * len >= kOmpGrain)
    for (int c = 0; c < channels; ++c) {
        T* dwc = dw + static_cast<size_t>(c) * k;
        for (int j = 0; j < k; ++j) {
            T acc = T(0);
            for (int b = 0; b < batch; ++b) {
                const T* xr = x + (static_cast<size_t>(b) * channels + c) * len;
                const T* dyr = dy + (static_cast<size_t>(b) * channels + c) * len;
                for (int t = 0; t < len; ++t) {
                    const int s = t + (j - kh) * dilation;
                    if (s >= 0 && s < len) acc += dyr[t] * xr[s];
                }
            }
            dwc[j] += acc;
        }
    }
}

// ---------------------------------------------------------------------------
// Pointwise (1x1) channel mix. x: (B, Cin, L); w: (Cout, Cin); y: (B, Cout, L).
// bias may be null.
// ---------------------------------------------------------------------------

template <typename T>
void pointwise_conv1d(const T* x, int batch, int c_in, int len, const T* w, const T* bias,
                      int c_out, T* y) {
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(batch) * c_out * len;
#pragma omp parallel for if (total >= kOmpGrain)
    for (int bo = 0; bo < batch * c_out; ++bo) {
        const int b = bo / c_out;
        const int o = bo % c_out;
        const T* wo = w + static_cast<size_t>(o) * c_in;
        T* yr = y + (static_cast<size_t>(b) * c_out + o) * len;
        const T b0 = bias ? bias[o] : T(0);
        for (int t = 0; t < len; ++t) yr[t] = b0;
        for (int i = 0; i < c_in; ++i) {
            const T* xr = x + (static_cast<size_t>(b) * c_in + i) * len;
            const T wv = wo[i];
            for (int t = 0; t < len; ++t) yr[t] += wv * xr[t];
        }
    }
}

template <typename T>
void pointwise_conv1d_grad_input(const T* dy, int batch, int c_in, int len, const T* w,
                                 int c_out, T* dx) {
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(batch) * c_in * len;
#pragma omp parallel for if (total >= kOmpGrain)
    for (int bi = 0; bi < batch * c_in; ++bi) {
        const int b = bi / c_in;
        const int i = bi % c_in;
        T* dxr = dx + (static_cast<size_t>(b) * c_in + i) * len;
        for (int t = 0; t < len; ++t) dxr[t] = T(0);
        for (int o = 0; o < c_out; ++o) {
            const T wv = w[static_cast<size_t>(o) * c_in + i];
            const T* dyr = dy + (static_cast<size_t>(b) * c_out + o) * len;
            for (int t = 0; t < len; ++t) dxr[t] += wv * dyr[t];
        }
    }
}

// Accumulates into dw (Cout, Cin) and db (Cout, may be null).
template <typename T>
void pointwise_conv1d_grad_weight(const T* x, const T* dy, int batch, int c_in, int len,
                                  int c_out, T* dw, T* db) {
#pragma omp parallel for if (static_cast<std::ptrdiff_t>(c_out) * c_in * len >= kOmpGrain)
    for (int o = 0; o < c_out; ++o) {
        T* dwo = dw + static_cast<size_t>(o) * c_in;
        T acc_b = T(0);
        for (int b = 0; b < batch; ++b) {
            const T* dyr = dy + (static_cast<size_t>(b) * c_out + o) * len;
            for (int i = 0; i < c_in; ++i) {
                const T* xr = x + (static_cast<size_t>(b) * c_in + i) * len;
                T acc = T(0);
                for (int t = 0; t < len; ++t) acc += dyr[t] * xr[t];
                dwo[i] += acc;
            }
            if (db) {
                for (int t = 0; t < len; ++t) acc_b += dyr[t];
            }
        }
        if (db) db[o] += acc_b;
    }
}

// ---------------------------------------------------------------------------
// Strided depthwise conv used by the downsampler. Input is treated as
// right-padded with zeros to len_down * stride. y: (rows, len_down),
// y[u] = sum_j w[j] x[u*stride + j - k/2].
// ---------------------------------------------------------------------------

template <typename T>
void strided_dw_conv1d(const T* x, int rows, int channels, int len, const T* w, int k,
                       int stride, int len_down, T* y) {
    const int kh = k / 2;
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(rows) * len_down;
#pragma omp parallel for if (total >= kOmpGrain)
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + static_cast<size_t>(r) * len;
        T* yr = y + static_cast<size_t>(r) * len_down;
        const T* wr = w + static_cast<size_t>(r % channels) * k;
        for (int u = 0; u < len_down; ++u) {
            T acc = T(0);
            for (int j = 0; j < k; ++j) {
                const int s = u * stride + j - kh;
                if (s >= 0 && s < len) acc += wr[j] * xr[s];
            }
            yr[u] = acc;
        }
    }
}

template <typename T>
void strided_dw_conv1d_grad_input(const T* dy, int rows, int channels, int len, const T* w,
                                  int k, int stride, int len_down, T* dx) {
    const int kh = k / 2;
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(rows) * len;
#pragma omp parallel for if (total >= kOmpGrain)
    for (int r = 0; r < rows; ++r) {
        const T* dyr = dy + static_cast<size_t>(r) * len_down;
        T* dxr = dx + static_cast<size_t>(r) * len;
        const T* wr = w + static_cast<size_t>(r % channels) * k;
        for (int s = 0; s < len; ++s) {
            T acc = T(0);
            for (int j = 0; j < k; ++j) {
                const int num = s - j + kh;
                if (num < 0 || num % stride != 0) continue;
                const int u = num / stride;
                if (u < len_down) acc += wr[j] * dyr[u];
            }
            dxr[s] = acc;
        }
    }
}

template <typename T>
void strided_dw_conv1d_grad_weight(const T* x, const T* dy, int batch, int channels, int len,
                                   int k, int stride, int len_down, T* dw) {
    const int kh = k / 2;
#pragma omp parallel for if (static_cast<std::ptrdiff_t>(channels) * k * len_down >= kOmpGrain)
    for (int c = 0; c < channels; ++c) {
        T* dwc = dw + static_cast<size_t>(c) * k;
        for (int j = 0; j < k; ++j) {
            T acc = T(0);
            for (int b = 0; b < batch; ++b) {
                const T* xr = x + (static_cast<size_t>(b) * channels + c) * len;
                const T* dyr = dy + (static_cast<size_t>(b) * channels + c) * len_down;
                for (int u = 0; u < len_down; ++u) {
                    const int s = u * stride + j - kh;
                    if (s >= 0 && s < len) acc += dyr[u] * xr[s];
                }
            }
            dwc[j] += acc;
        }
    }
}

// ---------------------------------------------------------------------------
// Transposed depthwise conv (adjoint of strided_dw_conv1d): x (rows, len_down)
// -> y (rows, len_down*stride), y[t] = sum over (u, j) with u*stride+j-k/2 = t.
// ---------------------------------------------------------------------------

template <typename T>
void transposed_dw_conv1d(const T* x, int rows, int channels, int len_down, const T* w, int k,
                          int stride, T* y) {
    const int kh = k / 2;
    const int len_up = len_down * stride;
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(rows) * len_up;
#pragma omp parallel for if (total >= kOmpGrain)
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + static_cast<size_t>(r) * len_down;
        T* yr = y + static_cast<size_t>(r) * len_up;
        const T* wr = w + static_cast<size_t>(r % channels) * k;
        for (int t = 0; t < len_up; ++t) {
            T acc = T(0);
            for (int j = 0; j < k; ++j) {
                const int num = t - j + kh;
                if (num < 0 || num % stride != 0) continue;
                const int u = num / stride;
                if (u < len_down) acc += wr[j] * xr[u];
            }
            yr[t] = acc;
        }
    }
}

template <typename T>
void transposed_dw_conv1d_grad_input(const T* dy, int rows, int channels, int len_down,
                                     const T* w, int k, int stride, T* dx) {
    // Adjoint of the adjoint: the strided conv applied to dy.
    strided_dw_conv1d(dy, rows, channels, len_down * stride, w, k, stride, len_down, dx);
}

template <typename T>
void transposed_dw_conv1d_grad_weight(const T* x, const T* dy, int batch, int channels,
                                      int len_down, int k, int stride, T* dw) {
    const int kh = k / 2;
    const int len_up = len_down * stride;
#pragma omp parallel for if (static_cast<std::ptrdiff_t>(channels) * k * len_down >= kOmpGrain)
    for (int c = 0; c < channels; ++c) {
        T* dwc = dw + static_cast<size_t>(c) * k;
        for (int j = 0; j < k; ++j) {
            T acc = T(0);
            for (int b = 0; b < batch; ++b) {
                const T* xr = x + (static_cast<size_t>(b) * channels + c) * len_down;
                const T* dyr = dy + (static_cast<size_t>(b) * channels + c) * len_up;
                for (int u = 0; u < len_down; ++u) {
                    const int t = u * stride + j - kh;
                    if (t >= 0 && t < len_up) acc += xr[u] * dyr[t];
                }
            }
            dwc[j] += acc;
        }
    }
}

// ---------------------------------------------------------------------------
// Dense algebra for the transformer stacks.
// ---------------------------------------------------------------------------

// C (m, n) = A (m, k) * B (k, n), row-major.
template <typename T>
void matmul(const T* a, int m, int k, const T* b, int n, T* c) {
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(m) * n * k;
#pragma omp parallel for if (total >= kOmpGrain)
    for (int i = 0; i < m; ++i) {
        T* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) ci[j] = T(0);
        const T* ai = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const T av = ai[p];
            const T* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// y (rows, out) = x (rows, in) * W^T + b, with W stored (out, in).
template <typename T>
void linear_forward(const T* x, int rows, int in, const T* w, const T* bias, int out, T* y) {
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(rows) * out * in;
#pragma omp parallel for if (total >= kOmpGrain)
    for (int t = 0; t < rows; ++t) {
        const T* xt = x + static_cast<size_t>(t) * in;
        T* yt = y + static_cast<size_t>(t) * out;
        for (int o = 0; o < out; ++o) {
            const T* wo = w + static_cast<size_t>(o) * in;
            T acc = bias ? bias[o] : T(0);
            for (int i = 0; i < in; ++i) acc += wo[i] * xt[i];
            yt[o] = acc;
        }
    }
}

template <typename T>
void linear_grad_input(const T* dy, int rows, int in, const T* w, int out, T* dx) {
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(rows) * out * in;
#pragma omp parallel for if (total >= kOmpGrain)
    for (int t = 0; t < rows; ++t) {
        const T* dyt = dy + static_cast<size_t>(t) * out;
        T* dxt = dx + static_cast<size_t>(t) * in;
        for (int i = 0; i < in; ++i) dxt[i] = T(0);
        for (int o = 0; o < out; ++o) {
            const T g = dyt[o];
            const T* wo = w + static_cast<size_t>(o) * in;
            for (int i = 0; i < in; ++i) dxt[i] += g * wo[i];
        }
    }
}

// Accumulates into dw (out, in) and db (out, may be null).
template <typename T>
void linear_grad_weight(const T* x, const T* dy, int rows, int in, int out, T* dw, T* db) {
#pragma omp parallel for if (static_cast<std::ptrdiff_t>(out) * in * rows >= kOmpGrain)
    for (int o = 0; o < out; ++o) {
        T* dwo = dw + static_cast<size_t>(o) * in;
        T acc_b = T(0);
        for (int t = 0; t < rows; ++t) {
            const T g = dy[static_cast<size_t>(t) * out + o];
            const T* xt = x + static_cast<size_t>(t) * in;
            for (int i = 0; i < in; ++i) dwo[i] += g * xt[i];
            acc_b += g;
        }
        if (db) db[o] += acc_b;
    }
}

inline constexpr double kLayerNormEps = 1e-5;

// Row-wise LayerNorm. mean/rstd caches may be null when no backward follows.
template <typename T>
void layernorm_rows(const T* x, int rows, int cols, const T* gain, const T* bias, T* y,
                    T* mean_cache, T* rstd_cache) {
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(rows) * cols;
#pragma omp parallel for if (total >= kOmpGrain)
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + static_cast<size_t>(r) * cols;
        T* yr = y + static_cast<size_t>(r) * cols;
        T mean = T(0);
        for (int c = 0; c < cols; ++c) mean += xr[c];
        mean /= static_cast<T>(cols);
        T var = T(0);
        for (int c = 0; c < cols; ++c) {
            const T d = xr[c] - mean;
            var += d * d;
        }
        var /= static_cast<T>(cols);
        const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        for (int c = 0; c < cols; ++c) {
            const T xhat = (xr[c] - mean) * rstd;
            yr[c] = gain[c] * xhat + bias[c];
        }
        if (mean_cache) mean_cache[r] = mean;
        if (rstd_cache) rstd_cache[r] = rstd;
    }
}

// dgain/dbias accumulate; dx is overwritten.
template <typename T>
void layernorm_rows_backward(const T* x, const T* dy, int rows, int cols, const T* gain,
                             const T* mean_cache, const T* rstd_cache, T* dx, T* dgain,
                             T* dbias) {
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + static_cast<size_t>(r) * cols;
        const T* dyr = dy + static_cast<size_t>(r) * cols;
        T* dxr = dx + static_cast<size_t>(r) * cols;
        const T mean = mean_cache[r];
        const T rstd = rstd_cache[r];
        T sum_g = T(0);
        T sum_gx = T(0);
        for (int c = 0; c < cols; ++c) {
            const T xhat = (xr[c] - mean) * rstd;
            const T g = dyr[c] * gain[c];
            sum_g += g;
            sum_gx += g * xhat;
            dgain[c] += dyr[c] * xhat;
            dbias[c] += dyr[c];
        }
        const T inv_n = T(1) / static_cast<T>(cols);
        for (int c = 0; c < cols; ++c) {
            const T xhat = (xr[c] - mean) * rstd;
            const T g = dyr[c] * gain[c];
            dxr[c] = rstd * (g - inv_n * sum_g - xhat * inv_n * sum_gx);
        }
    }
}

template <typename T>
void softmax_rows_inplace(T* x, int rows, int cols) {
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(rows) * cols;
#pragma omp parallel for if (total >= kOmpGrain)
    for (int r = 0; r < rows; ++r) {
        T* xr = x + static_cast<size_t>(r) * cols;
        T mx = xr[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        T sum = T(0);
        for (int c = 0; c < cols; ++c) {
            xr[c] = std::exp(xr[c] - mx);
            sum += xr[c];
        }
        const T inv = T(1) / sum;
        for (int c = 0; c < cols; ++c) xr[c] *= inv;
    }
}

template <typename T>
inline T silu(T z) {
    const T s = T(1) / (T(1) + std::exp(-z));
    return z * s;
}

template <typename T>
inline T silu_grad(T z) {
    const T s = T(1) / (T(1) + std::exp(-z));
    return s * (T(1) + z * (T(1) - s));
}

// ---------------------------------------------------------------------------
// Serial reference mirrors. Straight transcriptions of the definitions above
// with no pragmas and no loop restructuring.
// ---------------------------------------------------------------------------

namespace ref {

template <typename T>
void depthwise_conv1d(const T* x, int rows, int channels, int len, const T* w, int k,
                      int dilation, T* y) {
    const int kh = k / 2;
    for (int r = 0; r < rows; ++r) {
        for (int t = 0; t < len; ++t) {
            T acc = T(0);
            for (int j = 0; j < k; ++j) {
                const int s = t + (j - kh) * dilation;
                if (s >= 0 && s < len)
                    acc += w[(r % channels) * k + j] * x[static_cast<size_t>(r) * len + s];
            }
            y[static_cast<size_t>(r) * len + t] = acc;
        }
    }
}

template <typename T>
void pointwise_conv1d(const T* x, int batch, int c_in, int len, const T* w, const T* bias,
                      int c_out, T* y) {
    for (int b = 0; b < batch; ++b) {
        for (int o = 0; o < c_out; ++o) {
            for (int t = 0; t < len; ++t) {
                T acc = bias ? bias[o] : T(0);
                for (int i = 0; i < c_in; ++i) {
                    acc += w[static_cast<size_t>(o) * c_in + i] *
                           x[(static_cast<size_t>(b) * c_in + i) * len + t];
                }
                y[(static_cast<size_t>(b) * c_out + o) * len + t] = acc;
            }
        }
    }
}

template <typename T>
void strided_dw_conv1d(const T* x, int rows, int channels, int len, const T* w, int k,
                       int stride, int len_down, T* y) {
    const int kh = k / 2;
    for (int r = 0; r < rows; ++r) {
        for (int u = 0; u < len_down; ++u) {
            T acc = T(0);
            for (int j = 0; j < k; ++j) {
                const int s = u * stride + j - kh;
                if (s >= 0 && s < len)
                    acc += w[(r % channels) * k + j] * x[static_cast<size_t>(r) * len + s];
            }
            y[static_cast<size_t>(r) * len_down + u] = acc;
        }
    }
}

template <typename T>
void transposed_dw_conv1d(const T* x, int rows, int channels, int len_down, const T* w, int k,
                          int stride, T* y) {
    const int kh = k / 2;
    const int len_up = len_down * stride;
    for (size_t i = 0; i < static_cast<size_t>(rows) * len_up; ++i) y[i] = T(0);
    // Scatter form: each input sample spreads into the output.
    for (int r = 0; r < rows; ++r) {
        for (int u = 0; u < len_down; ++u) {
            const T xv = x[static_cast<size_t>(r) * len_down + u];
            for (int j = 0; j < k; ++j) {
                const int t = u * stride + j - kh;
                if (t >= 0 && t < len_up)
                    y[static_cast<size_t>(r) * len_up + t] += w[(r % channels) * k + j] * xv;
            }
        }
    }
}

template <typename T>
void matmul(const T* a, int m, int k, const T* b, int n, T* c) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            T acc = T(0);
            for (int p = 0; p < k; ++p)
                acc += a[static_cast<size_t>(i) * k + p] * b[static_cast<size_t>(p) * n + j];
            c[static_cast<size_t>(i) * n + j] = acc;
        }
    }
}

template <typename T>
void layernorm_rows(const T* x, int rows, int cols, const T* gain, const T* bias, T* y) {
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + static_cast<size_t>(r) * cols;
        T* yr = y + static_cast<size_t>(r) * cols;
        T mean = T(0);
        for (int c = 0; c < cols; ++c) mean += xr[c];
        mean /= static_cast<T>(cols);
        T var = T(0);
        for (int c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
        var /= static_cast<T>(cols);
        const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        for (int c = 0; c < cols; ++c) {
            const T xhat = (xr[c] - mean) * rstd;
            yr[c] = gain[c] * xhat + bias[c];
        }
    }
}

template <typename T>
void softmax_rows(const T* x, int rows, int cols, T* y) {
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + static_cast<size_t>(r) * cols;
        T* yr = y + static_cast<size_t>(r) * cols;
        T mx = xr[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        T sum = T(0);
        for (int c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            sum += yr[c];
        }
        for (int c = 0; c < cols; ++c) yr[c] /= sum;
    }
}

} // namespace ref

} // namespace fishcore::kernels
