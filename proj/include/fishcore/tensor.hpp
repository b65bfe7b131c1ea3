#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "fishcore/error.hpp"

namespace fishcore {

/**
 * Dense real-valued feature block indexed (batch, channels, length),
 * stored row-major with length fastest.
 */
template <typename T>
struct FrameTensorT {
    int batch = 0;
    int channels = 0;
    int length = 0;
    std::vector<T> data;

    FrameTensorT() = default;

    FrameTensorT(int b, int c, int l) : batch(b), channels(c), length(l) {
        if (b <= 0 || c <= 0 || l <= 0) {
            throw ShapeError("FrameTensor: all dimensions must be positive");
        }
        data.assign(static_cast<size_t>(b) * c * l, T(0));
    }

    size_t size() const { return data.size(); }

    T& at(int b, int c, int l) {
        return data[(static_cast<size_t>(b) * channels + c) * length + l];
    }
    T at(int b, int c, int l) const {
        return data[(static_cast<size_t>(b) * channels + c) * length + l];
    }

    // Pointer to the (b, c) row of `length` contiguous samples.
    T* row(int b, int c) {
        return data.data() + (static_cast<size_t>(b) * channels + c) * length;
    }
    const T* row(int b, int c) const {
        return data.data() + (static_cast<size_t>(b) * channels + c) * length;
    }

    bool same_shape(const FrameTensorT& other) const {
        return batch == other.batch && channels == other.channels && length == other.length;
    }

    bool all_finite() const {
        for (T v : data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    template <typename U>
    FrameTensorT<U> cast() const {
        FrameTensorT<U> out(batch, channels, length);
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using FrameTensor = FrameTensorT<float>;
using FrameTensorD = FrameTensorT<double>;

} // namespace fishcore
