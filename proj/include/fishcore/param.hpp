#pragma once

#include <string>
#include <vector>

namespace fishcore {

// One learnable tensor: flat value/grad storage plus its logical shape.
template <typename T>
struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;

    Param() = default;
    Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
        size_t count = 1;
        for (int d : shape) count *= static_cast<size_t>(d);
        value.assign(count, T(0));
        grad.assign(count, T(0));
    }

    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
using ParamRefs = std::vector<Param<T>*>;

} // namespace fishcore
