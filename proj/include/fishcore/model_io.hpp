#pragma once

#include <unordered_map>
#include <unordered_set>

#include "fishcore/bitstream.hpp"
#include "fishcore/error.hpp"
#include "fishcore/param.hpp"

namespace fishcore {

// Snapshot of a parameter list as named tensors (values cast to 32-bit).
template <typename T>
std::vector<NamedTensor> export_params(const ParamRefs<T>& params) {
    std::vector<NamedTensor> out;
    out.reserve(params.size());
    for (const Param<T>* p : params) {
        NamedTensor t(p->name, p->shape);
        for (size_t i = 0; i < p->value.size(); ++i) {
            t.values[i] = static_cast<float>(p->value[i]);
        }
        out.push_back(std::move(t));
    }
    return out;
}

// Fills a parameter list from named tensors. Every parameter must be
// present with its exact shape, and the file may not carry extras.
template <typename T>
void import_params(const ParamRefs<T>& params, const std::vector<NamedTensor>& tensors) {
    std::unordered_map<std::string, const NamedTensor*> by_name;
    for (const NamedTensor& t : tensors) by_name[t.name] = &t;
    std::unordered_set<std::string> used;
    for (Param<T>* p : params) {
        auto it = by_name.find(p->name);
        if (it == by_name.end()) {
            throw FormatError("model file is missing tensor \"" + p->name + "\"");
        }
        const NamedTensor& t = *it->second;
        if (t.shape != p->shape) {
            throw ShapeError("tensor \"" + p->name + "\" has the wrong shape for this model");
        }
        for (size_t i = 0; i < p->value.size(); ++i) {
            p->value[i] = static_cast<T>(t.values[i]);
        }
        used.insert(p->name);
    }
    for (const NamedTensor& t : tensors) {
        if (!used.count(t.name)) {
            throw FormatError("model file has unexpected tensor \"" + t.name + "\"");
        }
    }
}

} // namespace fishcore
