#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cosda/tensor.hpp"

namespace cosda {

struct ParamSegment {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
};

// Flat view of a model's named parameter tensors. The layout maps segments
// back to tensors; flatten/unflatten round-trips bit-exactly.
struct ParamVector {
    std::vector<double> values;
    std::vector<ParamSegment> layout;

    std::size_t size() const { return values.size(); }

    bool same_layout(const ParamVector& o) const {
        if (layout.size() != o.layout.size() || values.size() != o.values.size()) return false;
        for (std::size_t i = 0; i < layout.size(); ++i) {
            if (layout[i].name != o.layout[i].name || layout[i].shape != o.layout[i].shape ||
                layout[i].offset != o.layout[i].offset)
                return false;
        }
        return true;
    }
};

inline void require_same_layout(const ParamVector& a, const ParamVector& b, const char* what) {
    if (!a.same_layout(b))
        throw DimensionError(std::string(what) + ": parameter layouts do not match (" +
                             std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                             " values)");
}

inline ParamVector flatten(const std::vector<std::string>& names,
                           const std::vector<Tensor>& tensors) {
    ParamVector pv;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        pv.layout.push_back(ParamSegment{names[i], tensors[i].shape, offset});
        pv.values.insert(pv.values.end(), tensors[i].data.begin(), tensors[i].data.end());
        offset += tensors[i].size();
    }
    return pv;
}

inline std::vector<Tensor> unflatten(const ParamVector& pv) {
    std::vector<Tensor> out;
    out.reserve(pv.layout.size());
    for (const auto& seg : pv.layout) {
        const std::size_t n = Tensor::size_from_shape(seg.shape);
        if (seg.offset + n > pv.values.size())
            throw DimensionError("parameter vector too short for segment " + seg.name);
        out.emplace_back(seg.shape,
                         std::vector<double>(pv.values.begin() + static_cast<std::ptrdiff_t>(seg.offset),
                                             pv.values.begin() + static_cast<std::ptrdiff_t>(seg.offset + n)));
    }
    return out;
}

inline bool bitwise_equal(const ParamVector& a, const ParamVector& b) {
    if (!a.same_layout(b)) return false;
    for (std::size_t i = 0; i < a.values.size(); ++i)
        if (a.values[i] != b.values[i]) return false;
    return true;
}

}  // namespace cosda
