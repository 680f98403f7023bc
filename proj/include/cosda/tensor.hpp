#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cosda/errors.hpp"
#include "cosda/rng.hpp"

namespace cosda {

// Dense row-major double tensor. Rank 1 and 2 are all the model needs.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (size_from_shape(shape) != data.size()) {
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_to_string(shape));
        }
    }

    static std::size_t size_from_shape(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1},
                               [](std::size_t a, std::size_t b) { return a * b; });
    }

    static std::string shape_to_string(const std::vector<std::size_t>& s) {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
        os << "]";
        return os.str();
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        std::size_t n = size_from_shape(s);
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }

    static Tensor full(std::vector<std::size_t> s, double v) {
        std::size_t n = size_from_shape(s);
        return Tensor(std::move(s), std::vector<double>(n, v));
    }

    static Tensor uniform(std::vector<std::size_t> s, double lo, double hi, Rng& rng) {
        std::size_t n = size_from_shape(s);
        std::uniform_real_distribution<double> dist(lo, hi);
        std::vector<double> d(n);
        for (auto& v : d) v = dist(rng);
        return Tensor(std::move(s), std::move(d));
    }

    static Tensor gaussian(std::vector<std::size_t> s, double mean, double sigma, Rng& rng) {
        std::size_t n = size_from_shape(s);
        std::normal_distribution<double> dist(mean, sigma);
        std::vector<double> d(n);
        for (auto& v : d) v = dist(rng);
        return Tensor(std::move(s), std::move(d));
    }

    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? (shape.empty() ? 0 : 1) : shape[1]; }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const { return shape_to_string(shape); }
};

inline void require_matrix(const Tensor& t, const char* name) {
    if (t.shape.size() != 2)
        throw DimensionError(std::string(name) + " must be rank 2, got shape " + t.shape_str());
}

inline void require_vector(const Tensor& t, const char* name) {
    if (t.shape.size() != 1)
        throw DimensionError(std::string(name) + " must be rank 1, got shape " + t.shape_str());
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) return false;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        if (a.data[i] != b.data[i] || std::signbit(a.data[i]) != std::signbit(b.data[i]))
            return false;
    return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw DimensionError("max_abs_diff shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace cosda
