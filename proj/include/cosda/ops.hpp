#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "cosda/tensor.hpp"

namespace cosda {

// Probabilities are clamped to this floor inside every log. Temperature 0.07
// drives pseudo-labels to exact zeros under flush, so raw log() would produce
// -inf in the losses.
inline constexpr double kProbFloor = 1e-12;

inline constexpr double kDefaultBnEps = 1e-5;

enum class BnMode { train, eval };

struct BnStats {
    Tensor mean;  // [H]
    Tensor var;   // [H], population (biased) variance
};

namespace ops {

// out[b,h] = sum_d x[b,d] * weight[d,h] + bias[h]
inline Tensor affine_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_matrix(x, "affine input");
    require_matrix(weight, "affine weight");
    require_vector(bias, "affine bias");
    if (x.shape[1] != weight.shape[0] || weight.shape[1] != bias.shape[0]) {
        throw DimensionError("affine shapes do not conform: x" + x.shape_str() + " * W" +
                             weight.shape_str() + " + b" + bias.shape_str());
    }
    const std::size_t B = x.shape[0], D = x.shape[1], H = weight.shape[1];
    Tensor out = Tensor::zeros({B, H});
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t d = 0; d < D; ++d) {
            const double xv = x.data[b * D + d];
            const double* wrow = &weight.data[d * H];
            double* orow = &out.data[b * H];
            for (std::size_t h = 0; h < H; ++h) orow[h] += xv * wrow[h];
        }
        for (std::size_t h = 0; h < H; ++h) out.data[b * H + h] += bias.data[h];
    }
    return out;
}

// Elementwise max(0, x). Subgradient at 0 is defined as 0 throughout.
inline Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    return out;
}

inline BnStats batch_stats(const Tensor& x) {
    const std::size_t B = x.shape[0], H = x.shape[1];
    BnStats s{Tensor::zeros({H}), Tensor::zeros({H})};
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h) s.mean.data[h] += x.data[b * H + h];
    for (std::size_t h = 0; h < H; ++h) s.mean.data[h] /= static_cast<double>(B);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h) {
            const double d = x.data[b * H + h] - s.mean.data[h];
            s.var.data[h] += d * d;
        }
    for (std::size_t h = 0; h < H; ++h) s.var.data[h] /= static_cast<double>(B);
    return s;
}

// Train mode normalizes by per-feature batch mean / population variance and
// returns those statistics; eval mode normalizes by the supplied running pair.
// out = gain * (x - mu) / sqrt(var + eps) + shift
inline std::pair<Tensor, BnStats> batchnorm_forward(const Tensor& x, const Tensor& gain,
                                                    const Tensor& shift, BnMode mode,
                                                    const Tensor& running_mean,
                                                    const Tensor& running_var,
                                                    double eps = kDefaultBnEps) {
    require_matrix(x, "batchnorm input");
    const std::size_t B = x.shape[0], H = x.shape[1];
    if (gain.shape != std::vector<std::size_t>{H} || shift.shape != gain.shape)
        throw DimensionError("batchnorm gain/shift must be [" + std::to_string(H) + "], got gain " +
                             gain.shape_str() + " shift " + shift.shape_str());
    if (eps < 0.0) throw ConfigError("batchnorm eps must be >= 0");

    BnStats stats;
    if (mode == BnMode::train) {
        if (B < 2)
            throw DataError("batchnorm train mode needs a batch of >= 2 rows, got " +
                            std::to_string(B));
        stats = batch_stats(x);
    } else {
        if (running_mean.shape != std::vector<std::size_t>{H} ||
            running_var.shape != running_mean.shape)
            throw DimensionError("batchnorm running stats must be [" + std::to_string(H) + "]");
        stats = BnStats{running_mean, running_var};
    }
    Tensor out = Tensor::zeros({B, H});
    for (std::size_t h = 0; h < H; ++h) {
        const double denom = stats.var.data[h] + eps;
        if (!(denom > 0.0))
            throw DataError("batchnorm variance + eps must be positive at feature " +
                            std::to_string(h));
        const double inv = 1.0 / std::sqrt(denom);
        for (std::size_t b = 0; b < B; ++b) {
            const double norm = (x.data[b * H + h] - stats.mean.data[h]) * inv;
            out.data[b * H + h] = gain.data[h] * norm + shift.data[h];
        }
    }
    return {std::move(out), std::move(stats)};
}

// Row-wise softmax with max subtraction. Rows sum to 1 within 1e-12.
inline Tensor softmax(const Tensor& logits) {
    require_matrix(logits, "softmax logits");
    const std::size_t B = logits.shape[0], C = logits.shape[1];
    Tensor out = Tensor::zeros({B, C});
    for (std::size_t b = 0; b < B; ++b) {
        const double* row = &logits.data[b * C];
        double mx = row[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            const double e = std::exp(row[c] - mx);
            out.data[b * C + c] = e;
            sum += e;
        }
        for (std::size_t c = 0; c < C; ++c) out.data[b * C + c] /= sum;
    }
    return out;
}

inline double log_clamped(double p) { return std::log(std::max(p, kProbFloor)); }

// sum_c p_c * (log p_c - log q_c), natural log, 0*log0 := 0, q clamped at the
// floor before the log. Nonnegative by Gibbs' inequality; negative rounding
// residue is clipped.
inline double kl_divergence(const double* p, const double* q, std::size_t n) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        if (p[c] > 0.0) s += p[c] * (std::log(p[c]) - log_clamped(q[c]));
    }
    return std::max(s, 0.0);
}

inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size())
        throw DimensionError("kl_divergence length mismatch: " + std::to_string(p.size()) +
                             " vs " + std::to_string(q.size()));
    return kl_divergence(p.data(), q.data(), p.size());
}

// -sum_c p_c * log p_c, natural log, 0*log0 := 0.
inline double entropy(const double* p, std::size_t n) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c)
        if (p[c] > 0.0) s -= p[c] * std::log(p[c]);
    return s;
}

inline double entropy(const std::vector<double>& p) { return entropy(p.data(), p.size()); }

}  // namespace ops
}  // namespace cosda
