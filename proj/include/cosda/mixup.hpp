#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "cosda/rng.hpp"
#include "cosda/tensor.hpp"

namespace cosda {

struct MixupConfig {
    double a = 2.0;  // Beta(a, a) shape
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (!(a > 0.0)) throw ConfigError("mixup Beta shape a must be > 0");
    }
};

// One lambda per mini-batch (the training-loop default) or an independent
// lambda per row (what the variance oracles need).
enum class LambdaMode { per_batch, per_row };

struct MixedBatch {
    Tensor x_mixed;               // [B x D]
    Tensor p_mixed;               // [B x C]
    std::vector<double> lambdas;  // [B]
    std::vector<std::size_t> perm;
};

inline double sample_beta(double a, double b, Rng& rng) {
    std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    return x / (x + y);
}

inline double sample_lambda(const MixupConfig& config, Rng& rng) {
    config.validate();
    return sample_beta(config.a, config.a, rng);
}

// Beta(a, a) conditioned on [1/2, 1], by rejection (exact; acceptance 1/2 for
// the symmetric shape).
inline double sample_truncated_theta(double a, Rng& rng) {
    for (;;) {
        const double t = sample_beta(a, a, rng);
        if (t >= 0.5) return t;
    }
}

// Deterministic mixing kernel: row i becomes
//   lambda_i * row_i + (1 - lambda_i) * row_perm[i]
// for both features and labels.
inline MixedBatch apply_mixup(const Tensor& x, const Tensor& p, std::vector<double> lambdas,
                              std::vector<std::size_t> perm) {
    require_matrix(x, "mixup features");
    require_matrix(p, "mixup labels");
    const std::size_t B = x.shape[0];
    if (p.shape[0] != B)
        throw DimensionError("mixup row count mismatch: features " + x.shape_str() +
                             " vs labels " + p.shape_str());
    if (lambdas.size() != B || perm.size() != B)
        throw DimensionError("mixup needs one lambda and one pairing per row");
    MixedBatch out;
    out.x_mixed = Tensor::zeros(x.shape);
    out.p_mixed = Tensor::zeros(p.shape);
    const std::size_t D = x.shape[1], C = p.shape[1];
    for (std::size_t i = 0; i < B; ++i) {
        const double lam = lambdas[i];
        const std::size_t j = perm[i];
        for (std::size_t d = 0; d < D; ++d)
            out.x_mixed.data[i * D + d] =
                lam * x.data[i * D + d] + (1.0 - lam) * x.data[j * D + d];
        for (std::size_t c = 0; c < C; ++c)
            out.p_mixed.data[i * C + c] =
                lam * p.data[i * C + c] + (1.0 - lam) * p.data[j * C + c];
    }
    out.lambdas = std::move(lambdas);
    out.perm = std::move(perm);
    return out;
}

// Random mixing: uniform permutation pairing (fixed points allowed) and Beta
// lambda draws per the chosen mode.
inline MixedBatch mix_batch(const Tensor& x, const Tensor& p, const MixupConfig& config, Rng& rng,
                            LambdaMode mode = LambdaMode::per_batch) {
    config.validate();
    const std::size_t B = x.shape[0];
    std::vector<std::size_t> perm(B);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> lambdas(B);
    if (mode == LambdaMode::per_batch) {
        const double lam = sample_beta(config.a, config.a, rng);
        std::fill(lambdas.begin(), lambdas.end(), lam);
    } else {
        for (auto& lam : lambdas) lam = sample_beta(config.a, config.a, rng);
    }
    return apply_mixup(x, p, std::move(lambdas), std::move(perm));
}

// Convenience overload seeding from the config's own rng_seed.
inline MixedBatch mix_batch(const Tensor& x, const Tensor& p, const MixupConfig& config,
                            LambdaMode mode = LambdaMode::per_batch) {
    Rng rng(mix_seed(config.rng_seed));
    return mix_batch(x, p, config, rng, mode);
}

// Closed form 2 - a(a-1)/(a-1/2) for the mean of Beta(a,a) restricted to
// [1/2, 1]. Disagrees with the exact truncated mean (see
// theta_bar_empirical); both are exposed and the verifier reports the gap.
inline double theta_bar_printed(double a) {
    if (!(a > 0.5)) throw DomainError("theta_bar_printed needs a > 1/2");
    return 2.0 - a * (a - 1.0) / (a - 0.5);
}

// Exact truncated-Beta mean by composite Simpson quadrature over [1/2, 1]:
// E[theta] = int x f(x) dx / int f(x) dx with f(x) = x^(a-1) (1-x)^(a-1)
// (the normalizing constant cancels).
inline double theta_bar_empirical(double a, std::size_t resolution = 1 << 14) {
    if (!(a > 0.0)) throw DomainError("theta_bar_empirical needs a > 0");
    if (resolution < 2) throw ConfigError("quadrature resolution must be >= 2");
    std::size_t n = resolution + (resolution % 2);  // Simpson needs an even panel count
    const double lo = 0.5, hi = 1.0;
    const double h = (hi - lo) / static_cast<double>(n);
    auto f = [a](double x) {
        if (x >= 1.0 && a < 1.0) return 0.0;  // integrable singularity, dropped endpoint
        return std::pow(x, a - 1.0) * std::pow(1.0 - x, a - 1.0);
    };
    double mass = 0.0, moment = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
        const double x = lo + h * static_cast<double>(i);
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        mass += w * f(x);
        moment += w * x * f(x);
    }
    return moment / mass;
}

struct SqueezedBatch {
    Tensor x_squeezed;  // [N x D]
    Tensor p_squeezed;  // [N x C]
    std::vector<double> centroid_x;
    std::vector<double> centroid_p;
};

inline std::vector<double> column_mean(const Tensor& t) {
    const std::size_t N = t.shape[0], D = t.shape[1];
    std::vector<double> mean(D, 0.0);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t d = 0; d < D; ++d) mean[d] += t.data[i * D + d];
    for (auto& m : mean) m /= static_cast<double>(N);
    return mean;
}

// The mixing-as-squeezing equivalent form: every row is pulled toward the
// batch centroid by factor theta_bar.
inline SqueezedBatch squeezed_batch(const Tensor& x, const Tensor& p, double theta_bar) {
    require_matrix(x, "squeeze features");
    require_matrix(p, "squeeze labels");
    if (x.shape[0] == 0) throw DataError("squeezed_batch needs a nonempty batch");
    if (p.shape[0] != x.shape[0]) throw DimensionError("squeeze row count mismatch");
    SqueezedBatch out;
    out.centroid_x = column_mean(x);
    out.centroid_p = column_mean(p);
    out.x_squeezed = Tensor::zeros(x.shape);
    out.p_squeezed = Tensor::zeros(p.shape);
    const std::size_t N = x.shape[0], D = x.shape[1], C = p.shape[1];
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t d = 0; d < D; ++d)
            out.x_squeezed.data[i * D + d] =
                theta_bar * (x.data[i * D + d] - out.centroid_x[d]) + out.centroid_x[d];
        for (std::size_t c = 0; c < C; ++c)
            out.p_squeezed.data[i * C + c] =
                theta_bar * (p.data[i * C + c] - out.centroid_p[c]) + out.centroid_p[c];
    }
    return out;
}

// Monte-Carlo audit of the squeeze equivalence. Estimates E[theta x_i +
// (1-theta) x_j] over theta ~ Beta(a,a) on [1/2,1] and j ~ Uniform(rows),
// compares against the squeezed form built with the quadrature theta_bar and
// with the closed-form one, and checks the zero-mean perturbation claims via
// per-coordinate 3-sigma bounds.
struct SqueezeReport {
    double theta_bar_printed = 0.0;
    double theta_bar_empirical = 0.0;
    double theta_bar_used = 0.0;  // the value x_squeezed/p_squeezed were built with
    Tensor x_squeezed;
    Tensor p_squeezed;
    double delta_mean_norm = 0.0;    // max_i ||mean_t delta_i||_2
    double epsilon_mean_norm = 0.0;  // max_i ||mean_t epsilon_i||_2
    std::vector<double> centroid_x;
    std::vector<double> centroid_p;
    std::size_t trials = 0;
    double delta_x_norm_ratio = 0.0;  // mean over trials/rows of ||delta_i|| / ||x_i||
    bool delta_zero_mean_pass = false;
    bool epsilon_zero_mean_pass = false;
    bool squeeze_match_empirical_pass = false;
    bool squeeze_match_printed_pass = false;
};

inline SqueezeReport squeeze_oracle(const Tensor& x, const Tensor& p, double a,
                                    std::size_t trials, Rng& rng) {
    if (trials < 1) throw ConfigError("squeeze_oracle needs trials >= 1");
    const std::size_t N = x.shape[0], D = x.shape[1], C = p.shape[1];
    SqueezeReport rep;
    rep.theta_bar_printed = theta_bar_printed(a);
    rep.theta_bar_empirical = theta_bar_empirical(a);
    rep.theta_bar_used = rep.theta_bar_empirical;
    SqueezedBatch emp = squeezed_batch(x, p, rep.theta_bar_empirical);
    SqueezedBatch pri = squeezed_batch(x, p, rep.theta_bar_printed);
    rep.x_squeezed = emp.x_squeezed;
    rep.p_squeezed = emp.p_squeezed;
    rep.centroid_x = emp.centroid_x;
    rep.centroid_p = emp.centroid_p;
    rep.trials = trials;

    std::vector<double> sum_x(N * D, 0.0), sumsq_x(N * D, 0.0);
    std::vector<double> sum_p(N * C, 0.0), sumsq_p(N * C, 0.0);
    std::vector<double> row_norm(N, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        double s = 0.0;
        for (std::size_t d = 0; d < D; ++d) s += x.data[i * D + d] * x.data[i * D + d];
        row_norm[i] = std::sqrt(s);
    }
    std::uniform_int_distribution<std::size_t> pick(0, N - 1);
    double ratio_sum = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        const double theta = sample_truncated_theta(a, rng);
        const std::size_t j = pick(rng);
        for (std::size_t i = 0; i < N; ++i) {
            double delta_sq = 0.0;
            for (std::size_t d = 0; d < D; ++d) {
                const double v =
                    theta * x.data[i * D + d] + (1.0 - theta) * x.data[j * D + d];
                sum_x[i * D + d] += v;
                sumsq_x[i * D + d] += v * v;
                const double delta = v - emp.x_squeezed.data[i * D + d];
                delta_sq += delta * delta;
            }
            ratio_sum += std::sqrt(delta_sq) / std::max(row_norm[i], 1e-300);
            for (std::size_t c = 0; c < C; ++c) {
                const double v =
                    theta * p.data[i * C + c] + (1.0 - theta) * p.data[j * C + c];
                sum_p[i * C + c] += v;
                sumsq_p[i * C + c] += v * v;
            }
        }
    }
    rep.delta_x_norm_ratio = ratio_sum / (static_cast<double>(trials) * static_cast<double>(N));

    const double invT = 1.0 / static_cast<double>(trials);
    const double sqrtT = std::sqrt(static_cast<double>(trials));
    auto audit = [&](const std::vector<double>& sum, const std::vector<double>& sumsq,
                     const Tensor& target_emp, const Tensor& target_pri, std::size_t width,
                     double& mean_norm_out, bool& zero_mean_pass, bool* printed_pass) {
        zero_mean_pass = true;
        bool printed_ok = true;
        double max_norm = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            double norm_sq = 0.0;
            for (std::size_t d = 0; d < width; ++d) {
                const std::size_t k = i * width + d;
                const double mean = sum[k] * invT;
                const double var = std::max(sumsq[k] * invT - mean * mean, 0.0);
                const double bound = 3.0 * std::sqrt(var) / sqrtT;
                const double dev_emp = mean - target_emp.data[k];
                const double dev_pri = mean - target_pri.data[k];
                if (std::fabs(dev_emp) > bound) zero_mean_pass = false;
                if (std::fabs(dev_pri) > bound) printed_ok = false;
                norm_sq += dev_emp * dev_emp;
            }
            max_norm = std::max(max_norm, std::sqrt(norm_sq));
        }
        mean_norm_out = max_norm;
        if (printed_pass) *printed_pass = printed_ok;
    };
    bool printed_x_pass = false;
    audit(sum_x, sumsq_x, emp.x_squeezed, pri.x_squeezed, D, rep.delta_mean_norm,
          rep.delta_zero_mean_pass, &printed_x_pass);
    audit(sum_p, sumsq_p, emp.p_squeezed, pri.p_squeezed, C, rep.epsilon_mean_norm,
          rep.epsilon_zero_mean_pass, nullptr);
    rep.squeeze_match_empirical_pass = rep.delta_zero_mean_pass && rep.epsilon_zero_mean_pass;
    rep.squeeze_match_printed_pass = printed_x_pass;
    return rep;
}

inline nlohmann::json to_json(const SqueezeReport& r) {
    return nlohmann::json{{"theta_bar_printed", r.theta_bar_printed},
                          {"theta_bar_empirical", r.theta_bar_empirical},
                          {"theta_bar_used", r.theta_bar_used},
                          {"x_squeezed", r.x_squeezed.data},
                          {"p_squeezed", r.p_squeezed.data},
                          {"delta_mean_norm", r.delta_mean_norm},
                          {"epsilon_mean_norm", r.epsilon_mean_norm},
                          {"centroid_x", r.centroid_x},
                          {"centroid_p", r.centroid_p},
                          {"trials", r.trials},
                          {"delta_x_norm_ratio", r.delta_x_norm_ratio},
                          {"delta_zero_mean_pass", r.delta_zero_mean_pass},
                          {"epsilon_zero_mean_pass", r.epsilon_zero_mean_pass},
                          {"squeeze_match_empirical_pass", r.squeeze_match_empirical_pass},
                          {"squeeze_match_printed_pass", r.squeeze_match_printed_pass}};
}

// Before/after view of within-domain mixing for two point clouds: centroid
// distance and RMS distance-to-own-centroid. Mixing shrinks the spread by
// sqrt(2 (Var(lambda) + 1/4)) in the RMS sense and leaves centroids in place.
struct CentroidShrinkReport {
    double centroid_distance_before = 0.0;
    double centroid_distance_after = 0.0;
    double source_spread_before = 0.0;
    double source_spread_after = 0.0;
    double target_spread_before = 0.0;
    double target_spread_after = 0.0;
    double expected_spread_factor = 0.0;
    std::size_t trials = 0;
};

inline double rms_spread(const Tensor& pts, const std::vector<double>& centroid) {
    const std::size_t N = pts.shape[0], D = pts.shape[1];
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t d = 0; d < D; ++d) {
            const double dv = pts.data[i * D + d] - centroid[d];
            s += dv * dv;
        }
    return std::sqrt(s / static_cast<double>(N));
}

inline double lambda_variance(double a) { return 1.0 / (4.0 * (2.0 * a + 1.0)); }

inline CentroidShrinkReport centroid_shrink_report(const Tensor& x_source, const Tensor& x_target,
                                                   double a, std::size_t trials, Rng& rng) {
    require_matrix(x_source, "source points");
    require_matrix(x_target, "target points");
    if (x_source.shape[0] == 0 || x_target.shape[0] == 0)
        throw DataError("centroid_shrink_report needs nonempty point sets");
    if (x_source.shape[1] != x_target.shape[1])
        throw DimensionError("source/target dimensionality mismatch");
    CentroidShrinkReport rep;
    rep.trials = trials;
    rep.expected_spread_factor = std::sqrt(2.0 * (lambda_variance(a) + 0.25));

    auto mix_cloud = [&](const Tensor& pts) {
        const std::size_t N = pts.shape[0], D = pts.shape[1];
        Tensor mixed = Tensor::zeros({trials, D});
        std::uniform_int_distribution<std::size_t> pick(0, N - 1);
        for (std::size_t t = 0; t < trials; ++t) {
            const std::size_t i = pick(rng), j = pick(rng);
            const double lam = sample_beta(a, a, rng);
            for (std::size_t d = 0; d < D; ++d)
                mixed.data[t * D + d] =
                    lam * pts.data[i * D + d] + (1.0 - lam) * pts.data[j * D + d];
        }
        return mixed;
    };

    const auto cs = column_mean(x_source);
    const auto ct = column_mean(x_target);
    rep.source_spread_before = rms_spread(x_source, cs);
    rep.target_spread_before = rms_spread(x_target, ct);
    double dist = 0.0;
    for (std::size_t d = 0; d < cs.size(); ++d) dist += (cs[d] - ct[d]) * (cs[d] - ct[d]);
    rep.centroid_distance_before = std::sqrt(dist);

    const Tensor ms = mix_cloud(x_source);
    const Tensor mt = mix_cloud(x_target);
    const auto msc = column_mean(ms);
    const auto mtc = column_mean(mt);
    rep.source_spread_after = rms_spread(ms, msc);
    rep.target_spread_after = rms_spread(mt, mtc);
    dist = 0.0;
    for (std::size_t d = 0; d < msc.size(); ++d) dist += (msc[d] - mtc[d]) * (msc[d] - mtc[d]);
    rep.centroid_distance_after = std::sqrt(dist);
    return rep;
}

inline nlohmann::json to_json(const CentroidShrinkReport& r) {
    return nlohmann::json{{"centroid_distance_before", r.centroid_distance_before},
                          {"centroid_distance_after", r.centroid_distance_after},
                          {"source_spread_before", r.source_spread_before},
                          {"source_spread_after", r.source_spread_after},
                          {"target_spread_before", r.target_spread_before},
                          {"target_spread_after", r.target_spread_after},
                          {"expected_spread_factor", r.expected_spread_factor},
                          {"trials", r.trials}};
}

}  // namespace cosda
