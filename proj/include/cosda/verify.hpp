#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "cosda/adapter.hpp"
#include "cosda/losses.hpp"
#include "cosda/mixup.hpp"
#include "cosda/model.hpp"

namespace cosda {

struct OracleCheck {
    std::string name;
    double measured = 0.0;
    double expected = 0.0;
    double tolerance = 0.0;
    std::string provenance;  // origin of the expected value
    std::string details;
    bool pass = false;
    bool expected_fail = false;  // documented discrepancy, not counted as failure
    std::size_t trials = 0;
    std::uint64_t derived_seed = 0;
    double wall_seconds = 0.0;
    bool errored = false;
    std::string error;
};

struct OracleReport {
    std::uint64_t seed = 0;
    std::size_t trials = 0;
    std::vector<OracleCheck> checks;
    CentroidShrinkReport shrink_table;

    bool all_required_pass() const {
        for (const auto& c : checks)
            if (!c.expected_fail && (!c.pass || c.errored)) return false;
        return true;
    }
};

// ---------------------------------------------------------------------------
// Individual checks. Each one is a pure function of (derived_seed, trials) so
// a recorded check can be replayed bit-exactly from its own parameters.
// ---------------------------------------------------------------------------

// Max relative disagreement between tape gradients and central finite
// differences of the full adaptation loss (consistency + alpha * MI through
// MLP + train-mode BN), over `num_seeds` random instances. Instances with an
// activation within 1e-4 of the ReLU kink are redrawn: central differences
// are invalid across the kink regardless of the gradient under test.
inline double gradient_check_max_rel_error(std::uint64_t derived_seed, std::size_t num_seeds,
                                           double h = 1e-6) {
    double worst = 0.0;
    const double alpha = 0.7;
    for (std::size_t s = 0; s < num_seeds; ++s) {
        for (std::uint64_t attempt = 0;; ++attempt) {
            const std::uint64_t inst_seed = derive_seed(derived_seed, s * 977 + attempt);
            Rng rng(mix_seed(inst_seed));
            MlpConfig cfg;
            cfg.layer_sizes = {3, 5, 4};
            cfg.batchnorm_after_hidden = {true};
            cfg.init_seed = inst_seed;
            Classifier model(cfg);
            const Tensor x = Tensor::gaussian({6, 3}, 0.0, 1.0, rng);
            const Tensor target = ops::softmax(Tensor::gaussian({6, 4}, 0.0, 1.0, rng));

            auto loss_on_tape = [&](const Classifier& m, double* min_pre_relu) {
                Tape tape;
                TapeForward fwd = m.build_forward(tape, x, BnMode::train);
                if (min_pre_relu) {
                    double mn = 1e300;
                    for (int id : fwd.pre_relu_ids)
                        for (double v : tape.value(id).data) mn = std::min(mn, std::fabs(v));
                    *min_pre_relu = mn;
                }
                const int probs = tape.softmax(fwd.logits);
                const int cons = consistency_loss_node(tape, target, probs);
                const int mi = mi_loss_node(tape, probs, MiSignMode::paper);
                const int loss = total_loss_node(tape, cons, mi, alpha);
                return std::tuple{std::move(tape), fwd, loss};
            };

            double min_pre = 0.0;
            auto [tape, fwd, loss] = loss_on_tape(model, &min_pre);
            if (min_pre < 1e-4) continue;  // kink-adjacent instance, redraw

            auto grads = tape.gradients(loss, fwd.param_ids);
            const auto names = model.param_names();
            for (std::size_t pi = 0; pi < names.size(); ++pi) {
                const Tensor& pt = model.param_tensors()[pi];
                auto f = [&](const Tensor& candidate) {
                    Classifier probe = model;
                    ParamVector pv = probe.param_vector();
                    const std::size_t off = pv.layout[pi].offset;
                    for (std::size_t i = 0; i < candidate.size(); ++i)
                        pv.values[off + i] = candidate.data[i];
                    probe.set_params(pv);
                    auto [t2, f2, l2] = loss_on_tape(probe, nullptr);
                    return t2.value(l2).data[0];
                };
                const Tensor fd = finite_difference_gradient(f, pt, h);
                worst = std::max(worst, gradient_rel_error(grads[pi], fd));
            }
            break;
        }
    }
    return worst;
}

// Max absolute gap in the entropy decomposition
//   MI = mean instance entropy - marginal entropy
// over random probability batches.
inline double mi_identity_max_gap(std::uint64_t derived_seed, std::size_t num_batches) {
    Rng rng(mix_seed(derived_seed));
    std::uniform_int_distribution<std::size_t> pick_b(1, 64), pick_c(2, 10);
    double worst = 0.0;
    for (std::size_t i = 0; i < num_batches; ++i) {
        const std::size_t B = pick_b(rng), C = pick_c(rng);
        const Tensor probs = ops::softmax(Tensor::gaussian({B, C}, 0.0, 2.0, rng));
        const MiBreakdown mb = mutual_information(probs);
        worst = std::max(worst,
                         std::fabs(mb.mi - (mb.mean_instance_entropy - mb.marginal_entropy)));
    }
    return worst;
}

struct CovarianceShrinkCheck {
    double trace_ratio = 0.0;
    double expected_ratio = 0.0;
    double max_centroid_dev = 0.0;
    double centroid_bound = 0.0;
};

// Within-domain mixing of a large cloud with per-row Beta(a,a) lambdas:
// the covariance trace shrinks by 2 (Var(lambda) + 1/4) and the centroid
// stays put within a 3-sigma bound.
inline CovarianceShrinkCheck covariance_shrink_check(std::uint64_t derived_seed, std::size_t rows,
                                                     double a) {
    Rng rng(mix_seed(derived_seed));
    const std::size_t D = 2;
    Tensor x = Tensor::gaussian({rows, D}, 0.0, 1.0, rng);
    for (std::size_t i = 0; i < rows; ++i) x.data[i * D] += (i % 2 == 0) ? 1.5 : -1.5;
    Tensor dummy_p = Tensor::full({rows, 2}, 0.5);
    MixupConfig cfg{a, 0};
    MixedBatch mixed = mix_batch(x, dummy_p, cfg, rng, LambdaMode::per_row);

    const auto c0 = column_mean(x);
    const auto c1 = column_mean(mixed.x_mixed);
    const double s0 = rms_spread(x, c0);
    const double s1 = rms_spread(mixed.x_mixed, c1);
    CovarianceShrinkCheck out;
    out.trace_ratio = (s1 * s1) / (s0 * s0);
    out.expected_ratio = 2.0 * (lambda_variance(a) + 0.25);
    const double sqrt_n = std::sqrt(static_cast<double>(rows));
    for (std::size_t d = 0; d < D; ++d) {
        double var = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            const double dv = x.data[i * D + d] - c0[d];
            var += dv * dv;
        }
        var /= static_cast<double>(rows);
        const double bound = 3.0 * std::sqrt(var * 2.0 * (lambda_variance(a) + 0.25)) / sqrt_n;
        out.centroid_bound = std::max(out.centroid_bound, bound);
        out.max_centroid_dev = std::max(out.max_centroid_dev, std::fabs(c1[d] - c0[d]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fn>
inline OracleCheck timed_check(OracleCheck base, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
        fn(base);
    } catch (const std::exception& e) {
        base.errored = true;
        base.error = e.what();
        base.pass = false;
    }
    base.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return base;
}

}  // namespace detail

inline OracleReport run_all_oracles(std::uint64_t seed, std::size_t trials) {
    if (trials < 10000) throw ConfigError("oracle runner needs trials >= 1e4");
    OracleReport rep;
    rep.seed = seed;
    rep.trials = trials;
    auto tag = [&](std::size_t i) { return derive_seed(seed, 0xc0de00 + i); };

    // 1. Gradient oracle over the full loss.
    {
        OracleCheck c;
        c.name = "gradient_full_loss";
        c.provenance = "central finite differences, h=1e-6";
        c.trials = 100;
        c.derived_seed = tag(1);
        rep.checks.push_back(detail::timed_check(c, [&](OracleCheck& out) {
            out.measured = gradient_check_max_rel_error(out.derived_seed, out.trials);
            out.expected = 0.0;
            out.tolerance = 1e-5;
            out.pass = out.measured < out.tolerance;
        }));
    }
    // 2. MI entropy-decomposition identity.
    {
        OracleCheck c;
        c.name = "mi_entropy_decomposition";
        c.provenance = "algebraic identity: MI = mean instance entropy - marginal entropy";
        c.trials = 1000;
        c.derived_seed = tag(2);
        rep.checks.push_back(detail::timed_check(c, [&](OracleCheck& out) {
            out.measured = mi_identity_max_gap(out.derived_seed, out.trials);
            out.expected = 0.0;
            out.tolerance = 1e-9;
            out.pass = out.measured < out.tolerance;
        }));
    }
    // 3. Squeeze-equivalence Monte-Carlo oracle.
    {
        Rng rng(mix_seed(tag(3)));
        const Tensor x = Tensor::gaussian({8, 2}, 0.0, 3.0, rng);
        const Tensor p = ops::softmax(Tensor::gaussian({8, 3}, 0.0, 1.0, rng));
        Rng mc_rng(mix_seed(tag(4)));
        SqueezeReport sq;
        OracleCheck c;
        c.name = "squeeze_zero_mean_perturbations";
        c.provenance = "Monte-Carlo, per-coordinate 3-sigma bounds";
        c.trials = trials;
        c.derived_seed = tag(4);
        rep.checks.push_back(detail::timed_check(c, [&](OracleCheck& out) {
            sq = squeeze_oracle(x, p, 2.0, trials, mc_rng);
            out.measured = std::max(sq.delta_mean_norm, sq.epsilon_mean_norm);
            out.expected = 0.0;
            out.tolerance = 0.0;  // bound is per-coordinate, carried by the pass flag
            out.pass = sq.delta_zero_mean_pass && sq.epsilon_zero_mean_pass;
            out.details = "delta_x_norm_ratio=" + std::to_string(sq.delta_x_norm_ratio);
        }));
        {
            OracleCheck c2;
            c2.name = "squeeze_matches_empirical_theta_bar";
            c2.provenance = "Monte-Carlo vs quadrature mean of Beta(a,a) on [1/2,1]";
            c2.trials = trials;
            c2.derived_seed = tag(4);
            rep.checks.push_back(detail::timed_check(c2, [&](OracleCheck& out) {
                out.measured = sq.delta_mean_norm;
                out.pass = sq.squeeze_match_empirical_pass;
            }));
        }
        {
            OracleCheck c3;
            c3.name = "squeeze_matches_printed_theta_bar";
            c3.provenance = "closed form 2 - a(a-1)/(a-1/2); known discrepancy, expected to fail";
            c3.trials = trials;
            c3.derived_seed = tag(4);
            c3.expected_fail = true;
            rep.checks.push_back(detail::timed_check(c3, [&](OracleCheck& out) {
                out.pass = sq.squeeze_match_printed_pass;
            }));
        }
    }
    // 4. theta_bar quadrature value and its gap to the closed form, at a = 2.
    {
        OracleCheck c;
        c.name = "theta_bar_quadrature_a2";
        c.provenance = "exact integral: 11/16 for a=2";
        c.derived_seed = tag(5);
        rep.checks.push_back(detail::timed_check(c, [&](OracleCheck& out) {
            out.measured = theta_bar_empirical(2.0);
            out.expected = 0.6875;
            out.tolerance = 1e-6;
            out.pass = std::fabs(out.measured - out.expected) <= out.tolerance;
        }));
        OracleCheck c2;
        c2.name = "theta_bar_printed_matches_quadrature";
        c2.provenance = "closed form vs truncated-Beta expectation; documented discrepancy";
        c2.expected_fail = true;
        rep.checks.push_back(detail::timed_check(c2, [&](OracleCheck& out) {
            out.measured = theta_bar_printed(2.0);
            out.expected = theta_bar_empirical(2.0);
            out.tolerance = 1e-6;
            out.pass = std::fabs(out.measured - out.expected) <= out.tolerance;
        }));
    }
    // 5. Covariance shrink and centroid preservation under mixing.
    {
        OracleCheck c;
        c.name = "mixup_covariance_shrink";
        c.provenance = "closed form 2 (Var(lambda) + 1/4) = 0.6 for a=2";
        c.trials = 100000;
        c.derived_seed = tag(6);
        CovarianceShrinkCheck shrink;
        rep.checks.push_back(detail::timed_check(c, [&](OracleCheck& out) {
            shrink = covariance_shrink_check(out.derived_seed, out.trials, 2.0);
            out.measured = shrink.trace_ratio;
            out.expected = shrink.expected_ratio;
            out.tolerance = 0.02 * shrink.expected_ratio;
            out.pass = std::fabs(out.measured - out.expected) <= out.tolerance;
        }));
        OracleCheck c2;
        c2.name = "mixup_centroid_preserved";
        c2.provenance = "symmetric mixing keeps E[mixed] = centroid; 3-sigma bound";
        c2.trials = 100000;
        c2.derived_seed = tag(6);
        rep.checks.push_back(detail::timed_check(c2, [&](OracleCheck& out) {
            out.measured = shrink.max_centroid_dev;
            out.expected = 0.0;
            out.tolerance = shrink.centroid_bound;
            out.pass = out.measured <= out.tolerance;
        }));
    }
    // 6. Schedule endpoints and monotonicity.
    {
        OracleCheck c;
        c.name = "momentum_schedule_endpoint";
        c.provenance = "cosine ramp evaluates to m_hi at t = E";
        rep.checks.push_back(detail::timed_check(c, [&](OracleCheck& out) {
            out.measured = momentum_schedule(20, 20, 0.89, 0.99);
            out.expected = 0.99;
            out.tolerance = 0.0;
            out.pass = out.measured == out.expected;
        }));
        OracleCheck c2;
        c2.name = "momentum_schedule_monotone";
        c2.provenance = "cosine is nonincreasing on [0, pi]";
        rep.checks.push_back(detail::timed_check(c2, [&](OracleCheck& out) {
            double min_step = 1e300;
            for (std::size_t t = 1; t < 20; ++t)
                min_step = std::min(min_step, momentum_schedule(t + 1, 20, 0.89, 0.99) -
                                                  momentum_schedule(t, 20, 0.89, 0.99));
            out.measured = min_step;
            out.expected = 0.0;
            out.pass = min_step >= 0.0;
        }));
        OracleCheck c3;
        c3.name = "lr_schedule_endpoint";
        c3.provenance = "cosine annealing starts at lr_max";
        rep.checks.push_back(detail::timed_check(c3, [&](OracleCheck& out) {
            out.measured = lr_schedule(1, 20, 2e-3, 1e-3);
            out.expected = 2e-3;
            out.tolerance = 0.0;
            out.pass = out.measured == out.expected;
        }));
    }
    // 7. EMA endpoints are bit-exact.
    {
        OracleCheck c;
        c.name = "ema_endpoints";
        c.provenance = "convex combination: m=1 keeps the teacher, m=0 copies the student";
        c.derived_seed = tag(7);
        rep.checks.push_back(detail::timed_check(c, [&](OracleCheck& out) {
            Rng rng(mix_seed(out.derived_seed));
            MlpConfig cfg;
            cfg.layer_sizes = {2, 4, 3};
            cfg.batchnorm_after_hidden = {true};
            cfg.init_seed = out.derived_seed;
            Classifier a(cfg);
            cfg.init_seed = out.derived_seed + 1;
            Classifier b(cfg);
            ParamVector pa = a.param_vector();
            const ParamVector pb = b.param_vector();
            ParamVector keep = pa;
            ema_update(keep, pb, 1.0);
            ParamVector copy = pa;
            ema_update(copy, pb, 0.0);
            const bool ok = bitwise_equal(keep, pa) && bitwise_equal(copy, pb);
            out.measured = ok ? 1.0 : 0.0;
            out.expected = 1.0;
            out.pass = ok;
        }));
    }
    // Fig-style shrink table for the CLI.
    {
        Rng rng(mix_seed(tag(8)));
        Tensor src = Tensor::gaussian({20000, 2}, 0.0, 1.0, rng);
        Tensor tgt = Tensor::gaussian({20000, 2}, 0.0, 1.0, rng);
        for (std::size_t i = 0; i < tgt.shape[0]; ++i) tgt.data[i * 2] += 4.0;
        Rng mix_rng(mix_seed(tag(9)));
        rep.shrink_table = centroid_shrink_report(src, tgt, 2.0, 100000, mix_rng);
    }
    return rep;
}

inline nlohmann::json to_json(const OracleCheck& c) {
    return nlohmann::json{{"name", c.name},
                          {"measured", c.measured},
                          {"expected", c.expected},
                          {"tolerance", c.tolerance},
                          {"provenance", c.provenance},
                          {"details", c.details},
                          {"pass", c.pass},
                          {"expected_fail", c.expected_fail},
                          {"trials", c.trials},
                          {"derived_seed", c.derived_seed},
                          {"wall_seconds", c.wall_seconds},
                          {"errored", c.errored},
                          {"error", c.error}};
}

inline nlohmann::json to_json(const OracleReport& r) {
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& c : r.checks) checks.push_back(to_json(c));
    return nlohmann::json{{"seed", r.seed},
                          {"trials", r.trials},
                          {"checks", checks},
                          {"all_required_pass", r.all_required_pass()},
                          {"centroid_shrink", to_json(r.shrink_table)}};
}

inline std::string summary_table(const OracleReport& r) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-40s %-10s %14s %14s %10s\n", "check", "status",
                  "measured", "expected", "seconds");
    out += line;
    for (const auto& c : r.checks) {
        const char* status = c.errored ? "ERROR"
                             : c.pass  ? "pass"
                             : (c.expected_fail ? "xfail" : "FAIL");
        std::snprintf(line, sizeof line, "%-40s %-10s %14.6g %14.6g %10.2f\n", c.name.c_str(),
                      status, c.measured, c.expected, c.wall_seconds);
        out += line;
    }
    const auto& s = r.shrink_table;
    std::snprintf(line, sizeof line,
                  "\ncentroid distance: %.4f -> %.4f   spread (src): %.4f -> %.4f   "
                  "spread (tgt): %.4f -> %.4f   expected factor %.4f\n",
                  s.centroid_distance_before, s.centroid_distance_after, s.source_spread_before,
                  s.source_spread_after, s.target_spread_before, s.target_spread_after,
                  s.expected_spread_factor);
    out += line;
    return out;
}

}  // namespace cosda
