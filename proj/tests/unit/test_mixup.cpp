#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "cosda/mixup.hpp"
#include "cosda/ops.hpp"

using namespace cosda;

TEST_CASE("beta lambda draws have the right moments") {
    MixupConfig cfg{2.0, 0};
    Rng rng(61);
    const std::size_t n = 1000000;
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double l = sample_lambda(cfg, rng);
        CHECK(l >= 0.0);
        sum += l;
        sumsq += l * l;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::fabs(mean - 0.5) < 0.001);
    CHECK(std::fabs(var - 0.05) < 0.002);  // Var Beta(2,2) = 1/20
}

TEST_CASE("beta(1,1) draws are uniform by KS test") {
    Rng rng(67);
    const std::size_t n = 1000000;
    std::vector<double> draws(n);
    for (auto& d : draws) d = sample_beta(1.0, 1.0, rng);
    std::sort(draws.begin(), draws.end());
    double ks = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double cdf = draws[i];  // uniform CDF
        ks = std::max(ks, std::fabs(cdf - static_cast<double>(i + 1) / n));
        ks = std::max(ks, std::fabs(cdf - static_cast<double>(i) / n));
    }
    CHECK(ks < 1.63 / std::sqrt(static_cast<double>(n)));  // alpha = 0.01
}

TEST_CASE("forced lambda endpoints") {
    Tensor x({2, 2}, {0, 0, 2, 2});
    Tensor p({2, 2}, {1, 0, 0, 1});
    auto id = apply_mixup(x, p, {1.0, 1.0}, {1, 0});
    CHECK(max_abs_diff(id.x_mixed, x) == 0.0);
    CHECK(max_abs_diff(id.p_mixed, p) == 0.0);

    auto mid = apply_mixup(x, p, {0.5, 0.5}, {1, 0});
    for (double v : mid.x_mixed.data) CHECK(v == 1.0);
    for (double v : mid.p_mixed.data) CHECK(v == 0.5);
}

TEST_CASE("mixed batch reconstruction and simplex closure") {
    Rng rng(71);
    Tensor x = Tensor::gaussian({32, 3}, 0.0, 2.0, rng);
    Tensor p = ops::softmax(Tensor::gaussian({32, 4}, 0.0, 1.0, rng));
    MixupConfig cfg{2.0, 0};
    for (auto mode : {LambdaMode::per_batch, LambdaMode::per_row}) {
        MixedBatch mb = mix_batch(x, p, cfg, rng, mode);
        for (std::size_t i = 0; i < 32; ++i) {
            const double lam = mb.lambdas[i];
            const std::size_t j = mb.perm[i];
            for (std::size_t d = 0; d < 3; ++d)
                CHECK(std::fabs(mb.x_mixed.data[i * 3 + d] -
                                (lam * x.data[i * 3 + d] + (1 - lam) * x.data[j * 3 + d])) <=
                      1e-12);
            double s = 0.0;
            for (std::size_t c = 0; c < 4; ++c) {
                CHECK(mb.p_mixed.data[i * 4 + c] >= 0.0);
                s += mb.p_mixed.data[i * 4 + c];
            }
            CHECK(std::fabs(s - 1.0) <= 1e-12);
        }
        if (mode == LambdaMode::per_batch)
            for (double l : mb.lambdas) CHECK(l == mb.lambdas[0]);
    }
}

TEST_CASE("mixing commutes with affine maps on features") {
    Rng rng(73);
    Tensor x = Tensor::gaussian({8, 2}, 0.0, 1.0, rng);
    Tensor p = ops::softmax(Tensor::gaussian({8, 2}, 0.0, 1.0, rng));
    std::vector<double> lambdas;
    std::vector<std::size_t> perm{3, 1, 7, 0, 5, 2, 6, 4};
    for (int i = 0; i < 8; ++i) lambdas.push_back(0.1 + 0.1 * i);

    const double A[4] = {1.5, -0.3, 0.7, 2.0};
    const double b[2] = {0.4, -1.1};
    Tensor ax = Tensor::zeros({8, 2});
    for (std::size_t i = 0; i < 8; ++i) {
        ax.data[i * 2] = A[0] * x.data[i * 2] + A[1] * x.data[i * 2 + 1] + b[0];
        ax.data[i * 2 + 1] = A[2] * x.data[i * 2] + A[3] * x.data[i * 2 + 1] + b[1];
    }
    auto mixed_then_affine = apply_mixup(x, p, lambdas, perm);
    Tensor lhs = Tensor::zeros({8, 2});
    for (std::size_t i = 0; i < 8; ++i) {
        lhs.data[i * 2] = A[0] * mixed_then_affine.x_mixed.data[i * 2] +
                          A[1] * mixed_then_affine.x_mixed.data[i * 2 + 1] + b[0];
        lhs.data[i * 2 + 1] = A[2] * mixed_then_affine.x_mixed.data[i * 2] +
                              A[3] * mixed_then_affine.x_mixed.data[i * 2 + 1] + b[1];
    }
    auto rhs = apply_mixup(ax, p, lambdas, perm);
    CHECK(max_abs_diff(lhs, rhs.x_mixed) <= 1e-12);
}

TEST_CASE("row count mismatch is a dimension error") {
    Tensor x({2, 2}, {0, 0, 1, 1});
    Tensor p({3, 2}, {1, 0, 0, 1, 0.5, 0.5});
    MixupConfig cfg{2.0, 0};
    Rng rng(1);
    CHECK_THROWS_AS(mix_batch(x, p, cfg, rng), DimensionError);
}

TEST_CASE("theta_bar closed form") {
    CHECK(theta_bar_printed(2.0) == Catch::Approx(2.0 / 3.0));
    CHECK(theta_bar_printed(1.0) == Catch::Approx(2.0));
    CHECK(theta_bar_printed(3.0) == Catch::Approx(-0.4));
    CHECK_THROWS_AS(theta_bar_printed(0.5), DomainError);
}

TEST_CASE("theta_bar quadrature") {
    CHECK(theta_bar_empirical(1.0) == Catch::Approx(0.75).margin(1e-10));
    CHECK(theta_bar_empirical(2.0) == Catch::Approx(11.0 / 16.0).margin(1e-10));
    // deterministic quadrature converges: doubling the resolution is inert
    const double r1 = theta_bar_empirical(2.0, 1 << 14);
    const double r2 = theta_bar_empirical(2.0, 1 << 15);
    CHECK(std::fabs(r1 - r2) < 1e-10);
}

TEST_CASE("squeezed batch formulas") {
    Tensor x({2, 1}, {0.0, 3.0});
    Tensor p({2, 2}, {1, 0, 0, 1});
    auto sq1 = squeezed_batch(x, p, 1.0);
    CHECK(max_abs_diff(sq1.x_squeezed, x) == 0.0);

    auto sq0 = squeezed_batch(x, p, 0.0);
    CHECK(sq0.x_squeezed.data[0] == Catch::Approx(1.5));
    CHECK(sq0.x_squeezed.data[1] == Catch::Approx(1.5));

    auto sq = squeezed_batch(x, p, 2.0 / 3.0);
    CHECK(sq.x_squeezed.data[0] == Catch::Approx(0.5));
    CHECK(sq.x_squeezed.data[1] == Catch::Approx(2.5));
    CHECK(sq.centroid_x[0] == Catch::Approx(1.5));

    CHECK_THROWS_AS(squeezed_batch(Tensor::zeros({0, 1}), Tensor::zeros({0, 2}), 1.0), DataError);
}

TEST_CASE("squeeze oracle passes its own CLT bounds and flags the closed form") {
    Rng rng(79);
    const Tensor x = Tensor::gaussian({8, 2}, 0.0, 3.0, rng);
    const Tensor p = ops::softmax(Tensor::gaussian({8, 3}, 0.0, 1.0, rng));
    Rng mc(81);
    const SqueezeReport rep = squeeze_oracle(x, p, 2.0, 100000, mc);
    CHECK(rep.delta_zero_mean_pass);
    CHECK(rep.epsilon_zero_mean_pass);
    CHECK(rep.squeeze_match_empirical_pass);
    CHECK_FALSE(rep.squeeze_match_printed_pass);  // 2/3 vs 11/16
    CHECK(rep.theta_bar_used == rep.theta_bar_empirical);
    CHECK(rep.trials == 100000);
    // serialized record carries the contract fields
    const auto j = to_json(rep);
    for (const char* key : {"theta_bar_printed", "theta_bar_empirical", "x_squeezed",
                            "p_squeezed", "delta_mean_norm", "epsilon_mean_norm", "centroid_x",
                            "centroid_p", "trials"})
        CHECK(j.contains(key));
}

TEST_CASE("centroid shrink report") {
    Rng rng(83);
    Tensor cloud = Tensor::gaussian({30000, 2}, 0.0, 1.0, rng);
    Rng mix_rng(85);
    const auto same = centroid_shrink_report(cloud, cloud, 2.0, 100000, mix_rng);
    CHECK(same.centroid_distance_before == 0.0);
    CHECK(same.centroid_distance_after < 0.05);

    // RMS spread shrinks by sqrt(0.6) within 3%
    const double ratio = same.source_spread_after / same.source_spread_before;
    CHECK(ratio == Catch::Approx(std::sqrt(0.6)).epsilon(0.03));
    CHECK(same.expected_spread_factor == Catch::Approx(std::sqrt(0.6)));

    // centroid of the mixed cloud stays near the original centroid
    const double bound = 3.0 * 1.0 / std::sqrt(100000.0);
    CHECK(std::fabs(same.centroid_distance_after) < 3.0 * bound);
}
