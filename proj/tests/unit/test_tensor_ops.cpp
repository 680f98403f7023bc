#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cosda/ops.hpp"
#include "cosda/tensor.hpp"

using namespace cosda;

TEST_CASE("tensor shape bookkeeping") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.at(1, 2) == 6.0);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), DimensionError);
    CHECK(Tensor::zeros({3}).all_finite());
}

TEST_CASE("affine identity and hand sum") {
    Tensor x({1, 2}, {1, 2});
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor b0({2}, {0, 0});
    auto out = ops::affine_forward(x, eye, b0);
    CHECK(out.data == std::vector<double>{1, 2});

    Tensor ones({1, 2}, {1, 1});
    Tensor w({2, 1}, {1, 1});
    Tensor b({1}, {1});
    CHECK(ops::affine_forward(ones, w, b).data[0] == 3.0);
}

TEST_CASE("affine shape mismatch names both shapes") {
    Tensor x({1, 3}, {1, 2, 3});
    Tensor w({2, 2}, {1, 0, 0, 1});
    Tensor b({2}, {0, 0});
    CHECK_THROWS_WITH(ops::affine_forward(x, w, b),
                      Catch::Matchers::ContainsSubstring("[1x3]") &&
                          Catch::Matchers::ContainsSubstring("[2x2]"));
}

TEST_CASE("relu basics") {
    Tensor x({1, 3}, {-1, 0, 2});
    CHECK(ops::relu(x).data == std::vector<double>{0, 0, 2});
    Tensor pos({1, 3}, {0.5, 1, 2});
    CHECK(ops::relu(pos).data == pos.data);
}

TEST_CASE("batchnorm two-point normalization") {
    Tensor x({2, 1}, {1, 3});
    Tensor gain({1}, {1}), shift({1}, {0});
    auto [out, stats] = ops::batchnorm_forward(x, gain, shift, BnMode::train, {}, {}, 1e-12);
    CHECK(stats.mean.data[0] == Catch::Approx(2.0));
    CHECK(stats.var.data[0] == Catch::Approx(1.0));
    CHECK(out.data[0] == Catch::Approx(-1.0).margin(1e-6));
    CHECK(out.data[1] == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("batchnorm eval identity statistics") {
    Rng rng(7);
    Tensor x = Tensor::gaussian({4, 3}, 0.0, 1.0, rng);
    Tensor gain = Tensor::full({3}, 1.0), shift = Tensor::zeros({3});
    Tensor mu = Tensor::zeros({3}), var = Tensor::full({3}, 1.0);
    auto [out, stats] = ops::batchnorm_forward(x, gain, shift, BnMode::eval, mu, var, 0.0);
    CHECK(max_abs_diff(out, x) == 0.0);
}

TEST_CASE("batchnorm degenerate batch") {
    Tensor x({1, 2}, {1, 2});
    Tensor gain = Tensor::full({2}, 1.0), shift = Tensor::zeros({2});
    CHECK_THROWS_AS(ops::batchnorm_forward(x, gain, shift, BnMode::train, {}, {}, 1e-5),
                    DataError);
}

TEST_CASE("batchnorm train output is normalized") {
    // before gain/shift: mean 0, variance Var/(Var+eps) = 1/(1+eps/Var)
    Rng rng(42);
    Tensor x = Tensor::gaussian({64, 5}, 3.0, 2.0, rng);
    Tensor gain = Tensor::full({5}, 1.0), shift = Tensor::zeros({5});
    const double eps = 1e-3;
    auto [out, stats] = ops::batchnorm_forward(x, gain, shift, BnMode::train, {}, {}, eps);
    auto post = ops::batch_stats(out);
    for (std::size_t h = 0; h < 5; ++h) {
        const double expected_var = 1.0 / (1.0 + eps / stats.var.data[h]);
        CHECK(std::fabs(post.mean.data[h]) < 1e-10);
        CHECK(std::fabs(post.var.data[h] - expected_var) < 1e-10);
    }
}

TEST_CASE("softmax symmetry, closed form, stability") {
    Tensor z({1, 2}, {0, 0});
    auto p = ops::softmax(z);
    CHECK(p.data[0] == Catch::Approx(0.5));

    Tensor z2({1, 2}, {std::log(2.0), 0.0});
    auto p2 = ops::softmax(z2);
    CHECK(p2.data[0] == Catch::Approx(2.0 / 3.0));
    CHECK(p2.data[1] == Catch::Approx(1.0 / 3.0));

    Tensor z3({1, 2}, {1000.0, 0.0});
    auto p3 = ops::softmax(z3);
    CHECK(p3.all_finite());
    CHECK(p3.data[0] == Catch::Approx(1.0));
}

TEST_CASE("softmax rows sum to one and shift invariance") {
    Rng rng(3);
    Tensor z = Tensor::gaussian({16, 7}, 0.0, 5.0, rng);
    auto p = ops::softmax(z);
    for (std::size_t b = 0; b < 16; ++b) {
        double s = 0.0;
        for (std::size_t c = 0; c < 7; ++c) s += p.data[b * 7 + c];
        CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
    Tensor shifted = z;
    for (std::size_t b = 0; b < 16; ++b)
        for (std::size_t c = 0; c < 7; ++c) shifted.data[b * 7 + c] += 17.5;
    CHECK(max_abs_diff(ops::softmax(shifted), p) <= 1e-12);
}

TEST_CASE("kl divergence") {
    std::vector<double> p{0.3, 0.7};
    CHECK(ops::kl_divergence(p, p) == 0.0);
    CHECK(ops::kl_divergence({1.0, 0.0}, {0.5, 0.5}) == Catch::Approx(std::log(2.0)));
    CHECK_THROWS_AS(ops::kl_divergence({0.5, 0.5}, {1.0, 0.0, 0.0}), DimensionError);

    // random pairs: nonnegative and equal to the direct summation oracle
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        auto draw = [&](std::size_t n) {
            Tensor logits = Tensor::gaussian({1, n}, 0.0, 2.0, rng);
            return ops::softmax(logits).data;
        };
        auto pv = draw(6), qv = draw(6);
        double brute = 0.0;
        for (std::size_t c = 0; c < 6; ++c)
            if (pv[c] > 0.0) brute += pv[c] * (std::log(pv[c]) - std::log(std::max(qv[c], 1e-12)));
        const double got = ops::kl_divergence(pv, qv);
        CHECK(got >= 0.0);
        CHECK(got == Catch::Approx(brute).margin(1e-12));
    }
}

TEST_CASE("entropy") {
    CHECK(ops::entropy({1.0, 0.0, 0.0}) == 0.0);
    CHECK(ops::entropy({0.25, 0.25, 0.25, 0.25}) == Catch::Approx(std::log(4.0)));
    CHECK(ops::entropy({0.5, 0.5}) == Catch::Approx(std::log(2.0)));
}
