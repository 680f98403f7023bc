#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cosda/losses.hpp"
#include "cosda/model.hpp"

using namespace cosda;

TEST_CASE("consistency loss identities") {
    Tensor p({2, 2}, {0.3, 0.7, 0.9, 0.1});
    CHECK(consistency_loss(p, p) == 0.0);

    Tensor hard({1, 2}, {1.0, 0.0});
    Tensor half({1, 2}, {0.5, 0.5});
    CHECK(consistency_loss(hard, half) == Catch::Approx(std::log(2.0)));

    Tensor wrong({1, 3}, {0.2, 0.3, 0.5});
    CHECK_THROWS_AS(consistency_loss(hard, wrong), DimensionError);
    CHECK(consistency_loss(p, Tensor({2, 2}, {0.4, 0.6, 0.8, 0.2})) > 0.0);
}

TEST_CASE("mutual information closed forms") {
    Tensor same({3, 2}, {0.6, 0.4, 0.6, 0.4, 0.6, 0.4});
    const MiBreakdown b0 = mutual_information(same);
    CHECK(b0.mi == Catch::Approx(0.0).margin(1e-15));

    Tensor onehots({2, 2}, {1.0, 0.0, 0.0, 1.0});
    const MiBreakdown b = mutual_information(onehots);
    CHECK(b.marginal[0] == Catch::Approx(0.5));
    CHECK(b.marginal[1] == Catch::Approx(0.5));
    CHECK(b.mi == Catch::Approx(-std::log(2.0)));
    CHECK(b.mean_instance_entropy == Catch::Approx(0.0).margin(1e-15));
    CHECK(b.marginal_entropy == Catch::Approx(std::log(2.0)));
    CHECK(std::fabs(b.mi - (b.mean_instance_entropy - b.marginal_entropy)) <= 1e-9);
}

TEST_CASE("entropy decomposition holds on random batches") {
    Rng rng(41);
    std::uniform_int_distribution<std::size_t> pick_b(1, 64), pick_c(2, 10);
    for (int i = 0; i < 300; ++i) {
        const std::size_t B = pick_b(rng), C = pick_c(rng);
        const Tensor probs = ops::softmax(Tensor::gaussian({B, C}, 0.0, 2.0, rng));
        const MiBreakdown b = mutual_information(probs);
        CHECK(std::fabs(b.mi - (b.mean_instance_entropy - b.marginal_entropy)) <= 1e-9);
        CHECK(b.mi <= 1e-15);  // negated mean KL is never positive
        // marginal is the row mean
        for (std::size_t c = 0; c < C; ++c) {
            double col = 0.0;
            for (std::size_t r = 0; r < B; ++r) col += probs.data[r * C + c];
            CHECK(b.marginal[c] == Catch::Approx(col / static_cast<double>(B)).margin(1e-15));
        }
    }
}

TEST_CASE("mi loss sign modes are exact negations") {
    Tensor same({2, 3}, {0.2, 0.5, 0.3, 0.2, 0.5, 0.3});
    CHECK(mi_loss(same, MiSignMode::paper) == Catch::Approx(0.0).margin(1e-15));
    CHECK(mi_loss(same, MiSignMode::standard_im) == Catch::Approx(0.0).margin(1e-15));

    Rng rng(43);
    const Tensor probs = ops::softmax(Tensor::gaussian({6, 4}, 0.0, 1.5, rng));
    CHECK(mi_loss(probs, MiSignMode::paper) ==
          Catch::Approx(-mi_loss(probs, MiSignMode::standard_im)));
    CHECK(mi_loss(probs, MiSignMode::paper) >= 0.0);
}

TEST_CASE("minimizing the default-sign MI loss pulls rows onto the marginal") {
    Rng rng(47);
    Tensor logits = Tensor::gaussian({2, 3}, 0.0, 1.0, rng);
    for (int step = 0; step < 4000; ++step) {
        Tape tape;
        const int leaf = tape.leaf(logits);
        const int probs = tape.softmax(leaf);
        const int loss = mi_loss_node(tape, probs, MiSignMode::paper);
        auto g = tape.gradients(loss, {leaf});
        for (std::size_t i = 0; i < logits.data.size(); ++i)
            logits.data[i] -= 0.5 * g[0].data[i];
    }
    const Tensor probs = ops::softmax(logits);
    const MiBreakdown b = mutual_information(probs);
    CHECK(-b.mi < 1e-4);  // mean KL(row || marginal) -> 0
}

TEST_CASE("total loss combination") {
    CHECK(total_loss(1.25, 99.0, 0.0) == 1.25);
    CHECK(total_loss(1.0, 2.0, 0.5) == Catch::Approx(2.0));
    CHECK_THROWS_AS(total_loss(1.0, 1.0, -0.1), ConfigError);
}

TEST_CASE("tape total loss equals recomputation from raw ingredients") {
    // temperature-compressed targets, alpha = 1, against an independent
    // reimplementation of every term
    Rng rng(53);
    const Tensor raw_logits = Tensor::gaussian({8, 4}, 0.0, 1.0, rng);
    Tensor sharp = raw_logits;
    for (auto& v : sharp.data) v /= 0.07;
    const Tensor p_tilde = ops::softmax(sharp);
    const Tensor student_logits = Tensor::gaussian({8, 4}, 0.0, 1.0, rng);

    Tape tape;
    const int leaf = tape.leaf(student_logits);
    const int q = tape.softmax(leaf);
    const int cons = consistency_loss_node(tape, p_tilde, q);
    const int mi = mi_loss_node(tape, q, MiSignMode::paper);
    const int total = total_loss_node(tape, cons, mi, 1.0);

    // independent recomputation
    const Tensor qv = ops::softmax(student_logits);
    double cons_ref = 0.0;
    std::vector<double> marginal(4, 0.0);
    for (std::size_t b = 0; b < 8; ++b)
        for (std::size_t c = 0; c < 4; ++c) marginal[c] += qv.data[b * 4 + c] / 8.0;
    double mean_kl = 0.0;
    for (std::size_t b = 0; b < 8; ++b) {
        for (std::size_t c = 0; c < 4; ++c) {
            const double pt = p_tilde.data[b * 4 + c];
            const double qc = qv.data[b * 4 + c];
            if (pt > 0.0) cons_ref += pt * (std::log(pt) - std::log(qc)) / 8.0;
            if (qc > 0.0) mean_kl += qc * (std::log(qc) - std::log(marginal[c])) / 8.0;
        }
    }
    CHECK(tape.value(total).data[0] == Catch::Approx(cons_ref + mean_kl).margin(1e-12));
    CHECK(tape.value(cons).data[0] == Catch::Approx(cons_ref).margin(1e-12));
}

TEST_CASE("consistency gradient through a model matches finite differences") {
    MlpConfig cfg;
    cfg.layer_sizes = {2, 5, 3};
    cfg.batchnorm_after_hidden = {true};
    cfg.init_seed = 3;
    Classifier model(cfg);
    Rng rng(59);
    const Tensor x = Tensor::gaussian({6, 2}, 0.0, 1.0, rng);
    const Tensor target = ops::softmax(Tensor::gaussian({6, 3}, 0.0, 1.5, rng));

    Tape tape;
    TapeForward fwd = model.build_forward(tape, x, BnMode::train);
    const int q = tape.softmax(fwd.logits);
    const int loss = consistency_loss_node(tape, target, q);
    auto grads = tape.gradients(loss, fwd.param_ids);

    for (std::size_t pi = 0; pi < model.param_names().size(); ++pi) {
        auto f = [&](const Tensor& candidate) {
            Classifier probe = model;
            ParamVector pv = probe.param_vector();
            for (std::size_t i = 0; i < candidate.size(); ++i)
                pv.values[pv.layout[pi].offset + i] = candidate.data[i];
            probe.set_params(pv);
            const Tensor probs = ops::softmax(probe.predict_logits(x, BnMode::train));
            return consistency_loss(target, probs);
        };
        const Tensor fd = finite_difference_gradient(f, model.param_tensors()[pi], 1e-6);
        CHECK(gradient_rel_error(grads[pi], fd) < 1e-5);
    }
}
