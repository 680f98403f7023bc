#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cosda/domains.hpp"
#include "cosda/eval.hpp"
#include "cosda/losses.hpp"
#include "cosda/mixup.hpp"
#include "cosda/model.hpp"

namespace cosda {

enum class Ablation { none, no_dual_speed, no_mixup, no_mi, no_teacher };

inline const char* to_string(Ablation a) {
    switch (a) {
        case Ablation::no_dual_speed: return "no_dual_speed";
        case Ablation::no_mixup: return "no_mixup";
        case Ablation::no_mi: return "no_mi";
        case Ablation::no_teacher: return "no_teacher";
        default: return "none";
    }
}

inline Ablation ablation_from_string(const std::string& s) {
    if (s == "none" || s.empty()) return Ablation::none;
    if (s == "no_dual_speed") return Ablation::no_dual_speed;
    if (s == "no_mixup") return Ablation::no_mixup;
    if (s == "no_mi") return Ablation::no_mi;
    if (s == "no_teacher") return Ablation::no_teacher;
    throw ConfigError("unknown ablation '" + s + "'");
}

struct AdaptConfig {
    std::size_t epochs = 20;       // E
    std::size_t batch_size = 64;   // B
    double lr_max = 2e-3;          // eta range, one cosine cycle per domain
    double lr_min = 1e-3;
    double sgd_momentum = 0.9;
    double weight_decay = 5e-3;
    double temperature = 0.07;     // tau, applied to logits
    double mixup_a = 2.0;          // Beta(a, a)
    double mi_weight = 1.0;        // alpha
    double m_lo = 0.89;            // EMA momentum floor (the schedule's own t->0 value)
    double m_hi = 0.99;
    // standard_im by default: the printed-sign variant pulls every prediction
    // onto the batch marginal and collapses adaptation on harder domains
    // (selectable either way; see MiSignMode).
    MiSignMode mi_sign_mode = MiSignMode::standard_im;
    LambdaMode lambda_mode = LambdaMode::per_batch;  // one lambda per mini-batch
    Ablation ablation = Ablation::none;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
        if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
        if (!(mixup_a > 0.0)) throw ConfigError("mixup shape a must be > 0");
        if (mi_weight < 0.0) throw ConfigError("MI weight alpha must be >= 0");
        if (!(0.0 <= m_lo && m_lo <= m_hi && m_hi <= 1.0))
            throw ConfigError("EMA momentum bounds need 0 <= m_lo <= m_hi <= 1");
        if (lr_min > lr_max) throw ConfigError("lr_min must be <= lr_max");
        if (lr_min < 0.0) throw ConfigError("learning rates must be >= 0");
        if (sgd_momentum < 0.0 || sgd_momentum >= 1.0)
            throw ConfigError("sgd_momentum must be in [0, 1)");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    }
};

// EMA momentum over epochs t = 1..E:
//   m_t = m_hi - (m_hi - m_lo) * [cos(t pi / E) + 1] / 2
// With the defaults this is the cosine ramp 0.99 - 0.1 [cos(t pi/E) + 1]/2,
// nondecreasing, ending exactly at m_hi.
inline double momentum_schedule(std::size_t t, std::size_t epochs, double m_lo, double m_hi) {
    if (t < 1 || t > epochs)
        throw ScheduleError("momentum_schedule epoch " + std::to_string(t) + " outside 1.." +
                            std::to_string(epochs));
    const double phase = std::cos(static_cast<double>(t) * std::numbers::pi /
                                  static_cast<double>(epochs));
    if (t == epochs) return m_hi;  // cos(pi) = -1 exactly by contract
    return m_hi - (m_hi - m_lo) * (phase + 1.0) / 2.0;
}

// Cosine annealing, one cycle per domain: starts exactly at lr_max (t = 1),
// decays toward lr_min.
inline double lr_schedule(std::size_t t, std::size_t epochs, double lr_max, double lr_min) {
    if (t < 1 || t > epochs)
        throw ScheduleError("lr_schedule epoch " + std::to_string(t) + " outside 1.." +
                            std::to_string(epochs));
    if (t == 1) return lr_max;
    const double phase = std::cos(static_cast<double>(t - 1) * std::numbers::pi /
                                  static_cast<double>(epochs));
    return lr_min + (lr_max - lr_min) * (phase + 1.0) / 2.0;
}

// Refines teacher soft outputs before temperature compression; rows must stay
// on the probability simplex.
using RefinerHook = std::function<Tensor(const Tensor& soft_outputs, const Tensor& features)>;

// Temperature-compressed pseudo-labels: eval-mode soft outputs from the
// labeling model, optionally refined by the hook, then re-sharpened as
// softmax(log(probs) / tau). For the identity hook this is exactly
// softmax(logits / tau).
inline Tensor pseudo_labels(const Classifier& teacher, const Tensor& x, double temperature,
                            const RefinerHook& hook = nullptr) {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    Tensor soft = teacher.predict_proba(x, BnMode::eval);
    if (hook) {
        Tensor refined = hook(soft, x);
        if (!refined.same_shape(soft))
            throw HookContractError("refiner changed the output shape: " + refined.shape_str() +
                                    " vs " + soft.shape_str());
        const std::size_t B = refined.shape[0], C = refined.shape[1];
        for (std::size_t b = 0; b < B; ++b) {
            double sum = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                double& v = refined.data[b * C + c];
                if (v < -1e-9)
                    throw HookContractError("refiner produced a negative probability");
                if (v < 0.0) v = 0.0;
                sum += v;
            }
            if (std::fabs(sum - 1.0) > 1e-9)
                throw HookContractError("refiner row does not sum to 1 (off by " +
                                        std::to_string(sum - 1.0) + ")");
        }
        soft = std::move(refined);
    }
    Tensor scaled_logits = Tensor::zeros(soft.shape);
    for (std::size_t i = 0; i < soft.data.size(); ++i)
        scaled_logits.data[i] = ops::log_clamped(soft.data[i]) / temperature;
    return ops::softmax(scaled_logits);
}

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double lr = 0.0;
    double ema_momentum = 0.0;
    double mean_cons = 0.0;
    double mean_mi = 0.0;
    double student_acc = 0.0;
    double teacher_acc = 0.0;
};

struct AdaptLog {
    std::string domain;
    std::string mi_sign_mode;
    std::string ablation;
    std::vector<EpochRecord> epochs;
};

inline nlohmann::json to_json(const EpochRecord& r) {
    return nlohmann::json{{"epoch", r.epoch},
                          {"lr", r.lr},
                          {"ema_momentum", r.ema_momentum},
                          {"mean_cons", r.mean_cons},
                          {"mean_mi", r.mean_mi},
                          {"student_acc", r.student_acc},
                          {"teacher_acc", r.teacher_acc}};
}

// Test/inspection hook, called after every student SGD step.
using BatchObserver =
    std::function<void(const Classifier& teacher, const Classifier& student, std::size_t epoch,
                       std::size_t batch)>;

struct AdaptResult {
    Classifier model;  // the new global model
    AdaptLog log;
};

// One target domain of the continual adaptation loop:
//   teacher <- h, student <- h, (mu, Var) <- h
//   per batch:  pseudo-label (teacher, eval mode) -> mixup -> student forward
//               (train mode) -> cons + alpha * MI -> SGD on the student
//   per epoch:  teacher parameters and BN statistics move by EMA with m_t
// The teacher is returned as the new global model. Labels in `target` feed
// only the log's accuracy fields, never the optimization path.
inline AdaptResult adapt_domain(const Classifier& global_model, const LabeledDataset& target,
                                const AdaptConfig& config, const RefinerHook& hook = nullptr,
                                const BatchObserver& observer = nullptr) {
    config.validate();
    if (target.size() == 0) throw DataError("adapt_domain: target domain is empty");
    if (target.dim() != global_model.config().input_dim())
        throw DimensionError("adapt_domain: feature width " + std::to_string(target.dim()) +
                             " does not match model input dim " +
                             std::to_string(global_model.config().input_dim()));

    Classifier teacher = global_model;
    Classifier student = global_model;
    teacher.mode = BnMode::eval;
    student.mode = BnMode::train;
    SgdState sgd_state;  // velocity reset at the start of each domain
    Rng rng = make_rng(config.seed, 0xada9d0);

    const std::size_t N = target.size();
    const std::size_t D = target.dim();
    const bool dual_speed = config.ablation != Ablation::no_dual_speed;
    const bool self_label = config.ablation == Ablation::no_teacher;
    const bool use_mixup = config.ablation != Ablation::no_mixup;
    const double alpha = config.ablation == Ablation::no_mi ? 0.0 : config.mi_weight;
    const MixupConfig mix_cfg{config.mixup_a, 0};

    AdaptLog log;
    log.domain = target.domain_name;
    log.mi_sign_mode = to_string(config.mi_sign_mode);
    log.ablation = to_string(config.ablation);

    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t t = 1; t <= config.epochs; ++t) {
        const double lr = lr_schedule(t, config.epochs, config.lr_max, config.lr_min);
        const double m = momentum_schedule(t, config.epochs, config.m_lo, config.m_hi);
        std::shuffle(order.begin(), order.end(), rng);
        student.epoch_accum().reset();
        double cons_sum = 0.0, mi_sum = 0.0;
        std::size_t batches = 0;

        for (std::size_t off = 0; off < N; off += config.batch_size) {
            const std::size_t bsz = std::min(config.batch_size, N - off);
            if (bsz < 2) break;  // a trailing singleton cannot be batch-normalized
            Tensor x = Tensor::zeros({bsz, D});
            for (std::size_t r = 0; r < bsz; ++r)
                for (std::size_t d = 0; d < D; ++d)
                    x.data[r * D + d] = target.features.data[order[off + r] * D + d];

            const Classifier& labeler = self_label ? student : teacher;
            Tensor p = pseudo_labels(labeler, x, config.temperature, hook);

            Tensor x_in = x, p_in = p;
            if (use_mixup) {
                MixedBatch mixed = mix_batch(x, p, mix_cfg, rng, config.lambda_mode);
                x_in = std::move(mixed.x_mixed);
                p_in = std::move(mixed.p_mixed);
            }

            Tape tape;
            TapeForward fwd = student.build_forward(tape, x_in, BnMode::train);
            const int probs = tape.softmax(fwd.logits);
            const int cons = consistency_loss_node(tape, p_in, probs);
            int loss = cons;
            if (alpha > 0.0) {
                const int mi = mi_loss_node(tape, probs, config.mi_sign_mode);
                loss = total_loss_node(tape, cons, mi, alpha);
            }
            cons_sum += tape.value(cons).data[0];
            mi_sum += mi_loss(tape.value(probs), config.mi_sign_mode);

            auto grads = tape.gradients(loss, fwd.param_ids);
            ParamVector grad_pv = flatten(student.param_names(), grads);
            student.apply_sgd(grad_pv, sgd_state, lr, config.sgd_momentum, config.weight_decay);
            student.epoch_accum().add(fwd.bn_batch_stats);
            ++batches;

            if (!dual_speed && !self_label) {
                teacher.set_params(student.param_vector());
                teacher.set_bn_running(student.bn_running());
            }
            if (observer) observer(teacher, student, t, batches);
        }
        if (batches == 0)
            throw DataError("adapt_domain: no trainable batch of >= 2 rows could be formed");

        // Epoch boundary: aggregate the student's BN statistics and move the
        // teacher by EMA.
        std::vector<BnStats> epoch_stats;
        if (student.epoch_accum().batch_count() > 0) epoch_stats = student.epoch_accum().average();
        const bool has_bn = !student.bn_running().empty();
        if (self_label) {
            if (has_bn) student.set_bn_running(epoch_stats);
        } else if (!dual_speed) {
            if (has_bn) {
                student.set_bn_running(epoch_stats);
                teacher.set_bn_running(epoch_stats);
            }
            teacher.set_params(student.param_vector());
        } else {
            ParamVector tp = teacher.param_vector();
            ema_update(tp, student.param_vector(), m);
            teacher.set_params(tp);
            if (has_bn) {
                std::vector<BnStats> tbn = teacher.bn_running();
                for (std::size_t l = 0; l < tbn.size(); ++l)
                    bn_ema_update(tbn[l], epoch_stats[l], m);
                teacher.set_bn_running(tbn);
                student.set_bn_running(epoch_stats);
            }
        }

        EpochRecord rec;
        rec.epoch = t;
        rec.lr = lr;
        rec.ema_momentum = m;
        rec.mean_cons = cons_sum / static_cast<double>(batches);
        rec.mean_mi = mi_sum / static_cast<double>(batches);
        rec.student_acc = accuracy(student, target);
        rec.teacher_acc = self_label ? rec.student_acc : accuracy(teacher, target);
        log.epochs.push_back(rec);
    }

    Classifier result = self_label ? std::move(student) : std::move(teacher);
    result.mode = BnMode::eval;
    return AdaptResult{std::move(result), std::move(log)};
}

struct SequentialResult {
    std::vector<Classifier> checkpoints;  // global model after each target domain
    std::vector<AdaptLog> logs;
};

// Folds adapt_domain over an ordered target list; checkpoint k is the global
// model after the k-th domain.
inline SequentialResult sequential_adapt(const Classifier& source_model,
                                         const std::vector<LabeledDataset>& targets,
                                         const AdaptConfig& config,
                                         const RefinerHook& hook = nullptr) {
    if (targets.empty()) throw DataError("sequential_adapt needs at least one target domain");
    SequentialResult out;
    Classifier global = source_model;
    for (const auto& target : targets) {
        AdaptResult res = adapt_domain(global, target, config, hook);
        global = res.model;
        out.checkpoints.push_back(std::move(res.model));
        out.logs.push_back(std::move(res.log));
    }
    return out;
}

}  // namespace cosda
