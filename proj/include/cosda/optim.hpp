#pragma once

#include <vector>

#include "cosda/ops.hpp"
#include "cosda/params.hpp"

namespace cosda {

// Classic-momentum SGD state: one velocity entry per parameter.
struct SgdState {
    std::vector<double> velocity;

    void ensure_size(std::size_t n) {
        if (velocity.empty()) velocity.assign(n, 0.0);
        if (velocity.size() != n)
            throw DimensionError("SGD state size " + std::to_string(velocity.size()) +
                                 " does not match parameter count " + std::to_string(n));
    }
};

// v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v
inline void sgd_step(ParamVector& params, const ParamVector& grads, SgdState& state, double lr,
                     double momentum, double weight_decay) {
    require_same_layout(params, grads, "sgd_step");
    state.ensure_size(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.velocity[i] = momentum * state.velocity[i] + grads.values[i] +
                            weight_decay * params.values[i];
        params.values[i] -= lr * state.velocity[i];
    }
}

// teacher <- m * teacher + (1 - m) * student, elementwise over the flat view.
inline void ema_update(ParamVector& teacher, const ParamVector& student, double m) {
    require_same_layout(teacher, student, "ema_update");
    if (m < 0.0 || m > 1.0) throw ConfigError("EMA momentum must be in [0, 1]");
    if (m == 1.0) return;  // bit-exact no-op
    if (m == 0.0) {
        teacher.values = student.values;
        return;
    }
    for (std::size_t i = 0; i < teacher.values.size(); ++i)
        teacher.values[i] = m * teacher.values[i] + (1.0 - m) * student.values[i];
}

// Same convex combination for one BN layer's running statistics.
inline void bn_ema_update(BnStats& teacher, const BnStats& student_epoch, double m) {
    if (m < 0.0 || m > 1.0) throw ConfigError("EMA momentum must be in [0, 1]");
    if (teacher.mean.shape != student_epoch.mean.shape ||
        teacher.var.shape != student_epoch.var.shape)
        throw DimensionError("bn_ema_update shape mismatch: " + teacher.mean.shape_str() +
                             " vs " + student_epoch.mean.shape_str());
    if (m == 1.0) return;
    if (m == 0.0) {
        teacher = student_epoch;
        return;
    }
    for (std::size_t i = 0; i < teacher.mean.data.size(); ++i) {
        teacher.mean.data[i] = m * teacher.mean.data[i] + (1.0 - m) * student_epoch.mean.data[i];
        teacher.var.data[i] = m * teacher.var.data[i] + (1.0 - m) * student_epoch.var.data[i];
    }
}

}  // namespace cosda
