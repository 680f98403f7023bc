#pragma once

#include <vector>

#include "cosda/autodiff.hpp"
#include "cosda/ops.hpp"

namespace cosda {

// Sign convention for the mutual-information regularizer. The batch MI is
// defined as -(1/B) sum_i KL(row_i || marginal), which is never positive.
//   paper:       loss = -MI = +mean KL; minimizing pulls rows toward the
//                batch marginal.
//   standard_im: loss = +MI = -mean KL; minimizing sharpens rows away from
//                the marginal while balancing the marginal itself.
// Both satisfy the entropy decomposition below up to sign; the mode in use is
// recorded in run logs.
enum class MiSignMode { paper, standard_im };

inline const char* to_string(MiSignMode m) {
    return m == MiSignMode::paper ? "paper" : "standard_im";
}

struct MiBreakdown {
    double mi = 0.0;                      // -(1/B) sum_i KL(row_i || marginal)
    double mean_instance_entropy = 0.0;   // (1/B) sum_i H(row_i)
    double marginal_entropy = 0.0;        // H(marginal)
    std::vector<double> marginal;         // arithmetic mean of the batch rows
};

// Mean over the batch of KL(p_tilde_b || q_b).
inline double consistency_loss(const Tensor& p_tilde, const Tensor& q) {
    require_matrix(p_tilde, "consistency target");
    require_matrix(q, "consistency prediction");
    if (!p_tilde.same_shape(q))
        throw DimensionError("consistency loss shape mismatch: " + p_tilde.shape_str() + " vs " +
                             q.shape_str());
    const std::size_t B = q.shape[0], C = q.shape[1];
    double s = 0.0;
    for (std::size_t b = 0; b < B; ++b)
        s += ops::kl_divergence(&p_tilde.data[b * C], &q.data[b * C], C);
    return s / static_cast<double>(B);
}

inline MiBreakdown mutual_information(const Tensor& batch_probs) {
    require_matrix(batch_probs, "mutual_information batch");
    const std::size_t B = batch_probs.shape[0], C = batch_probs.shape[1];
    if (B < 1) throw DataError("mutual_information needs at least one row");
    MiBreakdown out;
    out.marginal.assign(C, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) out.marginal[c] += batch_probs.data[b * C + c];
    for (auto& m : out.marginal) m /= static_cast<double>(B);
    double mean_kl = 0.0, mean_h = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        mean_kl += ops::kl_divergence(&batch_probs.data[b * C], out.marginal.data(), C);
        mean_h += ops::entropy(&batch_probs.data[b * C], C);
    }
    out.mi = -mean_kl / static_cast<double>(B);
    out.mean_instance_entropy = mean_h / static_cast<double>(B);
    out.marginal_entropy = ops::entropy(out.marginal);
    return out;
}

inline double mi_loss(const Tensor& batch_probs, MiSignMode mode) {
    const MiBreakdown b = mutual_information(batch_probs);
    return mode == MiSignMode::paper ? -b.mi : b.mi;
}

inline double total_loss(double cons, double mi, double alpha) {
    if (alpha < 0.0) throw ConfigError("loss weight alpha must be >= 0");
    return cons + alpha * mi;
}

// Tape builders: same quantities, differentiable w.r.t. whatever produced q.
inline int consistency_loss_node(Tape& tape, const Tensor& p_tilde, int q) {
    return tape.kl_to_target_mean(p_tilde, q);
}

inline int mi_loss_node(Tape& tape, int q, MiSignMode mode) {
    const int mean_kl = tape.kl_to_marginal_mean(q);
    if (mode == MiSignMode::paper) return mean_kl;  // -MI
    return tape.scale(mean_kl, -1.0);               // +MI
}

inline int total_loss_node(Tape& tape, int cons, int mi, double alpha) {
    if (alpha < 0.0) throw ConfigError("loss weight alpha must be >= 0");
    return tape.add_scaled(cons, mi, alpha);
}

}  // namespace cosda
