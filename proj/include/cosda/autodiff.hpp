#pragma once

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "cosda/ops.hpp"
#include "cosda/tensor.hpp"

namespace cosda {

// Reverse-mode tape over exactly the operations the classifier needs.
// Usage: register leaves (parameters, inputs), build the forward pass through
// the op methods, then call gradients() on a scalar output. A tape is confined
// to one logical thread; values are copied in, so the tape never aliases
// caller storage.
class Tape {
public:
    int leaf(Tensor value) {
        nodes_.push_back(Node{std::move(value), {}});
        grads_.emplace_back();
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

    int affine(int x, int w, int b) {
        Tensor out = ops::affine_forward(value(x), value(w), value(b));
        const Tensor xv = value(x), wv = value(w);
        return push(std::move(out), [x, w, b, xv, wv](Tape& t, const Tensor& g) {
            const std::size_t B = xv.shape[0], D = xv.shape[1], H = wv.shape[1];
            Tensor gx = Tensor::zeros(xv.shape);
            Tensor gw = Tensor::zeros(wv.shape);
            Tensor gb = Tensor::zeros({H});
            for (std::size_t bi = 0; bi < B; ++bi) {
                for (std::size_t h = 0; h < H; ++h) {
                    const double gv = g.data[bi * H + h];
                    gb.data[h] += gv;
                    for (std::size_t d = 0; d < D; ++d) {
                        gx.data[bi * D + d] += gv * wv.data[d * H + h];
                        gw.data[d * H + h] += gv * xv.data[bi * D + d];
                    }
                }
            }
            t.accum(x, gx);
            t.accum(w, gw);
            t.accum(b, gb);
        });
    }

    int relu(int x) {
        Tensor out = ops::relu(value(x));
        const Tensor xv = value(x);
        return push(std::move(out), [x, xv](Tape& t, const Tensor& g) {
            Tensor gx = g;
            for (std::size_t i = 0; i < gx.data.size(); ++i)
                if (xv.data[i] <= 0.0) gx.data[i] = 0.0;
            t.accum(x, gx);
        });
    }

    // Train-mode batchnorm; gradient flows through the batch statistics.
    // The per-batch (mean, population variance) pair is written to *stats_out
    // so callers can feed the epoch accumulator.
    int batchnorm_train(int x, int gain, int shift, double eps, BnStats* stats_out = nullptr) {
        auto [out, stats] =
            ops::batchnorm_forward(value(x), value(gain), value(shift), BnMode::train,
                                   Tensor{}, Tensor{}, eps);
        if (stats_out) *stats_out = stats;
        const std::size_t B = out.shape[0], H = out.shape[1];
        // Cache normalized activations and 1/sqrt(var+eps) for the backward pass.
        Tensor xhat = Tensor::zeros({B, H});
        Tensor inv_std = Tensor::zeros({H});
        const Tensor xv = value(x);
        for (std::size_t h = 0; h < H; ++h) {
            inv_std.data[h] = 1.0 / std::sqrt(stats.var.data[h] + eps);
            for (std::size_t b = 0; b < B; ++b)
                xhat.data[b * H + h] = (xv.data[b * H + h] - stats.mean.data[h]) * inv_std.data[h];
        }
        const Tensor gv = value(gain);
        return push(std::move(out), [x, gain, shift, xhat, inv_std, gv](Tape& t, const Tensor& g) {
            const std::size_t B = xhat.shape[0], H = xhat.shape[1];
            Tensor ggain = Tensor::zeros({H});
            Tensor gshift = Tensor::zeros({H});
            Tensor gx = Tensor::zeros({B, H});
            for (std::size_t h = 0; h < H; ++h) {
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::size_t b = 0; b < B; ++b) {
                    const double go = g.data[b * H + h];
                    gshift.data[h] += go;
                    ggain.data[h] += go * xhat.data[b * H + h];
                    const double dxhat = go * gv.data[h];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat.data[b * H + h];
                }
                const double mean_dxhat = sum_dxhat / static_cast<double>(B);
                const double mean_dxhat_xhat = sum_dxhat_xhat / static_cast<double>(B);
                for (std::size_t b = 0; b < B; ++b) {
                    const double dxhat = g.data[b * H + h] * gv.data[h];
                    gx.data[b * H + h] = inv_std.data[h] *
                        (dxhat - mean_dxhat - xhat.data[b * H + h] * mean_dxhat_xhat);
                }
            }
            t.accum(x, gx);
            t.accum(gain, ggain);
            t.accum(shift, gshift);
        });
    }

    // Eval-mode batchnorm; the supplied running statistics are constants.
    int batchnorm_eval(int x, int gain, int shift, const Tensor& running_mean,
                       const Tensor& running_var, double eps) {
        auto [out, stats] = ops::batchnorm_forward(value(x), value(gain), value(shift),
                                                   BnMode::eval, running_mean, running_var, eps);
        const std::size_t B = out.shape[0], H = out.shape[1];
        Tensor xhat = Tensor::zeros({B, H});
        Tensor inv_std = Tensor::zeros({H});
        const Tensor xv = value(x);
        for (std::size_t h = 0; h < H; ++h) {
            inv_std.data[h] = 1.0 / std::sqrt(stats.var.data[h] + eps);
            for (std::size_t b = 0; b < B; ++b)
                xhat.data[b * H + h] = (xv.data[b * H + h] - stats.mean.data[h]) * inv_std.data[h];
        }
        const Tensor gv = value(gain);
        return push(std::move(out), [x, gain, shift, xhat, inv_std, gv](Tape& t, const Tensor& g) {
            const std::size_t B = xhat.shape[0], H = xhat.shape[1];
            Tensor ggain = Tensor::zeros({H});
            Tensor gshift = Tensor::zeros({H});
            Tensor gx = Tensor::zeros({B, H});
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t b = 0; b < B; ++b) {
                    const double go = g.data[b * H + h];
                    gshift.data[h] += go;
                    ggain.data[h] += go * xhat.data[b * H + h];
                    gx.data[b * H + h] = go * gv.data[h] * inv_std.data[h];
                }
            t.accum(x, gx);
            t.accum(gain, ggain);
            t.accum(shift, gshift);
        });
    }

    int softmax(int logits) {
        Tensor out = ops::softmax(value(logits));
        const Tensor q = out;
        return push(std::move(out), [logits, q](Tape& t, const Tensor& g) {
            const std::size_t B = q.shape[0], C = q.shape[1];
            Tensor gz = Tensor::zeros({B, C});
            for (std::size_t b = 0; b < B; ++b) {
                double dot = 0.0;
                for (std::size_t c = 0; c < C; ++c)
                    dot += g.data[b * C + c] * q.data[b * C + c];
                for (std::size_t c = 0; c < C; ++c)
                    gz.data[b * C + c] = q.data[b * C + c] * (g.data[b * C + c] - dot);
            }
            t.accum(logits, gz);
        });
    }

    // Scalar: mean over rows of KL(target_row || q_row). The target is a
    // constant; gradient flows into q only.
    int kl_to_target_mean(const Tensor& target_probs, int q) {
        const Tensor& qv = value(q);
        if (!target_probs.same_shape(qv))
            throw DimensionError("consistency loss shape mismatch: target " +
                                 target_probs.shape_str() + " vs prediction " + qv.shape_str());
        const std::size_t B = qv.shape[0], C = qv.shape[1];
        double loss = 0.0;
        for (std::size_t b = 0; b < B; ++b)
            loss += ops::kl_divergence(&target_probs.data[b * C], &qv.data[b * C], C);
        loss /= static_cast<double>(B);
        const Tensor qc = qv, tc = target_probs;
        return push(Tensor({1}, {loss}), [q, qc, tc](Tape& t, const Tensor& g) {
            const std::size_t B = qc.shape[0], C = qc.shape[1];
            const double g0 = g.data[0] / static_cast<double>(B);
            Tensor gq = Tensor::zeros({B, C});
            for (std::size_t i = 0; i < gq.data.size(); ++i) {
                if (tc.data[i] > 0.0 && qc.data[i] > kProbFloor)
                    gq.data[i] = -g0 * tc.data[i] / qc.data[i];
            }
            t.accum(q, gq);
        });
    }

    // Scalar: (1/B) sum_i KL(q_i || q_bar) with q_bar the column mean of q.
    // d/dq[j,d] = (1/B) * (log q[j,d] - log q_bar[d]).
    int kl_to_marginal_mean(int q) {
        const Tensor& qv = value(q);
        const std::size_t B = qv.shape[0], C = qv.shape[1];
        std::vector<double> marginal(C, 0.0);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) marginal[c] += qv.data[b * C + c];
        for (auto& m : marginal) m /= static_cast<double>(B);
        double loss = 0.0;
        for (std::size_t b = 0; b < B; ++b)
            loss += ops::kl_divergence(&qv.data[b * C], marginal.data(), C);
        loss /= static_cast<double>(B);
        const Tensor qc = qv;
        return push(Tensor({1}, {loss}), [q, qc, marginal](Tape& t, const Tensor& g) {
            const std::size_t B = qc.shape[0], C = qc.shape[1];
            const double g0 = g.data[0] / static_cast<double>(B);
            Tensor gq = Tensor::zeros({B, C});
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c)
                    gq.data[b * C + c] =
                        g0 * (ops::log_clamped(qc.data[b * C + c]) - ops::log_clamped(marginal[c]));
            t.accum(q, gq);
        });
    }

    // Scalar: -(1/B) sum_b log q[b, label_b] (cross-entropy given probabilities).
    int nll_mean(int probs, const std::vector<std::size_t>& labels) {
        const Tensor& qv = value(probs);
        const std::size_t B = qv.shape[0], C = qv.shape[1];
        if (labels.size() != B)
            throw DimensionError("nll labels length " + std::to_string(labels.size()) +
                                 " does not match batch " + std::to_string(B));
        double loss = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            if (labels[b] >= C)
                throw DataError("label " + std::to_string(labels[b]) + " out of range for " +
                                std::to_string(C) + " classes");
            loss -= ops::log_clamped(qv.data[b * C + labels[b]]);
        }
        loss /= static_cast<double>(B);
        const Tensor qc = qv;
        return push(Tensor({1}, {loss}), [probs, qc, labels](Tape& t, const Tensor& g) {
            const std::size_t B = qc.shape[0], C = qc.shape[1];
            const double g0 = g.data[0] / static_cast<double>(B);
            Tensor gq = Tensor::zeros({B, C});
            for (std::size_t b = 0; b < B; ++b) {
                const double q = qc.data[b * C + labels[b]];
                if (q > kProbFloor) gq.data[b * C + labels[b]] = -g0 / q;
            }
            t.accum(probs, gq);
        });
    }

    // Scalar: s * a.
    int scale(int a, double s) {
        const double v = s * value(a).data[0];
        return push(Tensor({1}, {v}), [a, s](Tape& t, const Tensor& g) {
            Tensor ga = g;
            ga.data[0] *= s;
            t.accum(a, ga);
        });
    }

    // Scalar: a + alpha * b.
    int add_scaled(int a, int b, double alpha) {
        const double v = value(a).data[0] + alpha * value(b).data[0];
        return push(Tensor({1}, {v}), [a, b, alpha](Tape& t, const Tensor& g) {
            t.accum(a, g);
            Tensor gb = g;
            gb.data[0] *= alpha;
            t.accum(b, gb);
        });
    }

    // Backpropagates from a scalar node and returns one gradient tensor per
    // requested id, each shaped like its value (zeros when disconnected).
    std::vector<Tensor> gradients(int loss, const std::vector<int>& wrt) {
        if (value(loss).size() != 1) throw StateError("gradients() needs a scalar loss node");
        for (auto& g : grads_) g = Tensor{};
        grads_[static_cast<std::size_t>(loss)] = Tensor({1}, {1.0});
        for (int id = loss; id >= 0; --id) {
            auto& node = nodes_[static_cast<std::size_t>(id)];
            const Tensor& g = grads_[static_cast<std::size_t>(id)];
            if (!g.data.empty() && node.backward) node.backward(*this, g);
        }
        std::vector<Tensor> out;
        out.reserve(wrt.size());
        for (int id : wrt) {
            const Tensor& g = grads_[static_cast<std::size_t>(id)];
            out.push_back(g.data.empty() ? Tensor::zeros(value(id).shape) : g);
        }
        return out;
    }

private:
    struct Node {
        Tensor value;
        std::function<void(Tape&, const Tensor&)> backward;
    };

    int push(Tensor value, std::function<void(Tape&, const Tensor&)> backward) {
        nodes_.push_back(Node{std::move(value), std::move(backward)});
        grads_.emplace_back();
        return static_cast<int>(nodes_.size()) - 1;
    }

    void accum(int id, const Tensor& g) {
        Tensor& slot = grads_[static_cast<std::size_t>(id)];
        if (slot.data.empty()) {
            slot = g;
        } else {
            for (std::size_t i = 0; i < slot.data.size(); ++i) slot.data[i] += g.data[i];
        }
    }

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
};

// Central-difference gradient estimate of a scalar function, coordinate by
// coordinate: (f(x + h e) - f(x - h e)) / (2h).
inline Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                         const Tensor& x, double h) {
    if (!(h > 0.0)) throw ConfigError("finite difference step h must be > 0");
    Tensor grad = Tensor::zeros(x.shape);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double orig = x.data[i];
        probe.data[i] = orig + h;
        const double fp = f(probe);
        probe.data[i] = orig - h;
        const double fm = f(probe);
        probe.data[i] = orig;
        grad.data[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

// Infinity-norm relative disagreement between a gradient and its reference,
// scaled by the reference's largest component. The 1e-3 denominator floor
// keeps central-difference rounding noise (about |f| eps / 2h, 1e-10 at
// h=1e-6) from dominating parameters whose true gradient is structurally
// zero, e.g. an affine bias feeding train-mode BatchNorm.
inline double gradient_rel_error(const Tensor& got, const Tensor& ref) {
    if (got.shape != ref.shape)
        throw DimensionError("gradient_rel_error shape mismatch: " + got.shape_str() + " vs " +
                             ref.shape_str());
    double scale = 1e-3;
    for (double v : ref.data) scale = std::max(scale, std::fabs(v));
    double err = 0.0;
    for (std::size_t i = 0; i < got.data.size(); ++i)
        err = std::max(err, std::fabs(got.data[i] - ref.data[i]));
    return err / scale;
}

}  // namespace cosda
