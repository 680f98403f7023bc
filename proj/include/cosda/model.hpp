#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cosda/autodiff.hpp"
#include "cosda/fileio.hpp"
#include "cosda/optim.hpp"
#include "cosda/params.hpp"

namespace cosda {

// Desk-scale classifier backbone: an MLP with optional BatchNorm after each
// hidden layer and a linear softmax head.
struct MlpConfig {
    std::vector<std::size_t> layer_sizes;        // input dim, hidden widths..., class count
    std::vector<bool> batchnorm_after_hidden;    // one flag per hidden layer
    double bn_eps = kDefaultBnEps;
    std::uint64_t init_seed = 0;

    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t num_classes() const { return layer_sizes.back(); }
    std::size_t num_hidden() const { return layer_sizes.size() - 2; }

    void validate() const {
        if (layer_sizes.size() < 3)
            throw ConfigError("layer_sizes needs input, at least one hidden width, and class count");
        if (layer_sizes.back() < 2) throw ConfigError("class count must be >= 2");
        for (std::size_t s : layer_sizes)
            if (s < 1) throw ConfigError("all layer sizes must be >= 1");
        if (batchnorm_after_hidden.size() != num_hidden())
            throw ConfigError("batchnorm_after_hidden needs one flag per hidden layer (" +
                              std::to_string(num_hidden()) + ")");
        if (!(bn_eps > 0.0)) throw ConfigError("bn_eps must be > 0");
    }
};

// Arithmetic-mean aggregator for the per-batch BN statistics a model emits
// while training over one epoch.
class EpochBnStats {
public:
    void add(const std::vector<BnStats>& batch_stats) {
        if (sums_.empty()) {
            sums_ = batch_stats;
        } else {
            if (sums_.size() != batch_stats.size())
                throw DimensionError("epoch BN accumulator layer count mismatch");
            for (std::size_t l = 0; l < sums_.size(); ++l)
                for (std::size_t i = 0; i < sums_[l].mean.data.size(); ++i) {
                    sums_[l].mean.data[i] += batch_stats[l].mean.data[i];
                    sums_[l].var.data[i] += batch_stats[l].var.data[i];
                }
        }
        ++batch_count_;
    }

    std::size_t batch_count() const { return batch_count_; }

    // Mean over the epoch's per-batch means and per-batch population variances.
    std::vector<BnStats> average() const {
        if (batch_count_ == 0) throw StateError("epoch BN accumulator is empty");
        std::vector<BnStats> out = sums_;
        const double inv = 1.0 / static_cast<double>(batch_count_);
        for (auto& s : out)
            for (std::size_t i = 0; i < s.mean.data.size(); ++i) {
                s.mean.data[i] *= inv;
                s.var.data[i] *= inv;
            }
        return out;
    }

    void reset() {
        sums_.clear();
        batch_count_ = 0;
    }

private:
    std::vector<BnStats> sums_;
    std::size_t batch_count_ = 0;
};

struct TapeForward {
    int logits = -1;
    std::vector<int> param_ids;           // layout order
    std::vector<BnStats> bn_batch_stats;  // train mode only
    std::vector<int> pre_relu_ids;        // activations entering each ReLU
};

class Classifier {
public:
    explicit Classifier(MlpConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(mix_seed(cfg_.init_seed));
        const auto& ls = cfg_.layer_sizes;
        for (std::size_t i = 0; i + 1 < ls.size(); ++i) {
            const bool is_head = (i + 1 == ls.size() - 1);
            const std::string prefix = is_head ? "head" : "hidden" + std::to_string(i);
            const double bound = 1.0 / std::sqrt(static_cast<double>(ls[i]));
            add_param(prefix + ".weight", Tensor::uniform({ls[i], ls[i + 1]}, -bound, bound, rng));
            add_param(prefix + ".bias", Tensor::zeros({ls[i + 1]}));
            if (!is_head && cfg_.batchnorm_after_hidden[i]) {
                add_param(prefix + ".bn_gain", Tensor::full({ls[i + 1]}, 1.0));
                add_param(prefix + ".bn_shift", Tensor::zeros({ls[i + 1]}));
                bn_running_.push_back(
                    BnStats{Tensor::zeros({ls[i + 1]}), Tensor::full({ls[i + 1]}, 1.0)});
            }
        }
        mode = BnMode::train;
    }

    const MlpConfig& config() const { return cfg_; }
    BnMode mode = BnMode::train;

    const std::vector<BnStats>& bn_running() const { return bn_running_; }
    void set_bn_running(std::vector<BnStats> s) {
        if (s.size() != bn_running_.size())
            throw DimensionError("bn_running layer count mismatch");
        bn_running_ = std::move(s);
    }

    ParamVector param_vector() const { return flatten(names_, params_); }

    void set_params(const ParamVector& pv) {
        require_same_layout(pv, param_vector(), "set_params");
        params_ = unflatten(pv);
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& t : params_) n += t.size();
        return n;
    }

    // Pre-softmax outputs. Train-mode BN uses batch statistics (and therefore
    // needs B >= 2); eval mode uses the stored running statistics and is
    // row-independent.
    Tensor predict_logits(const Tensor& x) const { return predict_logits(x, mode); }

    Tensor predict_logits(const Tensor& x, BnMode m) const {
        check_width(x);
        Tensor h = x;
        std::size_t bn_slot = 0;
        for_each_layer([&](const LayerRefs& layer) {
            h = ops::affine_forward(h, *layer.weight, *layer.bias);
            if (layer.is_head) return;
            if (layer.has_bn) {
                const BnStats& run = bn_running_[bn_slot];
                auto [out, stats] = ops::batchnorm_forward(h, *layer.bn_gain, *layer.bn_shift, m,
                                                           run.mean, run.var, cfg_.bn_eps);
                h = std::move(out);
                ++bn_slot;
            }
            h = ops::relu(h);
        });
        return h;
    }

    Tensor predict_proba(const Tensor& x) const { return ops::softmax(predict_logits(x)); }
    Tensor predict_proba(const Tensor& x, BnMode m) const {
        return ops::softmax(predict_logits(x, m));
    }

    // Registers every parameter as a tape leaf (layout order) and builds the
    // forward graph up to the logits.
    TapeForward build_forward(Tape& tape, const Tensor& x, BnMode m) const {
        check_width(x);
        TapeForward fwd;
        for (const auto& p : params_) fwd.param_ids.push_back(tape.leaf(p));
        int h = tape.leaf(x);
        std::size_t pi = 0, bn_slot = 0;
        for_each_layer([&](const LayerRefs& layer) {
            const int w = fwd.param_ids[pi++];
            const int b = fwd.param_ids[pi++];
            h = tape.affine(h, w, b);
            if (layer.is_head) return;
            if (layer.has_bn) {
                const int gain = fwd.param_ids[pi++];
                const int shift = fwd.param_ids[pi++];
                if (m == BnMode::train) {
                    BnStats stats;
                    h = tape.batchnorm_train(h, gain, shift, cfg_.bn_eps, &stats);
                    fwd.bn_batch_stats.push_back(std::move(stats));
                } else {
                    const BnStats& run = bn_running_[bn_slot];
                    h = tape.batchnorm_eval(h, gain, shift, run.mean, run.var, cfg_.bn_eps);
                }
                ++bn_slot;
            }
            fwd.pre_relu_ids.push_back(h);
            h = tape.relu(h);
        });
        fwd.logits = h;
        return fwd;
    }

    // Applies flat gradients to the parameters through one SGD step.
    void apply_sgd(const ParamVector& grads, SgdState& state, double lr, double momentum,
                   double weight_decay) {
        ParamVector pv = param_vector();
        sgd_step(pv, grads, state, lr, momentum, weight_decay);
        params_ = unflatten(pv);
    }

    EpochBnStats& epoch_accum() { return epoch_accum_; }
    const EpochBnStats& epoch_accum() const { return epoch_accum_; }

    const std::vector<std::string>& param_names() const { return names_; }
    const std::vector<Tensor>& param_tensors() const { return params_; }

private:
    struct LayerRefs {
        const Tensor* weight;
        const Tensor* bias;
        const Tensor* bn_gain = nullptr;
        const Tensor* bn_shift = nullptr;
        bool has_bn = false;
        bool is_head = false;
    };

    template <typename Fn>
    void for_each_layer(Fn&& fn) const {
        std::size_t pi = 0;
        const std::size_t hidden = cfg_.num_hidden();
        for (std::size_t i = 0; i < hidden; ++i) {
            LayerRefs layer;
            layer.weight = &params_[pi++];
            layer.bias = &params_[pi++];
            layer.has_bn = cfg_.batchnorm_after_hidden[i];
            if (layer.has_bn) {
                layer.bn_gain = &params_[pi++];
                layer.bn_shift = &params_[pi++];
            }
            fn(layer);
        }
        LayerRefs head;
        head.weight = &params_[pi++];
        head.bias = &params_[pi++];
        head.is_head = true;
        fn(head);
    }

    void check_width(const Tensor& x) const {
        require_matrix(x, "classifier input");
        if (x.shape[1] != cfg_.input_dim())
            throw DimensionError("input width " + std::to_string(x.shape[1]) +
                                 " does not match model input dim " +
                                 std::to_string(cfg_.input_dim()));
    }

    void add_param(std::string name, Tensor t) {
        names_.push_back(std::move(name));
        params_.push_back(std::move(t));
    }

    MlpConfig cfg_;
    std::vector<std::string> names_;
    std::vector<Tensor> params_;
    std::vector<BnStats> bn_running_;
    EpochBnStats epoch_accum_;
};

inline Classifier init_classifier(const MlpConfig& cfg) { return Classifier(cfg); }

// One SGD step on mean cross-entropy. Returns the pre-step loss and feeds the
// batch BN statistics into the model's epoch accumulator.
inline double supervised_step(Classifier& model, const Tensor& x,
                              const std::vector<std::size_t>& labels, SgdState& state,
                              double lr, double momentum = 0.9, double weight_decay = 5e-3) {
    if (model.mode != BnMode::train) throw StateError("supervised_step requires train mode");
    Tape tape;
    TapeForward fwd = model.build_forward(tape, x, BnMode::train);
    const int probs = tape.softmax(fwd.logits);
    const int loss = tape.nll_mean(probs, labels);
    const double loss_value = tape.value(loss).data[0];
    auto grads = tape.gradients(loss, fwd.param_ids);
    ParamVector grad_pv = flatten(model.param_names(), grads);
    model.apply_sgd(grad_pv, state, lr, momentum, weight_decay);
    model.epoch_accum().add(fwd.bn_batch_stats);
    return loss_value;
}

// ---------------------------------------------------------------------------
// Checkpoint container: JSON with a version tag; doubles survive the
// round-trip bit-exactly (shortest round-trip float rendering).
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json classifier_to_json(const Classifier& model) {
    nlohmann::json j;
    j["format"] = "cosda-classifier";
    j["version"] = kCheckpointVersion;
    const auto& cfg = model.config();
    j["config"] = {{"layer_sizes", cfg.layer_sizes},
                   {"batchnorm_after_hidden", cfg.batchnorm_after_hidden},
                   {"bn_eps", cfg.bn_eps},
                   {"init_seed", cfg.init_seed}};
    ParamVector pv = model.param_vector();
    nlohmann::json layout = nlohmann::json::array();
    for (const auto& seg : pv.layout)
        layout.push_back({{"name", seg.name}, {"shape", seg.shape}, {"offset", seg.offset}});
    j["params"] = {{"layout", layout}, {"values", pv.values}};
    nlohmann::json bn = nlohmann::json::array();
    for (const auto& s : model.bn_running())
        bn.push_back({{"mean", s.mean.data}, {"var", s.var.data}});
    j["bn_running"] = bn;
    j["mode"] = model.mode == BnMode::train ? "train" : "eval";
    return j;
}

inline Classifier classifier_from_json(const nlohmann::json& j) {
    if (!j.contains("version") || j.at("version").get<int>() != kCheckpointVersion)
        throw ParseError("checkpoint version missing or unsupported");
    MlpConfig cfg;
    const auto& jc = j.at("config");
    cfg.layer_sizes = jc.at("layer_sizes").get<std::vector<std::size_t>>();
    cfg.batchnorm_after_hidden = jc.at("batchnorm_after_hidden").get<std::vector<bool>>();
    cfg.bn_eps = jc.at("bn_eps").get<double>();
    cfg.init_seed = jc.at("init_seed").get<std::uint64_t>();
    Classifier model(cfg);
    ParamVector pv = model.param_vector();
    pv.values = j.at("params").at("values").get<std::vector<double>>();
    if (pv.values.size() != model.param_count())
        throw ParseError("checkpoint parameter count does not match its config");
    model.set_params(pv);
    std::vector<BnStats> bn;
    for (const auto& js : j.at("bn_running")) {
        BnStats s;
        auto mean = js.at("mean").get<std::vector<double>>();
        auto var = js.at("var").get<std::vector<double>>();
        s.mean = Tensor({mean.size()}, mean);
        s.var = Tensor({var.size()}, var);
        bn.push_back(std::move(s));
    }
    model.set_bn_running(std::move(bn));
    model.mode = j.at("mode").get<std::string>() == "train" ? BnMode::train : BnMode::eval;
    return model;
}

inline void save_checkpoint(const Classifier& model, const std::filesystem::path& path) {
    write_text_atomic(path, classifier_to_json(model).dump(2) + "\n");
}

inline Classifier load_checkpoint(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
    }
    try {
        return classifier_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint " + path.string() + " has missing or mistyped fields: " +
                         e.what());
    }
}

}  // namespace cosda
