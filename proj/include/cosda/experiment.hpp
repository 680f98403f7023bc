#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cosda/adapter.hpp"
#include "cosda/domains.hpp"
#include "cosda/eval.hpp"
#include "cosda/model.hpp"
#include "cosda/verify.hpp"

namespace cosda {

struct PretrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double lr_max = 5e-2;
    double lr_min = 5e-3;
    double momentum = 0.9;
    double weight_decay = 5e-3;

    void validate() const {
        if (epochs < 1) throw ConfigError("pretrain epochs must be >= 1");
        if (batch_size < 2) throw ConfigError("pretrain batch_size must be >= 2");
        if (lr_min > lr_max || lr_min < 0.0) throw ConfigError("pretrain lr range invalid");
    }
};

// Supervised source training. Running BN statistics are replaced by the
// epoch aggregate at every epoch end. Returns the final epoch's mean loss.
inline double pretrain_source(Classifier& model, const LabeledDataset& train,
                              const PretrainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    train.validate();
    if (train.dim() != model.config().input_dim())
        throw DimensionError("pretrain: feature width does not match model input dim");
    model.mode = BnMode::train;
    Rng rng = make_rng(seed, 0x9e7a11);
    SgdState state;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t D = train.dim();
    double epoch_loss = 0.0;
    for (std::size_t t = 1; t <= cfg.epochs; ++t) {
        const double lr = lr_schedule(t, cfg.epochs, cfg.lr_max, cfg.lr_min);
        std::shuffle(order.begin(), order.end(), rng);
        model.epoch_accum().reset();
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t off = 0; off < train.size(); off += cfg.batch_size) {
            const std::size_t bsz = std::min(cfg.batch_size, train.size() - off);
            if (bsz < 2) break;
            Tensor x = Tensor::zeros({bsz, D});
            std::vector<std::size_t> labels(bsz);
            for (std::size_t r = 0; r < bsz; ++r) {
                for (std::size_t d = 0; d < D; ++d)
                    x.data[r * D + d] = train.features.data[order[off + r] * D + d];
                labels[r] = train.labels[order[off + r]];
            }
            loss_sum += supervised_step(model, x, labels, state, lr, cfg.momentum,
                                        cfg.weight_decay);
            ++batches;
        }
        if (batches == 0) throw DataError("pretrain: no trainable batch of >= 2 rows");
        if (!model.bn_running().empty())
            model.set_bn_running(model.epoch_accum().average());
        epoch_loss = loss_sum / static_cast<double>(batches);
    }
    model.mode = BnMode::eval;
    return epoch_loss;
}

// ---------------------------------------------------------------------------
// Experiment configuration (JSON file driven; unknown keys are hard errors)
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    DomainSequenceSpec data;
    MlpConfig model;
    bool model_seed_explicit = false;
    PretrainConfig pretrain;
    AdaptConfig adapt;
    ReportFormats formats;
    std::uint64_t seed = 0;
    std::string out_dir;  // optional; CLI flag may override
};

inline MlpConfig model_config_from_json(const nlohmann::json& j) {
    check_known_keys(j, {"layer_sizes", "batchnorm_after_hidden", "bn_eps", "init_seed"},
                     "model config");
    MlpConfig cfg;
    cfg.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    if (j.contains("batchnorm_after_hidden"))
        cfg.batchnorm_after_hidden = j.at("batchnorm_after_hidden").get<std::vector<bool>>();
    else
        cfg.batchnorm_after_hidden.assign(cfg.layer_sizes.size() - 2, true);
    if (j.contains("bn_eps")) cfg.bn_eps = j.at("bn_eps").get<double>();
    if (j.contains("init_seed")) cfg.init_seed = j.at("init_seed").get<std::uint64_t>();
    return cfg;
}

inline nlohmann::json model_config_to_json(const MlpConfig& cfg) {
    return nlohmann::json{{"layer_sizes", cfg.layer_sizes},
                          {"batchnorm_after_hidden", cfg.batchnorm_after_hidden},
                          {"bn_eps", cfg.bn_eps},
                          {"init_seed", cfg.init_seed}};
}

inline AdaptConfig adapt_config_from_json(const nlohmann::json& j) {
    check_known_keys(j,
                     {"epochs", "batch_size", "lr_max", "lr_min", "sgd_momentum", "weight_decay",
                      "temperature", "mixup_a", "mi_weight", "m_lo", "m_hi", "mi_sign_mode",
                      "lambda_mode", "ablation"},
                     "adapt config");
    AdaptConfig cfg;
    if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("lr_max")) cfg.lr_max = j.at("lr_max").get<double>();
    if (j.contains("lr_min")) cfg.lr_min = j.at("lr_min").get<double>();
    if (j.contains("sgd_momentum")) cfg.sgd_momentum = j.at("sgd_momentum").get<double>();
    if (j.contains("weight_decay")) cfg.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("temperature")) cfg.temperature = j.at("temperature").get<double>();
    if (j.contains("mixup_a")) cfg.mixup_a = j.at("mixup_a").get<double>();
    if (j.contains("mi_weight")) cfg.mi_weight = j.at("mi_weight").get<double>();
    if (j.contains("m_lo")) cfg.m_lo = j.at("m_lo").get<double>();
    if (j.contains("m_hi")) cfg.m_hi = j.at("m_hi").get<double>();
    if (j.contains("mi_sign_mode")) {
        const std::string s = j.at("mi_sign_mode").get<std::string>();
        if (s == "paper")
            cfg.mi_sign_mode = MiSignMode::paper;
        else if (s == "standard_im")
            cfg.mi_sign_mode = MiSignMode::standard_im;
        else
            throw ConfigError("unknown mi_sign_mode '" + s + "'");
    }
    if (j.contains("lambda_mode")) {
        const std::string s = j.at("lambda_mode").get<std::string>();
        if (s == "per_batch")
            cfg.lambda_mode = LambdaMode::per_batch;
        else if (s == "per_row")
            cfg.lambda_mode = LambdaMode::per_row;
        else
            throw ConfigError("unknown lambda_mode '" + s + "'");
    }
    if (j.contains("ablation"))
        cfg.ablation = ablation_from_string(j.at("ablation").get<std::string>());
    return cfg;
}

inline nlohmann::json adapt_config_to_json(const AdaptConfig& cfg) {
    return nlohmann::json{{"epochs", cfg.epochs},
                          {"batch_size", cfg.batch_size},
                          {"lr_max", cfg.lr_max},
                          {"lr_min", cfg.lr_min},
                          {"sgd_momentum", cfg.sgd_momentum},
                          {"weight_decay", cfg.weight_decay},
                          {"temperature", cfg.temperature},
                          {"mixup_a", cfg.mixup_a},
                          {"mi_weight", cfg.mi_weight},
                          {"m_lo", cfg.m_lo},
                          {"m_hi", cfg.m_hi},
                          {"mi_sign_mode", to_string(cfg.mi_sign_mode)},
                          {"lambda_mode",
                           cfg.lambda_mode == LambdaMode::per_batch ? "per_batch" : "per_row"},
                          {"ablation", to_string(cfg.ablation)}};
}

inline PretrainConfig pretrain_config_from_json(const nlohmann::json& j) {
    check_known_keys(j, {"epochs", "batch_size", "lr_max", "lr_min", "momentum", "weight_decay"},
                     "pretrain config");
    PretrainConfig cfg;
    if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("lr_max")) cfg.lr_max = j.at("lr_max").get<double>();
    if (j.contains("lr_min")) cfg.lr_min = j.at("lr_min").get<double>();
    if (j.contains("momentum")) cfg.momentum = j.at("momentum").get<double>();
    if (j.contains("weight_decay")) cfg.weight_decay = j.at("weight_decay").get<double>();
    return cfg;
}

inline nlohmann::json pretrain_config_to_json(const PretrainConfig& cfg) {
    return nlohmann::json{{"epochs", cfg.epochs},       {"batch_size", cfg.batch_size},
                          {"lr_max", cfg.lr_max},       {"lr_min", cfg.lr_min},
                          {"momentum", cfg.momentum},   {"weight_decay", cfg.weight_decay}};
}

inline ReportFormats formats_from_json(const nlohmann::json& j) {
    check_known_keys(j, {"formats"}, "eval config");
    ReportFormats f;
    if (j.contains("formats")) {
        f = ReportFormats{false, false, false, false};
        for (const auto& e : j.at("formats")) {
            const std::string s = e.get<std::string>();
            if (s == "json")
                f.json = true;
            else if (s == "markdown")
                f.markdown = true;
            else if (s == "csv")
                f.csv = true;
            else if (s == "svg_heatmap")
                f.svg_heatmap = true;
            else
                throw ConfigError("unknown report format '" + s + "'");
        }
        if (!f.json) throw ConfigError("report formats must include 'json'");
    }
    return f;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    check_known_keys(j, {"seed", "data", "model", "pretrain", "adapt", "eval", "out_dir"},
                     "experiment config");
    ExperimentConfig cfg;
    cfg.data = sequence_spec_from_json(j.at("data"));
    cfg.model = model_config_from_json(j.at("model"));
    cfg.model_seed_explicit = j.at("model").contains("init_seed");
    if (j.contains("pretrain")) cfg.pretrain = pretrain_config_from_json(j.at("pretrain"));
    if (j.contains("adapt")) cfg.adapt = adapt_config_from_json(j.at("adapt"));
    if (j.contains("eval")) cfg.formats = formats_from_json(j.at("eval"));
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
    return cfg;
}

// Echo used inside report.json. out_dir is intentionally left out so the same
// configuration run into two directories produces byte-identical reports.
inline nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["data"] = sequence_spec_to_json(cfg.data);
    j["model"] = model_config_to_json(cfg.model);
    j["pretrain"] = pretrain_config_to_json(cfg.pretrain);
    j["adapt"] = adapt_config_to_json(cfg.adapt);
    nlohmann::json fmts = nlohmann::json::array();
    if (cfg.formats.json) fmts.push_back("json");
    if (cfg.formats.markdown) fmts.push_back("markdown");
    if (cfg.formats.csv) fmts.push_back("csv");
    if (cfg.formats.svg_heatmap) fmts.push_back("svg_heatmap");
    j["eval"] = {{"formats", fmts}};
    return j;
}

// ---------------------------------------------------------------------------
// Full protocol: pretrain -> sequential adaptation -> accuracy matrix
// ---------------------------------------------------------------------------

struct ExperimentResult {
    Classifier source_model;
    std::vector<Classifier> checkpoints;
    std::vector<AdaptLog> logs;
    EvalReport report;
    double source_test_accuracy = 0.0;
};

inline ExperimentConfig resolve_seeds(ExperimentConfig cfg) {
    if (!cfg.model_seed_explicit) {
        cfg.model.init_seed = derive_seed(cfg.seed, 0x111);
        cfg.model_seed_explicit = true;
    }
    cfg.adapt.seed = derive_seed(cfg.seed, 0x222);
    return cfg;
}

inline ExperimentResult run_experiment(const ExperimentConfig& raw_config,
                                       const RefinerHook& hook = nullptr) {
    const ExperimentConfig cfg = resolve_seeds(raw_config);
    const DomainSequence seq = make_sequence(cfg.data);

    ExperimentResult res{Classifier(cfg.model), {}, {}, {}, 0.0};
    pretrain_source(res.source_model, seq.source.train, cfg.pretrain,
                    derive_seed(cfg.seed, 0x333));
    res.source_test_accuracy = accuracy(res.source_model, seq.source.test);

    std::vector<LabeledDataset> target_train, target_test;
    for (const auto& t : seq.targets) {
        target_train.push_back(t.train);
        target_test.push_back(t.test);
    }
    SequentialResult adapted = sequential_adapt(res.source_model, target_train, cfg.adapt, hook);
    res.checkpoints = std::move(adapted.checkpoints);
    res.logs = std::move(adapted.logs);

    res.report.matrix = accuracy_matrix(res.checkpoints, target_test);
    if (res.checkpoints.size() >= 2) res.report.bwt_value = bwt(res.report.matrix);
    res.report.source_accuracy_initial = res.source_test_accuracy;
    for (const auto& ckpt : res.checkpoints) {
        const double acc = accuracy(ckpt, seq.source.test);
        res.report.matrix.source_row.push_back(acc);
        res.report.source_drops.push_back(source_drop(res.source_test_accuracy, acc));
    }
    res.report.seed = cfg.seed;
    res.report.config_echo = experiment_config_to_json(cfg);
    return res;
}

inline std::string logs_to_jsonl(const ExperimentConfig& cfg,
                                 const std::vector<AdaptLog>& logs) {
    std::string out;
    nlohmann::json meta{{"type", "meta"},
                        {"mi_sign_mode", to_string(cfg.adapt.mi_sign_mode)},
                        {"ablation", to_string(cfg.adapt.ablation)},
                        {"seed", cfg.seed}};
    out += meta.dump() + "\n";
    for (const auto& log : logs) {
        for (const auto& rec : log.epochs) {
            nlohmann::json line = to_json(rec);
            line["type"] = "epoch";
            line["domain"] = log.domain;
            out += line.dump() + "\n";
        }
    }
    return out;
}

// Writes report renderings, logs, and checkpoints; returns all paths written.
inline std::vector<std::filesystem::path> write_experiment_outputs(
    const ExperimentConfig& cfg, const ExperimentResult& res,
    const std::filesystem::path& out_dir) {
    std::vector<std::filesystem::path> written = render_report(res.report, cfg.formats, out_dir);
    const auto logs_path = out_dir / "logs.jsonl";
    write_text_atomic(logs_path, logs_to_jsonl(cfg, res.logs));
    written.push_back(logs_path);
    const auto src_path = out_dir / "checkpoints" / "source.json";
    save_checkpoint(res.source_model, src_path);
    written.push_back(src_path);
    for (std::size_t k = 0; k < res.checkpoints.size(); ++k) {
        const auto p = out_dir / "checkpoints" /
                       ("after_" + std::to_string(k + 1) + "_" +
                        res.report.matrix.domain_names[k] + ".json");
        save_checkpoint(res.checkpoints[k], p);
        written.push_back(p);
    }
    return written;
}

}  // namespace cosda
