// Command-line driver: dataset generation, source pretraining, the full
// continual adaptation protocol, and the numerical oracle suite.
//
// Exit codes: 0 success, 2 usage/config error, 3 runtime error,
// 4 verification failure.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cosda/experiment.hpp"
#include "cosda/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitVerifyFailed = 4;

nlohmann::json load_json_file(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(cosda::read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw cosda::ConfigError(path.string() + " is not valid JSON: " + e.what());
    }
    return j;
}

int cmd_gen(const std::string& spec_path, const std::string& out_dir) {
    const auto spec = cosda::sequence_spec_from_json(load_json_file(spec_path));
    const cosda::DomainSequence seq = cosda::make_sequence(spec);
    std::filesystem::create_directories(out_dir);
    auto emit = [&](const cosda::SplitDomain& dom) {
        // gen writes whole domains; splitting happens at run time.
        cosda::LabeledDataset full = dom.train;
        if (dom.test.size() > 0 && spec.paradigm == cosda::Paradigm::inductive) {
            const std::size_t D = full.dim();
            cosda::Tensor merged =
                cosda::Tensor::zeros({dom.train.size() + dom.test.size(), D});
            std::copy(dom.train.features.data.begin(), dom.train.features.data.end(),
                      merged.data.begin());
            std::copy(dom.test.features.data.begin(), dom.test.features.data.end(),
                      merged.data.begin() + static_cast<std::ptrdiff_t>(dom.train.size() * D));
            full.features = std::move(merged);
            full.labels.insert(full.labels.end(), dom.test.labels.begin(),
                               dom.test.labels.end());
        }
        full.split = cosda::Split::all;
        const auto path = std::filesystem::path(out_dir) / (full.domain_name + ".csv");
        cosda::save_dataset(full, path);
        std::printf("%-12s %6zu rows -> %s\n", full.domain_name.c_str(), full.size(),
                    path.string().c_str());
    };
    emit(seq.source);
    for (const auto& t : seq.targets) emit(t);
    return kExitOk;
}

struct RunFlags {
    std::string config_path;
    std::string out_dir;
    std::string ablation;
    std::string mi_sign;
    std::string paradigm;
    std::int64_t seed = -1;
    bool seed_set = false;
};

cosda::ExperimentConfig load_experiment_config(const RunFlags& flags) {
    cosda::ExperimentConfig cfg =
        cosda::experiment_config_from_json(load_json_file(flags.config_path));
    if (flags.seed_set) cfg.seed = static_cast<std::uint64_t>(flags.seed);
    if (!flags.ablation.empty())
        cfg.adapt.ablation = cosda::ablation_from_string(flags.ablation);
    if (!flags.mi_sign.empty()) {
        if (flags.mi_sign == "paper")
            cfg.adapt.mi_sign_mode = cosda::MiSignMode::paper;
        else if (flags.mi_sign == "standard_im")
            cfg.adapt.mi_sign_mode = cosda::MiSignMode::standard_im;
        else
            throw cosda::ConfigError("unknown --mi-sign '" + flags.mi_sign + "'");
    }
    if (!flags.paradigm.empty()) cfg.data.paradigm = cosda::paradigm_from_string(flags.paradigm);
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (cfg.out_dir.empty())
        throw cosda::ConfigError("no output directory: set out_dir in the config or pass --out");
    return cfg;
}

int cmd_pretrain(const RunFlags& flags) {
    const cosda::ExperimentConfig cfg = cosda::resolve_seeds(load_experiment_config(flags));
    const cosda::DomainSequence seq = cosda::make_sequence(cfg.data);
    cosda::Classifier model(cfg.model);
    const double final_loss = cosda::pretrain_source(model, seq.source.train, cfg.pretrain,
                                                     cosda::derive_seed(cfg.seed, 0x333));
    const double acc = cosda::accuracy(model, seq.source.test);
    const std::filesystem::path out(cfg.out_dir);
    cosda::save_checkpoint(model, out / "checkpoints" / "source.json");
    nlohmann::json log{{"source_domain", seq.source.train.domain_name},
                       {"source_test_accuracy", acc},
                       {"final_epoch_loss", final_loss},
                       {"config", cosda::experiment_config_to_json(cfg)}};
    cosda::write_text_atomic(out / "pretrain_log.json", log.dump(2) + "\n");
    std::printf("source %s: test accuracy %.2f%%\n", seq.source.train.domain_name.c_str(), acc);
    return kExitOk;
}

int cmd_run(const RunFlags& flags) {
    const cosda::ExperimentConfig cfg = load_experiment_config(flags);
    std::vector<std::filesystem::path> written;
    try {
        const cosda::ExperimentResult res = cosda::run_experiment(cfg);
        written = cosda::write_experiment_outputs(cfg, res, cfg.out_dir);
        std::printf("source test accuracy: %.2f%%\n", res.source_test_accuracy);
        if (res.checkpoints.size() >= 2) std::printf("BWT: %.2f\n", res.report.bwt_value);
        for (const auto& p : written) std::printf("wrote %s\n", p.string().c_str());
        return kExitOk;
    } catch (...) {
        for (const auto& p : written) {
            std::error_code ec;
            std::filesystem::remove(p, ec);
        }
        throw;
    }
}

int cmd_verify(double trials, std::uint64_t seed, const std::string& out_dir) {
    const auto rep = cosda::run_all_oracles(seed, static_cast<std::size_t>(trials));
    std::fputs(cosda::summary_table(rep).c_str(), stdout);
    if (!out_dir.empty())
        cosda::write_text_atomic(std::filesystem::path(out_dir) / "oracle_report.json",
                                 cosda::to_json(rep).dump(2) + "\n");
    return rep.all_required_pass() ? kExitOk : kExitVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual source-free domain adaptation workbench"};
    app.require_subcommand(1);

    std::string gen_spec, gen_out;
    auto* gen = app.add_subcommand("gen", "generate dataset CSVs from a sequence spec");
    gen->add_option("--spec", gen_spec, "sequence spec JSON")->required();
    gen->add_option("--out", gen_out, "output directory")->required();

    RunFlags pre_flags;
    auto* pre = app.add_subcommand("pretrain", "supervised training on the source domain");
    pre->add_option("--config", pre_flags.config_path, "experiment config JSON")->required();
    pre->add_option("--out", pre_flags.out_dir, "output directory (overrides config)");
    auto* pre_seed = pre->add_option("--seed", pre_flags.seed, "seed override");

    RunFlags run_flags;
    auto* run = app.add_subcommand("run", "full protocol: pretrain, adapt, evaluate");
    run->add_option("--config", run_flags.config_path, "experiment config JSON")->required();
    run->add_option("--out", run_flags.out_dir, "output directory (overrides config)");
    auto* run_seed = run->add_option("--seed", run_flags.seed, "seed override");
    run->add_option("--ablation", run_flags.ablation,
                    "one of: no_dual_speed, no_mixup, no_mi, no_teacher");
    run->add_option("--mi-sign", run_flags.mi_sign, "paper or standard_im");
    run->add_option("--paradigm", run_flags.paradigm, "inductive or transductive");

    double ver_trials = 1e6;
    std::uint64_t ver_seed = 1234;
    std::string ver_out;
    auto* ver = app.add_subcommand("verify", "run the numerical oracle suite");
    ver->add_option("--trials", ver_trials, "Monte-Carlo trials (>= 1e4)");
    ver->add_option("--seed", ver_seed, "oracle seed");
    ver->add_option("--out", ver_out, "directory for oracle_report.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_spec, gen_out);
        if (pre->parsed()) {
            pre_flags.seed_set = pre_seed->count() > 0;
            return cmd_pretrain(pre_flags);
        }
        if (run->parsed()) {
            run_flags.seed_set = run_seed->count() > 0;
            return cmd_run(run_flags);
        }
        if (ver->parsed()) return cmd_verify(ver_trials, ver_seed, ver_out);
    } catch (const cosda::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const cosda::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        // gen treats every failure (missing file, bad spec) as a usage error
        return gen->parsed() ? kExitConfig : kExitRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitConfig;
}
