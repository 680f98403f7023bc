#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "cosda/fileio.hpp"
#include "cosda/model.hpp"

#ifndef COSDA_CLI_PATH
#error "COSDA_CLI_PATH must be defined by the build"
#endif

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd =
        std::string(COSDA_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p);
    out << content;
}

const char* kTinyConfig = R"({
  "seed": 11,
  "data": {
    "generator": "two_moons",
    "domain_params": [0, 30, 60],
    "samples_per_domain": 120,
    "noise": 0.1,
    "seed": 5,
    "paradigm": "inductive"
  },
  "model": {"layer_sizes": [2, 8, 2]},
  "pretrain": {"epochs": 5, "batch_size": 32},
  "adapt": {"epochs": 2, "batch_size": 32}
})";

}  // namespace

TEST_CASE("cli gen writes one CSV per domain, deterministically") {
    const fs::path dir = fresh_dir("cosda_cli_gen");
    write_file(dir / "spec.json",
               R"({"generator":"two_moons","domain_params":[0,30],"samples_per_domain":40,)"
               R"("noise":0.1,"seed":3,"paradigm":"inductive"})");
    const std::string spec = (dir / "spec.json").string();

    CHECK(run_cli("gen --spec " + spec + " --out " + (dir / "a").string()) == 0);
    CHECK(fs::exists(dir / "a" / "rot0.csv"));
    CHECK(fs::exists(dir / "a" / "rot30.csv"));

    CHECK(run_cli("gen --spec " + spec + " --out " + (dir / "b").string()) == 0);
    CHECK(cosda::read_text(dir / "a" / "rot0.csv") == cosda::read_text(dir / "b" / "rot0.csv"));
    CHECK(cosda::read_text(dir / "a" / "rot30.csv") ==
          cosda::read_text(dir / "b" / "rot30.csv"));

    CHECK(run_cli("gen --spec " + (dir / "missing.json").string() + " --out " +
                  (dir / "c").string()) == 2);
    fs::remove_all(dir);
}

TEST_CASE("cli run emits the protocol outputs and reproduces them byte-exactly") {
    const fs::path dir = fresh_dir("cosda_cli_run");
    write_file(dir / "config.json", kTinyConfig);
    const std::string cfg = (dir / "config.json").string();

    CHECK(run_cli("run --config " + cfg + " --out " + (dir / "r1").string()) == 0);
    for (const char* f : {"report.json", "matrix.csv", "matrix.md", "heatmap.svg", "logs.jsonl"})
        CHECK(fs::exists(dir / "r1" / f));
    CHECK(fs::exists(dir / "r1" / "checkpoints" / "source.json"));

    CHECK(run_cli("run --config " + cfg + " --out " + (dir / "r2").string()) == 0);
    CHECK(cosda::read_text(dir / "r1" / "report.json") ==
          cosda::read_text(dir / "r2" / "report.json"));

    // a different seed changes the report
    CHECK(run_cli("run --config " + cfg + " --seed 99 --out " + (dir / "r3").string()) == 0);
    CHECK(cosda::read_text(dir / "r1" / "report.json") !=
          cosda::read_text(dir / "r3" / "report.json"));

    // defined cells only: below-diagonal entries are null
    const auto rep = nlohmann::json::parse(cosda::read_text(dir / "r1" / "report.json"));
    const auto& matrix = rep.at("matrix");
    REQUIRE(matrix.size() == 2);
    CHECK(matrix[1][0].is_null());
    CHECK(matrix[0][1].is_number());

    // logs: one meta line plus one record per (domain, epoch)
    const std::string logs = cosda::read_text(dir / "r1" / "logs.jsonl");
    std::size_t lines = 0, epoch_lines = 0;
    for (std::size_t i = 0, start = 0; i <= logs.size(); ++i) {
        if (i == logs.size() || logs[i] == '\n') {
            if (i > start) {
                const auto line = nlohmann::json::parse(logs.substr(start, i - start));
                ++lines;
                if (line.at("type") == "epoch") ++epoch_lines;
            }
            start = i + 1;
        }
    }
    CHECK(lines == 1 + 2 * 2);       // meta + K(=2) domains x E(=2) epochs
    CHECK(epoch_lines == 2 * 2);

    fs::remove_all(dir);
}

TEST_CASE("cli rejects unknown config keys") {
    const fs::path dir = fresh_dir("cosda_cli_badcfg");
    std::string bad = kTinyConfig;
    bad.insert(bad.size() - 2, R"(, "adapt_epochs": 3)");
    write_file(dir / "config.json", bad);
    CHECK(run_cli("run --config " + (dir / "config.json").string() + " --out " +
                  (dir / "out").string()) == 2);
    fs::remove_all(dir);
}

TEST_CASE("cli run supports the ablation and paradigm flags") {
    const fs::path dir = fresh_dir("cosda_cli_flags");
    write_file(dir / "config.json", kTinyConfig);
    const std::string cfg = (dir / "config.json").string();
    CHECK(run_cli("run --config " + cfg + " --ablation no_dual_speed --mi-sign standard_im "
                  "--paradigm transductive --out " + (dir / "out").string()) == 0);
    const auto rep = nlohmann::json::parse(cosda::read_text(dir / "out" / "report.json"));
    CHECK(rep.at("config").at("adapt").at("ablation") == "no_dual_speed");
    CHECK(rep.at("config").at("adapt").at("mi_sign_mode") == "standard_im");
    CHECK(rep.at("config").at("data").at("paradigm") == "transductive");

    CHECK(run_cli("run --config " + cfg + " --ablation bogus --out " +
                  (dir / "out2").string()) == 2);
    fs::remove_all(dir);
}

TEST_CASE("cli pretrain writes a reloadable checkpoint") {
    const fs::path dir = fresh_dir("cosda_cli_pretrain");
    write_file(dir / "config.json", kTinyConfig);
    const std::string cfg = (dir / "config.json").string();
    CHECK(run_cli("pretrain --config " + cfg + " --out " + (dir / "p1").string()) == 0);
    CHECK(run_cli("pretrain --config " + cfg + " --out " + (dir / "p2").string()) == 0);
    const auto a = cosda::load_checkpoint(dir / "p1" / "checkpoints" / "source.json");
    const auto b = cosda::load_checkpoint(dir / "p2" / "checkpoints" / "source.json");
    CHECK(cosda::bitwise_equal(a.param_vector(), b.param_vector()));
    CHECK(fs::exists(dir / "p1" / "pretrain_log.json"));
    fs::remove_all(dir);
}

TEST_CASE("cli verify honors the trial floor and writes its report") {
    CHECK(run_cli("verify --trials 1000") == 2);

    const fs::path dir = fresh_dir("cosda_cli_verify");
    CHECK(run_cli("verify --trials 20000 --seed 5 --out " + dir.string()) == 0);
    const auto rep = nlohmann::json::parse(cosda::read_text(dir / "oracle_report.json"));
    CHECK(rep.at("all_required_pass") == true);
    CHECK(rep.at("checks").is_array());
    fs::remove_all(dir);
}
