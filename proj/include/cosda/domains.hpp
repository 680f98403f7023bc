#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "cosda/fileio.hpp"
#include "cosda/rng.hpp"
#include "cosda/tensor.hpp"

namespace cosda {

enum class Split { train, test, all };

inline const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::test: return "test";
        default: return "all";
    }
}

struct LabeledDataset {
    Tensor features;  // [N x D]
    std::vector<std::size_t> labels;
    std::size_t num_classes = 0;
    std::string domain_name;
    Split split = Split::all;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.shape.size() == 2 ? features.shape[1] : 0; }

    void validate() const {
        if (labels.empty()) throw DataError("dataset " + domain_name + " is empty");
        if (features.shape.size() != 2 || features.shape[0] != labels.size())
            throw DimensionError("dataset " + domain_name + " features/labels mismatch");
        if (!features.all_finite())
            throw DataError("dataset " + domain_name + " has non-finite features");
        for (std::size_t y : labels)
            if (y >= num_classes)
                throw DataError("dataset " + domain_name + " has label " + std::to_string(y) +
                                " >= class count " + std::to_string(num_classes));
    }
};

// Two interleaving half circles with Gaussian noise, rotated about the origin
// after the noise is applied (so the same seed at two rotations differs by an
// exact rotation).
inline LabeledDataset gen_two_moons(std::size_t n, double noise_sigma, double rotation_deg,
                                    std::uint64_t seed) {
    if (n < 2) throw ConfigError("two moons needs n >= 2");
    if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
    Rng rng(mix_seed(seed));
    std::uniform_real_distribution<double> arc(0.0, std::numbers::pi);
    std::normal_distribution<double> noise(0.0, 1.0);
    const std::size_t n0 = (n + 1) / 2;
    LabeledDataset ds;
    ds.features = Tensor::zeros({n, 2});
    ds.labels.resize(n);
    ds.num_classes = 2;
    for (std::size_t i = 0; i < n; ++i) {
        const bool first = i < n0;
        const double t = arc(rng);
        double px = first ? std::cos(t) : 1.0 - std::cos(t);
        double py = first ? std::sin(t) : 0.5 - std::sin(t);
        px += noise_sigma * noise(rng);
        py += noise_sigma * noise(rng);
        const double rad = rotation_deg * std::numbers::pi / 180.0;
        const double ca = std::cos(rad), sa = std::sin(rad);
        ds.features.data[i * 2 + 0] = ca * px - sa * py;
        ds.features.data[i * 2 + 1] = sa * px + ca * py;
        ds.labels[i] = first ? 0 : 1;
    }
    return ds;
}

// Per-class isotropic Gaussians; shift realizes domain movement.
inline LabeledDataset gen_gaussian_blobs(std::size_t n, std::size_t num_classes,
                                         const std::vector<std::vector<double>>& centers,
                                         double cov_scale, std::uint64_t seed) {
    if (num_classes < 2) throw ConfigError("blobs need >= 2 classes");
    if (centers.size() != num_classes)
        throw ConfigError("blobs need one center per class, got " +
                          std::to_string(centers.size()) + " for " +
                          std::to_string(num_classes) + " classes");
    const std::size_t D = centers.front().size();
    for (const auto& c : centers)
        if (c.size() != D) throw ConfigError("blob centers must share one dimensionality");
    Rng rng(mix_seed(seed));
    std::normal_distribution<double> noise(0.0, 1.0);
    LabeledDataset ds;
    ds.features = Tensor::zeros({n, D});
    ds.labels.resize(n);
    ds.num_classes = num_classes;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = i % num_classes;  // balanced within +-1 per class
        for (std::size_t d = 0; d < D; ++d)
            ds.features.data[i * D + d] = centers[cls][d] + cov_scale * noise(rng);
        ds.labels[i] = cls;
    }
    return ds;
}

// Label-stratified split (within +-1 sample per class), seeded.
inline std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& ds,
                                                                  double train_fraction,
                                                                  std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("train_fraction must be in (0, 1)");
    Rng rng(mix_seed(seed));
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
    std::vector<std::size_t> train_idx, test_idx;
    for (auto& idx : by_class) {
        std::shuffle(idx.begin(), idx.end(), rng);
        const std::size_t k = static_cast<std::size_t>(
            std::lround(train_fraction * static_cast<double>(idx.size())));
        train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
        test_idx.insert(test_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    auto take = [&](const std::vector<std::size_t>& idx, Split split) {
        LabeledDataset out;
        out.num_classes = ds.num_classes;
        out.domain_name = ds.domain_name;
        out.split = split;
        const std::size_t D = ds.dim();
        out.features = Tensor::zeros({idx.size(), D});
        out.labels.reserve(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (std::size_t d = 0; d < D; ++d)
                out.features.data[r * D + d] = ds.features.data[idx[r] * D + d];
            out.labels.push_back(ds.labels[idx[r]]);
        }
        return out;
    };
    return {take(train_idx, Split::train), take(test_idx, Split::test)};
}

// ---------------------------------------------------------------------------
// Dataset CSV: header f0,...,f{D-1},label,domain; 17 significant digits.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[48];
    const int len = std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf, static_cast<std::size_t>(len));
}

inline void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path) {
    ds.validate();
    std::string out;
    const std::size_t D = ds.dim();
    for (std::size_t d = 0; d < D; ++d) out += "f" + std::to_string(d) + ",";
    out += "label,domain\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t d = 0; d < D; ++d) {
            out += format_double(ds.features.data[i * D + d]);
            out += ',';
        }
        out += std::to_string(ds.labels[i]);
        out += ',';
        out += ds.domain_name;
        out += '\n';
    }
    write_text_atomic(path, out);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == ',') {
            fields.push_back(line.substr(start, i - start));
            start = i + 1;
        }
    }
    return fields;
}

inline LabeledDataset load_dataset(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    std::vector<std::string> lines;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        if (i == text.size() || text[i] == '\n') {
            std::string line = text.substr(start, i - start);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) lines.push_back(std::move(line));
            start = i + 1;
        }
    }
    if (lines.empty()) throw DataError("dataset file " + path.string() + " is empty");
    const auto header = split_csv_line(lines[0]);
    if (header.size() < 3 || header[header.size() - 2] != "label" || header.back() != "domain")
        throw ParseError("dataset " + path.string() +
                         " line 1: header must be f0,...,label,domain");
    const std::size_t D = header.size() - 2;
    if (lines.size() < 2) throw DataError("dataset file " + path.string() + " has no rows");

    LabeledDataset ds;
    ds.features = Tensor::zeros({lines.size() - 1, D});
    ds.labels.reserve(lines.size() - 1);
    for (std::size_t r = 1; r < lines.size(); ++r) {
        const auto fields = split_csv_line(lines[r]);
        const std::string where = "dataset " + path.string() + " line " + std::to_string(r + 1);
        if (fields.size() != D + 2)
            throw ParseError(where + ": expected " + std::to_string(D + 2) + " fields, got " +
                             std::to_string(fields.size()));
        for (std::size_t d = 0; d < D; ++d) {
            double v = 0.0;
            const auto& s = fields[d];
            const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
            if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
                throw ParseError(where + ": field f" + std::to_string(d) + " ('" + s +
                                 "') is not a number");
            ds.features.data[(r - 1) * D + d] = v;
        }
        long long label = -1;
        const auto& ls = fields[D];
        const auto res = std::from_chars(ls.data(), ls.data() + ls.size(), label);
        if (res.ec != std::errc{} || res.ptr != ls.data() + ls.size() || label < 0)
            throw ParseError(where + ": label ('" + ls + "') is not a nonnegative integer");
        ds.labels.push_back(static_cast<std::size_t>(label));
        if (r == 1) {
            ds.domain_name = fields[D + 1];
        } else if (fields[D + 1] != ds.domain_name) {
            throw ParseError(where + ": mixed domain tags ('" + fields[D + 1] + "' vs '" +
                             ds.domain_name + "')");
        }
    }
    ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    if (ds.num_classes < 2) ds.num_classes = 2;
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Domain sequences
// ---------------------------------------------------------------------------

enum class Paradigm { inductive, transductive };

inline const char* to_string(Paradigm p) {
    return p == Paradigm::inductive ? "inductive" : "transductive";
}

inline Paradigm paradigm_from_string(const std::string& s) {
    if (s == "inductive") return Paradigm::inductive;
    if (s == "transductive") return Paradigm::transductive;
    throw ConfigError("unknown paradigm '" + s + "' (inductive or transductive)");
}

enum class GeneratorKind { two_moons, gaussian_blobs, csv };

struct DomainSequenceSpec {
    GeneratorKind generator = GeneratorKind::two_moons;
    // two_moons: one rotation (degrees) per domain.
    std::vector<double> rotations_deg;
    // gaussian_blobs: base class centers plus one shift vector per domain.
    std::vector<std::vector<double>> centers;
    std::vector<std::vector<double>> shifts;
    // csv: one file path per domain.
    std::vector<std::string> csv_paths;
    std::size_t samples_per_domain = 2000;
    double noise = 0.1;  // moons noise sigma / blob cov scale
    std::uint64_t seed = 0;
    Paradigm paradigm = Paradigm::inductive;
    double train_fraction = 0.8;

    std::size_t domain_count() const {
        switch (generator) {
            case GeneratorKind::two_moons: return rotations_deg.size();
            case GeneratorKind::gaussian_blobs: return shifts.size();
            default: return csv_paths.size();
        }
    }

    void validate() const {
        if (domain_count() < 2)
            throw ConfigError("domain sequence needs >= 2 domains (source + targets)");
        if (generator == GeneratorKind::two_moons && samples_per_domain < 2)
            throw ConfigError("samples_per_domain must be >= 2");
        if (generator == GeneratorKind::gaussian_blobs) {
            if (centers.size() < 2) throw ConfigError("blob sequences need >= 2 class centers");
            for (const auto& s : shifts)
                if (s.size() != centers.front().size())
                    throw ConfigError("blob shift dimensionality must match centers");
        }
        if (!(train_fraction > 0.0 && train_fraction < 1.0))
            throw ConfigError("train_fraction must be in (0, 1)");
        if (noise < 0.0) throw ConfigError("noise must be >= 0");
    }
};

struct SplitDomain {
    LabeledDataset train;
    LabeledDataset test;
};

struct DomainSequence {
    SplitDomain source;
    std::vector<SplitDomain> targets;

    std::vector<std::string> target_names() const {
        std::vector<std::string> names;
        for (const auto& t : targets) names.push_back(t.train.domain_name);
        return names;
    }
};

inline std::string moons_domain_name(double deg) {
    std::string s = std::to_string(static_cast<long long>(std::llround(deg)));
    return "rot" + s;
}

inline LabeledDataset generate_domain(const DomainSequenceSpec& spec, std::size_t k) {
    const std::uint64_t dseed = derive_seed(spec.seed, k + 1);
    switch (spec.generator) {
        case GeneratorKind::two_moons: {
            LabeledDataset ds =
                gen_two_moons(spec.samples_per_domain, spec.noise, spec.rotations_deg[k], dseed);
            ds.domain_name = moons_domain_name(spec.rotations_deg[k]);
            return ds;
        }
        case GeneratorKind::gaussian_blobs: {
            std::vector<std::vector<double>> shifted = spec.centers;
            for (auto& c : shifted)
                for (std::size_t d = 0; d < c.size(); ++d) c[d] += spec.shifts[k][d];
            LabeledDataset ds = gen_gaussian_blobs(spec.samples_per_domain, spec.centers.size(),
                                                   shifted, spec.noise, dseed);
            ds.domain_name = "blobs" + std::to_string(k);
            return ds;
        }
        default:
            return load_dataset(spec.csv_paths[k]);
    }
}

// Generates (or loads) every domain in order and applies the split paradigm:
// inductive holds out a stratified test split, transductive trains and tests
// on the identical data.
inline DomainSequence make_sequence(const DomainSequenceSpec& spec) {
    spec.validate();
    DomainSequence seq;
    const std::size_t K = spec.domain_count();
    for (std::size_t k = 0; k < K; ++k) {
        LabeledDataset full = generate_domain(spec, k);
        full.validate();
        SplitDomain dom;
        if (spec.paradigm == Paradigm::inductive) {
            auto [train, test] = stratified_split(full, spec.train_fraction,
                                                  derive_seed(spec.seed, 1000 + k));
            dom.train = std::move(train);
            dom.test = std::move(test);
        } else {
            full.split = Split::all;
            dom.train = full;
            dom.test = std::move(full);
        }
        if (k == 0)
            seq.source = std::move(dom);
        else
            seq.targets.push_back(std::move(dom));
    }
    return seq;
}

// JSON spec document <-> DomainSequenceSpec. Unknown keys are a hard error.
inline void check_known_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                             const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
}

inline DomainSequenceSpec sequence_spec_from_json(const nlohmann::json& j) {
    check_known_keys(j,
                     {"generator", "domain_params", "samples_per_domain", "noise", "seed",
                      "paradigm", "train_fraction", "centers"},
                     "sequence spec");
    DomainSequenceSpec spec;
    const std::string gen = j.at("generator").get<std::string>();
    if (gen == "two_moons")
        spec.generator = GeneratorKind::two_moons;
    else if (gen == "gaussian_blobs")
        spec.generator = GeneratorKind::gaussian_blobs;
    else if (gen == "csv")
        spec.generator = GeneratorKind::csv;
    else
        throw ConfigError("unknown generator '" + gen + "'");

    const auto& params = j.at("domain_params");
    if (!params.is_array()) throw ConfigError("domain_params must be an array");
    switch (spec.generator) {
        case GeneratorKind::two_moons:
            spec.rotations_deg = params.get<std::vector<double>>();
            break;
        case GeneratorKind::gaussian_blobs:
            spec.shifts = params.get<std::vector<std::vector<double>>>();
            spec.centers = j.at("centers").get<std::vector<std::vector<double>>>();
            break;
        default:
            spec.csv_paths = params.get<std::vector<std::string>>();
            break;
    }
    if (j.contains("samples_per_domain"))
        spec.samples_per_domain = j.at("samples_per_domain").get<std::size_t>();
    if (j.contains("noise")) spec.noise = j.at("noise").get<double>();
    if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("paradigm"))
        spec.paradigm = paradigm_from_string(j.at("paradigm").get<std::string>());
    if (j.contains("train_fraction")) spec.train_fraction = j.at("train_fraction").get<double>();
    spec.validate();
    return spec;
}

inline nlohmann::json sequence_spec_to_json(const DomainSequenceSpec& spec) {
    nlohmann::json j;
    switch (spec.generator) {
        case GeneratorKind::two_moons:
            j["generator"] = "two_moons";
            j["domain_params"] = spec.rotations_deg;
            break;
        case GeneratorKind::gaussian_blobs:
            j["generator"] = "gaussian_blobs";
            j["domain_params"] = spec.shifts;
            j["centers"] = spec.centers;
            break;
        default:
            j["generator"] = "csv";
            j["domain_params"] = spec.csv_paths;
            break;
    }
    j["samples_per_domain"] = spec.samples_per_domain;
    j["noise"] = spec.noise;
    j["seed"] = spec.seed;
    j["paradigm"] = to_string(spec.paradigm);
    j["train_fraction"] = spec.train_fraction;
    return j;
}

}  // namespace cosda
