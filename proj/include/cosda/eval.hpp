#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "cosda/domains.hpp"
#include "cosda/fileio.hpp"
#include "cosda/model.hpp"

namespace cosda {

// Percent of rows whose argmax prediction equals the label. Inference is
// eval-mode only: global BN statistics, no domain tag anywhere in the
// signature.
inline double accuracy(const Classifier& model, const LabeledDataset& ds) {
    if (ds.size() == 0) throw DataError("accuracy on empty dataset");
    const Tensor probs = model.predict_proba(ds.features, BnMode::eval);
    const std::size_t C = probs.shape[1];
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < C; ++c)
            if (probs.data[i * C + c] > probs.data[i * C + best]) best = c;
        if (best == ds.labels[i]) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(ds.size());
}

// K x K matrix R with R[i][j] = accuracy on domain i after adapting through
// domain j. Cells with j < i (domain i not yet reached) are undefined and
// stay NaN.
struct AccuracyMatrix {
    std::vector<std::vector<double>> values;  // NaN marks undefined cells
    std::vector<std::string> domain_names;
    std::vector<double> source_row;  // optional: source accuracy after each step

    std::size_t k() const { return domain_names.size(); }
    static bool defined(std::size_t i, std::size_t j) { return j >= i; }
};

inline AccuracyMatrix accuracy_matrix(const std::vector<Classifier>& checkpoints,
                                      const std::vector<LabeledDataset>& domains) {
    if (checkpoints.size() != domains.size())
        throw ProtocolError("accuracy_matrix needs one checkpoint per domain, got " +
                            std::to_string(checkpoints.size()) + " vs " +
                            std::to_string(domains.size()));
    if (checkpoints.empty()) throw ProtocolError("accuracy_matrix needs at least one domain");
    const std::size_t K = checkpoints.size();
    AccuracyMatrix m;
    m.values.assign(K, std::vector<double>(K, std::numeric_limits<double>::quiet_NaN()));
    for (std::size_t i = 0; i < K; ++i) {
        m.domain_names.push_back(domains[i].domain_name);
        for (std::size_t j = i; j < K; ++j) m.values[i][j] = accuracy(checkpoints[j], domains[i]);
    }
    return m;
}

// Backward transfer: mean over i of R[i][K-1] - R[i][i]. Zero means no
// forgetting; -100 is total forgetting.
inline double bwt(const AccuracyMatrix& m) {
    const std::size_t K = m.k();
    if (K < 2) throw ProtocolError("BWT needs K >= 2 domains");
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < K; ++i) s += m.values[i][K - 1] - m.values[i][i];
    return s / static_cast<double>(K - 1);
}

// Positive value = forgetting on the source domain.
inline double source_drop(double acc_before, double acc_after) { return acc_before - acc_after; }

struct EvalReport {
    AccuracyMatrix matrix;
    double bwt_value = 0.0;
    std::vector<double> source_drops;  // one per adaptation step
    double source_accuracy_initial = 0.0;
    nlohmann::json config_echo;
    std::uint64_t seed = 0;
};

inline nlohmann::json report_to_json(const EvalReport& rep) {
    nlohmann::json matrix = nlohmann::json::array();
    for (const auto& row : rep.matrix.values) {
        nlohmann::json jrow = nlohmann::json::array();
        for (double v : row) {
            if (std::isnan(v))
                jrow.push_back(nullptr);
            else
                jrow.push_back(v);
        }
        matrix.push_back(jrow);
    }
    return nlohmann::json{{"domains", rep.matrix.domain_names},
                          {"matrix", matrix},
                          {"bwt", rep.bwt_value},
                          {"source_drop", rep.source_drops},
                          {"source_row", rep.matrix.source_row},
                          {"source_accuracy_initial", rep.source_accuracy_initial},
                          {"seed", rep.seed},
                          {"config", rep.config_echo}};
}

inline std::string format_cell(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

inline std::string matrix_to_csv(const AccuracyMatrix& m) {
    std::string out = "domain";
    for (const auto& name : m.domain_names) out += ",after_" + name;
    out += '\n';
    for (std::size_t i = 0; i < m.k(); ++i) {
        out += m.domain_names[i];
        for (std::size_t j = 0; j < m.k(); ++j) {
            out += ',';
            if (AccuracyMatrix::defined(i, j)) out += format_cell(m.values[i][j]);
        }
        out += '\n';
    }
    return out;
}

inline std::string matrix_to_markdown(const AccuracyMatrix& m, double bwt_value) {
    std::string out = "| domain |";
    for (const auto& name : m.domain_names) out += " after " + name + " |";
    out += "\n|---|";
    for (std::size_t j = 0; j < m.k(); ++j) out += "---|";
    out += '\n';
    for (std::size_t i = 0; i < m.k(); ++i) {
        out += "| " + m.domain_names[i] + " |";
        for (std::size_t j = 0; j < m.k(); ++j) {
            out += ' ';
            out += AccuracyMatrix::defined(i, j) ? format_cell(m.values[i][j]) : "";
            out += " |";
        }
        out += '\n';
    }
    out += "\nBWT: " + format_cell(bwt_value) + "\n";
    return out;
}

// Fixed color ramp: 0% -> rgb(49,54,149), 100% -> rgb(165,0,38); undefined
// cells are gray.
inline std::string matrix_to_svg(const AccuracyMatrix& m) {
    const int cell = 64, pad = 96, top = 48;
    const std::size_t K = m.k();
    const int width = pad + cell * static_cast<int>(K) + 16;
    const int height = top + cell * static_cast<int>(K) + 16;
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                      std::to_string(width) + "\" height=\"" + std::to_string(height) + "\">\n";
    auto color = [](double v) {
        const double t = std::clamp(v / 100.0, 0.0, 1.0);
        const int r = static_cast<int>(std::lround(49.0 + t * (165.0 - 49.0)));
        const int g = static_cast<int>(std::lround(54.0 + t * (0.0 - 54.0)));
        const int b = static_cast<int>(std::lround(149.0 + t * (38.0 - 149.0)));
        return "rgb(" + std::to_string(r) + "," + std::to_string(g) + "," + std::to_string(b) + ")";
    };
    for (std::size_t j = 0; j < K; ++j) {
        svg += "<text x=\"" + std::to_string(pad + cell * static_cast<int>(j) + cell / 2) +
               "\" y=\"" + std::to_string(top - 12) +
               "\" text-anchor=\"middle\" font-size=\"12\">" + m.domain_names[j] + "</text>\n";
    }
    for (std::size_t i = 0; i < K; ++i) {
        svg += "<text x=\"" + std::to_string(pad - 8) + "\" y=\"" +
               std::to_string(top + cell * static_cast<int>(i) + cell / 2 + 4) +
               "\" text-anchor=\"end\" font-size=\"12\">" + m.domain_names[i] + "</text>\n";
        for (std::size_t j = 0; j < K; ++j) {
            const int x = pad + cell * static_cast<int>(j);
            const int y = top + cell * static_cast<int>(i);
            const bool def = AccuracyMatrix::defined(i, j);
            svg += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) +
                   "\" width=\"" + std::to_string(cell) + "\" height=\"" + std::to_string(cell) +
                   "\" fill=\"" + (def ? color(m.values[i][j]) : std::string("#cccccc")) +
                   "\" stroke=\"white\"/>\n";
            if (def) {
                char buf[16];
                std::snprintf(buf, sizeof buf, "%.1f", m.values[i][j]);
                svg += "<text x=\"" + std::to_string(x + cell / 2) + "\" y=\"" +
                       std::to_string(y + cell / 2 + 4) +
                       "\" text-anchor=\"middle\" font-size=\"12\" fill=\"white\">" + buf +
                       "</text>\n";
            }
        }
    }
    svg += "</svg>\n";
    return svg;
}

struct ReportFormats {
    bool json = true;
    bool markdown = true;
    bool csv = true;
    bool svg_heatmap = true;
};

// Writes the requested renderings into out_dir and returns the paths.
inline std::vector<std::filesystem::path> render_report(const EvalReport& rep,
                                                        const ReportFormats& formats,
                                                        const std::filesystem::path& out_dir) {
    std::vector<std::filesystem::path> written;
    if (formats.json) {
        const auto p = out_dir / "report.json";
        write_text_atomic(p, report_to_json(rep).dump(2) + "\n");
        written.push_back(p);
    }
    if (formats.csv) {
        const auto p = out_dir / "matrix.csv";
        write_text_atomic(p, matrix_to_csv(rep.matrix));
        written.push_back(p);
    }
    if (formats.markdown) {
        const auto p = out_dir / "matrix.md";
        write_text_atomic(p, matrix_to_markdown(rep.matrix, rep.bwt_value));
        written.push_back(p);
    }
    if (formats.svg_heatmap) {
        const auto p = out_dir / "heatmap.svg";
        write_text_atomic(p, matrix_to_svg(rep.matrix));
        written.push_back(p);
    }
    return written;
}

}  // namespace cosda
