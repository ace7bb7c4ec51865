#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qmme/error.hpp"
#include "qmme/linalg.hpp"
#include "qmme/qmme.hpp"

namespace qmme {

/// Shortest text that parses back to the same double (17 significant digits).
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& text, const std::string& what) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size()) {
        throw Error(ErrorCode::InvalidArgument, what + ": '" + text + "' is not a number");
    }
    return v;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

/// Splits one CSV record honoring double quotes ("" escapes a quote).
inline std::vector<std::string> split_csv_record(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot open '" + path + "' for writing");
    return out;
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
    return in;
}

// ---------------------------------------------------------------------------
// Trajectories

inline constexpr const char* kTrajectoryHeader = "k,f,grad_norm,E_k,beta,restarted,wall_time_s";

inline void write_trajectory(std::ostream& out, const std::vector<IterationRecord>& trajectory) {
    out << kTrajectoryHeader << '\n';
    for (const auto& r : trajectory) {
        out << r.k << ',' << format_double(r.f) << ',' << format_double(r.grad_norm) << ','
            << format_double(r.potential) << ',' << format_double(r.beta) << ',' << (r.restarted ? 1 : 0) << ','
            << format_double(r.wall_time_s) << '\n';
    }
}

inline void emit_trajectory(const std::vector<IterationRecord>& trajectory, const std::string& path) {
    if (trajectory.empty()) throw Error(ErrorCode::InvalidArgument, "empty trajectory");
    auto out = open_output(path);
    write_trajectory(out, trajectory);
    if (!out) throw Error(ErrorCode::IoError, "write to '" + path + "' failed");
}

inline std::vector<IterationRecord> read_trajectory(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || trim(line) != kTrajectoryHeader) {
        throw Error(ErrorCode::MalformedRow, "trajectory header missing or wrong");
    }
    std::vector<IterationRecord> out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto f = split(trim(line), ',');
        if (f.size() != 7) {
            throw Error(ErrorCode::MalformedRow, "trajectory row " + std::to_string(row) + " has " +
                                                     std::to_string(f.size()) + " fields");
        }
        IterationRecord r;
        r.k = static_cast<int>(parse_double(f[0], "k"));
        r.f = parse_double(f[1], "f");
        r.grad_norm = parse_double(f[2], "grad_norm");
        r.potential = parse_double(f[3], "E_k");
        r.beta = parse_double(f[4], "beta");
        r.restarted = f[5] == "1";
        r.wall_time_s = parse_double(f[6], "wall_time_s");
        out.push_back(r);
    }
    return out;
}

inline std::vector<IterationRecord> parse_trajectory(const std::string& path) {
    auto in = open_input(path);
    return read_trajectory(in);
}

// ---------------------------------------------------------------------------
// Matrices as CSV

inline void write_matrix_csv(std::ostream& out, const Matrix& a, const std::vector<std::string>& header = {}) {
    if (!header.empty()) {
        for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
        out << '\n';
    }
    for (Index i = 0; i < a.rows(); ++i) {
        for (Index j = 0; j < a.cols(); ++j) out << (j ? "," : "") << format_double(a(i, j));
        out << '\n';
    }
}

/// Numeric CSV with a header row; returns the header and the values.
inline std::pair<std::vector<std::string>, Matrix> read_matrix_csv(const std::string& path) {
    auto in = open_input(path);
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::MalformedRow, "'" + path + "' is empty");
    auto header = split_csv_record(line);
    std::vector<std::vector<double>> rows;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto f = split_csv_record(line);
        if (f.size() != header.size()) {
            throw Error(ErrorCode::MalformedRow, path + ": row " + std::to_string(row) + " has " +
                                                     std::to_string(f.size()) + " fields, expected " +
                                                     std::to_string(header.size()));
        }
        std::vector<double> v;
        v.reserve(f.size());
        for (const auto& s : f) v.push_back(parse_double(trim(s), path + " row " + std::to_string(row)));
        rows.push_back(std::move(v));
    }
    Matrix a(static_cast<Index>(rows.size()), static_cast<Index>(header.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < header.size(); ++j) a(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    }
    return {std::move(header), std::move(a)};
}

// ---------------------------------------------------------------------------
// Codon usage data

struct CodonDataset {
    std::vector<int> labels;              // 0-based, lexicographic order of class names
    std::vector<std::string> class_names;
    Matrix features;                      // n x 64, imputed and standardized
    std::vector<std::string> row_ids;
};

/**
 * Reads the codon-usage CSV: column 1 holds the class, columns 6-69 the
 * codon frequencies. Missing values are allowed only in the first two
 * feature columns and are replaced by the column mean; every feature column
 * is then standardized to mean 0 and sample sd 1.
 */
inline CodonDataset read_codon_csv(std::istream& in) {
    constexpr std::size_t kFirst = 5, kCount = 64, kColumns = kFirst + kCount;
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::MalformedRow, "codon file is empty");
    if (split_csv_record(line).size() != kColumns) {
        throw Error(ErrorCode::MalformedRow, "codon header must have 69 columns");
    }

    std::vector<std::string> raw_labels;
    std::vector<std::array<double, kCount>> values;
    std::vector<std::array<bool, kCount>> missing;
    CodonDataset out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto f = split_csv_record(line);
        if (f.size() != kColumns) {
            throw Error(ErrorCode::MalformedRow, "row " + std::to_string(row) + " has " + std::to_string(f.size()) +
                                                     " columns, expected 69");
        }
        std::array<double, kCount> v{};
        std::array<bool, kCount> miss{};
        for (std::size_t j = 0; j < kCount; ++j) {
            const std::string cell = trim(f[kFirst + j]);
            std::size_t used = 0;
            double x = 0.0;
            bool ok = false;
            if (!cell.empty()) {
                try {
                    x = std::stod(cell, &used);
                    ok = used == cell.size() && std::isfinite(x);
                } catch (const std::exception&) {
                    ok = false;
                }
            }
            if (!ok) {
                if (j >= 2) {
                    throw Error(ErrorCode::NonNumericFeature, "row " + std::to_string(row) + ", feature column " +
                                                                  std::to_string(j + 1) + ": '" + cell + "'");
                }
                miss[j] = true;
            }
            v[j] = x;
        }
        raw_labels.push_back(trim(f[0]));
        out.row_ids.push_back(trim(f[1]) + ":" + trim(f[2]));
        values.push_back(v);
        missing.push_back(miss);
    }
    const auto n = static_cast<Index>(values.size());
    if (n < 2) throw Error(ErrorCode::MalformedRow, "codon file needs at least two data rows");

    out.features.resize(n, static_cast<Index>(kCount));
    for (Index j = 0; j < static_cast<Index>(kCount); ++j) {
        double sum = 0.0;
        Index present = 0;
        for (Index i = 0; i < n; ++i) {
            if (!missing[i][j]) {
                sum += values[i][j];
                ++present;
            }
        }
        if (present == 0) throw Error(ErrorCode::NonNumericFeature, "feature column has no numeric values");
        const double mean = sum / static_cast<double>(present);
        for (Index i = 0; i < n; ++i) out.features(i, j) = missing[i][j] ? mean : values[i][j];
        auto col = out.features.col(j);
        const double mu = col.mean();
        col.array() -= mu;
        const double sd = std::sqrt(col.squaredNorm() / static_cast<double>(n - 1));
        if (sd > 0.0) col /= sd;
    }

    out.class_names = raw_labels;
    std::sort(out.class_names.begin(), out.class_names.end());
    out.class_names.erase(std::unique(out.class_names.begin(), out.class_names.end()), out.class_names.end());
    out.labels.reserve(raw_labels.size());
    for (const auto& name : raw_labels) {
        const auto it = std::lower_bound(out.class_names.begin(), out.class_names.end(), name);
        out.labels.push_back(static_cast<int>(it - out.class_names.begin()));
    }
    return out;
}

inline CodonDataset load_codon_csv(const std::string& path) {
    auto in = open_input(path);
    return read_codon_csv(in);
}

}  // namespace qmme
