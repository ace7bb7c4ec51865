#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "qmme/datagen.hpp"
#include "qmme/error.hpp"
#include "qmme/io.hpp"
#include "qmme/kernel.hpp"
#include "qmme/losses.hpp"
#include "qmme/model.hpp"
#include "qmme/path.hpp"
#include "qmme/qmme.hpp"

namespace qmme {

/**
 * Declarative experiment description read from a flat `key = value` file.
 * Lines starting with '#' are comments. Unknown keys are rejected.
 * List values (solvers, m_values, q_values) are comma separated.
 */
struct ExperimentConfig {
    Family family = Family::Logistic;
    int n = 1024;
    int n_val = 256;
    int d = 50;
    int q = 3;
    std::string parameterization = "standard";
    double sigma = 20.0;
    double h = 0.25;
    double tau = 0.5;
    double delta = -1.0;  // < 0 selects the family default
    double lambda = 1e-4;
    double lambda_max = 10.0;
    double lambda_min = 1e-5;
    int n_lambdas = 30;
    int m = 64;
    std::string sketch = "uniform";
    std::vector<std::string> solvers{"qmme"};
    int restart_period = 50;
    std::string beta_mode = "hybrid";
    double grad_tol = 1e-4;
    int max_iters = 1000;
    std::uint64_t seed = 1;
    int replicates = 1;
    std::vector<int> m_values{};
    std::vector<int> q_values{};
    int workers = 1;
    std::string data;  // codon CSV for the codon preset
    std::string preset = "simulation";
    std::string output_dir = ".";

    void validate() const;

    ModelSpec model_spec() const {
        ModelSpec s;
        s.family = family;
        s.quantile = {tau, h};
        s.multinomial = {q, parameterization == "full" ? Parameterization::Full : Parameterization::Standard};
        s.delta = delta < 0.0 ? ModelSpec::default_delta(family) : delta;
        return s;
    }
    KernelSpec kernel() const { return KernelSpec{sigma, KernelKind::RBF}; }
    QmmeConfig qmme() const {
        QmmeConfig c;
        c.restart_period = restart_period;
        c.beta_mode = beta_mode == "capped" ? BetaMode::CappedOneThird : BetaMode::HybridRestart;
        c.grad_tol = grad_tol;
        c.max_iters = max_iters;
        return c;
    }
    BaselineConfig baseline() const {
        BaselineConfig c;
        c.grad_tol = grad_tol;
        c.max_iters = max_iters;
        return c;
    }
    SolveSettings settings() const { return {qmme(), baseline()}; }
    PathConfig path(Solver solver) const { return {lambda_max, lambda_min, n_lambdas, solver}; }
    SketchStrategy sketch_strategy() const {
        return sketch == "stratified" ? SketchStrategy::StratifiedRows : SketchStrategy::UniformRows;
    }
};

namespace detail {

template <class T>
std::string join(const std::vector<T>& values) {
    std::ostringstream out;
    for (std::size_t i = 0; i < values.size(); ++i) out << (i ? "," : "") << values[i];
    return out.str();
}

inline long parse_integer(const std::string& text, const std::string& key) {
    std::size_t used = 0;
    long v = 0;
    try {
        v = std::stol(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size()) {
        throw Error(ErrorCode::InvalidConfig, key + ": '" + text + "' is not an integer");
    }
    return v;
}

inline double parse_real(const std::string& text, const std::string& key) {
    try {
        return parse_double(text, key);
    } catch (const Error&) {
        throw Error(ErrorCode::InvalidConfig, key + ": '" + text + "' is not a number");
    }
}

struct ConfigField {
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

inline const std::map<std::string, ConfigField>& config_fields() {
    using C = ExperimentConfig;
    static const std::map<std::string, ConfigField> fields = [] {
        std::map<std::string, ConfigField> f;
        auto integer = [&f](const std::string& key, int C::*member) {
            f[key] = {[member](const C& c) { return std::to_string(c.*member); },
                      [member, key](C& c, const std::string& v) { c.*member = static_cast<int>(parse_integer(v, key)); }};
        };
        auto real = [&f](const std::string& key, double C::*member) {
            f[key] = {[member](const C& c) { return format_double(c.*member); },
                      [member, key](C& c, const std::string& v) { c.*member = parse_real(v, key); }};
        };
        auto text = [&f](const std::string& key, std::string C::*member) {
            f[key] = {[member](const C& c) { return c.*member; },
                      [member](C& c, const std::string& v) { c.*member = v; }};
        };
        f["family"] = {[](const C& c) { return std::string(to_string(c.family)); },
                       [](C& c, const std::string& v) { c.family = parse_family(v); }};
        integer("n", &C::n);
        integer("n_val", &C::n_val);
        integer("d", &C::d);
        integer("q", &C::q);
        text("parameterization", &C::parameterization);
        real("sigma", &C::sigma);
        real("h", &C::h);
        real("tau", &C::tau);
        real("delta", &C::delta);
        real("lambda", &C::lambda);
        real("lambda_max", &C::lambda_max);
        real("lambda_min", &C::lambda_min);
        integer("n_lambdas", &C::n_lambdas);
        integer("m", &C::m);
        text("sketch", &C::sketch);
        f["solvers"] = {[](const C& c) { return join(c.solvers); },
                        [](C& c, const std::string& v) {
                            c.solvers.clear();
                            for (const auto& s : split(v, ',')) c.solvers.push_back(trim(s));
                        }};
        integer("restart_period", &C::restart_period);
        text("beta_mode", &C::beta_mode);
        real("grad_tol", &C::grad_tol);
        integer("max_iters", &C::max_iters);
        f["seed"] = {[](const C& c) { return std::to_string(c.seed); },
                     [](C& c, const std::string& v) {
                         const long s = parse_integer(v, "seed");
                         if (s < 0) throw Error(ErrorCode::InvalidConfig, "seed must be non-negative");
                         c.seed = static_cast<std::uint64_t>(s);
                     }};
        integer("replicates", &C::replicates);
        auto int_list = [&f](const std::string& key, std::vector<int> C::*member) {
            f[key] = {[member](const C& c) { return join(c.*member); },
                      [member, key](C& c, const std::string& v) {
                          (c.*member).clear();
                          if (trim(v).empty()) return;
                          for (const auto& s : split(v, ',')) {
                              (c.*member).push_back(static_cast<int>(parse_integer(trim(s), key)));
                          }
                      }};
        };
        int_list("m_values", &C::m_values);
        int_list("q_values", &C::q_values);
        integer("workers", &C::workers);
        text("data", &C::data);
        text("preset", &C::preset);
        text("output_dir", &C::output_dir);
        return f;
    }();
    return fields;
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
    if (n < 2) fail("n must be >= 2");
    if (n_val < 1) fail("n_val must be >= 1");
    if (d < 6) fail("d must be >= 6");
    if (q < 2) fail("q must be >= 2");
    if (parameterization != "standard" && parameterization != "full") fail("parameterization must be standard or full");
    if (!(sigma > 0.0)) fail("sigma must be positive");
    if (!(h > 0.0)) fail("h must be positive");
    if (!(tau > 0.0 && tau < 1.0)) fail("tau must lie in (0, 1)");
    if (!(lambda >= 0.0)) fail("lambda must be non-negative");
    path(Solver::QMME).validate();
    if (m < 1) fail("m must be positive");
    if (sketch != "uniform" && sketch != "stratified") fail("sketch must be uniform or stratified");
    if (solvers.empty()) fail("at least one solver is required");
    for (const auto& s : solvers) parse_solver(s);
    if (beta_mode != "hybrid" && beta_mode != "capped") fail("beta_mode must be hybrid or capped");
    qmme().validate();
    if (replicates < 1) fail("replicates must be >= 1");
    for (int v : m_values) {
        if (v < 1) fail("m_values entries must be positive");
    }
    for (int v : q_values) {
        if (v < 2) fail("q_values entries must be >= 2");
    }
    if (workers < 1) fail("workers must be >= 1");
    if (preset != "simulation" && preset != "codon") fail("preset must be simulation or codon");
    if (preset == "codon" && data.empty()) fail("the codon preset needs data = <path to codon csv>");
}

inline void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
    const auto& fields = detail::config_fields();
    const auto it = fields.find(key);
    if (it == fields.end()) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
    it->second.set(config, value);
}

/// Parses `key = value` lines over the defaults. QMME_OUTPUT_DIR, when set,
/// overrides output_dir.
inline ExperimentConfig parse_config(std::istream& in, bool apply_env = true) {
    ExperimentConfig config;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(line_no) + ": expected key = value");
        }
        set_config_value(config, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    if (apply_env) {
        if (const char* dir = std::getenv("QMME_OUTPUT_DIR"); dir && *dir) config.output_dir = dir;
    }
    config.validate();
    return config;
}

inline ExperimentConfig load_config(const std::string& path) {
    auto in = open_input(path);
    return parse_config(in);
}

/// Writes every key in sorted order; parse_config reads it back unchanged.
inline void write_config(std::ostream& out, const ExperimentConfig& config) {
    for (const auto& [key, field] : detail::config_fields()) out << key << " = " << field.get(config) << '\n';
}

inline std::string serialize_config(const ExperimentConfig& config) {
    std::ostringstream out;
    write_config(out, config);
    return out.str();
}

}  // namespace qmme
