// Experiment driver: simulate data, fit single instances, compute solution
// paths, run benchmark grids and the invariant checks.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qmme/config.hpp"
#include "qmme/datagen.hpp"
#include "qmme/diagnostics.hpp"
#include "qmme/io.hpp"
#include "qmme/kernel.hpp"
#include "qmme/model.hpp"
#include "qmme/path.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace qmme;

namespace {

constexpr const char* kVersion = "0.1.0";

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
};

ExperimentConfig resolve_config(const CommonOptions& opts) {
    ExperimentConfig config;
    if (!opts.config_path.empty()) config = load_config(opts.config_path);
    for (const auto& kv : opts.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::InvalidConfig, "--set expects key=value, got '" + kv + "'");
        set_config_value(config, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (const char* dir = std::getenv("QMME_OUTPUT_DIR"); dir && *dir) config.output_dir = dir;
    config.validate();
    return config;
}

fs::path output_file(const ExperimentConfig& config, const std::string& name) {
    fs::create_directories(config.output_dir);
    return fs::path(config.output_dir) / name;
}

void write_sidecar(const fs::path& target, const ExperimentConfig& config, const std::string& command,
                   const json& extra = json::object()) {
    json meta;
    meta["command"] = command;
    meta["version"] = kVersion;
    meta["eigen_version"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION);
    meta["seed"] = config.seed;
    json echo = json::object();
    std::istringstream lines(serialize_config(config));
    std::string line;
    while (std::getline(lines, line)) {
        const auto eq = line.find('=');
        echo[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    meta["config"] = echo;
    for (const auto& [k, v] : extra.items()) meta[k] = v;
    auto out = open_output(target.string() + ".json");
    out << meta.dump(2) << '\n';
}

SimSpec sim_spec(const ExperimentConfig& config, Index n, std::uint64_t seed) {
    SimSpec s;
    s.n = n;
    s.d = config.d;
    s.family = config.family;
    s.q = config.q;
    s.seed = seed;
    return s;
}

/// Training blocks and validation data for one simulated replicate.
struct Experiment {
    SimData train_data;
    TrainingData train;
    ValidationData validation;
};

Experiment simulated_experiment(const ExperimentConfig& config, const ModelSpec& spec, Index m, std::uint64_t seed) {
    Experiment e;
    e.train_data = simulate(sim_spec(config, config.n, seed));
    const SimData val = simulate(sim_spec(config, config.n_val, seed + 0x9e3779b97f4a7c15ULL));
    std::optional<std::span<const int>> labels;
    if (!e.train_data.labels.empty()) labels = std::span<const int>(e.train_data.labels);
    auto rows = make_sketch(config.n, labels, SketchSpec{m, config.sketch_strategy(), seed});
    std::vector<int> train_labels = e.train_data.labels;
    if (config.family == Family::Logistic) train_labels = binary_labels(e.train_data.response);
    e.train = make_training_data(spec, e.train_data.A, e.train_data.response, std::move(train_labels), config.kernel(),
                                 std::move(rows));
    std::vector<int> val_labels = val.labels;
    if (config.family == Family::Logistic) val_labels = binary_labels(val.response);
    e.validation = make_validation_data(e.train_data.A, e.train, val.A, config.kernel(), Vector(val.eta.col(0)),
                                        std::move(val_labels));
    return e;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const ExperimentConfig& config, const std::string& out_name) {
    const SimData data = simulate(sim_spec(config, config.n, config.seed));
    const auto target = output_file(config, out_name);
    auto out = open_output(target.string());
    std::vector<std::string> header;
    for (int j = 1; j <= config.d; ++j) header.push_back("a" + std::to_string(j));
    header.push_back("b");
    for (Index j = 0; j < data.eta.cols(); ++j) header.push_back("eta" + std::to_string(j + 1));
    Matrix table(data.A.rows(), data.A.cols() + 1 + data.eta.cols());
    table << data.A, data.response, data.eta;
    write_matrix_csv(out, table, header);
    write_sidecar(target, config, "simulate");
    std::cout << "wrote " << target.string() << " (" << data.A.rows() << " rows)\n";
    return 0;
}

int cmd_fit(const ExperimentConfig& config) {
    const ModelSpec spec = config.model_spec();
    const Experiment e = simulated_experiment(config, spec, config.m, config.seed);
    int status = 0;
    for (const auto& name : config.solvers) {
        const Solver solver = parse_solver(name);
        const auto result = solve_instance(spec, e.train, config.lambda, solver,
                                           Matrix::Zero(config.m, spec.width()), config.settings());
        const auto target = output_file(config, std::string("trajectory_") + to_string(config.family) + "_" + name +
                                                    ".csv");
        if (!result.trajectory.empty()) emit_trajectory(result.trajectory, target.string());
        write_sidecar(target, config, "fit",
                      {{"solver", name},
                       {"iterations", result.iterations},
                       {"objective", result.objective},
                       {"grad_norm", result.grad_norm},
                       {"termination", to_string(result.termination)},
                       {"wall_time_s", result.wall_time_s}});
        std::cout << name << ": " << to_string(result.termination) << " after " << result.iterations
                  << " iterations, f = " << format_double(result.objective)
                  << ", |grad| = " << format_double(result.grad_norm) << ", " << result.wall_time_s << " s\n";
        if (result.termination == Termination::NonFiniteObjective) status = 3;
    }
    return status;
}

void write_path_table(std::ostream& out, const PathResult<Matrix>& path) {
    out << "lambda,iterations,wall_time_s,grad_norm,objective,metric,termination,error\n";
    for (const auto& e : path.entries) {
        std::string err = e.error;
        std::replace(err.begin(), err.end(), ',', ';');
        out << format_double(e.lambda) << ',' << e.iterations << ',' << format_double(e.wall_time_s) << ','
            << format_double(e.grad_norm) << ',' << format_double(e.objective) << ',' << format_double(e.metric)
            << ',' << to_string(e.termination) << ',' << err << '\n';
    }
}

int cmd_path(const ExperimentConfig& config) {
    const ModelSpec spec = config.model_spec();
    const Experiment e = simulated_experiment(config, spec, config.m, config.seed);
    const MetricKind kind = default_metric(config.family);
    for (const auto& name : config.solvers) {
        const auto path = fit_path(spec, e.train, config.path(parse_solver(name)), config.settings(), kind,
                                   &e.validation);
        const auto target = output_file(config, std::string("path_") + to_string(config.family) + "_" + name + ".csv");
        auto out = open_output(target.string());
        write_path_table(out, path);
        out.close();
        write_sidecar(target, config, "path",
                      {{"solver", name},
                       {"metric", to_string(kind)},
                       {"best_lambda", path.best_lambda},
                       {"best_metric", path.best_metric},
                       {"total_time_s", path.total_time_s}});
        std::cout << name << ": best lambda " << format_double(path.best_lambda) << ", " << to_string(kind) << " "
                  << format_double(path.best_metric) << ", total " << path.total_time_s << " s\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchRow {
    std::string family, solver;
    Index m = 0;
    int q = 0;
    double lambda_best = 0.0, total_time_s = 0.0, metric = 0.0;
    std::uint64_t seed = 0;
    double test_accuracy = std::numeric_limits<double>::quiet_NaN();  // codon preset only
    double test_loglik = std::numeric_limits<double>::quiet_NaN();
    bool done = false;
};

struct BenchTask {
    std::uint64_t seed;
    Index m;
    int q;
    std::string solver;
};

/// Runs tasks on `workers` threads; results land at their task index so the
/// table order does not depend on scheduling.
template <class Fn>
std::optional<std::string> run_tasks(std::size_t count, int workers, Fn&& fn) {
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::optional<std::string> first_error;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next++;
            if (i >= count) return;
            try {
                fn(i);
            } catch (const std::exception& ex) {
                std::lock_guard lock(err_mutex);
                if (!first_error) first_error = ex.what();
                next = count;
                return;
            }
        }
    };
    std::vector<std::jthread> pool;
    for (int w = 0; w < std::max(1, workers); ++w) pool.emplace_back(worker);
    pool.clear();
    return first_error;
}

void write_bench(const fs::path& target, const std::vector<BenchRow>& rows, bool codon) {
    auto out = open_output(target.string());
    out << "family,solver,m,q,lambda_best,total_time_s,metric,seed";
    if (codon) out << ",test_accuracy,test_loglik";
    out << '\n';
    for (const auto& r : rows) {
        if (!r.done) continue;
        out << r.family << ',' << r.solver << ',' << r.m << ',' << r.q << ',' << format_double(r.lambda_best) << ','
            << format_double(r.total_time_s) << ',' << format_double(r.metric) << ',' << r.seed;
        if (codon) out << ',' << format_double(r.test_accuracy) << ',' << format_double(r.test_loglik);
        out << '\n';
    }
}

int bench_simulation(const ExperimentConfig& config) {
    const std::vector<int> ms = config.m_values.empty() ? std::vector<int>{config.m} : config.m_values;
    const std::vector<int> qs = config.q_values.empty() ? std::vector<int>{config.q} : config.q_values;
    std::vector<BenchTask> tasks;
    for (int r = 0; r < config.replicates; ++r) {
        for (int m : ms) {
            for (int q : qs) {
                for (const auto& s : config.solvers) tasks.push_back({config.seed + static_cast<std::uint64_t>(r), m, q, s});
            }
        }
    }
    std::vector<BenchRow> rows(tasks.size());
    const auto error = run_tasks(tasks.size(), config.workers, [&](std::size_t i) {
        const auto& t = tasks[i];
        ExperimentConfig local = config;
        local.q = t.q;
        const ModelSpec spec = local.model_spec();
        const Experiment e = simulated_experiment(local, spec, t.m, t.seed);
        const MetricKind kind = default_metric(config.family);
        const auto path = fit_path(spec, e.train, local.path(parse_solver(t.solver)), local.settings(), kind,
                                   &e.validation);
        rows[i] = {to_string(config.family), t.solver, t.m, t.q, path.best_lambda, path.total_time_s, path.best_metric,
                   t.seed};
        rows[i].done = true;
    });
    const auto target = output_file(config, std::string("bench_") + to_string(config.family) + ".csv");
    write_bench(target, rows, false);
    write_sidecar(target, config, "bench", {{"tasks", tasks.size()}});
    if (error) throw Error(ErrorCode::InvalidArgument, "bench aborted: " + *error);
    std::cout << "wrote " << target.string() << " (" << tasks.size() << " rows)\n";
    return 0;
}

/// Codon workflow: 70/10/20 split, path on the training part with
/// validation log-likelihood, refit on train + validation at the selected
/// lambda with a fresh sketch, then score the test part.
int bench_codon(const ExperimentConfig& config) {
    const CodonDataset data = load_codon_csv(config.data);
    const auto n = static_cast<Index>(data.labels.size());
    const int q = static_cast<int>(data.class_names.size());
    ExperimentConfig local = config;
    local.family = Family::Multinomial;
    local.q = q;
    const ModelSpec spec = local.model_spec();
    const Index n_train = n * 7 / 10, n_val = n / 10;
    const Index n_fit = n_train + n_val;
    std::vector<int> ms = config.m_values;
    if (ms.empty()) {
        for (int div : {64, 32, 16, 8, 4}) ms.push_back(static_cast<int>(n_fit / div));
    }

    auto take = [&](const std::vector<Index>& idx, Index from, Index count, Matrix& a, std::vector<int>& labels) {
        a.resize(count, data.features.cols());
        labels.resize(static_cast<std::size_t>(count));
        for (Index i = 0; i < count; ++i) {
            const Index src = idx[static_cast<std::size_t>(from + i)];
            a.row(i) = data.features.row(src);
            labels[static_cast<std::size_t>(i)] = data.labels[static_cast<std::size_t>(src)];
        }
    };

    std::vector<BenchTask> tasks;
    for (int r = 0; r < config.replicates; ++r) {
        for (int m : ms) {
            for (const auto& s : config.solvers) tasks.push_back({config.seed + static_cast<std::uint64_t>(r), m, q, s});
        }
    }
    std::vector<BenchRow> rows(tasks.size());
    const auto error = run_tasks(tasks.size(), config.workers, [&](std::size_t i) {
        const auto& t = tasks[i];
        std::vector<Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), Index{0});
        Rng split_rng(t.seed, 0x53504c);
        split_rng.shuffle(order);
        Matrix a_train, a_val, a_test;
        std::vector<int> y_train, y_val, y_test;
        take(order, 0, n_train, a_train, y_train);
        take(order, n_train, n_val, a_val, y_val);
        take(order, n_fit, n - n_fit, a_test, y_test);

        const auto strategy = config.sketch_strategy();
        auto rows_train = make_sketch(n_train, std::span<const int>(y_train), SketchSpec{t.m, strategy, t.seed});
        const TrainingData train = make_training_data(spec, a_train, Vector::Zero(n_train), y_train, local.kernel(),
                                                      std::move(rows_train));
        const ValidationData val = make_validation_data(a_train, train, a_val, local.kernel(), Vector(), y_val);
        const Solver solver = parse_solver(t.solver);
        const auto path = fit_path(spec, train, local.path(solver), local.settings(), MetricKind::LogLik, &val);

        Matrix a_fit(n_fit, data.features.cols());
        a_fit << a_train, a_val;
        std::vector<int> y_fit = y_train;
        y_fit.insert(y_fit.end(), y_val.begin(), y_val.end());
        auto rows_fit = make_sketch(n_fit, std::span<const int>(y_fit), SketchSpec{t.m, strategy, t.seed + 1});
        const TrainingData refit_data =
            make_training_data(spec, a_fit, Vector::Zero(n_fit), y_fit, local.kernel(), std::move(rows_fit));
        const auto refit = solve_instance(spec, refit_data, path.best_lambda, solver,
                                          Matrix::Zero(t.m, spec.width()), local.settings());
        const ValidationData test = make_validation_data(a_fit, refit_data, a_test, local.kernel(), Vector(), y_test);

        rows[i] = {"multinomial", t.solver, t.m, q, path.best_lambda, path.total_time_s, path.best_metric, t.seed};
        rows[i].test_accuracy = validation_metric(spec, MetricKind::Accuracy, test, refit.solution);
        rows[i].test_loglik = validation_metric(spec, MetricKind::LogLik, test, refit.solution);
        rows[i].done = true;
    });
    const auto target = output_file(config, "bench_codon.csv");
    write_bench(target, rows, true);
    json classes = data.class_names;
    write_sidecar(target, config, "bench", {{"tasks", tasks.size()}, {"classes", classes}, {"n", n}});
    if (error) throw Error(ErrorCode::InvalidArgument, "bench aborted: " + *error);
    std::cout << "wrote " << target.string() << " (" << tasks.size() << " rows)\n";
    return 0;
}

int cmd_check(std::uint64_t seed) {
    int failures = 0;
    for (const auto& r : run_invariant_checks(seed)) {
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << format_double(r.value) << " (limit "
                  << format_double(r.threshold) << ")\n";
        if (!r.pass) ++failures;
    }
    std::cout << (failures == 0 ? "all checks passed\n" : std::to_string(failures) + " check(s) failed\n");
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"QMME kernel learning experiments"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    CommonOptions opts;
    auto add_common = [&opts](CLI::App* sub) {
        sub->add_option("-c,--config", opts.config_path, "key = value config file")->check(CLI::ExistingFile);
        sub->add_option("-s,--set", opts.overrides, "override a config key (key=value), repeatable");
    };

    std::string sim_out = "simulated.csv";
    auto* simulate_cmd = app.add_subcommand("simulate", "write a simulated dataset as CSV");
    add_common(simulate_cmd);
    simulate_cmd->add_option("-o,--out", sim_out, "file name inside output_dir");

    auto* fit_cmd = app.add_subcommand("fit", "solve one lambda with each configured solver, write trajectories");
    add_common(fit_cmd);
    auto* path_cmd = app.add_subcommand("path", "solution path over the lambda grid, one table per solver");
    add_common(path_cmd);
    auto* bench_cmd = app.add_subcommand("bench", "replicated path benchmarks (m and q sweeps, codon preset)");
    add_common(bench_cmd);

    std::uint64_t check_seed = 7;
    auto* check_cmd = app.add_subcommand("check", "run the invariant suite on small instances");
    check_cmd->add_option("--seed", check_seed, "random seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*check_cmd) return cmd_check(check_seed);
        const ExperimentConfig config = resolve_config(opts);
        if (*simulate_cmd) return cmd_simulate(config, sim_out);
        if (*fit_cmd) return cmd_fit(config);
        if (*path_cmd) return cmd_path(config);
        if (*bench_cmd) return config.preset == "codon" ? bench_codon(config) : bench_simulation(config);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
