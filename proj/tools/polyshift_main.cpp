// polyshift command-line tool: experiment drivers (exp-circulant,
// exp-timevarying, exp-temperature) plus small filter / inverse / spectrum
// utilities on circulant graphs.
//
// Exit codes: 0 success; 2 precondition failure (bad arguments, unreadable
// or malformed inputs, non-positive-definite symbols); 3 when every
// requested solver diverged and nothing else went wrong.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "polyshift/experiments.hpp"

namespace {

using namespace polyshift;

constexpr int exit_ok = 0;
constexpr int exit_precondition = 2;
constexpr int exit_divergence = 3;

// One signal value per line; blank lines and '#' comments are skipped.
Eigen::VectorXd read_signal_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open signal file " + path);
    std::vector<double> vals;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(line, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0)
            throw std::runtime_error("signal file " + path + ": parse error at line " +
                                     std::to_string(line_no) + ": '" + line + "'");
        vals.push_back(v);
    }
    if (vals.empty()) throw std::runtime_error("signal file " + path + " is empty");
    return Eigen::Map<const Eigen::VectorXd>(vals.data(),
                                             static_cast<Eigen::Index>(vals.size()));
}

void write_signal_csv(const Eigen::VectorXd& v, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.precision(17);
    for (Eigen::Index i = 0; i < v.size(); ++i) out << v[i] << "\n";
}

poly_coeffs load_poly_filter(const std::string& path) {
    filter_spec spec = load_filter_json(path);
    if (!spec.poly)
        throw std::invalid_argument(
            "filter JSON at " + path + " must hold polynomial coefficients");
    return *spec.poly;
}

// Deterministic trace dump (no timing columns).
void write_trace(const solve_trace& tr, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.precision(10);
    out << "m,residual,rel_error\n";
    for (std::size_t m = 0; m < tr.residuals.size(); ++m) {
        out << m << "," << tr.residuals[m] << ",";
        if (m < tr.rel_errors.size())
            out << tr.rel_errors[m];
        else
            out << "nan";
        out << "\n";
    }
}

// Flags shared by the experiment subcommands. Values are applied over the
// --config file (explicit flags win).
struct exp_flags {
    std::string config, out, data;
    int n = 0, trials = 0, iterations = 0, time_steps = 0, knn = 0;
    std::vector<int> generators;
    std::vector<std::string> methods;
    std::vector<double> etas;
    std::uint64_t seed = 0;
    double delta = 0.0, radius = 0.0, alpha = -1.0, beta = -1.0;
};

void add_common_options(CLI::App* cmd, exp_flags& f) {
    cmd->add_option("--config", f.config, "JSON config file; flags override its fields")
        ->check(CLI::ExistingFile);
    cmd->add_option("--n", f.n, "vertex / station count");
    cmd->add_option("--generators", f.generators, "circulant generating set, e.g. 1,2,5")
        ->delimiter(',');
    cmd->add_option("--method", f.methods,
                    "methods to run (arma, gd0, iopaL, icpaK); repeatable")
        ->delimiter(',');
    cmd->add_option("--trials", f.trials, "number of random trials");
    cmd->add_option("--iterations", f.iterations, "iteration budget per run");
    cmd->add_option("--time-steps", f.time_steps, "snapshots / hours per trial");
    cmd->add_option("--delta", f.delta, "time-discretization step");
    cmd->add_option("--radius", f.radius, "geometric-graph connection radius");
    cmd->add_option("--knn", f.knn, "nearest-neighbor count for the station graph");
    cmd->add_option("--eta", f.etas, "noise half-widths; repeatable")->delimiter(',');
    cmd->add_option("--alpha", f.alpha, "override the vertex penalty");
    cmd->add_option("--beta", f.beta, "override the temporal penalty");
    cmd->add_option("--seed", f.seed, "RNG seed");
    cmd->add_option("--out", f.out, "output directory for CSV tables and meta.json");
    cmd->add_option("--data", f.data, "input CSV (temperature experiment)")
        ->check(CLI::ExistingFile);
}

experiment_config build_config(const CLI::App* cmd, const exp_flags& f,
                               const std::string& experiment, int default_n) {
    experiment_config cfg =
        f.config.empty() ? experiment_config{} : load_config(f.config);
    cfg.experiment = experiment;
    if (f.config.empty()) cfg.n = default_n;
    if (cmd->count("--n")) cfg.n = f.n;
    if (cmd->count("--generators")) cfg.generators = f.generators;
    if (cmd->count("--method")) cfg.methods = f.methods;
    if (cmd->count("--trials")) cfg.trials = f.trials;
    if (cmd->count("--iterations")) cfg.iterations = f.iterations;
    if (cmd->count("--time-steps")) cfg.time_steps = f.time_steps;
    if (cmd->count("--delta")) cfg.delta = f.delta;
    if (cmd->count("--radius")) cfg.radius = f.radius;
    if (cmd->count("--knn")) cfg.knn = f.knn;
    if (cmd->count("--eta")) cfg.noise_levels = f.etas;
    if (cmd->count("--alpha")) cfg.alpha_override = f.alpha;
    if (cmd->count("--beta")) cfg.beta_override = f.beta;
    if (cmd->count("--seed")) cfg.seed = f.seed;
    if (cmd->count("--out")) cfg.out_dir = f.out;
    if (cmd->count("--data")) cfg.data_path = f.data;
    return cfg;
}

int run_circulant(const experiment_config& cfg) {
    const circulant_report rep = exp_circulant(cfg);
    if (!cfg.out_dir.empty()) write_circulant_outputs(rep, cfg.out_dir);

    std::printf("inverse filtering on C(%d, Q), %d trials, %d iterations\n", cfg.n,
                cfg.trials, cfg.iterations);
    std::printf("%-8s %10s %10s %10s %8s %6s %9s\n", "method", "E(1)", "E(2)", "E(5)",
                "rate", "m@1e-3", "status");
    bool all_diverged = true;
    for (const auto& ms : rep.methods) {
        const auto e = [&](int m) {
            return m < static_cast<int>(ms.mean_error.size()) ? ms.mean_error[m] : 0.0;
        };
        std::printf("%-8s %10.4f %10.4f %10.4f %8.4f %6d %9s\n", ms.name.c_str(), e(1),
                    e(2), e(5), ms.rate, ms.iterations_to_tol,
                    ms.diverged ? "diverged" : "ok");
        all_diverged = all_diverged && ms.diverged;
    }
    if (!cfg.out_dir.empty())
        std::printf("tables written to %s\n", cfg.out_dir.c_str());
    return all_diverged ? exit_divergence : exit_ok;
}

int run_denoise_experiment(const experiment_config& cfg) {
    const denoise_report rep = cfg.experiment == "temperature" ? exp_temperature(cfg)
                                                               : exp_timevarying(cfg);
    if (!cfg.out_dir.empty()) write_denoise_outputs(rep, cfg.out_dir);

    if (rep.synthetic_data)
        std::printf("note: no --data supplied; running on the synthetic table\n");
    bool all_diverged = true, any_row = false;
    for (const auto& block : rep.blocks) {
        std::printf("eta = %g, ISNR = %.4f dB\n", block.eta, block.isnr);
        std::printf("  %-8s %-9s", "method", "mode");
        for (int m : rep.snr_marks) std::printf("  SNR(%d)", m);
        std::printf("  SNR(inf)\n");
        for (const auto& row : block.rows) {
            std::printf("  %-8s %-9s", row.method.c_str(), row.mode.c_str());
            for (double v : row.snr_at) std::printf(" %7.4f", v);
            std::printf("   %7.4f%s\n", row.snr_inf, row.diverged ? "  (diverged)" : "");
            all_diverged = all_diverged && row.diverged;
            any_row = true;
        }
    }
    if (!cfg.out_dir.empty())
        std::printf("tables written to %s\n", cfg.out_dir.c_str());
    return (any_row && all_diverged) ? exit_divergence : exit_ok;
}

// filter: y = h(L_sym(C(n,Q))) x for a signal from --data.
int run_filter(int n, const std::vector<int>& gens, const std::string& filter_json,
               const std::string& data, const std::string& out) {
    shift_family f = make_circulant_lsym_family(n, gens);
    poly_coeffs h = filter_json.empty() ? benchmark_filter() : load_poly_filter(filter_json);
    if (static_cast<int>(h.degrees.size()) != f.dims())
        throw std::invalid_argument("filter arity does not match the shift family");
    const Eigen::VectorXd x = read_signal_csv(data);
    if (x.size() != n)
        throw std::invalid_argument("signal length " + std::to_string(x.size()) +
                                    " does not match --n " + std::to_string(n));
    filter_cost cost;
    const Eigen::VectorXd y = apply(h, f, x, &cost);
    if (out.empty())
        for (Eigen::Index i = 0; i < y.size(); ++i) std::printf("%.17g\n", y[i]);
    else {
        write_signal_csv(y, out);
        std::printf("filtered signal written to %s (%lld multiplies)\n", out.c_str(),
                    static_cast<long long>(cost.multiplies));
    }
    return exit_ok;
}

// inverse: solve h(L_sym) x = b iteratively; b from --data or synthesized
// from a random ground truth so relative errors are reportable.
int run_inverse(int n, const std::vector<int>& gens, const std::string& filter_json,
                std::string method, int degree, int iterations, std::uint64_t seed,
                const std::string& data, const std::string& out) {
    shift_family f = make_circulant_lsym_family(n, gens);
    poly_coeffs h = filter_json.empty() ? benchmark_filter() : load_poly_filter(filter_json);
    if (static_cast<int>(h.degrees.size()) != f.dims())
        throw std::invalid_argument("filter arity does not match the shift family");
    if (method == "iopa" || method == "icpa") method += std::to_string(degree);

    Eigen::VectorXd b;
    std::optional<Eigen::VectorXd> truth;
    if (data.empty()) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> unif(-1.0, 1.0);
        Eigen::VectorXd x(n);
        for (int i = 0; i < n; ++i) x[i] = unif(rng);
        truth = x;
        b = apply(h, f, x);
        std::printf("note: no --data supplied; solving b = H x for a random x\n");
    } else {
        b = read_signal_csv(data);
        if (b.size() != n)
            throw std::invalid_argument("signal length " + std::to_string(b.size()) +
                                        " does not match --n " + std::to_string(n));
    }

    solve_options opt;
    opt.max_iterations = iterations;
    if (truth) opt.truth = &*truth;
    solve_trace tr;
    if (method == "arma") {
        std::vector<double> taps(h.coeffs.data(), h.coeffs.data() + h.coeffs.size());
        tr = arma_solve(taps, f.shifts[0], b, opt);
    } else if (method == "gd0") {
        const auto [lo, hi] = spectral_range(h, compute_joint_spectrum(f));
        tr = gd0_solve([&](const Eigen::VectorXd& v) { return apply(h, f, v); }, b,
                       2.0 / (lo + hi), opt);
    } else if (method.rfind("iopa", 0) == 0) {
        tr = iopa_solve(h, f, b, std::stoi(method.substr(4)), opt);
    } else if (method.rfind("icpa", 0) == 0) {
        tr = icpa_solve(h, f, b, std::stoi(method.substr(4)), opt);
    } else {
        throw std::invalid_argument("unknown method '" + method + "'");
    }

    std::printf("%s: %d iterations, final residual %.3e%s%s\n", tr.method.c_str(),
                tr.iterations, tr.residuals.back(),
                tr.reached_tol ? ", tolerance reached" : "",
                tr.diverged ? ", DIVERGED" : "");
    if (!tr.rel_errors.empty())
        std::printf("final relative error vs ground truth: %.3e\n", tr.rel_errors.back());
    if (!out.empty()) {
        detail::ensure_dir(out);
        write_signal_csv(tr.x, out + "/solution.csv");
        write_trace(tr, out + "/trace_" + tr.method + ".csv");
        std::printf("solution and trace written to %s\n", out.c_str());
    }
    return tr.diverged ? exit_divergence : exit_ok;
}

// spectrum: analytic eigenvalues of L_sym(C(n,Q)) in frequency order.
int run_spectrum(int n, const std::vector<int>& gens, const std::string& out) {
    const Eigen::VectorXd lam = circulant_lsym_spectrum(n, gens);
    if (out.empty()) {
        std::printf("frequency,lambda\n");
        for (Eigen::Index i = 0; i < lam.size(); ++i) std::printf("%lld,%.17g\n",
                                                                  static_cast<long long>(i),
                                                                  lam[i]);
    } else {
        detail::ensure_dir(out);
        std::ofstream file(out + "/spectrum.csv");
        if (!file) throw std::runtime_error("cannot open " + out + "/spectrum.csv");
        file.precision(17);
        file << "frequency,lambda\n";
        for (Eigen::Index i = 0; i < lam.size(); ++i) file << i << "," << lam[i] << "\n";
        std::printf("spectrum written to %s/spectrum.csv\n", out.c_str());
    }
    return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"polynomial graph filters of commutative shifts: experiments and tools"};
    app.require_subcommand(1);

    exp_flags circ, tv, temp;
    CLI::App* c_circ =
        app.add_subcommand("exp-circulant", "average-error benchmark on C(n, Q)");
    add_common_options(c_circ, circ);
    CLI::App* c_tv = app.add_subcommand(
        "exp-timevarying", "denoise a simulated time-varying signal on a product graph");
    add_common_options(c_tv, tv);
    CLI::App* c_temp = app.add_subcommand(
        "exp-temperature", "denoise an hourly temperature table (CSV or synthetic)");
    add_common_options(c_temp, temp);

    int n = 1000, degree = 1, iterations = 50;
    std::vector<int> gens = {1, 2, 5};
    std::string filter_json, data, out, method = "iopa1";
    std::uint64_t seed = 1;

    CLI::App* c_filter =
        app.add_subcommand("filter", "apply a polynomial filter of L_sym(C(n, Q))");
    c_filter->add_option("--n", n, "vertex count")->capture_default_str();
    c_filter->add_option("--generators", gens, "generating set")->delimiter(',');
    c_filter->add_option("--config", filter_json, "filter coefficients JSON")
        ->check(CLI::ExistingFile);
    c_filter->add_option("--data", data, "input signal, one value per line")
        ->required()
        ->check(CLI::ExistingFile);
    c_filter->add_option("--out", out, "output file (stdout when omitted)");

    CLI::App* c_inv = app.add_subcommand(
        "inverse", "inverse filtering b -> H^{-1} b by iterative approximation");
    c_inv->add_option("--n", n, "vertex count")->capture_default_str();
    c_inv->add_option("--generators", gens, "generating set")->delimiter(',');
    c_inv->add_option("--config", filter_json, "filter coefficients JSON")
        ->check(CLI::ExistingFile);
    c_inv->add_option("--method", method, "arma | gd0 | iopaL | icpaK")
        ->capture_default_str();
    c_inv->add_option("--degree", degree, "degree when --method is iopa or icpa")
        ->capture_default_str();
    c_inv->add_option("--iterations", iterations, "iteration budget")
        ->capture_default_str();
    c_inv->add_option("--seed", seed, "seed for the synthetic ground truth")
        ->capture_default_str();
    c_inv->add_option("--data", data, "observation b, one value per line")
        ->check(CLI::ExistingFile);
    c_inv->add_option("--out", out, "output directory for solution and trace");

    CLI::App* c_spec =
        app.add_subcommand("spectrum", "analytic spectrum of L_sym(C(n, Q))");
    c_spec->add_option("--n", n, "vertex count")->capture_default_str();
    c_spec->add_option("--generators", gens, "generating set")->delimiter(',');
    c_spec->add_option("--out", out, "output directory (stdout when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints usage or the parse error
        return code == 0 ? exit_ok : exit_precondition;
    }

    try {
        if (c_circ->parsed())
            return run_circulant(build_config(c_circ, circ, "circulant", 1000));
        if (c_tv->parsed())
            return run_denoise_experiment(build_config(c_tv, tv, "timevarying", 512));
        if (c_temp->parsed())
            return run_denoise_experiment(build_config(c_temp, temp, "temperature", 218));
        if (c_filter->parsed()) return run_filter(n, gens, filter_json, data, out);
        if (c_inv->parsed())
            return run_inverse(n, gens, filter_json, method, degree, iterations, seed,
                               data, out);
        if (c_spec->parsed()) return run_spectrum(n, gens, out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_precondition;
    }
    return exit_precondition;  // unreachable: a subcommand is required
}
