#pragma once

// Experiment drivers behind the CLI: the circulant inverse-filtering
// benchmark with its full method zoo, Tikhonov denoising of a simulated
// time-varying signal on a path x geometric-graph Cartesian product, and
// denoising of an hourly temperature table on a circulant x k-NN product.
// Every driver is deterministic given (config, seed); the CSV outputs carry
// no timing data, so reruns are byte-identical.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Dense>
#include <json.hpp>

#include "polyshift/graph.hpp"
#include "polyshift/inverse.hpp"
#include "polyshift/polyfilter.hpp"
#include "polyshift/shift.hpp"
#include "polyshift/spectrum.hpp"

namespace polyshift {

inline constexpr const char* library_version = "1.0.0";

// ---------------------------------------------------------------------------
// Configuration

/// Everything a run needs. A run is reproducible from (config, seed): random
/// graphs, signals and noise are all drawn from streams derived from `seed`.
struct experiment_config {
    std::string experiment = "circulant";     ///< circulant | timevarying | temperature
    int n = 1000;                             ///< vertex count of the spatial graph
    std::vector<int> generators = {1, 2, 5};  ///< circulant generating set
    std::vector<std::string> methods;         ///< empty = experiment default
    int trials = 100;
    std::uint64_t seed = 1;
    std::vector<double> noise_levels;         ///< empty = experiment default
    int iterations = 20;                      ///< iteration budget M
    int time_steps = 24;                      ///< snapshots M (timevarying/temperature)
    double delta = 0.1;                       ///< time-discretization step
    double radius = 1.0 / 16.0;               ///< geometric-graph connection radius
    int knn = 5;                              ///< temperature-graph neighbor count
    double alpha_override = -1.0;             ///< >= 0 replaces the data-driven alpha
    double beta_override = -1.0;              ///< >= 0 replaces the data-driven beta
    std::string out_dir;                      ///< empty = write no files
    std::string data_path;                    ///< temperature CSV ("" = synthetic)
};

inline nlohmann::json to_json(const experiment_config& c) {
    return nlohmann::json{{"experiment", c.experiment},
                          {"n", c.n},
                          {"generators", c.generators},
                          {"methods", c.methods},
                          {"trials", c.trials},
                          {"seed", c.seed},
                          {"noise_levels", c.noise_levels},
                          {"iterations", c.iterations},
                          {"time_steps", c.time_steps},
                          {"delta", c.delta},
                          {"radius", c.radius},
                          {"knn", c.knn},
                          {"alpha_override", c.alpha_override},
                          {"beta_override", c.beta_override},
                          {"out_dir", c.out_dir},
                          {"data_path", c.data_path}};
}

/// Missing keys keep their defaults, so partial configs are valid.
inline experiment_config config_from_json(const nlohmann::json& j) {
    experiment_config c;
    c.experiment = j.value("experiment", c.experiment);
    c.n = j.value("n", c.n);
    c.generators = j.value("generators", c.generators);
    c.methods = j.value("methods", c.methods);
    c.trials = j.value("trials", c.trials);
    c.seed = j.value("seed", c.seed);
    c.noise_levels = j.value("noise_levels", c.noise_levels);
    c.iterations = j.value("iterations", c.iterations);
    c.time_steps = j.value("time_steps", c.time_steps);
    c.delta = j.value("delta", c.delta);
    c.radius = j.value("radius", c.radius);
    c.knn = j.value("knn", c.knn);
    c.alpha_override = j.value("alpha_override", c.alpha_override);
    c.beta_override = j.value("beta_override", c.beta_override);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.data_path = j.value("data_path", c.data_path);
    return c;
}

inline experiment_config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_config: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return config_from_json(j);
}

namespace detail {

/// Decorrelated per-trial RNG stream (splitmix-style stride on the seed).
inline std::mt19937_64 trial_rng(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t trial) {
    return std::mt19937_64(seed + 0x9e3779b97f4a7c15ULL * (stream + 1) +
                           0xbf58476d1ce4e5b9ULL * (trial + 1));
}

inline Eigen::VectorXd uniform_vector(std::mt19937_64& rng, Eigen::Index n, double lo,
                                      double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(rng);
    return v;
}

/// Kahan-compensated accumulator, so trial means are order-independent in
/// practice (to roundoff) and stable for long runs.
class kahan_sum {
  public:
    void add(double v) {
        const double y = v - c_;
        const double t = s_ + y;
        c_ = (t - s_) - y;
        s_ = t;
    }
    double value() const { return s_; }

  private:
    double s_ = 0.0, c_ = 0.0;
};

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw std::runtime_error("cannot create output directory " + dir + ": " +
                                 ec.message());
}

inline std::ofstream open_out(const std::string& dir, const std::string& name) {
    const std::string path = (std::filesystem::path(dir) / name).string();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.precision(10);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Circulant inverse-filtering benchmark

/// The benchmark filter h_1(t) = (9/4 - t)(3 + t) as coefficients in t.
inline poly_coeffs benchmark_filter() {
    return poly_coeffs::univariate({27.0 / 4.0, -3.0 / 4.0, -1.0});
}

/// Aggregated outcome of one method over all trials of the circulant run.
struct method_summary {
    std::string name;
    std::vector<double> mean_error;  ///< mean E(m, x) over trials, m = 0..M
    double rate = 0.0;               ///< per-trial fitted exponential rate, averaged
    double contraction = 0.0;        ///< sup_i |1 - g h| over the spectrum (NaN for arma)
    int iterations_to_tol = -1;      ///< first m with mean E(m) <= 1e-3, -1 if never
    bool diverged = false;           ///< contraction >= 1 or mean error never decayed
    double wallclock_sec = 0.0;      ///< total solver time across trials
    solve_trace first_trace;         ///< trace of trial 0, for trace_<method>.csv
};

struct circulant_report {
    experiment_config config;
    std::vector<method_summary> methods;
    double gamma = 0.0;              ///< optimal gradient step 2/(min+max filter eigenvalue)
    double wallclock_sec = 0.0;
};

namespace detail {

struct method_spec {
    enum class kind_t { arma, gd0, iopa, icpa } kind;
    int degree = 0;
};

inline method_spec parse_method(const std::string& name) {
    if (name == "arma") return {method_spec::kind_t::arma, 0};
    if (name == "gd0") return {method_spec::kind_t::gd0, 0};
    auto tail_degree = [&](std::size_t p) {
        const std::string t = name.substr(p);
        if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos)
            throw std::invalid_argument("unknown method '" + name + "'");
        return std::stoi(t);
    };
    if (name.rfind("iopa", 0) == 0) return {method_spec::kind_t::iopa, tail_degree(4)};
    if (name.rfind("icpa", 0) == 0) return {method_spec::kind_t::icpa, tail_degree(4)};
    throw std::invalid_argument("unknown method '" + name + "'");
}

/// Pads a trace's relative errors to length m_max + 1 by repeating the last
/// recorded value (runs can stop early on exact zero or on blow-up).
inline double padded_rel_error(const solve_trace& tr, int m) {
    if (tr.rel_errors.empty()) throw std::logic_error("trace carries no relative errors");
    const std::size_t i = std::min<std::size_t>(m, tr.rel_errors.size() - 1);
    return tr.rel_errors[i];
}

}  // namespace detail

/// @brief Average relative-iteration-error benchmark for inverse filtering
/// b -> H_1^{-1} b on C(n, Q): per trial draws x ~ Uniform[-1,1]^n, observes
/// b = H_1 x, and runs every requested method for `iterations` rounds.
/// Approximants are constructed once and shared across trials.
inline circulant_report exp_circulant(const experiment_config& cfg) {
    const auto t_start = std::chrono::steady_clock::now();
    circulant_report rep;
    rep.config = cfg;
    if (cfg.trials < 1) throw std::invalid_argument("exp_circulant: trials must be >= 1");
    if (cfg.iterations < 1)
        throw std::invalid_argument("exp_circulant: iterations must be >= 1");

    shift_family f = make_circulant_lsym_family(cfg.n, cfg.generators);
    const poly_coeffs h1 = benchmark_filter();
    const joint_spectrum& js = compute_joint_spectrum(f);
    const auto [fmin, fmax] = spectral_range(h1, js);
    rep.gamma = 2.0 / (fmin + fmax);
    const double lam_max = js.lambda.col(0).cwiseAbs().maxCoeff();

    std::vector<std::string> names = cfg.methods;
    if (names.empty())
        names = {"arma",  "gd0",   "iopa0", "iopa1", "iopa2", "iopa3", "iopa4",
                 "iopa5", "icpa0", "icpa1", "icpa2", "icpa3", "icpa4", "icpa5"};

    struct runner {
        std::string name;
        detail::method_spec spec;
        std::optional<approximant> g;  ///< not used by arma
        double contraction = 0.0;
    };
    std::vector<runner> runners;
    const std::vector<double> h1_taps = {27.0 / 4.0, -3.0 / 4.0, -1.0};
    for (const std::string& name : names) {
        runner r;
        r.name = name;
        r.spec = detail::parse_method(name);
        switch (r.spec.kind) {
            case detail::method_spec::kind_t::arma: {
                // Per-eigenvalue rate of the elementary recursions:
                // max_k |b_k| * max_i |lambda_i|.
                pf_decomposition pf = partial_fractions(h1_taps);
                double bmax = 0.0;
                for (Eigen::Index k = 0; k < pf.b.size(); ++k)
                    bmax = std::max(bmax, std::abs(pf.b[k]));
                r.contraction = bmax * lam_max;
                break;
            }
            case detail::method_spec::kind_t::gd0:
                r.g = approximant::scaled_identity(rep.gamma);
                break;
            case detail::method_spec::kind_t::iopa: {
                auto [g, a_l] = optimal_poly(h1, js, r.spec.degree);
                (void)a_l;
                r.g = approximant::polynomial(std::move(g),
                                              "iopa-" + std::to_string(r.spec.degree));
                break;
            }
            case detail::method_spec::kind_t::icpa: {
                cheb_coeffs c = chebyshev_coeffs(h1, 1, r.spec.degree);
                r.g = approximant::chebyshev(std::move(c),
                                             "icpa-" + std::to_string(r.spec.degree));
                break;
            }
        }
        if (r.g) r.contraction = spectral_contraction(h1, *r.g, js);
        runners.push_back(std::move(r));
    }

    const int mm = cfg.iterations;
    std::vector<std::vector<detail::kahan_sum>> err_acc(
        runners.size(), std::vector<detail::kahan_sum>(mm + 1));
    std::vector<detail::kahan_sum> rate_acc(runners.size());
    std::vector<int> rate_count(runners.size(), 0);
    std::vector<double> wall(runners.size(), 0.0);
    rep.methods.resize(runners.size());

    linear_op h_op = [&](const Eigen::VectorXd& v) { return apply(h1, f, v); };
    for (int trial = 0; trial < cfg.trials; ++trial) {
        std::mt19937_64 rng = detail::trial_rng(cfg.seed, 0, trial);
        const Eigen::VectorXd x = detail::uniform_vector(rng, cfg.n, -1.0, 1.0);
        const Eigen::VectorXd b = apply(h1, f, x);
        solve_options opt;
        opt.max_iterations = mm;
        opt.tol = 0.0;  // run the full budget; the table wants every m
        opt.truth = &x;
        for (std::size_t r = 0; r < runners.size(); ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            solve_trace tr;
            if (runners[r].spec.kind == detail::method_spec::kind_t::arma)
                tr = arma_solve(h1_taps, f.shifts[0], b, opt);
            else
                tr = iterative_approx(h_op, runners[r].g->as_op(f), b, opt,
                                      runners[r].name);
            wall[r] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                           .count();
            for (int m = 0; m <= mm; ++m)
                err_acc[r][m].add(detail::padded_rel_error(tr, m));
            try {
                rate_acc[r].add(fit_rate(tr));
                ++rate_count[r];
            } catch (const std::invalid_argument&) {
                // too few samples above the noise floor; skip this trial's fit
            }
            if (trial == 0) rep.methods[r].first_trace = std::move(tr);
        }
    }

    for (std::size_t r = 0; r < runners.size(); ++r) {
        method_summary& ms = rep.methods[r];
        ms.name = runners[r].name;
        ms.contraction = runners[r].contraction;
        ms.wallclock_sec = wall[r];
        ms.mean_error.resize(mm + 1);
        for (int m = 0; m <= mm; ++m) ms.mean_error[m] = err_acc[r][m].value() / cfg.trials;
        ms.rate = rate_count[r] > 0 ? rate_acc[r].value() / rate_count[r]
                                    : std::numeric_limits<double>::quiet_NaN();
        for (int m = 0; m <= mm; ++m)
            if (ms.mean_error[m] <= 1e-3) {
                ms.iterations_to_tol = m;
                break;
            }
        ms.diverged = runners[r].contraction >= 1.0 ||
                      ms.mean_error.back() >= ms.mean_error.front();
    }
    rep.wallclock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return rep;
}

// ---------------------------------------------------------------------------
// Time-varying signal simulation (vertex-domain heat-like evolution)

/// @brief Snapshots x(t_1..t_M) of the second-order recurrence
/// x(t_i) = (2I + delta^2 P) x(t_{i-1}) - x(t_{i-2}), 2 <= i <= M, with the
/// trivial boundary extension x(t_0) = x(t_1). Column j holds x(t_{j+1}).
inline Eigen::MatrixXd simulate_timevarying(const sparse_mat& p, const Eigen::VectorXd& x1,
                                            int time_steps, double delta) {
    if (!(delta > 0.0))
        throw std::invalid_argument("simulate_timevarying: delta must be positive");
    if (time_steps < 1)
        throw std::invalid_argument("simulate_timevarying: need at least one snapshot");
    if (p.rows() != p.cols() || p.rows() != x1.size())
        throw std::invalid_argument("simulate_timevarying: operator/signal size mismatch");
    Eigen::MatrixXd x(x1.size(), time_steps);
    x.col(0) = x1;
    Eigen::VectorXd prev2 = x1, prev = x1;
    for (int i = 2; i <= time_steps; ++i) {
        Eigen::VectorXd cur = 2.0 * prev + (delta * delta) * (p * prev) - prev2;
        x.col(i - 1) = cur;
        prev2 = std::move(prev);
        prev = std::move(cur);
    }
    return x;
}

/// @brief Blockwise-polynomial snapshot on a graph embedded in [0,1]^2: the
/// square splits into four diagonal strips by i_x + i_y; the first and third
/// strips carry 0.5 - 2 i_x, the second and fourth carry 0.5 + i_x^2 + i_y^2.
inline Eigen::VectorXd strip_initial_signal(const graph& g) {
    if (static_cast<int>(g.coords.size()) != g.n)
        throw std::invalid_argument("strip_initial_signal: graph carries no embedding");
    Eigen::VectorXd v(g.n);
    for (int i = 0; i < g.n; ++i) {
        const double ix = g.coords[i][0], iy = g.coords[i][1];
        const int strip = std::min(3, static_cast<int>(std::floor((ix + iy) / 0.5)));
        v[i] = (strip % 2 == 0) ? 0.5 - 2.0 * ix : 0.5 + ix * ix + iy * iy;
    }
    return v;
}

// ---------------------------------------------------------------------------
// Cartesian-product denoising machinery

/// One product-graph denoising instance: the commuting shift pair, the factor
/// eigenpairs for the closed-form solve, and the raw Laplacians the penalty
/// formulas need. Built once per graph; filters for specific penalty values
/// are cheap to assemble on top.
struct product_instance {
    shift_family family;       ///< {S_1 = I (x) L_vertex, S_2 = temporal (x) I}
    Eigen::MatrixXd v;         ///< vertex-factor eigenvectors (N x N)
    Eigen::VectorXd lam;       ///< vertex-factor eigenvalues
    Eigen::MatrixXd u;         ///< temporal-factor eigenvectors (M x M)
    Eigen::VectorXd mu;        ///< temporal-factor eigenvalues (S_2's scaling included)
    sparse_mat l_vertex;       ///< L_sym of the spatial graph
    sparse_mat l_temporal;     ///< raw temporal Laplacian (path) or L_sym (circulant)
    int n = 0;                 ///< vertices per snapshot
    int m = 0;                 ///< snapshots
};

namespace detail {

inline product_instance make_product_instance(sparse_mat l_vertex, sparse_mat temporal_s2) {
    product_instance inst;
    inst.n = static_cast<int>(l_vertex.rows());
    inst.m = static_cast<int>(temporal_s2.rows());
    inst.l_vertex = l_vertex;
    std::vector<shift> shifts;
    shifts.push_back(kron_lift(l_vertex, kron_side::right, inst.m));
    shifts.push_back(kron_lift(temporal_s2, kron_side::left, inst.n));
    inst.family = make_family(std::move(shifts));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_v{Eigen::MatrixXd(l_vertex)};
    if (es_v.info() != Eigen::Success)
        throw std::runtime_error("product instance: vertex eigensolve failed");
    inst.v = es_v.eigenvectors();
    inst.lam = es_v.eigenvalues();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_u{Eigen::MatrixXd(temporal_s2)};
    if (es_u.info() != Eigen::Success)
        throw std::runtime_error("product instance: temporal eigensolve failed");
    inst.u = es_u.eigenvectors();
    inst.mu = es_u.eigenvalues();
    return inst;
}

}  // namespace detail

/// @brief Instance for the simulated time-varying signal: S_1 = I (x) L_sym(G)
/// and S_2 = (1/2) L_T (x) I over the path graph on `time_steps` snapshots.
inline product_instance make_timevarying_instance(const graph& g, int time_steps) {
    product_instance inst = detail::make_product_instance(
        sym_normalized_laplacian(g), sparse_mat(0.5 * laplacian(build_path(time_steps))));
    inst.l_temporal = laplacian(build_path(time_steps));
    return inst;
}

/// @brief Instance for the hourly temperature table: S_1 = I (x) L_sym(W) and
/// S_2 = L_sym(C(hours, {1})) (x) I.
inline product_instance make_temperature_instance(const graph& w, int hours) {
    sparse_mat l_c = sym_normalized_laplacian(build_circulant(hours, {1}));
    product_instance inst =
        detail::make_product_instance(sym_normalized_laplacian(w), l_c);
    inst.l_temporal = l_c;
    return inst;
}

/// @brief Symbol of the regularized operator D_{alpha,beta} = I + alpha S_1
/// + beta (delta^{-2} L_T (x) I + I (x) p(L_sym)) as a bivariate polynomial
/// h(t1, t2) = 1 + alpha t1 + beta p(t1) + 2 beta delta^{-2} t2 in the shifts
/// S_1 and S_2 = (1/2) L_T (x) I.
inline poly_coeffs timevarying_filter(const poly_coeffs& p, double delta, double alpha,
                                      double beta) {
    if (p.degrees.size() != 1)
        throw std::invalid_argument("timevarying_filter: p must be univariate");
    if (!(delta > 0.0))
        throw std::invalid_argument("timevarying_filter: delta must be positive");
    const int dp = std::max(1, p.degrees[0]);
    poly_coeffs h = poly_coeffs::zeros({dp, 1});
    h.at({0, 0}) = 1.0;
    h.at({1, 0}) = alpha;
    for (int l = 0; l <= p.degrees[0]; ++l) h.at({l, 0}) += beta * p.at({l});
    h.at({0, 1}) = 2.0 * beta / (delta * delta);
    return h;
}

/// Symbol of F = I + alpha S~_1 + beta S~_2 for the temperature instance.
inline poly_coeffs temperature_filter(double alpha, double beta) {
    poly_coeffs h = poly_coeffs::zeros({1, 1});
    h.at({0, 0}) = 1.0;
    h.at({1, 0}) = alpha;
    h.at({0, 1}) = beta;
    return h;
}

/// Positive-definiteness certificate: the minimum of a bivariate symbol over
/// a uniform grid on [0,2]^2, which contains the joint spectrum of both
/// product instances used here.
struct pd_certificate {
    bool positive = false;
    double min_value = 0.0;
    double arg1 = 0.0, arg2 = 0.0;
};

inline pd_certificate certify_positive(const poly_coeffs& h, int grid_n = 201) {
    if (h.degrees.size() != 2)
        throw std::invalid_argument("certify_positive: symbol must be bivariate");
    if (grid_n < 2) throw std::invalid_argument("certify_positive: grid too small");
    pd_certificate cert;
    cert.min_value = std::numeric_limits<double>::infinity();
    Eigen::VectorXd t(2);
    for (int i = 0; i < grid_n; ++i)
        for (int j = 0; j < grid_n; ++j) {
            t[0] = 2.0 * i / (grid_n - 1);
            t[1] = 2.0 * j / (grid_n - 1);
            const double v = h.eval(t);
            if (v < cert.min_value) {
                cert.min_value = v;
                cert.arg1 = t[0];
                cert.arg2 = t[1];
            }
        }
    cert.positive = cert.min_value > 0.0;
    return cert;
}

/// Penalty constants for one noise level.
struct penalty_pair {
    double alpha = 0.0;
    double beta = 0.0;
};

namespace detail {

/// vec(X)^T (I (x) A) vec(X) = sum of X .* (A X) for column-stacked X.
inline double vertex_quad(const Eigen::MatrixXd& x, const sparse_mat& a) {
    return (x.cwiseProduct(a * x)).sum();
}

/// vec(X)^T (B (x) I) vec(X) = sum of X .* (X B) for symmetric B.
inline double temporal_quad(const Eigen::MatrixXd& x, const sparse_mat& b) {
    return (x.cwiseProduct(x * Eigen::MatrixXd(b))).sum();
}

}  // namespace detail

/// @brief Noise-balanced penalties for the time-varying instance with noise
/// Uniform[-eta, eta]: alpha = (MN eta^2/3) / (X^T (I (x) L_sym) X + MN eta^2/3)
/// and beta = (MN eta^2/3) / (2 [X^T Q X + (eta^2/3) tr Q]) with
/// Q = delta^{-2} L_T (x) I + I (x) P. A nonpositive denominator (P is not
/// positive semidefinite) zeroes that penalty with a notice.
inline penalty_pair timevarying_penalties(const Eigen::MatrixXd& x, const sparse_mat& l_sym,
                                          const sparse_mat& l_t, const sparse_mat& p,
                                          double delta, double eta) {
    if (!(eta >= 0.0))
        throw std::invalid_argument("timevarying_penalties: eta must be nonnegative");
    penalty_pair out;
    if (eta == 0.0) return out;
    const double n = static_cast<double>(x.rows());
    const double m = static_cast<double>(x.cols());
    const double noise_energy = m * n * eta * eta / 3.0;
    const double den_a = detail::vertex_quad(x, l_sym) + noise_energy;
    if (den_a > 0.0)
        out.alpha = noise_energy / den_a;
    else
        std::cerr << "[polyshift] notice: vertex penalty denominator " << den_a
                  << " is not positive; alpha set to 0\n";
    const double inv_d2 = 1.0 / (delta * delta);
    double tr_q = 0.0;
    for (int i = 0; i < l_t.outerSize(); ++i)
        for (sparse_mat::InnerIterator it(l_t, i); it; ++it)
            if (it.row() == it.col()) tr_q += inv_d2 * n * it.value();
    for (int i = 0; i < p.outerSize(); ++i)
        for (sparse_mat::InnerIterator it(p, i); it; ++it)
            if (it.row() == it.col()) tr_q += m * it.value();
    const double quad_q =
        inv_d2 * detail::temporal_quad(x, l_t) + detail::vertex_quad(x, p);
    const double den_b = 2.0 * (quad_q + eta * eta / 3.0 * tr_q);
    if (den_b > 0.0)
        out.beta = noise_energy / den_b;
    else
        std::cerr << "[polyshift] notice: temporal penalty denominator " << den_b
                  << " is not positive; beta set to 0\n";
    return out;
}

/// @brief Penalties for the temperature instance: with tr(S~_k) = MN both
/// reduce to (MN eta^2/3) / (W^T S~_k W + MN eta^2/3).
inline penalty_pair temperature_penalties(const Eigen::MatrixXd& w, const sparse_mat& l_w,
                                          const sparse_mat& l_c, double eta) {
    if (!(eta >= 0.0))
        throw std::invalid_argument("temperature_penalties: eta must be nonnegative");
    penalty_pair out;
    if (eta == 0.0) return out;
    const double noise_energy =
        static_cast<double>(w.rows()) * static_cast<double>(w.cols()) * eta * eta / 3.0;
    const double den_a = detail::vertex_quad(w, l_w) + noise_energy;
    const double den_b = detail::temporal_quad(w, l_c) + noise_energy;
    if (den_a > 0.0)
        out.alpha = noise_energy / den_a;
    else
        std::cerr << "[polyshift] notice: vertex penalty denominator " << den_a
                  << " is not positive; alpha set to 0\n";
    if (den_b > 0.0)
        out.beta = noise_energy / den_b;
    else
        std::cerr << "[polyshift] notice: temporal penalty denominator " << den_b
                  << " is not positive; beta set to 0\n";
    return out;
}

/// @brief Exact solve of h(S_1, S_2) vec(Xhat) = vec(B) through the factor
/// eigenbases: Xhat = V [ (V^T B U) ./ h(lambda_i, mu_t) ] U^T. Never forms
/// the product operator, so it scales to the full instances.
inline Eigen::MatrixXd kron_spectral_solve(const product_instance& inst,
                                           const poly_coeffs& h, const Eigen::MatrixXd& b) {
    if (b.rows() != inst.n || b.cols() != inst.m)
        throw std::invalid_argument("kron_spectral_solve: observation shape mismatch");
    Eigen::MatrixXd c = inst.v.transpose() * b * inst.u;
    Eigen::VectorXd t(2);
    for (int i = 0; i < inst.n; ++i)
        for (int j = 0; j < inst.m; ++j) {
            t[0] = inst.lam[i];
            t[1] = inst.mu[j];
            const double div = h.eval(t);
            if (std::abs(div) < 1e-14)
                throw std::runtime_error(
                    "kron_spectral_solve: symbol vanishes on the joint spectrum");
            c(i, j) /= div;
        }
    return inst.v * c * inst.u.transpose();
}

/// Signal-to-noise ratio -20 log10(||est - truth||_F / ||truth||_F) in dB.
inline double snr_db(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth) {
    const double tn = truth.norm();
    if (!(tn > 0.0)) throw std::invalid_argument("snr_db: zero reference signal");
    return -20.0 * std::log10((est - truth).norm() / tn);
}

// ---------------------------------------------------------------------------
// Denoising experiment drivers

/// One (mode, method) row of a denoising table, averaged over trials.
struct denoise_row {
    std::string method;            ///< iopa1 | icpa1 | gd0
    std::string mode;              ///< vertex | temporal | joint
    std::vector<double> snr_at;    ///< mean SNR(m) at the report marks, in dB
    double snr_inf = 0.0;          ///< mean SNR of the closed-form solution
    bool diverged = false;
};

/// Penalties actually used for one mode (after overrides).
struct denoise_mode_info {
    std::string mode;
    double alpha = 0.0;
    double beta = 0.0;
    double pd_min = 0.0;  ///< grid minimum of the symbol (the PD certificate)
};

struct denoise_report {
    experiment_config config;
    bool synthetic_data = false;   ///< temperature only: no CSV was supplied
    std::vector<int> snr_marks;    ///< iteration counts reported per method
    struct eta_block {
        double eta = 0.0;
        double isnr = 0.0;         ///< mean input SNR over trials
        std::vector<denoise_mode_info> modes;
        std::vector<denoise_row> rows;
    };
    std::vector<eta_block> blocks;
    solve_trace first_trace;       ///< joint-mode trace of the first method, trial 0
    double wallclock_sec = 0.0;
};

namespace detail {

/// Shared trial loop of both denoising experiments: for each noise level,
/// derive (or override) penalties, certify the symbol, and average ISNR and
/// per-method SNR(m) over trials. `x` is the clean N x M signal grid.
inline denoise_report run_denoise(const experiment_config& cfg, const product_instance& inst,
                                  const Eigen::MatrixXd& x,
                                  const std::function<poly_coeffs(double, double)>& symbol,
                                  const std::function<penalty_pair(double)>& penalties,
                                  const std::vector<double>& default_etas) {
    const auto t_start = std::chrono::steady_clock::now();
    if (cfg.trials < 1) throw std::invalid_argument("denoise: trials must be >= 1");
    denoise_report rep;
    rep.config = cfg;
    rep.snr_marks = {1, 2, 4, 6};
    const int mm = std::max(cfg.iterations, rep.snr_marks.back());

    std::vector<std::string> methods = cfg.methods;
    if (methods.empty()) methods = {"iopa1", "icpa1", "gd0"};
    std::vector<double> etas = cfg.noise_levels.empty() ? default_etas : cfg.noise_levels;

    const joint_spectrum& js = compute_joint_spectrum(inst.family);
    const Eigen::VectorXd x_vec = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
    const char* mode_names[3] = {"vertex", "temporal", "joint"};

    for (std::size_t ei = 0; ei < etas.size(); ++ei) {
        const double eta = etas[ei];
        denoise_report::eta_block block;
        block.eta = eta;

        penalty_pair pen = penalties(eta);
        if (cfg.alpha_override >= 0.0) pen.alpha = cfg.alpha_override;
        if (cfg.beta_override >= 0.0) pen.beta = cfg.beta_override;

        struct mode_setup {
            denoise_mode_info info;
            poly_coeffs h;
            std::vector<approximant> gs;   // one per method
            double gamma = 0.0;
        };
        std::vector<mode_setup> modes(3);
        for (int mi = 0; mi < 3; ++mi) {
            mode_setup& ms = modes[mi];
            ms.info.mode = mode_names[mi];
            ms.info.alpha = (mi == 1) ? 0.0 : pen.alpha;
            ms.info.beta = (mi == 0) ? 0.0 : pen.beta;
            ms.h = symbol(ms.info.alpha, ms.info.beta);
            const pd_certificate cert = certify_positive(ms.h);
            ms.info.pd_min = cert.min_value;
            if (!cert.positive)
                throw std::invalid_argument(
                    "denoise: symbol is not positive definite at eta = " +
                    std::to_string(eta) + ", mode " + ms.info.mode +
                    "; grid minimum " + std::to_string(cert.min_value) + " at (" +
                    std::to_string(cert.arg1) + ", " + std::to_string(cert.arg2) + ")");
            const auto [lo, hi] = spectral_range(ms.h, js);
            ms.gamma = 2.0 / (lo + hi);
            for (const std::string& name : methods) {
                const method_spec spec = parse_method(name);
                switch (spec.kind) {
                    case method_spec::kind_t::gd0:
                        ms.gs.push_back(approximant::scaled_identity(ms.gamma));
                        break;
                    case method_spec::kind_t::iopa: {
                        auto [g, a_l] = optimal_poly(ms.h, js, spec.degree);
                        (void)a_l;
                        ms.gs.push_back(approximant::polynomial(
                            std::move(g), "iopa-" + std::to_string(spec.degree)));
                        break;
                    }
                    case method_spec::kind_t::icpa: {
                        cheb_coeffs c = chebyshev_coeffs(ms.h, 2, spec.degree);
                        ms.gs.push_back(approximant::chebyshev(
                            std::move(c), "icpa-" + std::to_string(spec.degree)));
                        break;
                    }
                    case method_spec::kind_t::arma:
                        throw std::invalid_argument(
                            "denoise: the first-order scheme is univariate and does not "
                            "apply to product instances");
                }
            }
            block.modes.push_back(ms.info);
        }

        kahan_sum isnr_acc;
        std::vector<std::vector<kahan_sum>> snr_acc(
            3 * methods.size(), std::vector<kahan_sum>(rep.snr_marks.size()));
        std::vector<kahan_sum> inf_acc(3 * methods.size());
        std::vector<char> any_diverged(3 * methods.size(), 0);

        for (int trial = 0; trial < cfg.trials; ++trial) {
            std::mt19937_64 rng = detail::trial_rng(cfg.seed, 100 + ei, trial);
            Eigen::MatrixXd b = x;
            {
                std::uniform_real_distribution<double> dist(-eta, eta);
                for (Eigen::Index j = 0; j < b.cols(); ++j)
                    for (Eigen::Index i = 0; i < b.rows(); ++i) b(i, j) += dist(rng);
            }
            isnr_acc.add(snr_db(b, x));
            const Eigen::VectorXd b_vec = Eigen::Map<const Eigen::VectorXd>(b.data(), b.size());

            for (int mi = 0; mi < 3; ++mi) {
                const mode_setup& ms = modes[mi];
                const Eigen::MatrixXd xhat = kron_spectral_solve(inst, ms.h, b);
                const double snr_exact = snr_db(xhat, x);
                linear_op h_op = [&](const Eigen::VectorXd& v) {
                    return apply(ms.h, inst.family, v);
                };
                solve_options opt;
                opt.max_iterations = mm;
                opt.tol = 0.0;
                opt.truth = &x_vec;  // SNR measures distance to the clean signal
                for (std::size_t k = 0; k < methods.size(); ++k) {
                    const std::size_t row = mi * methods.size() + k;
                    solve_trace tr = iterative_approx(h_op, ms.gs[k].as_op(inst.family),
                                                      b_vec, opt, methods[k]);
                    for (std::size_t q = 0; q < rep.snr_marks.size(); ++q)
                        snr_acc[row][q].add(-20.0 * std::log10(detail::padded_rel_error(
                                                tr, rep.snr_marks[q])));
                    inf_acc[row].add(snr_exact);
                    any_diverged[row] |= tr.diverged ? 1 : 0;
                    if (trial == 0 && mi == 2 && k == 0) rep.first_trace = std::move(tr);
                }
            }
        }

        block.isnr = isnr_acc.value() / cfg.trials;
        for (int mi = 0; mi < 3; ++mi)
            for (std::size_t k = 0; k < methods.size(); ++k) {
                const std::size_t row = mi * methods.size() + k;
                denoise_row dr;
                dr.method = methods[k];
                dr.mode = mode_names[mi];
                dr.snr_at.resize(rep.snr_marks.size());
                for (std::size_t q = 0; q < rep.snr_marks.size(); ++q)
                    dr.snr_at[q] = snr_acc[row][q].value() / cfg.trials;
                dr.snr_inf = inf_acc[row].value() / cfg.trials;
                dr.diverged = any_diverged[row] != 0;
                block.rows.push_back(std::move(dr));
            }
        rep.blocks.push_back(std::move(block));
    }
    rep.wallclock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return rep;
}

}  // namespace detail

/// @brief Denoising of the simulated time-varying signal: a random geometric
/// graph (n, radius, seed), the strip initial snapshot evolved by
/// P = -I + L_sym/2 for `time_steps` steps of size delta, noise
/// Uniform[-eta, eta], and the regularized solve D_{alpha,beta}^{-1} B run
/// with IOPA1/ICPA1/GD0 in vertex-only, temporal-only, and joint modes.
inline denoise_report exp_timevarying(const experiment_config& cfg) {
    graph g = build_random_geometric(cfg.n, cfg.radius, cfg.seed);
    const poly_coeffs p = poly_coeffs::univariate({-1.0, 0.5});
    sparse_mat l_sym = sym_normalized_laplacian(g);
    sparse_mat id(g.n, g.n);
    id.setIdentity();
    sparse_mat p_mat = sparse_mat(0.5 * l_sym - id);  // P = p(L_sym) = -I + L_sym/2
    const Eigen::MatrixXd x =
        simulate_timevarying(p_mat, strip_initial_signal(g), cfg.time_steps, cfg.delta);

    product_instance inst = make_timevarying_instance(g, cfg.time_steps);
    auto symbol = [&](double a, double b) {
        return timevarying_filter(p, cfg.delta, a, b);
    };
    auto penalties = [&](double eta) {
        return timevarying_penalties(x, inst.l_vertex, inst.l_temporal, p_mat, cfg.delta,
                                     eta);
    };
    return detail::run_denoise(cfg, inst, x, symbol, penalties, {0.75, 0.5, 0.25, 0.125});
}

// ---------------------------------------------------------------------------
// Temperature data

/// A station-by-hour table with station coordinates.
struct temperature_data {
    Eigen::MatrixXd values;                      ///< n stations x hours
    std::vector<std::array<double, 2>> coords;   ///< (lat, lon) per station
    std::vector<std::string> ids;
    bool synthetic = false;
};

/// @brief Reads "station_id,lat,lon,h00..h23" CSV (header row required).
/// Malformed cells are reported with their 1-based row and column.
inline temperature_data load_temperature_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_temperature_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line))
        throw std::runtime_error("load_temperature_csv: " + path + " is empty");
    const int header_cols = 1 + static_cast<int>(std::count(line.begin(), line.end(), ','));
    if (header_cols < 4)
        throw std::runtime_error(
            "load_temperature_csv: header must be station_id,lat,lon,h00..; got " + line);
    const int hours = header_cols - 3;

    temperature_data data;
    std::vector<std::array<double, 2>> coords;
    std::vector<std::vector<double>> rows;
    int row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (static_cast<int>(cells.size()) != header_cols)
            throw std::runtime_error("load_temperature_csv: row " + std::to_string(row_no) +
                                     " has " + std::to_string(cells.size()) +
                                     " cells, expected " + std::to_string(header_cols));
        auto parse_cell = [&](int col) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cells[col], &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != cells[col].size() || cells[col].empty())
                throw std::runtime_error("load_temperature_csv: parse error at row " +
                                         std::to_string(row_no) + ", column " +
                                         std::to_string(col + 1) + ": '" + cells[col] +
                                         "'");
            return v;
        };
        data.ids.push_back(cells[0]);
        coords.push_back({parse_cell(1), parse_cell(2)});
        std::vector<double> vals(hours);
        for (int h = 0; h < hours; ++h) vals[h] = parse_cell(3 + h);
        rows.push_back(std::move(vals));
    }
    if (rows.empty())
        throw std::runtime_error("load_temperature_csv: " + path + " has no data rows");
    data.coords = std::move(coords);
    data.values.resize(static_cast<Eigen::Index>(rows.size()), hours);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (int h = 0; h < hours; ++h) data.values(static_cast<Eigen::Index>(i), h) = rows[i][h];
    return data;
}

/// @brief Synthetic stand-in for the temperature table: stations uniform in
/// [0,1]^2 with a Fahrenheit-scale daily cycle whose amplitude and offset vary
/// smoothly with position, so the field is smooth on a k-NN graph.
inline temperature_data synthetic_temperature(int stations, int hours, std::uint64_t seed) {
    if (stations < 2 || hours < 3)
        throw std::invalid_argument("synthetic_temperature: instance too small");
    temperature_data data;
    data.synthetic = true;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    data.values.resize(stations, hours);
    const double pi = std::acos(-1.0);
    for (int i = 0; i < stations; ++i) {
        const double ix = unit(rng), iy = unit(rng);
        data.coords.push_back({ix, iy});
        data.ids.push_back("synthetic-" + std::to_string(i));
        const double amp = 12.0 * (0.6 + 0.4 * std::sin(pi * ix) * std::sin(pi * iy));
        const double base = 70.0 + 8.0 * std::cos(pi * (ix + iy));
        for (int h = 0; h < hours; ++h)
            data.values(i, h) = base + amp * std::sin(2.0 * pi * (h - 8.0) / hours);
    }
    return data;
}

/// @brief Temperature denoising: 5-NN station graph x hourly circulant,
/// F = I + alpha S~_1 + beta S~_2 with noise-balanced penalties, run for
/// eta in {35, 20, 10} by default. Falls back to a synthetic table (flagged
/// in the report and metadata) when no CSV is supplied.
inline denoise_report exp_temperature(const experiment_config& cfg) {
    temperature_data data = cfg.data_path.empty()
                                ? synthetic_temperature(cfg.n > 0 ? cfg.n : 218,
                                                        cfg.time_steps, cfg.seed)
                                : load_temperature_csv(cfg.data_path);
    const int hours = static_cast<int>(data.values.cols());
    graph w = build_knn(data.coords, cfg.knn);
    if (!is_connected(w))
        throw std::invalid_argument(
            "exp_temperature: k-NN station graph is disconnected; raise --knn");
    product_instance inst = make_temperature_instance(w, hours);
    const Eigen::MatrixXd& x = data.values;
    auto symbol = [](double a, double b) { return temperature_filter(a, b); };
    auto penalties = [&](double eta) {
        return temperature_penalties(x, inst.l_vertex, inst.l_temporal, eta);
    };
    denoise_report rep =
        detail::run_denoise(cfg, inst, x, symbol, penalties, {35.0, 20.0, 10.0});
    rep.synthetic_data = data.synthetic;
    return rep;
}

// ---------------------------------------------------------------------------
// Output writers (CSV + metadata). CSVs carry no timing, so reruns of the
// same (config, seed) produce byte-identical files; wallclock goes to meta.json.

namespace detail {

inline void write_trace_csv(const solve_trace& tr, std::ofstream out) {
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

inline nlohmann::json versions_json() {
    return nlohmann::json{
        {"polyshift", library_version},
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                      std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION)}};
}

}  // namespace detail

/// table.csv: mean E(m) per method; rates.csv: rate/contraction/flags per
/// method; trace_<method>.csv: the trial-0 trace; meta.json: config echo,
/// versions, gamma, wallclock.
inline void write_circulant_outputs(const circulant_report& rep, const std::string& dir) {
    detail::ensure_dir(dir);
    {
        std::ofstream out = detail::open_out(dir, "table.csv");
        out << "m";
        for (const auto& ms : rep.methods) out << "," << ms.name;
        out << "\n";
        const std::size_t rows = rep.methods.empty() ? 0 : rep.methods[0].mean_error.size();
        for (std::size_t m = 0; m < rows; ++m) {
            out << m;
            for (const auto& ms : rep.methods) out << "," << ms.mean_error[m];
            out << "\n";
        }
    }
    {
        std::ofstream out = detail::open_out(dir, "rates.csv");
        out << "method,rate,contraction,iterations_to_1e-3,diverged\n";
        for (const auto& ms : rep.methods)
            out << ms.name << "," << ms.rate << "," << ms.contraction << ","
                << ms.iterations_to_tol << "," << (ms.diverged ? 1 : 0) << "\n";
    }
    for (const auto& ms : rep.methods)
        detail::write_trace_csv(ms.first_trace,
                                detail::open_out(dir, "trace_" + ms.name + ".csv"));
    nlohmann::json meta;
    meta["config"] = to_json(rep.config);
    meta["versions"] = detail::versions_json();
    meta["gamma"] = rep.gamma;
    meta["wallclock_sec"] = rep.wallclock_sec;
    nlohmann::json per_method = nlohmann::json::object();
    for (const auto& ms : rep.methods) per_method[ms.name] = ms.wallclock_sec;
    meta["method_wallclock_sec"] = per_method;
    std::ofstream out = detail::open_out(dir, "meta.json");
    out << meta.dump(2) << "\n";
}

/// table.csv: one row per (eta, mode, method) with the SNR marks and the
/// closed-form SNR; rates.csv: the penalties and PD certificates per mode;
/// trace_<method>.csv: the first joint-mode trace; meta.json as above.
inline void write_denoise_outputs(const denoise_report& rep, const std::string& dir) {
    detail::ensure_dir(dir);
    {
        std::ofstream out = detail::open_out(dir, "table.csv");
        out << "eta,mode,method,isnr";
        for (int m : rep.snr_marks) out << ",snr_" << m;
        out << ",snr_inf,diverged\n";
        for (const auto& block : rep.blocks)
            for (const auto& row : block.rows) {
                out << block.eta << "," << row.mode << "," << row.method << ","
                    << block.isnr;
                for (double v : row.snr_at) out << "," << v;
                out << "," << row.snr_inf << "," << (row.diverged ? 1 : 0) << "\n";
            }
    }
    {
        std::ofstream out = detail::open_out(dir, "rates.csv");
        out << "eta,mode,alpha,beta,pd_min\n";
        for (const auto& block : rep.blocks)
            for (const auto& mi : block.modes)
                out << block.eta << "," << mi.mode << "," << mi.alpha << "," << mi.beta
                    << "," << mi.pd_min << "\n";
    }
    if (!rep.first_trace.residuals.empty())
        detail::write_trace_csv(
            rep.first_trace,
            detail::open_out(dir, "trace_" + rep.first_trace.method + ".csv"));
    nlohmann::json meta;
    meta["config"] = to_json(rep.config);
    meta["versions"] = detail::versions_json();
    meta["synthetic_data"] = rep.synthetic_data;
    meta["wallclock_sec"] = rep.wallclock_sec;
    std::ofstream out = detail::open_out(dir, "meta.json");
    out << meta.dump(2) << "\n";
}

}  // namespace polyshift
