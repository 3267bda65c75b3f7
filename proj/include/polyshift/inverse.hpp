#pragma once

// Inverse filtering: given an invertible polynomial filter H = h(S_1..S_d)
// and an observation b, recover x = H^{-1} b with distributable iterations.
// Every solver here is an instance of the splitting iteration
//
//     z^(m) = G e^(m-1),   x^(m) = x^(m-1) + z^(m),   e^(m) = e^(m-1) - H z^(m),
//
// which converges exactly when the spectral radius of I - HG is below one.
// The approximants G on offer are a scaled identity (gradient descent), the
// minimax polynomial of a given total degree (solved as a linear program over
// the joint spectrum), a truncated Chebyshev expansion of 1/h on a spectral
// box, and the exact per-eigenvalue interpolant. A first-order ARMA scheme
// based on a partial-fraction split of 1/h is provided for univariate
// filters.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <numeric>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "polyshift/lp.hpp"
#include "polyshift/polyfilter.hpp"
#include "polyshift/spectrum.hpp"

namespace polyshift {

using linear_op = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Per-iteration record of one inverse-filtering run. Residuals are always
/// tracked; relative errors only when the true signal was supplied.
struct solve_trace {
    std::string method;
    std::vector<double> residuals;      ///< ||e^(m)||_2, m = 0..iterations
    std::vector<double> rel_errors;     ///< ||x^(m) - x||_2 / ||x||_2 (optional)
    std::vector<double> wallclock_us;   ///< cumulative wall time at each m
    std::vector<Eigen::VectorXd> iterates;
    Eigen::VectorXd x;                  ///< final iterate
    int iterations = 0;
    bool reached_tol = false;
    bool diverged = false;              ///< residual grew 10x, or never decayed
    int iterations_to_tol = -1;         ///< first m with ||e^(m)|| <= tol ||b||

    /// First m whose relative error (residual ratio if no truth was given)
    /// drops to `eps`, or -1 if the run never got there.
    int iterations_to(double eps) const {
        const bool use_rel = !rel_errors.empty();
        const std::vector<double>& src = use_rel ? rel_errors : residuals;
        const double scale = use_rel ? 1.0
                                     : (!residuals.empty() && residuals.front() > 0.0
                                            ? residuals.front()
                                            : 1.0);
        for (std::size_t m = 0; m < src.size(); ++m)
            if (src[m] <= eps * scale) return static_cast<int>(m);
        return -1;
    }
};

struct solve_options {
    int max_iterations = 100;
    double tol = 1e-10;
    bool keep_iterates = false;
    const Eigen::VectorXd* truth = nullptr;  ///< enables rel_errors when set
};

namespace detail {

/// Shared bookkeeping for all solvers: residual/error/wallclock recording,
/// tolerance stopping, and divergence detection.
class trace_builder {
  public:
    trace_builder(std::string method, const Eigen::VectorXd& b, const solve_options& opt)
        : opt_(opt), bnorm_(b.norm()), t0_(std::chrono::steady_clock::now()) {
        tr_.method = std::move(method);
        if (opt_.truth != nullptr) truth_norm_ = opt_.truth->norm();
        state_ = record(0, Eigen::VectorXd::Zero(b.size()), bnorm_);
    }

    /// Records iterate m. Returns +1 to continue, 0 on tolerance reached,
    /// -1 on detected blow-up.
    int record(int m, const Eigen::VectorXd& x, double residual_norm) {
        tr_.residuals.push_back(residual_norm);
        if (opt_.truth != nullptr && truth_norm_ > 0.0)
            tr_.rel_errors.push_back((x - *opt_.truth).norm() / truth_norm_);
        tr_.wallclock_us.push_back(elapsed_us());
        if (opt_.keep_iterates) tr_.iterates.push_back(x);
        tr_.iterations = m;
        if (residual_norm <= opt_.tol * bnorm_) {
            tr_.reached_tol = true;
            tr_.iterations_to_tol = m;
            return 0;
        }
        if (residual_norm > 10.0 * bnorm_) {
            tr_.diverged = true;
            return -1;
        }
        return 1;
    }

    bool finished_at_start() const { return state_ != 1; }

    solve_trace finish(Eigen::VectorXd x) {
        tr_.x = std::move(x);
        // A run that neither met the tolerance nor blew up but ends no better
        // than it started has a non-contractive error operator.
        if (!tr_.reached_tol && !tr_.diverged && tr_.residuals.size() >= 2 &&
            tr_.residuals.back() >= tr_.residuals.front())
            tr_.diverged = true;
        return std::move(tr_);
    }

  private:
    double elapsed_us() const {
        return std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() -
                                                         t0_)
            .count();
    }

    solve_trace tr_;
    solve_options opt_;
    double bnorm_ = 0.0;
    double truth_norm_ = 0.0;
    int state_ = 1;
    std::chrono::steady_clock::time_point t0_;
};

}  // namespace detail

/// Splitting iteration x^(m) = x^(m-1) + G e^(m-1) with residual update
/// e^(m) = e^(m-1) - H G e^(m-1); stops on ||e|| <= tol ||b|| or after
/// `max_iterations` rounds, flagging divergence instead of throwing.
inline solve_trace iterative_approx(const linear_op& h_apply, const linear_op& g_apply,
                                    const Eigen::VectorXd& b, const solve_options& opt = {},
                                    std::string method = "iterative") {
    detail::trace_builder tb(std::move(method), b, opt);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
    if (tb.finished_at_start()) return tb.finish(std::move(x));
    Eigen::VectorXd e = b;
    for (int m = 1; m <= opt.max_iterations; ++m) {
        Eigen::VectorXd z = g_apply(e);
        x += z;
        e -= h_apply(z);
        if (tb.record(m, x, e.norm()) != 1) break;
    }
    return tb.finish(std::move(x));
}

/// Gradient descent x^(m) = x^(m-1) - gamma (H x^(m-1) - b). The residual is
/// recomputed from the iterate each round rather than propagated.
inline solve_trace gd0_solve(const linear_op& h_apply, const Eigen::VectorXd& b, double gamma,
                             const solve_options& opt = {}) {
    if (!(gamma > 0.0)) throw std::invalid_argument("gd0_solve: step size must be positive");
    detail::trace_builder tb("gd0", b, opt);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
    if (tb.finished_at_start()) return tb.finish(std::move(x));
    Eigen::VectorXd r = b;
    for (int m = 1; m <= opt.max_iterations; ++m) {
        x += gamma * r;
        r = b - h_apply(x);
        if (tb.record(m, x, r.norm()) != 1) break;
    }
    return tb.finish(std::move(x));
}

// ---------------------------------------------------------------------------
// Approximate inverses

/// One approximate inverse G, in whichever representation produced it.
struct approximant {
    enum class kind_t { scaled_identity, polynomial, chebyshev, spectral_values };

    kind_t kind = kind_t::scaled_identity;
    std::string tag = "custom";  ///< gd0 | iopa-L | icpa-K | interp | custom
    double gamma = 0.0;
    std::optional<poly_coeffs> poly;
    std::optional<cheb_coeffs> cheb;
    Eigen::VectorXd values;  ///< per-eigenvalue multipliers (spectral_values)

    static approximant scaled_identity(double g, std::string tag_ = "gd0") {
        approximant a;
        a.kind = kind_t::scaled_identity;
        a.gamma = g;
        a.tag = std::move(tag_);
        return a;
    }
    static approximant polynomial(poly_coeffs g, std::string tag_ = "custom") {
        approximant a;
        a.kind = kind_t::polynomial;
        a.poly = std::move(g);
        a.tag = std::move(tag_);
        return a;
    }
    static approximant chebyshev(cheb_coeffs g, std::string tag_ = "custom") {
        approximant a;
        a.kind = kind_t::chebyshev;
        a.cheb = std::move(g);
        a.tag = std::move(tag_);
        return a;
    }
    static approximant spectral(Eigen::VectorXd v, std::string tag_ = "interp") {
        approximant a;
        a.kind = kind_t::spectral_values;
        a.values = std::move(v);
        a.tag = std::move(tag_);
        return a;
    }

    Eigen::VectorXd apply_to(const shift_family& f, const Eigen::VectorXd& x,
                             filter_cost* cost = nullptr) const {
        switch (kind) {
            case kind_t::scaled_identity:
                return gamma * x;
            case kind_t::polynomial:
                return apply(*poly, f, x, cost);
            case kind_t::chebyshev:
                return apply_cheb(*cheb, f, x, cost);
            case kind_t::spectral_values:
                return apply_spectral_values(compute_joint_spectrum(f), values, x);
        }
        throw std::logic_error("approximant: invalid kind");
    }

    /// Binds this approximant to a family; both must outlive the returned op.
    linear_op as_op(const shift_family& f) const {
        return [this, &f](const Eigen::VectorXd& x) { return apply_to(f, x); };
    }

    /// Scalar symbol value. `spectrum_index` selects the eigenvalue for the
    /// per-point (spectral_values) representation, which has no global symbol.
    double eval_at(const Eigen::VectorXd& t, int spectrum_index = -1) const {
        switch (kind) {
            case kind_t::scaled_identity:
                return gamma;
            case kind_t::polynomial:
                return poly->eval(t);
            case kind_t::chebyshev:
                return cheb->eval(t);
            case kind_t::spectral_values:
                if (spectrum_index < 0 || spectrum_index >= values.size())
                    throw std::invalid_argument(
                        "approximant: spectral_values needs a spectrum index");
                return values[spectrum_index];
        }
        throw std::logic_error("approximant: invalid kind");
    }
};

namespace detail {

inline void require_real_spectrum(const joint_spectrum& js, const char* who) {
    if (js.lambda_im.size() == 0) return;
    const double scale = 1.0 + js.lambda.cwiseAbs().maxCoeff();
    if (js.lambda_im.cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw std::invalid_argument(std::string(who) + ": joint spectrum must be real");
}

/// min and max of h over the joint spectrum points.
inline std::array<double, 2> filter_value_range(const poly_coeffs& h,
                                                const joint_spectrum& js) {
    std::array<double, 2> r = {std::numeric_limits<double>::infinity(),
                               -std::numeric_limits<double>::infinity()};
    for (int i = 0; i < js.n(); ++i) {
        const double v = h.eval(js.lambda.row(i).transpose());
        r[0] = std::min(r[0], v);
        r[1] = std::max(r[1], v);
    }
    return r;
}

}  // namespace detail

/// [min, max] of the filter symbol h over the joint spectrum; the extreme
/// filter eigenvalues for symmetric families.
inline std::array<double, 2> spectral_range(const poly_coeffs& h, const joint_spectrum& js) {
    detail::require_real_spectrum(js, "spectral_range");
    return detail::filter_value_range(h, js);
}

/// sup_i |1 - h(lambda_i) g(lambda_i)|: the exact spectral radius of I - GH
/// for commuting polynomial approximants on symmetric families.
inline double spectral_contraction(const poly_coeffs& h, const approximant& g,
                                   const joint_spectrum& js) {
    detail::require_real_spectrum(js, "spectral_contraction");
    if (g.kind == approximant::kind_t::spectral_values && g.values.size() != js.n())
        throw std::invalid_argument("spectral_contraction: multiplier count mismatch");
    double sup = 0.0;
    for (int i = 0; i < js.n(); ++i) {
        const Eigen::VectorXd t = js.lambda.row(i).transpose();
        sup = std::max(sup, std::abs(1.0 - h.eval(t) * g.eval_at(t, i)));
    }
    return sup;
}

/// Exact per-eigenvalue inverse g_I(lambda_i) = 1/h(lambda_i). For symmetric
/// families with distinct joint spectrum this is the true inverse filter.
inline approximant interpolation_inverse(const poly_coeffs& h, const joint_spectrum& js) {
    detail::require_real_spectrum(js, "interpolation_inverse");
    Eigen::VectorXd hv(js.n());
    for (int i = 0; i < js.n(); ++i) hv[i] = h.eval(js.lambda.row(i).transpose());
    const double scale = std::max(1.0, hv.cwiseAbs().maxCoeff());
    std::ostringstream bad;
    int nbad = 0;
    for (int i = 0; i < js.n(); ++i) {
        if (std::abs(hv[i]) <= 1e-12 * scale) {
            if (nbad < 3) {
                bad << (nbad ? ", " : "") << "(";
                for (int k = 0; k < js.dims(); ++k)
                    bad << (k ? ", " : "") << js.lambda(i, k);
                bad << ")";
            }
            ++nbad;
        }
    }
    if (nbad > 0)
        throw std::invalid_argument("interpolation_inverse: filter vanishes at " +
                                    std::to_string(nbad) + " spectrum point(s), e.g. " +
                                    bad.str());
    return approximant::spectral(hv.cwiseInverse(), "interp");
}

// ---------------------------------------------------------------------------
// Minimax polynomial approximation of 1/h over the spectrum (LP based)

namespace detail {

/// Deduplicates spectrum rows to a tolerance after a lexicographic sort.
inline std::vector<Eigen::VectorXd> dedup_rows(const Eigen::MatrixXd& m, double tol) {
    const int n = static_cast<int>(m.rows());
    const int d = static_cast<int>(m.cols());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        for (int k = 0; k < d; ++k) {
            if (m(a, k) < m(b, k)) return true;
            if (m(a, k) > m(b, k)) return false;
        }
        return false;
    });
    std::vector<Eigen::VectorXd> pts;
    for (int idx : order) {
        if (!pts.empty()) {
            bool same = true;
            for (int k = 0; k < d; ++k)
                if (std::abs(m(idx, k) - pts.back()[k]) > tol) {
                    same = false;
                    break;
                }
            if (same) continue;
        }
        pts.push_back(m.row(idx).transpose());
    }
    return pts;
}

/// Solves min s subject to 1 - s <= P c <= 1 + s and returns c. The variable
/// vector is (c, s); the rows read P c - s <= 1 and -P c - s <= -1.
inline Eigen::VectorXd minimax_coeffs(const Eigen::MatrixXd& pmat) {
    const int m = static_cast<int>(pmat.rows());
    const int pn = static_cast<int>(pmat.cols());
    Eigen::MatrixXd a(2 * m, pn + 1);
    a.topLeftCorner(m, pn) = pmat;
    a.bottomLeftCorner(m, pn) = -pmat;
    a.col(pn).setConstant(-1.0);
    Eigen::VectorXd rhs(2 * m);
    rhs.head(m).setOnes();
    rhs.tail(m).setConstant(-1.0);
    Eigen::VectorXd cost = Eigen::VectorXd::Zero(pn + 1);
    cost[pn] = 1.0;
    lp_result lp = lp_solve_inequality(a, rhs, cost);
    return lp.x.head(pn);
}

}  // namespace detail

/// Best uniform polynomial approximation of 1/h over the joint spectrum with
/// total degree at most `l_total`. Returns the coefficients together with the
/// achieved deviation a_L = sup_i |1 - g(lambda_i) h(lambda_i)|, recomputed
/// from the coefficients rather than read off the LP objective. Large spectra
/// are handled by working-set exchange: solve on a subset, add the worst
/// violating point, repeat.
inline std::pair<poly_coeffs, double> optimal_poly(const poly_coeffs& h,
                                                   const joint_spectrum& js, int l_total) {
    if (l_total < 0) throw std::invalid_argument("optimal_poly: negative degree");
    detail::require_real_spectrum(js, "optimal_poly");
    const int d = js.dims();
    if (static_cast<int>(h.degrees.size()) != d)
        throw std::invalid_argument("optimal_poly: filter arity does not match spectrum");

    std::vector<Eigen::VectorXd> pts = detail::dedup_rows(js.lambda, 1e-10);
    const int nu = static_cast<int>(pts.size());
    Eigen::VectorXd hv(nu);
    for (int i = 0; i < nu; ++i) hv[i] = h.eval(pts[i]);
    const double hscale = std::max(1.0, hv.cwiseAbs().maxCoeff());
    if (hv.cwiseAbs().minCoeff() <= 1e-12 * hscale)
        throw std::invalid_argument("optimal_poly: filter vanishes on the spectrum");

    const std::vector<std::vector<int>> idx = total_degree_indices(d, l_total);
    const int pn = static_cast<int>(idx.size());
    Eigen::MatrixXd pmat(nu, pn);
    for (int i = 0; i < nu; ++i)
        for (int j = 0; j < pn; ++j) {
            double v = hv[i];
            for (int k = 0; k < d; ++k)
                for (int rep = 0; rep < idx[j][k]; ++rep) v *= pts[i][k];
            pmat(i, j) = v;
        }

    Eigen::VectorXd c;
    if (nu <= 300) {
        c = detail::minimax_coeffs(pmat);
    } else {
        // Working set: per-axis extremes plus a uniform stride sample.
        std::set<int> wset;
        for (int k = 0; k < d; ++k) {
            int lo = 0, hi = 0;
            for (int i = 1; i < nu; ++i) {
                if (pts[i][k] < pts[lo][k]) lo = i;
                if (pts[i][k] > pts[hi][k]) hi = i;
            }
            wset.insert(lo);
            wset.insert(hi);
        }
        const int stride = std::max(1, nu / (3 * pn));
        for (int i = 0; i < nu; i += stride) wset.insert(i);

        bool settled = false;
        for (int round = 0; round < 80 && !settled; ++round) {
            std::vector<int> w(wset.begin(), wset.end());
            Eigen::MatrixXd sub(static_cast<int>(w.size()), pn);
            for (std::size_t r = 0; r < w.size(); ++r) sub.row(r) = pmat.row(w[r]);
            c = detail::minimax_coeffs(sub);
            double s_w = 0.0;
            for (std::size_t r = 0; r < w.size(); ++r)
                s_w = std::max(s_w, std::abs(1.0 - sub.row(r).dot(c)));
            // Scan the full constraint set for violators beyond the working
            // optimum and admit the worst three.
            std::vector<std::pair<double, int>> viol;
            for (int i = 0; i < nu; ++i) {
                const double v = std::abs(1.0 - pmat.row(i).dot(c));
                if (v > s_w + 1e-9) viol.emplace_back(v, i);
            }
            if (viol.empty()) {
                settled = true;
            } else {
                std::partial_sort(viol.begin(), viol.begin() + std::min<std::size_t>(3, viol.size()),
                                  viol.end(), std::greater<>());
                for (std::size_t r = 0; r < std::min<std::size_t>(3, viol.size()); ++r)
                    wset.insert(viol[r].second);
            }
        }
        if (!settled)
            std::cerr << "[polyshift] warning: minimax working-set refinement stopped early; "
                         "the reported deviation is still exact\n";
    }

    poly_coeffs g = poly_coeffs::zeros(std::vector<int>(d, l_total));
    for (int j = 0; j < pn; ++j) g.at(idx[j]) = c[j];
    double a_l = 0.0;
    for (int i = 0; i < nu; ++i) a_l = std::max(a_l, std::abs(1.0 - pmat.row(i).dot(c)));
    return {std::move(g), a_l};
}

// ---------------------------------------------------------------------------
// Chebyshev approximation of 1/h on a spectral box

/// Coefficients of the truncated shifted-Chebyshev expansion of 1/h on the
/// box, computed by the q-point-per-axis midpoint rule in the angular
/// variables (the Gauss-Chebyshev rule in t). The rule is re-run with 2q
/// nodes until no coefficient moves by more than 1e-10.
inline cheb_coeffs chebyshev_coeffs(const poly_coeffs& h, int d, int k_total,
                                    std::vector<std::array<double, 2>> box = {}, int q = 0) {
    if (d < 1) throw std::invalid_argument("chebyshev_coeffs: dimension must be positive");
    if (k_total < 0) throw std::invalid_argument("chebyshev_coeffs: negative degree");
    if (static_cast<int>(h.degrees.size()) != d)
        throw std::invalid_argument("chebyshev_coeffs: filter arity mismatch");
    if (box.empty()) box.assign(d, {0.0, 2.0});
    if (static_cast<int>(box.size()) != d)
        throw std::invalid_argument("chebyshev_coeffs: box arity mismatch");
    for (const auto& ab : box)
        if (!(ab[0] < ab[1]))
            throw std::invalid_argument("chebyshev_coeffs: empty box interval");
    if (q <= 0) q = std::max(64, 4 * (k_total + 1));

    const std::vector<std::vector<int>> idx = total_degree_indices(d, k_total);

    auto compute = [&](int qq) -> Eigen::VectorXd {
        // cos(k theta_j) tables for the midpoint angles.
        Eigen::MatrixXd ck(qq, k_total + 1);
        std::vector<double> cth(qq);
        for (int j = 0; j < qq; ++j) {
            const double theta = M_PI * (j + 0.5) / qq;
            cth[j] = std::cos(theta);
            for (int k = 0; k <= k_total; ++k) ck(j, k) = std::cos(k * theta);
        }
        long long total = 1;
        for (int k = 0; k < d; ++k) {
            total *= qq;
            if (total > (1LL << 26))
                throw std::invalid_argument("chebyshev_coeffs: quadrature grid too large");
        }
        // First pass: filter values on the grid, with a singularity guard.
        std::vector<double> hvals(static_cast<std::size_t>(total));
        double hmax = 0.0, hmin = std::numeric_limits<double>::infinity();
        double hlow = std::numeric_limits<double>::infinity();
        double hhigh = -std::numeric_limits<double>::infinity();
        std::vector<int> j(d, 0);
        Eigen::VectorXd t(d);
        for (long long flat = 0; flat < total; ++flat) {
            for (int k = 0; k < d; ++k)
                t[k] = 0.5 * ((box[k][1] - box[k][0]) * cth[j[k]] + box[k][0] + box[k][1]);
            const double v = h.eval(t);
            hvals[static_cast<std::size_t>(flat)] = v;
            hmax = std::max(hmax, std::abs(v));
            hmin = std::min(hmin, std::abs(v));
            hlow = std::min(hlow, v);
            hhigh = std::max(hhigh, v);
            for (int k = d - 1; k >= 0; --k) {
                if (++j[k] < qq) break;
                j[k] = 0;
            }
        }
        // A sign change means a zero of h inside the box even when no node
        // lands on it exactly.
        if (hmin <= 1e-12 * std::max(1.0, hmax) || (hlow < 0.0 && hhigh > 0.0))
            throw std::runtime_error(
                "chebyshev_coeffs: filter vanishes inside the box; "
                "1/h is singular there");
        // Second pass: accumulate the cosine moments of 1/h.
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(idx.size()));
        std::fill(j.begin(), j.end(), 0);
        for (long long flat = 0; flat < total; ++flat) {
            const double w = 1.0 / hvals[static_cast<std::size_t>(flat)];
            for (std::size_t p = 0; p < idx.size(); ++p) {
                double prod = w;
                for (int k = 0; k < d; ++k) prod *= ck(j[k], idx[p][k]);
                acc[static_cast<Eigen::Index>(p)] += prod;
            }
            for (int k = d - 1; k >= 0; --k) {
                if (++j[k] < qq) break;
                j[k] = 0;
            }
        }
        const double cell = 1.0 / std::pow(static_cast<double>(qq), d);
        for (std::size_t p = 0; p < idx.size(); ++p) {
            int nonzero = 0;
            for (int k = 0; k < d; ++k)
                if (idx[p][k] > 0) ++nonzero;
            acc[static_cast<Eigen::Index>(p)] *= cell * std::pow(2.0, nonzero);
        }
        return acc;
    };

    Eigen::VectorXd cur = compute(q);
    bool converged = false;
    while (q <= 2048) {
        Eigen::VectorXd next = compute(2 * q);
        const double drift = (next - cur).cwiseAbs().maxCoeff();
        cur = std::move(next);
        q *= 2;
        if (drift <= 1e-10) {
            converged = true;
            break;
        }
    }
    if (!converged)
        throw std::runtime_error("chebyshev_coeffs: quadrature did not converge");

    cheb_coeffs c = cheb_coeffs::zeros(k_total, std::move(box));
    c.values = std::move(cur);
    return c;
}

/// Grid estimate of b_K = sup over the box of |1 - h(t) g_K(t)|. `grid_n` is
/// the number of samples per axis (0 selects 2001 for d = 1, 201 for d = 2,
/// 51 beyond that).
inline double cheb_sup_error(const poly_coeffs& h, const cheb_coeffs& c, int grid_n = 0) {
    const int d = c.dims();
    if (static_cast<int>(h.degrees.size()) != d)
        throw std::invalid_argument("cheb_sup_error: filter arity mismatch");
    if (grid_n <= 1) grid_n = (d == 1) ? 2001 : (d == 2 ? 201 : 51);
    long long total = 1;
    for (int k = 0; k < d; ++k) total *= grid_n;
    std::vector<int> j(d, 0);
    Eigen::VectorXd t(d);
    double sup = 0.0;
    for (long long flat = 0; flat < total; ++flat) {
        for (int k = 0; k < d; ++k)
            t[k] = c.box[k][0] +
                   (c.box[k][1] - c.box[k][0]) * j[k] / static_cast<double>(grid_n - 1);
        sup = std::max(sup, std::abs(1.0 - h.eval(t) * c.eval(t)));
        for (int k = d - 1; k >= 0; --k) {
            if (++j[k] < grid_n) break;
            j[k] = 0;
        }
    }
    return sup;
}

// ---------------------------------------------------------------------------
// Packaged solvers

/// Minimax-polynomial inverse iteration of total degree L. The guarantee
/// needs a_L < 1; a violation is reported and the run proceeds under
/// divergence detection.
inline solve_trace iopa_solve(const poly_coeffs& h, const shift_family& f,
                              const Eigen::VectorXd& b, int l_total,
                              const solve_options& opt = {}) {
    const joint_spectrum& js = compute_joint_spectrum(f);
    auto [g, a_l] = optimal_poly(h, js, l_total);
    if (a_l >= 1.0)
        std::cerr << "[polyshift] warning: minimax deviation a_" << l_total << " = " << a_l
                  << " is not below 1; the iteration may not converge\n";
    linear_op h_op = [&](const Eigen::VectorXd& v) { return apply(h, f, v); };
    poly_coeffs gg = std::move(g);
    linear_op g_op = [&f, gg](const Eigen::VectorXd& v) { return apply(gg, f, v); };
    return iterative_approx(h_op, g_op, b, opt, "iopa-" + std::to_string(l_total));
}

/// Chebyshev inverse iteration of total degree K on the given spectral box
/// (default [0, 2]^d). The guarantee needs b_K < 1; a violation is reported
/// and the run proceeds under divergence detection.
inline solve_trace icpa_solve(const poly_coeffs& h, const shift_family& f,
                              const Eigen::VectorXd& b, int k_total,
                              const solve_options& opt = {},
                              std::vector<std::array<double, 2>> box = {}) {
    const int d = f.dims();
    cheb_coeffs c = chebyshev_coeffs(h, d, k_total, std::move(box));
    const double b_k = cheb_sup_error(h, c);
    if (b_k >= 1.0)
        std::cerr << "[polyshift] warning: Chebyshev sup deviation b_" << k_total << " = "
                  << b_k << " is not below 1; the iteration may not converge\n";
    linear_op h_op = [&](const Eigen::VectorXd& v) { return apply(h, f, v); };
    cheb_coeffs cc = std::move(c);
    linear_op g_op = [&f, cc](const Eigen::VectorXd& v) { return apply_cheb(cc, f, v); };
    return iterative_approx(h_op, g_op, b, opt, "icpa-" + std::to_string(k_total));
}

// ---------------------------------------------------------------------------
// Partial fractions and the first-order ARMA scheme

/// Terms of 1/h(t) = sum_k a_k / (1 - b_k t). Complex-conjugate pairs appear
/// when h has complex roots; `real_terms` reports whether everything is real.
struct pf_decomposition {
    Eigen::VectorXcd a, b;

    bool real_terms(double tol = 1e-10) const {
        for (Eigen::Index k = 0; k < a.size(); ++k)
            if (std::abs(a[k].imag()) > tol * (1.0 + std::abs(a[k])) ||
                std::abs(b[k].imag()) > tol * (1.0 + std::abs(b[k])))
                return false;
        return true;
    }
};

/// Partial-fraction split of 1/h for a univariate h with simple nonzero
/// roots: roots from the companion matrix, residues by differentiation, and
/// a reconstruction self-check on a grid inside the root-free disc.
inline pf_decomposition partial_fractions(std::vector<double> h) {
    while (!h.empty() && h.back() == 0.0) h.pop_back();
    if (h.empty())
        throw std::invalid_argument("partial_fractions: zero polynomial");
    if (h[0] == 0.0)
        throw std::invalid_argument(
            "partial_fractions: filter vanishes at t = 0; 1/h has no expansion in "
            "(1 - b t)^{-1} terms");
    const int deg = static_cast<int>(h.size()) - 1;
    pf_decomposition out;
    if (deg == 0) {
        out.a = Eigen::VectorXcd::Constant(1, 1.0 / h[0]);
        out.b = Eigen::VectorXcd::Zero(1);
        return out;
    }

    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(deg, deg);
    for (int i = 1; i < deg; ++i) comp(i, i - 1) = 1.0;
    for (int i = 0; i < deg; ++i) comp(i, deg - 1) = -h[i] / h[deg];
    Eigen::VectorXcd roots = Eigen::EigenSolver<Eigen::MatrixXd>(comp).eigenvalues();
    std::sort(roots.data(), roots.data() + roots.size(),
              [](std::complex<double> x, std::complex<double> y) {
                  if (x.real() != y.real()) return x.real() > y.real();
                  return x.imag() > y.imag();
              });

    const double scale = std::max(1.0, roots.cwiseAbs().maxCoeff());
    for (int i = 0; i < deg; ++i)
        for (int k = i + 1; k < deg; ++k)
            if (std::abs(roots[i] - roots[k]) < 1e-8 * scale)
                throw std::invalid_argument(
                    "partial_fractions: repeated root near t = " +
                    std::to_string(roots[i].real()) + "; multiplicities are unsupported");
    for (int i = 0; i < deg; ++i)
        if (std::abs(roots[i]) < 1e-12 * scale)
            throw std::invalid_argument("partial_fractions: root at the origin");

    auto eval_c = [&h](std::complex<double> t) {
        std::complex<double> v = 0.0;
        for (int l = static_cast<int>(h.size()) - 1; l >= 0; --l) v = v * t + h[l];
        return v;
    };
    auto deriv_c = [&h, deg](std::complex<double> t) {
        std::complex<double> v = 0.0;
        for (int l = deg; l >= 1; --l) v = v * t + static_cast<double>(l) * h[l];
        return v;
    };

    out.a.resize(deg);
    out.b.resize(deg);
    for (int k = 0; k < deg; ++k) {
        const std::complex<double> dh = deriv_c(roots[k]);
        if (std::abs(dh) < 1e-14 * scale)
            throw std::runtime_error("partial_fractions: derivative vanishes at a root");
        out.a[k] = -1.0 / (roots[k] * dh);
        out.b[k] = 1.0 / roots[k];
    }

    // Self-check on |t| <= min|root|/2, where both sides are well conditioned.
    const double rho = 0.5 * roots.cwiseAbs().minCoeff();
    for (int jt = 0; jt <= 20; ++jt) {
        const double t = -rho + 2.0 * rho * jt / 20.0;
        const double lhs = 1.0 / eval_c(t).real();
        std::complex<double> rhs = 0.0;
        for (int k = 0; k < deg; ++k) rhs += out.a[k] / (1.0 - out.b[k] * t);
        if (std::abs(lhs - rhs.real()) > 1e-10 * std::max(1.0, std::abs(lhs)))
            throw std::runtime_error("partial_fractions: reconstruction check failed");
    }
    return out;
}

namespace detail {

/// Spectral-norm estimate by power iteration: directly on S when symmetric,
/// on S'S via a materialized copy otherwise.
inline double spectral_norm_estimate(const shift& s, int max_iters = 400) {
    std::mt19937_64 rng(0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd v(s.n);
    for (int i = 0; i < s.n; ++i) v[i] = gauss(rng);
    v.normalize();
    if (s.symmetric) {
        double est = 0.0;
        for (int it = 0; it < max_iters; ++it) {
            Eigen::VectorXd w = s.apply(v);
            const double nw = w.norm();
            if (nw == 0.0) return 0.0;
            if (it > 8 && std::abs(nw - est) <= 1e-12 * std::max(1.0, nw)) return nw;
            est = nw;
            v = w / nw;
        }
        return est;
    }
    if (s.n > 4096)
        throw std::runtime_error(
            "spectral_norm_estimate: nonsymmetric operator too large to materialize");
    sparse_mat m = s.materialized();
    sparse_mat mt = sparse_mat(m.transpose());
    double est = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        Eigen::VectorXd w = mt * (m * v);
        const double nw = w.norm();
        if (nw == 0.0) return 0.0;
        if (it > 8 && std::abs(nw - est) <= 1e-12 * std::max(1.0, nw)) break;
        est = nw;
        v = w / nw;
    }
    return std::sqrt(est);
}

}  // namespace detail

/// First-order scheme for univariate h: split 1/h into elementary terms
/// a_k/(1 - b_k t), run the recursions x_k^(m) = b_k S x_k^(m-1) + b in
/// parallel, and combine x^(m) = sum_k a_k x_k^(m) in root-index order.
/// Refuses to run when some |b_k| ||S||_2 >= 1, because the corresponding
/// recursion cannot contract.
inline solve_trace arma_solve(const std::vector<double>& h, const shift& s,
                              const Eigen::VectorXd& b, const solve_options& opt = {}) {
    if (b.size() != s.n) throw std::invalid_argument("arma_solve: signal length mismatch");
    pf_decomposition pf = partial_fractions(h);
    const double snorm = detail::spectral_norm_estimate(s);
    for (Eigen::Index k = 0; k < pf.b.size(); ++k) {
        const double rate = std::abs(pf.b[k]) * snorm;
        if (rate >= 1.0)
            throw std::runtime_error(
                "arma_solve: elementary recursion " + std::to_string(k) +
                " is unstable: |b_k| * ||S||_2 = " + std::to_string(rate) + " >= 1");
    }

    detail::trace_builder tb("arma", b, opt);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
    if (tb.finished_at_start()) return tb.finish(std::move(x));
    const int nt = static_cast<int>(pf.a.size());

    if (pf.real_terms()) {
        std::vector<Eigen::VectorXd> xs(nt, Eigen::VectorXd::Zero(b.size()));
        for (int m = 1; m <= opt.max_iterations; ++m) {
            x.setZero();
            for (int k = 0; k < nt; ++k) {
                xs[k] = pf.b[k].real() * s.apply(xs[k]) + b;
                x += pf.a[k].real() * xs[k];
            }
            const Eigen::VectorXd e = b - apply_single(h, s, x);
            if (tb.record(m, x, e.norm()) != 1) break;
        }
    } else {
        // Complex-conjugate root pairs: run the recursions in complex
        // arithmetic; the combined iterate is real up to roundoff.
        auto apply_c = [&s](const Eigen::VectorXcd& v) -> Eigen::VectorXcd {
            Eigen::VectorXcd out(v.size());
            out.real() = s.apply(v.real());
            out.imag() = s.apply(v.imag());
            return out;
        };
        std::vector<Eigen::VectorXcd> xs(nt, Eigen::VectorXcd::Zero(b.size()));
        const Eigen::VectorXcd bc = b.cast<std::complex<double>>();
        for (int m = 1; m <= opt.max_iterations; ++m) {
            Eigen::VectorXcd xc = Eigen::VectorXcd::Zero(b.size());
            for (int k = 0; k < nt; ++k) {
                xs[k] = pf.b[k] * apply_c(xs[k]) + bc;
                xc += pf.a[k] * xs[k];
            }
            x = xc.real();
            const Eigen::VectorXd e = b - apply_single(h, s, x);
            if (tb.record(m, x, e.norm()) != 1) break;
        }
    }
    return tb.finish(std::move(x));
}

// ---------------------------------------------------------------------------
// Rate estimation and export

/// Least-squares exponential rate of the recorded errors: the slope of
/// log E(m) over the largest prefix with E(m) > 1e-12, exponentiated.
/// Uses relative errors when present, residuals otherwise (the slope is
/// invariant to their scaling).
inline double fit_rate(const solve_trace& tr) {
    const std::vector<double>& src = tr.rel_errors.empty() ? tr.residuals : tr.rel_errors;
    std::vector<double> ys;
    for (double v : src) {
        if (v <= 1e-12) break;
        ys.push_back(v);
    }
    if (ys.size() < 4)
        throw std::invalid_argument(
            "fit_rate: need at least 4 error samples above the noise floor");
    const int n = static_cast<int>(ys.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int m = 0; m < n; ++m) {
        const double y = std::log(ys[m]);
        sx += m;
        sy += y;
        sxx += static_cast<double>(m) * m;
        sxy += m * y;
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return std::exp(slope);
}

/// Writes "m,residual,rel_error,wallclock_us" rows; rel_error is nan when no
/// ground truth was attached to the run.
inline void save_trace_csv(const solve_trace& tr, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_trace_csv: cannot open " + path);
    out.precision(17);
    out << "m,residual,rel_error,wallclock_us\n";
    for (std::size_t m = 0; m < tr.residuals.size(); ++m) {
        out << m << "," << tr.residuals[m] << ",";
        if (m < tr.rel_errors.size())
            out << tr.rel_errors[m];
        else
            out << "nan";
        out << "," << tr.wallclock_us[m] << "\n";
    }
}

/// Serializes an approximant through the filter JSON spec; per-eigenvalue
/// multipliers use a "spectral_values" array instead.
inline void save_approximant_json(const approximant& g, const std::string& path) {
    nlohmann::json j;
    switch (g.kind) {
        case approximant::kind_t::scaled_identity:
            j = to_json(poly_coeffs::univariate({g.gamma}));
            break;
        case approximant::kind_t::polynomial:
            j = to_json(*g.poly);
            break;
        case approximant::kind_t::chebyshev:
            j = to_json(*g.cheb);
            break;
        case approximant::kind_t::spectral_values: {
            std::vector<double> v(g.values.data(), g.values.data() + g.values.size());
            j["spectral_values"] = v;
            break;
        }
    }
    j["tag"] = g.tag;
    save_filter_json(j, path);
}

}  // namespace polyshift
