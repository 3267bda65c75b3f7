#pragma once

// Dense two-phase primal simplex for the small linear programs that arise in
// minimax polynomial design:
//
//     minimize  cost' x   subject to   A x <= b,   x unrestricted in sign.
//
// Free variables are split as x = x+ - x- and one slack is appended per row.
// Phase 1 (artificial variables) engages only on rows with b_i < 0; rows with
// a nonnegative right-hand side start from their slack. Rows are equilibrated
// to unit infinity norm up front, which keeps the tableau well scaled over
// long pivot chains. Problem sizes here are at most a few thousand rows and a
// few dozen structural columns, so a dense tableau is the simplest correct
// choice.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace polyshift {

struct lp_result {
    Eigen::VectorXd x;
    double objective = 0.0;
    int iterations = 0;
};

namespace detail {

// Runs simplex pivots on the tableau T ((m+1) x (n+1), reduced costs in the
// last row, right-hand side in the last column) until no allowed column has a
// negative reduced cost. Uses Dantzig's rule, falling back to Bland's rule
// once the objective stalls so that degenerate cycles cannot persist.
//
// When a column prices negative but admits no pivot row, its reduced cost is
// recomputed from the original per-column costs before the problem is called
// unbounded: the tableau's objective row drifts over long pivot chains, and a
// roundoff-level descent direction must be retired, not reported as a ray.
// Returns false if the pivot budget runs out.
inline bool simplex_pivot_loop(Eigen::MatrixXd& t, std::vector<int>& basis,
                               const std::vector<char>& allowed,
                               const Eigen::VectorXd& colcost, int max_pivots,
                               int& pivots) {
    const int m = static_cast<int>(t.rows()) - 1;
    const int n = static_cast<int>(t.cols()) - 1;
    const double eps = 1e-11;
    std::vector<char> retired(n, 0);
    int stall = 0;
    double last_progress = t(m, n);
    for (;;) {
        int enter = -1;
        if (stall < 40) {
            double best = -eps;
            for (int j = 0; j < n; ++j)
                if (allowed[j] && !retired[j] && t(m, j) < best) {
                    best = t(m, j);
                    enter = j;
                }
        } else {
            for (int j = 0; j < n; ++j)
                if (allowed[j] && !retired[j] && t(m, j) < -eps) {
                    enter = j;
                    break;
                }
        }
        if (enter < 0) return true;

        // Ratio test; ties go to the smallest basis index (Bland). Tiny
        // negative right-hand sides from roundoff are read as zero.
        int leave = -1;
        double best_ratio = std::numeric_limits<double>::infinity();
        for (int i = 0; i < m; ++i) {
            if (t(i, enter) > eps) {
                double ratio = std::max(t(i, n), 0.0) / t(i, enter);
                if (ratio < best_ratio - 1e-12 ||
                    (ratio < best_ratio + 1e-12 &&
                     (leave < 0 || basis[i] < basis[leave]))) {
                    best_ratio = ratio;
                    leave = i;
                }
            }
        }
        if (leave < 0) {
            // Reprice from first principles: rc = c_j - c_B' (B^-1 a_j).
            double rc = colcost[enter];
            for (int i = 0; i < m; ++i)
                if (colcost[basis[i]] != 0.0) rc -= colcost[basis[i]] * t(i, enter);
            if (rc < -1e-7) throw std::runtime_error("lp: unbounded objective");
            retired[enter] = 1;  // descent direction is roundoff noise
            continue;
        }

        if (++pivots > max_pivots) return false;
        t.row(leave) /= t(leave, enter);
        for (int i = 0; i <= m; ++i) {
            if (i == leave) continue;
            double f = t(i, enter);
            if (f != 0.0) t.row(i) -= f * t.row(leave);
        }
        basis[leave] = enter;

        // The last-row RHS increases monotonically as the objective improves.
        if (t(m, n) - last_progress > 1e-13)
            stall = 0;
        else
            ++stall;
        last_progress = t(m, n);
    }
}

}  // namespace detail

inline lp_result lp_solve_inequality(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                     const Eigen::VectorXd& cost) {
    const int m = static_cast<int>(a.rows());
    const int p = static_cast<int>(a.cols());
    if (b.size() != m || cost.size() != p)
        throw std::invalid_argument("lp_solve_inequality: dimension mismatch");
    if (m == 0) throw std::invalid_argument("lp_solve_inequality: no constraints");

    // Column layout: [x+ (p) | x- (p) | slack (m) | artificial (na)].
    int na = 0;
    for (int i = 0; i < m; ++i)
        if (b[i] < 0) ++na;
    const int n = 2 * p + m + na;
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m + 1, n + 1);
    std::vector<int> basis(m);
    std::vector<char> allowed(n, 1);

    int art = 2 * p + m;
    for (int i = 0; i < m; ++i) {
        const double rownorm = std::max(a.row(i).cwiseAbs().maxCoeff(), std::abs(b[i]));
        const double scale = rownorm > 0 ? 1.0 / rownorm : 1.0;
        const double sign = (b[i] < 0) ? -scale : scale;
        for (int j = 0; j < p; ++j) {
            t(i, j) = sign * a(i, j);
            t(i, p + j) = -sign * a(i, j);
        }
        t(i, 2 * p + i) = (b[i] < 0) ? -1.0 : 1.0;  // slack
        t(i, n) = sign * b[i];
        if (b[i] < 0) {
            t(i, art) = 1.0;
            basis[i] = art++;
        } else {
            basis[i] = 2 * p + i;
        }
    }

    const int max_pivots = 5000 + 10 * (m + n);
    int pivots = 0;

    if (na > 0) {
        // Phase 1: minimize the sum of artificials, whose reduced costs are
        // obtained by subtracting every artificial-basic row from the unit
        // objective.
        Eigen::VectorXd phase1_cost = Eigen::VectorXd::Zero(n);
        for (int j = 2 * p + m; j < n; ++j) {
            t(m, j) = 1.0;
            phase1_cost[j] = 1.0;
        }
        for (int i = 0; i < m; ++i)
            if (basis[i] >= 2 * p + m) t.row(m) -= t.row(i);
        if (!detail::simplex_pivot_loop(t, basis, allowed, phase1_cost, max_pivots, pivots))
            throw std::runtime_error("lp: phase-1 pivot limit exceeded");
        double infeas = 0.0;
        for (int i = 0; i < m; ++i)
            if (basis[i] >= 2 * p + m) infeas += std::max(t(i, n), 0.0);
        if (infeas > 1e-7) throw std::runtime_error("lp: infeasible");
        // Drive leftover zero-level artificials out of the basis, pivoting on
        // the largest entry in the row: dividing by a near-zero pivot blows
        // the tableau up, and a row with no sizable entry is redundant and may
        // keep its artificial (it can never re-enter below).
        for (int i = 0; i < m; ++i) {
            if (basis[i] < 2 * p + m) continue;
            int pivot_col = -1;
            double pivot_mag = 1e-7;
            for (int j = 0; j < 2 * p + m; ++j) {
                if (std::abs(t(i, j)) > pivot_mag) {
                    pivot_mag = std::abs(t(i, j));
                    pivot_col = j;
                }
            }
            if (pivot_col < 0) continue;
            t.row(i) /= t(i, pivot_col);
            for (int r = 0; r <= m; ++r) {
                if (r == i) continue;
                double f = t(r, pivot_col);
                if (f != 0.0) t.row(r) -= f * t.row(i);
            }
            basis[i] = pivot_col;
        }
        for (int j = 2 * p + m; j < n; ++j) allowed[j] = 0;
    }

    // Phase 2 objective: price the structural columns, then cancel the
    // columns currently in the basis.
    Eigen::VectorXd phase2_cost = Eigen::VectorXd::Zero(n);
    t.row(m).setZero();
    for (int j = 0; j < p; ++j) {
        t(m, j) = cost[j];
        t(m, p + j) = -cost[j];
        phase2_cost[j] = cost[j];
        phase2_cost[p + j] = -cost[j];
    }
    for (int i = 0; i < m; ++i)
        if (double f = t(m, basis[i]); f != 0.0) t.row(m) -= f * t.row(i);
    if (!detail::simplex_pivot_loop(t, basis, allowed, phase2_cost, max_pivots, pivots))
        throw std::runtime_error("lp: pivot limit exceeded");

    lp_result res;
    res.x = Eigen::VectorXd::Zero(p);
    for (int i = 0; i < m; ++i) {
        if (basis[i] < p)
            res.x[basis[i]] += t(i, n);
        else if (basis[i] < 2 * p)
            res.x[basis[i] - p] -= t(i, n);
    }
    res.objective = cost.dot(res.x);
    res.iterations = pivots;
    return res;
}

}  // namespace polyshift
