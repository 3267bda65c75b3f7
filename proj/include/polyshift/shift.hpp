#pragma once

// Graph shifts (geodesic-width <= 1 operators) and commuting shift families.
// A shift is stored either as an explicit CSR matrix or in Kronecker form
// A (x) I / I (x) A, which applies to vectorized signal grids without ever
// materializing the product operator.

#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "polyshift/graph.hpp"

namespace polyshift {

struct joint_spectrum;  // defined in spectrum.hpp

/// Which factor of the Kronecker product carries the operator.
enum class kron_side { left, right };

/// A graph shift.  Explicit shifts hold their matrix in `mat`; structured
/// shifts hold the non-identity factor and apply via the mixed-product rule.
struct shift {
    sparse_mat mat;               // explicit form (empty when structured)
    bool structured = false;
    sparse_mat factor;            // A in A(x)I or I(x)A
    kron_side side = kron_side::left;
    int other = 0;                // size of the identity factor
    int n = 0;                    // total dimension
    bool symmetric = false;

    static shift from_matrix(sparse_mat m) {
        if (m.rows() != m.cols()) throw std::invalid_argument("shift: matrix must be square");
        shift s;
        s.n = static_cast<int>(m.rows());
        m.makeCompressed();
        s.symmetric = detail_is_symmetric(m);
        s.mat = std::move(m);
        return s;
    }

    Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
        if (x.size() != n) throw std::invalid_argument("shift::apply: length mismatch");
        if (!structured) return mat * x;
        const int nf = static_cast<int>(factor.rows());
        if (side == kron_side::left) {
            // (A (x) I_m) x: columns of the m x nf reshape are the blocks A mixes.
            Eigen::Map<const Eigen::MatrixXd> xm(x.data(), other, nf);
            Eigen::MatrixXd ym = xm * Eigen::MatrixXd(factor).transpose();
            return Eigen::Map<const Eigen::VectorXd>(ym.data(), n);
        }
        // (I_m (x) A) x: apply A to each length-nf block.
        Eigen::Map<const Eigen::MatrixXd> xm(x.data(), nf, other);
        Eigen::MatrixXd ym = factor * xm;
        return Eigen::Map<const Eigen::VectorXd>(ym.data(), n);
    }

    /// Explicit CSR form (materializes structured shifts).
    sparse_mat materialized() const {
        if (!structured) return mat;
        const int nf = static_cast<int>(factor.rows());
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<std::size_t>(factor.nonZeros()) * other);
        for (int r = 0; r < factor.outerSize(); ++r)
            for (sparse_mat::InnerIterator it(factor, r); it; ++it)
                for (int b = 0; b < other; ++b) {
                    if (side == kron_side::left)
                        trip.emplace_back(static_cast<int>(it.row()) * other + b,
                                          static_cast<int>(it.col()) * other + b, it.value());
                    else
                        trip.emplace_back(b * nf + static_cast<int>(it.row()),
                                          b * nf + static_cast<int>(it.col()), it.value());
                }
        sparse_mat m(n, n);
        m.setFromTriplets(trip.begin(), trip.end());
        m.makeCompressed();
        return m;
    }

    double frobenius_norm() const {
        if (!structured) return mat.norm();
        return factor.norm() * std::sqrt(static_cast<double>(other));
    }

    long long nonzeros() const {
        if (!structured) return mat.nonZeros();
        return static_cast<long long>(factor.nonZeros()) * other;
    }

    static bool detail_is_symmetric(const sparse_mat& m) {
        sparse_mat d = sparse_mat(m.transpose()) - m;
        const double scale = m.norm();
        return d.norm() <= 1e-12 * (scale > 0 ? scale : 1.0);
    }
};

/// @brief Checks that an operator is a valid graph shift over `g`: square of
/// matching size and geodesic-width <= 1 (nonzeros only on the diagonal and
/// on edges).  The first offending entry is reported in the error.
inline shift validate_shift(const sparse_mat& s, const graph& g) {
    if (s.rows() != s.cols() || s.rows() != g.n)
        throw std::invalid_argument("validate_shift: operator/graph size mismatch");
    for (int i = 0; i < s.outerSize(); ++i)
        for (sparse_mat::InnerIterator it(s, i); it; ++it) {
            const int j = static_cast<int>(it.col());
            if (it.value() != 0.0 && j != i && !g.has_edge(i, j))
                throw std::invalid_argument(
                    "validate_shift: geodesic-width > 1, nonzero at non-edge (" +
                    std::to_string(i) + "," + std::to_string(j) + ")");
        }
    return shift::from_matrix(s);
}

/// @brief Structured Kronecker lift: side=left gives L (x) I_other, side=right
/// gives I_other (x) L.  Applies without materializing the lifted operator.
inline shift kron_lift(const sparse_mat& l, kron_side side, int other_size) {
    if (l.rows() != l.cols()) throw std::invalid_argument("kron_lift: factor must be square");
    if (other_size < 1) throw std::invalid_argument("kron_lift: other_size must be >= 1");
    shift s;
    s.structured = true;
    s.factor = l;
    s.factor.makeCompressed();
    s.side = side;
    s.other = other_size;
    s.n = static_cast<int>(l.rows()) * other_size;
    s.symmetric = shift::detail_is_symmetric(s.factor);
    return s;
}

/// @brief Symmetric normalized Laplacian of the single-generator circulant
/// C(N,{q}) as a shift: first row (1, ..., -1/2 at +-q, ...).  Requires
/// 1 <= q < N/2 so the graph is 2-regular.
inline shift circulant_generator_shift(int n, int q) {
    if (q < 1 || 2 * q >= n)
        throw std::invalid_argument("circulant_generator_shift: need 1 <= q < N/2");
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(3 * static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        trip.emplace_back(i, i, 1.0);
        trip.emplace_back(i, (i + q) % n, -0.5);
        trip.emplace_back(i, (i - q + n) % n, -0.5);
    }
    sparse_mat m(n, n);
    m.setFromTriplets(trip.begin(), trip.end());
    m.makeCompressed();
    return shift::from_matrix(std::move(m));
}

namespace detail {

// Frobenius norm of [S_a, S_b], exploiting Kronecker structure when possible.
inline double commutator_norm(const shift& a, const shift& b) {
    if (a.n != b.n) throw std::invalid_argument("commutator_norm: size mismatch");
    if (a.structured && b.structured) {
        if (a.side == b.side && a.other == b.other) {
            // [A (x) I, A' (x) I] = [A, A'] (x) I (and mirrored for right lifts).
            sparse_mat c = sparse_mat(a.factor * b.factor) - sparse_mat(b.factor * a.factor);
            return c.norm() * std::sqrt(static_cast<double>(a.other));
        }
        if (a.side != b.side && a.factor.rows() == b.other && b.factor.rows() == a.other)
            return 0.0;  // [A (x) I, I (x) B] = 0 by the mixed-product rule
    }
    if (a.n > 4096)
        throw std::runtime_error("commutator_norm: operators too large to materialize");
    sparse_mat ma = a.materialized(), mb = b.materialized();
    sparse_mat c = sparse_mat(ma * mb) - sparse_mat(mb * ma);
    return c.norm();
}

}  // namespace detail

/// @brief Pairwise commutator Frobenius norms ||S_k S_l - S_l S_k||_F.
inline Eigen::MatrixXd commutator_norms(const std::vector<shift>& shifts) {
    const int d = static_cast<int>(shifts.size());
    Eigen::MatrixXd norms = Eigen::MatrixXd::Zero(d, d);
    for (int k = 0; k < d; ++k)
        for (int l = k + 1; l < d; ++l)
            norms(k, l) = norms(l, k) = detail::commutator_norm(shifts[k], shifts[l]);
    return norms;
}

/// An ordered family S_1..S_d of pairwise-commuting shifts of equal size.
/// The joint spectrum is computed lazily and cached (single writer).
struct shift_family {
    std::vector<shift> shifts;
    int n = 0;
    bool symmetric = false;
    mutable std::shared_ptr<const joint_spectrum> spectrum_cache;

    int dims() const { return static_cast<int>(shifts.size()); }
    const shift& operator[](int k) const { return shifts[k]; }
};

/// @brief Bundles shifts into a family after verifying pairwise commutativity
/// (relative Frobenius tolerance `rel_tol`).
inline shift_family make_family(std::vector<shift> shifts, double rel_tol = 1e-10) {
    if (shifts.empty()) throw std::invalid_argument("make_family: empty shift list");
    shift_family f;
    f.n = shifts[0].n;
    f.symmetric = true;
    for (const auto& s : shifts) {
        if (s.n != f.n) throw std::invalid_argument("make_family: mixed operator sizes");
        f.symmetric = f.symmetric && s.symmetric;
    }
    const int d = static_cast<int>(shifts.size());
    for (int k = 0; k < d; ++k)
        for (int l = k + 1; l < d; ++l) {
            const double nrm = detail::commutator_norm(shifts[k], shifts[l]);
            const double scale = shifts[k].frobenius_norm() * shifts[l].frobenius_norm();
            if (nrm > rel_tol * (scale > 0 ? scale : 1.0))
                throw std::invalid_argument(
                    "make_family: shifts " + std::to_string(k) + " and " + std::to_string(l) +
                    " do not commute (||[S_k,S_l]||_F = " + std::to_string(nrm) + ")");
        }
    f.shifts = std::move(shifts);
    return f;
}

/// Family of one explicit shift.
inline shift_family single_shift_family(shift s) {
    std::vector<shift> v;
    v.push_back(std::move(s));
    return make_family(std::move(v));
}

}  // namespace polyshift
