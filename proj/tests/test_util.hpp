#pragma once

// Shared helpers for the test suite: dense oracles kept deliberately
// independent of the library's fast paths.

#include <random>
#include <vector>

#include <Eigen/Dense>

#include "polyshift/graph.hpp"

namespace testutil {

inline Eigen::MatrixXd dense(const polyshift::sparse_mat& s) { return Eigen::MatrixXd(s); }

// Textbook Kronecker product, used as the oracle for structured operators.
inline Eigen::MatrixXd kron_dense(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

inline Eigen::VectorXd random_vector(int n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(lo, hi);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = unif(rng);
    return v;
}

inline std::vector<double> sorted_eigenvalues(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    std::vector<double> ev(es.eigenvalues().data(), es.eigenvalues().data() + m.rows());
    return ev;  // SelfAdjointEigenSolver returns them sorted ascending
}

}  // namespace testutil
