#include <catch2/catch_amalgamated.hpp>

#include "polyshift/shift.hpp"
#include "polyshift/spectrum.hpp"
#include "test_util.hpp"

using namespace polyshift;

namespace {

// Cyclic shift matrix B with B(i,j) = 1 iff j = (i+1) mod n.
Eigen::MatrixXd cyclic_shift_dense(int n) {
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) b(i, (i + 1) % n) = 1.0;
    return b;
}

}  // namespace

TEST_CASE("validate_shift enforces geodesic width <= 1") {
    graph c12 = build_circulant(12, {1});
    sparse_mat l = sym_normalized_laplacian(c12);

    REQUIRE_NOTHROW(validate_shift(l, c12));
    sparse_mat eye(12, 12);
    eye.setIdentity();
    REQUIRE_NOTHROW(validate_shift(eye, c12));
    REQUIRE_THROWS_WITH(validate_shift(sparse_mat(l * l), c12),
                        Catch::Matchers::ContainsSubstring("geodesic-width"));

    shift s = validate_shift(l, c12);
    REQUIRE(s.symmetric);
    Eigen::VectorXd x = testutil::random_vector(12, 3);
    REQUIRE((s.apply(x) - testutil::dense(l) * x).norm() <= 1e-14);
}

TEST_CASE("circulant generator shift") {
    SECTION("N=4, q=1 has first row (1, -1/2, 0, -1/2)") {
        Eigen::MatrixXd m = testutil::dense(circulant_generator_shift(4, 1).mat);
        REQUIRE(m(0, 0) == 1.0);
        REQUIRE(m(0, 1) == -0.5);
        REQUIRE(m(0, 2) == 0.0);
        REQUIRE(m(0, 3) == -0.5);
    }
    SECTION("matches L_sym of the single-generator circulant graph") {
        Eigen::MatrixXd a = testutil::dense(circulant_generator_shift(20, 3).mat);
        Eigen::MatrixXd b = testutil::dense(sym_normalized_laplacian(build_circulant(20, {3})));
        REQUIRE((a - b).norm() <= 1e-14);
    }
    SECTION("eigenvalues are {1 - cos(2 pi q f / N)}") {
        const int n = 16, q = 3;
        auto ev = testutil::sorted_eigenvalues(testutil::dense(circulant_generator_shift(n, q).mat));
        std::vector<double> expected;
        for (int f = 0; f < n; ++f) expected.push_back(1.0 - std::cos(2.0 * M_PI * q * f / n));
        std::sort(expected.begin(), expected.end());
        for (int f = 0; f < n; ++f) REQUIRE_THAT(ev[f], Catch::Matchers::WithinAbs(expected[f], 1e-12));
    }
    SECTION("cyclic-shift identity: L_sym(C(N,{q})) = -1/2 B^{-q} (B^q - I)^2") {
        const int n = 12, q = 5;
        Eigen::MatrixXd b = cyclic_shift_dense(n);
        Eigen::MatrixXd bq = Eigen::MatrixXd::Identity(n, n);
        for (int t = 0; t < q; ++t) bq = bq * b;
        Eigen::MatrixXd bmq = bq.transpose();  // B is a permutation, B^{-q} = (B^q)^T
        Eigen::MatrixXd expected =
            -0.5 * bmq * (bq - Eigen::MatrixXd::Identity(n, n)) * (bq - Eigen::MatrixXd::Identity(n, n));
        REQUIRE((testutil::dense(circulant_generator_shift(n, q).mat) - expected).norm() <= 1e-14);
    }
    SECTION("q = N/2 is rejected") {
        REQUIRE_THROWS_AS(circulant_generator_shift(8, 4), std::invalid_argument);
        REQUIRE_THROWS_AS(circulant_generator_shift(8, 0), std::invalid_argument);
    }
}

TEST_CASE("L_sym of a multi-generator circulant averages the single-generator shifts") {
    for (int n : {20, 100}) {
        std::vector<int> q = {1, 2, 5};
        Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, n);
        for (int qk : q) sum += testutil::dense(circulant_generator_shift(n, qk).mat);
        sum /= static_cast<double>(q.size());
        Eigen::MatrixXd whole = testutil::dense(sym_normalized_laplacian(build_circulant(n, q)));
        REQUIRE((whole - sum).norm() <= 1e-13);
    }
}

TEST_CASE("kron_lift applies without materialization") {
    graph g = build_random_geometric(20, 0.35, 17);
    sparse_mat lg = sym_normalized_laplacian(g);
    sparse_mat lt = laplacian(build_path(6));

    shift s_vertex = kron_lift(lg, kron_side::right, 6);   // I (x) L_G
    shift s_time = kron_lift(lt, kron_side::left, 20);     // L_T (x) I
    REQUIRE(s_vertex.n == 120);
    REQUIRE(s_time.n == 120);
    REQUIRE(s_vertex.symmetric);

    Eigen::VectorXd x = testutil::random_vector(120, 4);

    SECTION("I (x) L applies L snapshot by snapshot") {
        Eigen::VectorXd y = s_vertex.apply(x);
        for (int j = 0; j < 6; ++j) {
            Eigen::VectorXd snap = x.segment(20 * j, 20);
            REQUIRE((y.segment(20 * j, 20) - testutil::dense(lg) * snap).norm() <= 1e-13);
        }
    }
    SECTION("L_T (x) I matches the dense Kronecker oracle") {
        Eigen::MatrixXd oracle =
            testutil::kron_dense(testutil::dense(lt), Eigen::MatrixXd::Identity(20, 20));
        REQUIRE((s_time.apply(x) - oracle * x).norm() <= 1e-12);
    }
    SECTION("materialized form matches structured apply") {
        for (const shift& s : {s_vertex, s_time}) {
            Eigen::MatrixXd m = testutil::dense(s.materialized());
            REQUIRE((s.apply(x) - m * x).norm() <= 1e-12);
        }
    }
    SECTION("size mismatch on apply is an error") {
        REQUIRE_THROWS_AS(s_time.apply(testutil::random_vector(119, 1)), std::invalid_argument);
    }
}

TEST_CASE("commutator norms") {
    SECTION("circulant generator shifts commute") {
        for (int n : {20, 100, 1000}) {
            std::vector<shift> shifts;
            for (int q : {1, 2, 5}) shifts.push_back(circulant_generator_shift(n, q));
            Eigen::MatrixXd norms = commutator_norms(shifts);
            double scale = shifts[0].frobenius_norm() * shifts[1].frobenius_norm();
            REQUIRE(norms.maxCoeff() <= 1e-10 * scale);
        }
    }
    SECTION("Kronecker lifts on opposite sides commute exactly") {
        sparse_mat lg = sym_normalized_laplacian(build_random_geometric(30, 0.3, 5));
        sparse_mat lt = laplacian(build_path(8));
        std::vector<shift> shifts = {kron_lift(lg, kron_side::right, 8),
                                     kron_lift(sparse_mat(0.5 * lt), kron_side::left, 30)};
        REQUIRE(commutator_norms(shifts).maxCoeff() == 0.0);

        // Same conclusion through the materialized operators.
        std::vector<shift> mats = {shift::from_matrix(shifts[0].materialized()),
                                   shift::from_matrix(shifts[1].materialized())};
        REQUIRE(commutator_norms(mats).maxCoeff() <= 1e-12);
    }
    SECTION("a generic width-1 symmetric matrix does not commute with L_sym") {
        graph p3 = build_path(3);
        sparse_mat l = sym_normalized_laplacian(p3);
        Eigen::MatrixXd r = Eigen::MatrixXd::Zero(3, 3);
        r(0, 0) = 0.7;
        r(0, 1) = r(1, 0) = -0.3;
        r(1, 1) = -0.2;
        r(1, 2) = r(2, 1) = 0.9;
        r(2, 2) = 0.4;
        std::vector<shift> shifts = {shift::from_matrix(l), validate_shift(r.sparseView(), p3)};
        REQUIRE(commutator_norms(shifts).maxCoeff() > 1e-3);
        REQUIRE_THROWS_AS(make_family(std::move(shifts)), std::invalid_argument);
    }
}

TEST_CASE("make_family accepts the benchmark families and flags symmetry") {
    std::vector<shift> shifts;
    for (int q : {1, 2, 5}) shifts.push_back(circulant_generator_shift(50, q));
    shift_family f = make_family(std::move(shifts));
    REQUIRE(f.dims() == 3);
    REQUIRE(f.symmetric);
    REQUIRE(f.n == 50);
}
