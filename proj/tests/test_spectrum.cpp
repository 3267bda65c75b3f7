#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "polyshift/shift.hpp"
#include "polyshift/spectrum.hpp"
#include "test_util.hpp"

using namespace polyshift;

namespace {

// Sorts spectrum rows lexicographically so multisets can be compared.
Eigen::MatrixXd sorted_rows(Eigen::MatrixXd m) {
    std::vector<int> order(m.rows());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        for (int k = 0; k < m.cols(); ++k) {
            if (m(a, k) < m(b, k) - 1e-11) return true;
            if (m(a, k) > m(b, k) + 1e-11) return false;
        }
        return false;
    });
    Eigen::MatrixXd out(m.rows(), m.cols());
    for (int i = 0; i < m.rows(); ++i) out.row(i) = m.row(order[i]);
    return out;
}

}  // namespace

TEST_CASE("joint spectrum of a single shift is its eigendecomposition") {
    shift_family f = single_shift_family(
        shift::from_matrix(sym_normalized_laplacian(build_circulant(8, {1}))));
    const joint_spectrum& js = compute_joint_spectrum(f);
    REQUIRE(js.n() == 8);
    REQUIRE(js.dims() == 1);
    REQUIRE(js.hermitian);

    std::vector<double> expected;
    for (int k = 0; k < 8; ++k) expected.push_back(1.0 - std::cos(M_PI * k / 4.0));
    std::sort(expected.begin(), expected.end());
    Eigen::MatrixXd got = sorted_rows(js.lambda);
    for (int k = 0; k < 8; ++k) REQUIRE_THAT(got(k, 0), Catch::Matchers::WithinAbs(expected[k], 1e-10));

    // Reconstruction through the returned transform.
    Eigen::MatrixXd s = testutil::dense(f.shifts[0].mat);
    Eigen::MatrixXcd recon =
        js.transform * js.lambda.col(0).cast<std::complex<double>>().asDiagonal() *
        js.transform.adjoint();
    REQUIRE((recon.real() - s).norm() <= 1e-8 * s.norm());
    REQUIRE(recon.imag().norm() <= 1e-10);
}

TEST_CASE("joint spectrum of circulant generator shifts matches the DFT oracle") {
    const int n = 16;
    std::vector<shift> shifts = {circulant_generator_shift(n, 1), circulant_generator_shift(n, 2)};
    shift_family f = make_family(std::move(shifts));
    const joint_spectrum& js = compute_joint_spectrum(f);

    Eigen::MatrixXd expected(n, 2);
    for (int fq = 0; fq < n; ++fq) {
        expected(fq, 0) = 1.0 - std::cos(2.0 * M_PI * fq / n);
        expected(fq, 1) = 1.0 - std::cos(4.0 * M_PI * fq / n);
    }
    REQUIRE((sorted_rows(js.lambda) - sorted_rows(expected)).cwiseAbs().maxCoeff() <= 1e-8);

    SECTION("every shift is reconstructed from the joint transform") {
        for (int k = 0; k < f.dims(); ++k) {
            Eigen::MatrixXd s = testutil::dense(f.shifts[k].mat);
            Eigen::MatrixXcd recon =
                js.transform * js.lambda.col(k).cast<std::complex<double>>().asDiagonal() *
                js.transform.adjoint();
            REQUIRE((recon.real() - s).norm() <= 1e-8 * s.norm());
        }
    }
}

TEST_CASE("analytic circulant spectrum agrees with the dense eigensolver") {
    const int n = 64;
    const std::vector<int> q = {1, 2, 5};
    Eigen::VectorXd analytic = circulant_lsym_spectrum(n, q);
    std::vector<double> a(analytic.data(), analytic.data() + n);
    std::sort(a.begin(), a.end());
    auto dense_ev = testutil::sorted_eigenvalues(
        testutil::dense(sym_normalized_laplacian(build_circulant(n, q))));
    for (int i = 0; i < n; ++i) REQUIRE_THAT(a[i], Catch::Matchers::WithinAbs(dense_ev[i], 1e-12));
}

TEST_CASE("Kronecker-structured family yields the Cartesian grid spectrum") {
    sparse_mat la = sym_normalized_laplacian(build_path(4));
    sparse_mat lb = sym_normalized_laplacian(build_circulant(5, {1}));
    shift_family f = make_family({kron_lift(la, kron_side::left, 5),
                                  kron_lift(lb, kron_side::right, 4)});
    const joint_spectrum& js = compute_joint_spectrum(f);
    REQUIRE(js.n() == 20);
    REQUIRE(js.has_transform());

    Eigen::VectorXd eva =
        Eigen::Map<const Eigen::VectorXd>(testutil::sorted_eigenvalues(testutil::dense(la)).data(), 4);
    Eigen::VectorXd evb =
        Eigen::Map<const Eigen::VectorXd>(testutil::sorted_eigenvalues(testutil::dense(lb)).data(), 5);
    Eigen::MatrixXd expected(20, 2);
    int r = 0;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j) {
            expected(r, 0) = eva[i];
            expected(r, 1) = evb[j];
            ++r;
        }
    REQUIRE((sorted_rows(js.lambda) - sorted_rows(expected)).cwiseAbs().maxCoeff() <= 1e-8);

    SECTION("grid spectrum matches the materialized dense computation") {
        shift_family fm = make_family({shift::from_matrix(f.shifts[0].materialized()),
                                       shift::from_matrix(f.shifts[1].materialized())});
        const joint_spectrum& js2 = compute_joint_spectrum(fm);
        REQUIRE((sorted_rows(js2.lambda) - sorted_rows(js.lambda)).cwiseAbs().maxCoeff() <= 1e-8);
    }
    SECTION("reconstruction residual through the grid transform") {
        for (int k = 0; k < 2; ++k) {
            Eigen::MatrixXd s = testutil::dense(f.shifts[k].materialized());
            Eigen::MatrixXcd recon =
                js.transform * js.lambda.col(k).cast<std::complex<double>>().asDiagonal() *
                js.transform.adjoint();
            REQUIRE((recon.real() - s).norm() <= 1e-8 * s.norm());
        }
    }
}

TEST_CASE("large Kronecker grids skip the transform but keep the values") {
    sparse_mat la = laplacian(build_path(24));
    sparse_mat lb = sym_normalized_laplacian(build_random_geometric(200, 0.12, 3));
    shift_family f = make_family({kron_lift(sparse_mat(0.5 * la), kron_side::left, 200),
                                  kron_lift(lb, kron_side::right, 24)});
    const joint_spectrum& js = compute_joint_spectrum(f);
    REQUIRE(js.n() == 4800);
    REQUIRE_FALSE(js.has_transform());
    REQUIRE(js.lambda.col(0).minCoeff() >= -1e-12);
    REQUIRE(js.lambda.col(1).maxCoeff() <= 2.0 + 1e-12);
}

TEST_CASE("joint Jacobi sweep diagonalizes a commuting pair") {
    // Start from matrices with exactly degenerate combined eigenvalues so the
    // sweep, not the random-combination shortcut, is exercised.
    const int n = 10;
    Eigen::MatrixXd a = testutil::dense(sym_normalized_laplacian(build_circulant(n, {1})));
    Eigen::MatrixXd b = testutil::dense(sym_normalized_laplacian(build_circulant(n, {2})));
    std::vector<Eigen::MatrixXd> mats = {a, b};
    Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
    detail::joint_jacobi_sweeps(mats, v);
    for (const auto& m : mats) REQUIRE(detail::offdiag_mass(m) <= 1e-9);
    REQUIRE((v * v.transpose() - Eigen::MatrixXd::Identity(n, n)).norm() <= 1e-10);
}

TEST_CASE("spectral multiplier recovery (commuting operators are polynomials)") {
    sparse_mat la = sym_normalized_laplacian(build_path(4));
    sparse_mat lb = sym_normalized_laplacian(build_path(5));
    shift_family f = make_family({kron_lift(la, kron_side::left, 5),
                                  kron_lift(lb, kron_side::right, 4)});
    const joint_spectrum& js = compute_joint_spectrum(f);
    REQUIRE(js.distinct);

    Eigen::MatrixXd s1 = testutil::dense(f.shifts[0].materialized());
    Eigen::MatrixXd s2 = testutil::dense(f.shifts[1].materialized());

    SECTION("H = 3I - 2 S1 + S1 S2") {
        Eigen::MatrixXd h = 3.0 * Eigen::MatrixXd::Identity(20, 20) - 2.0 * s1 + s1 * s2;
        Eigen::VectorXcd vals = recover_spectral_multiplier(h, f);
        for (int i = 0; i < 20; ++i) {
            const double expected =
                3.0 - 2.0 * js.lambda(i, 0) + js.lambda(i, 0) * js.lambda(i, 1);
            REQUIRE_THAT(vals[i].real(), Catch::Matchers::WithinAbs(expected, 1e-8));
            REQUIRE_THAT(vals[i].imag(), Catch::Matchers::WithinAbs(0.0, 1e-10));
        }
    }
    SECTION("H = I recovers all ones") {
        Eigen::VectorXcd vals = recover_spectral_multiplier(Eigen::MatrixXd::Identity(20, 20), f);
        REQUIRE((vals.real().array() - 1.0).abs().maxCoeff() <= 1e-10);
    }
    SECTION("non-commuting H is rejected") {
        Eigen::MatrixXd r = Eigen::MatrixXd::Random(20, 20);
        Eigen::MatrixXd h = 0.5 * (r + r.transpose());
        REQUIRE_THROWS_AS(recover_spectral_multiplier(h, f), std::invalid_argument);
    }
    SECTION("non-distinct spectrum is refused") {
        shift_family cyc = single_shift_family(
            shift::from_matrix(sym_normalized_laplacian(build_circulant(8, {1}))));
        const joint_spectrum& cjs = compute_joint_spectrum(cyc);
        REQUIRE_FALSE(cjs.distinct);
        Eigen::MatrixXd h = Eigen::MatrixXd::Identity(8, 8);
        REQUIRE_THROWS_AS(recover_spectral_multiplier(h, cyc), std::invalid_argument);
    }
}

TEST_CASE("distance to the polynomial-filter set") {
    sparse_mat la = sym_normalized_laplacian(build_path(4));
    sparse_mat lb = sym_normalized_laplacian(build_path(5));
    shift_family f = make_family({kron_lift(la, kron_side::left, 5),
                                  kron_lift(lb, kron_side::right, 4)});
    const joint_spectrum& js = compute_joint_spectrum(f);
    Eigen::MatrixXd s1 = testutil::dense(f.shifts[0].materialized());
    Eigen::MatrixXd s2 = testutil::dense(f.shifts[1].materialized());

    SECTION("polynomials of the shifts are at distance ~0") {
        Eigen::MatrixXd h = 0.3 * Eigen::MatrixXd::Identity(20, 20) + s1 * s1 - 0.7 * s2;
        poly_distance pd = dist_to_polynomial_set(h, f);
        REQUIRE(pd.exact <= 1e-10);
        REQUIRE(pd.lower <= 1e-10);
        REQUIRE(pd.lower <= pd.exact + 1e-12);
        REQUIRE(pd.exact <= pd.upper + 1e-12);
    }
    SECTION("a perturbation placed off-diagonal in the joint basis is measured exactly") {
        Eigen::MatrixXd e = Eigen::MatrixXd::Zero(20, 20);
        e(3, 11) = e(11, 3) = 0.25;
        e(0, 17) = e(17, 0) = -0.4;
        Eigen::MatrixXd u = js.transform.real();
        Eigen::MatrixXd h = s1 + u * e * u.transpose();
        poly_distance pd = dist_to_polynomial_set(h, f);
        REQUIRE_THAT(pd.exact, Catch::Matchers::WithinAbs(e.norm(), 1e-10));
        REQUIRE(pd.lower <= pd.exact + 1e-12);
        REQUIRE(pd.exact <= pd.upper + 1e-12);
    }
    SECTION("sandwich inequality on random symmetric operators") {
        std::mt19937_64 rng(99);
        std::normal_distribution<double> gauss(0, 1);
        for (int trial = 0; trial < 25; ++trial) {
            Eigen::MatrixXd r(20, 20);
            for (int i = 0; i < 20; ++i)
                for (int j = 0; j < 20; ++j) r(i, j) = gauss(rng);
            Eigen::MatrixXd h = 0.5 * (r + r.transpose());
            poly_distance pd = dist_to_polynomial_set(h, f);
            REQUIRE(pd.lower <= pd.exact + 1e-9);
            REQUIRE(pd.exact <= pd.upper + 1e-9);
        }
    }
}

TEST_CASE("spectral values apply as operators") {
    shift_family f = single_shift_family(
        shift::from_matrix(sym_normalized_laplacian(build_path(9))));
    const joint_spectrum& js = compute_joint_spectrum(f);
    Eigen::VectorXd vals(9);
    for (int i = 0; i < 9; ++i) vals[i] = 1.0 / (1.0 + js.lambda(i, 0));
    Eigen::VectorXd x = testutil::random_vector(9, 8);
    Eigen::MatrixXd s = testutil::dense(f.shifts[0].mat);
    Eigen::MatrixXd op = (Eigen::MatrixXd::Identity(9, 9) + s).inverse();
    REQUIRE((apply_spectral_values(js, vals, x) - op * x).norm() <= 1e-10);
}

TEST_CASE("spectrum CSV export") {
    namespace fs = std::filesystem;
    shift_family f = make_circulant_generator_family(6, {1, 2});
    const joint_spectrum& js = compute_joint_spectrum(f);
    auto path = (fs::temp_directory_path() / "polyshift_spectrum.csv").string();
    save_spectrum_csv(js, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "i,lambda_1,lambda_2");
    int rows = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    REQUIRE(rows == 6);
    std::remove(path.c_str());
}

TEST_CASE("analytic circulant families carry their spectrum") {
    shift_family f1 = make_circulant_lsym_family(40, {1, 2, 5});
    REQUIRE(f1.spectrum_cache != nullptr);
    const joint_spectrum& js = compute_joint_spectrum(f1);  // served from cache
    REQUIRE(js.n() == 40);
    REQUIRE(js.dims() == 1);

    // Values match a dense eigensolve as multisets.
    auto dense_ev = testutil::sorted_eigenvalues(testutil::dense(f1.shifts[0].mat));
    Eigen::MatrixXd got = sorted_rows(js.lambda);
    for (int i = 0; i < 40; ++i)
        REQUIRE_THAT(got(i, 0), Catch::Matchers::WithinAbs(dense_ev[i], 1e-10));

    shift_family f2 = make_circulant_generator_family(40, {1, 2, 5});
    REQUIRE(f2.dims() == 3);
    REQUIRE(f2.spectrum_cache != nullptr);
    REQUIRE(compute_joint_spectrum(f2).dims() == 3);
}
