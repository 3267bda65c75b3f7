#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "polyshift/distnet.hpp"
#include "test_util.hpp"

using namespace polyshift;

namespace {

poly_coeffs h1_poly() {
    return poly_coeffs::univariate({27.0 / 4.0, -3.0 / 4.0, -1.0});
}

shift_family lsym_family(const graph& g) {
    return single_shift_family(shift::from_matrix(sym_normalized_laplacian(g)));
}

// Random multivariate coefficients for a given degree vector.
poly_coeffs random_poly(const std::vector<int>& degrees, std::mt19937_64& rng) {
    poly_coeffs h = poly_coeffs::zeros(degrees);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (double& c : h.coeffs) c = unif(rng);
    return h;
}

// Undirected edge set of the union support, for validating message logs
// against a source independent of the simulator.
std::set<std::pair<int, int>> edge_set(const graph& g) {
    std::set<std::pair<int, int>> edges;
    for (int i = 0; i < g.n; ++i)
        for (int j : g.adj[i]) edges.insert({i, j});
    return edges;
}

long long pipeline_round_bound(const std::vector<int>& degrees) {
    // sum_{m=0}^{d-1} prod_{k=1}^{m+1} (L_k + 1)
    long long total = 0, prefix = 1;
    for (int lk : degrees) {
        prefix *= (lk + 1);
        total += prefix;
    }
    return total;
}

long long full_run_rounds(const std::vector<int>& degrees) {
    long long prod = 1;
    for (int lk : degrees) prod *= (lk + 1);
    return prod - 1;
}

}  // namespace

TEST_CASE("a single tap costs one exchange round and returns Sx") {
    shift_family f = make_circulant_lsym_family(12, {1});
    Eigen::VectorXd x = testutil::random_vector(12, 7);
    auto [y, cs] = sim_filter(poly_coeffs::univariate({0.0, 1.0}), f, x);
    REQUIRE((y - f.shifts[0].apply(x)).norm() <= 1e-13 * x.norm());
    REQUIRE(cs.rounds == 1);
    REQUIRE(cs.total_messages == 2 * 12);  // both directions of each C(12,{1}) edge
    for (const auto& msg : cs.log) REQUIRE(msg.payload_size == 1);
}

TEST_CASE("a degree-zero filter needs no communication") {
    shift_family f = make_circulant_lsym_family(10, {1});
    Eigen::VectorXd x = testutil::random_vector(10, 3);
    auto [y, cs] = sim_filter(poly_coeffs::univariate({2.5}), f, x);
    REQUIRE((y - 2.5 * x).norm() == 0.0);
    REQUIRE(cs.rounds == 0);
    REQUIRE(cs.total_messages == 0);
}

TEST_CASE("bivariate pipeline matches the centralized apply with exact round count") {
    const graph g = build_circulant(30, {1, 2});
    shift_family f = make_circulant_generator_family(30, {1, 2});
    std::mt19937_64 rng(2024);
    poly_coeffs h = random_poly({2, 3}, rng);
    Eigen::VectorXd x = testutil::random_vector(30, 5);

    filter_cost cost;
    Eigen::VectorXd want = apply(h, f, x, &cost);
    auto [got, cs] = sim_filter(h, f, x);

    REQUIRE((got - want).norm() <= 1e-10 * want.norm());
    REQUIRE(cs.rounds == full_run_rounds({2, 3}));          // 11
    REQUIRE(cs.rounds <= pipeline_round_bound({2, 3}));        // 15
    REQUIRE(cs.multiplies == cost.multiplies);

    // Per-vertex send totals: deg(i) messages per round, within the
    // O(#N_i prod(L_k+1)) budget at constant 4.
    long long prod = 12;
    for (int i = 0; i < g.n; ++i) {
        const long long deg = static_cast<long long>(g.adj[i].size());
        REQUIRE(cs.per_vertex[i] == deg * cs.rounds);
        REQUIRE(cs.per_vertex[i] <= 4 * deg * prod);
    }
}

TEST_CASE("distributed filtering equals centralized apply on random instances") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 20 + static_cast<int>(rng() % 181);  // 20..200
        const int d = 1 + static_cast<int>(rng() % 3);
        std::set<int> gens{1};
        while (static_cast<int>(gens.size()) < d)
            gens.insert(1 + static_cast<int>(rng() % std::max(1, n / 2 - 1)));
        shift_family f =
            make_circulant_generator_family(n, std::vector<int>(gens.begin(), gens.end()));
        std::vector<int> degrees(d);
        for (int& lk : degrees) lk = static_cast<int>(rng() % 5);
        poly_coeffs h = random_poly(degrees, rng);
        Eigen::VectorXd x = testutil::random_vector(n, rng());

        sim_options so;
        so.log_messages = (trial % 2 == 0);
        auto [got, cs] = sim_filter(h, f, x, so);
        Eigen::VectorXd want = apply(h, f, x);
        const double scale = std::max(1.0, want.norm());
        REQUIRE((got - want).norm() <= 1e-9 * scale);
        REQUIRE(cs.rounds == full_run_rounds(degrees));
        if (!so.log_messages) REQUIRE(cs.log.empty());
    }
}

TEST_CASE("agent execution order does not change a single bit") {
    shift_family f = make_circulant_generator_family(40, {1, 3});
    std::mt19937_64 rng(4);
    poly_coeffs h = random_poly({3, 2}, rng);
    Eigen::VectorXd x = testutil::random_vector(40, 11);

    std::vector<int> reversed(40), shuffled(40);
    for (int i = 0; i < 40; ++i) reversed[i] = 39 - i;
    for (int i = 0; i < 40; ++i) shuffled[i] = i;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);

    auto [y0, c0] = sim_filter(h, f, x);
    sim_options rev;
    rev.schedule = &reversed;
    auto [y1, c1] = sim_filter(h, f, x, rev);
    sim_options shuf;
    shuf.schedule = &shuffled;
    auto [y2, c2] = sim_filter(h, f, x, shuf);

    REQUIRE((y0.array() == y1.array()).all());
    REQUIRE((y0.array() == y2.array()).all());
    REQUIRE(c0.total_messages == c1.total_messages);
    REQUIRE(c0.rounds == c2.rounds);

    SECTION("bad schedules are rejected") {
        std::vector<int> short_sched(39, 0);
        sim_options bad;
        bad.schedule = &short_sched;
        REQUIRE_THROWS_AS(sim_filter(h, f, x, bad), std::invalid_argument);
        std::vector<int> dup(40, 7);
        bad.schedule = &dup;
        REQUIRE_THROWS_AS(sim_filter(h, f, x, bad), std::invalid_argument);
    }
}

TEST_CASE("every logged message travels along a graph edge") {
    const graph g = build_circulant(24, {1, 3});
    shift_family f = make_circulant_generator_family(24, {1, 3});
    std::mt19937_64 rng(8);
    poly_coeffs h = random_poly({2, 2}, rng);
    Eigen::VectorXd x = testutil::random_vector(24, 21);
    auto [y, cs] = sim_filter(h, f, x);

    const auto edges = edge_set(g);
    std::vector<long long> sent(g.n, 0);
    std::vector<long long> per_round(cs.rounds, 0);
    for (const auto& msg : cs.log) {
        REQUIRE(edges.count({msg.src, msg.dst}) == 1);
        REQUIRE(msg.round >= 0);
        REQUIRE(msg.round < cs.rounds);
        ++sent[msg.src];
        ++per_round[msg.round];
    }
    REQUIRE(static_cast<long long>(cs.log.size()) == cs.total_messages);
    for (int i = 0; i < g.n; ++i) REQUIRE(sent[i] == cs.per_vertex[i]);
    for (long long r = 0; r < cs.rounds; ++r) REQUIRE(per_round[r] == cs.per_round[r]);
}

TEST_CASE("zero iterations of the inverse loop return the zero signal") {
    shift_family f = make_circulant_lsym_family(30, {1, 2});
    poly_coeffs h1 = h1_poly();
    auto [g, a1] = optimal_poly(h1, compute_joint_spectrum(f), 1);
    Eigen::VectorXd b = testutil::random_vector(30, 13);
    auto [x, tr, cs] = sim_inverse(approximant::polynomial(g, "iopa-1"), h1, f, b, 0);
    REQUIRE(x.norm() == 0.0);
    REQUIRE(tr.iterations == 0);
    REQUIRE(tr.residuals.size() == 1);
    REQUIRE_THAT(tr.residuals[0], Catch::Matchers::WithinRel(b.norm(), 1e-15));
    REQUIRE(cs.rounds == 0);
}

TEST_CASE("distributed inverse iteration matches the centralized trace") {
    shift_family f = make_circulant_lsym_family(200, {1, 2, 5});
    poly_coeffs h1 = h1_poly();
    const joint_spectrum& js = compute_joint_spectrum(f);
    Eigen::VectorXd b = testutil::random_vector(200, 17);
    auto h_op = [&](const Eigen::VectorXd& v) { return apply(h1, f, v); };

    SECTION("polynomial approximant (degree 1)") {
        auto [gp, a1] = optimal_poly(h1, js, 1);
        approximant g = approximant::polynomial(gp, "iopa-1");
        solve_options opt;
        opt.max_iterations = 6;
        solve_trace want = iterative_approx(h_op, g.as_op(f), b, opt, "iopa-1");
        auto [x, tr, cs] = sim_inverse(g, h1, f, b, 6);

        REQUIRE(tr.iterations == want.iterations);
        REQUIRE(tr.residuals.size() == want.residuals.size());
        for (std::size_t m = 0; m < want.residuals.size(); ++m)
            REQUIRE_THAT(tr.residuals[m],
                         Catch::Matchers::WithinAbs(want.residuals[m], 1e-10 * b.norm()));
        REQUIRE((x - want.x).norm() <= 1e-10 * want.x.norm());
        // G costs prod(L+1)-1 = 1 round, H costs 2, per iteration.
        REQUIRE(cs.rounds == 3 * tr.iterations);
    }

    SECTION("Chebyshev approximant (degree 2)") {
        cheb_coeffs gc = chebyshev_coeffs(h1, 1, 2);
        approximant g = approximant::chebyshev(gc, "icpa-2");
        solve_options opt;
        opt.max_iterations = 8;
        solve_trace want = iterative_approx(h_op, g.as_op(f), b, opt, "icpa-2");
        auto [x, tr, cs] = sim_inverse(g, h1, f, b, 8);

        REQUIRE(tr.iterations == want.iterations);
        for (std::size_t m = 0; m < want.residuals.size(); ++m)
            REQUIRE_THAT(tr.residuals[m],
                         Catch::Matchers::WithinAbs(want.residuals[m], 1e-10 * b.norm()));
        REQUIRE((x - want.x).norm() <= 1e-10 * want.x.norm());
    }

    SECTION("scaled identity (gradient step) spends rounds only on H") {
        auto r = spectral_range(h1, js);
        approximant g = approximant::scaled_identity(2.0 / (r[0] + r[1]));
        solve_options opt;
        opt.max_iterations = 10;
        solve_trace want = iterative_approx(h_op, g.as_op(f), b, opt, "gd0");
        auto [x, tr, cs] = sim_inverse(g, h1, f, b, 10);

        REQUIRE(tr.iterations == want.iterations);
        for (std::size_t m = 0; m < want.residuals.size(); ++m)
            REQUIRE_THAT(tr.residuals[m],
                         Catch::Matchers::WithinAbs(want.residuals[m], 1e-10 * b.norm()));
        REQUIRE(cs.rounds == 2 * tr.iterations);  // H has degree 2, G is local
    }

    SECTION("identical schedules give bitwise identical inverse runs") {
        auto [gp, a1] = optimal_poly(h1, js, 1);
        approximant g = approximant::polynomial(gp, "iopa-1");
        std::vector<int> reversed(200);
        for (int i = 0; i < 200; ++i) reversed[i] = 199 - i;
        sim_options rev;
        rev.schedule = &reversed;
        auto [x0, t0, c0] = sim_inverse(g, h1, f, b, 5);
        auto [x1, t1, c1] = sim_inverse(g, h1, f, b, 5, {}, rev);
        REQUIRE((x0.array() == x1.array()).all());
        REQUIRE(t0.residuals == t1.residuals);
    }
}

TEST_CASE("structured shifts are materialized only up to the cap") {
    // S (x) I_8 and I_5 (x) T on 40 vertices: commuting, small enough.
    sparse_mat s5 = sym_normalized_laplacian(build_path(5));
    sparse_mat t8 = sym_normalized_laplacian(build_circulant(8, {1}));
    shift_family f = make_family({kron_lift(s5, kron_side::left, 8),
                                  kron_lift(t8, kron_side::right, 5)});
    REQUIRE(simulatable(f));

    std::mt19937_64 rng(31);
    poly_coeffs h = random_poly({1, 2}, rng);
    Eigen::VectorXd x = testutil::random_vector(40, 23);
    auto [got, cs] = sim_filter(h, f, x);
    Eigen::VectorXd want = apply(h, f, x);
    REQUIRE((got - want).norm() <= 1e-10 * std::max(1.0, want.norm()));

    SECTION("oversized structured families are rejected") {
        sparse_mat big = sym_normalized_laplacian(build_circulant(100, {1}));
        shift_family fbig = single_shift_family(kron_lift(big, kron_side::left, 100));
        REQUIRE(fbig.n == 10000);
        REQUIRE_FALSE(simulatable(fbig));
        Eigen::VectorXd xbig = Eigen::VectorXd::Ones(10000);
        REQUIRE_THROWS_AS(sim_filter(poly_coeffs::univariate({0.0, 1.0}), fbig, xbig),
                          std::invalid_argument);
    }
}

TEST_CASE("non-local approximants and broken networks are rejected") {
    SECTION("spectral-value approximants need a global basis") {
        shift_family f = lsym_family(build_circulant(16, {1, 2}));
        poly_coeffs h1 = h1_poly();
        approximant gi = interpolation_inverse(h1, compute_joint_spectrum(f));
        Eigen::VectorXd b = testutil::random_vector(16, 29);
        REQUIRE_THROWS_AS(sim_inverse(gi, h1, f, b, 3), std::invalid_argument);
    }
    SECTION("disconnected communication graphs are a precondition failure") {
        // Two disjoint triangles, assembled directly.
        std::vector<Eigen::Triplet<double>> trips;
        for (int base : {0, 3})
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    if (i != j) trips.emplace_back(base + i, base + j, -0.5);
        for (int i = 0; i < 6; ++i) trips.emplace_back(i, i, 1.0);
        sparse_mat m(6, 6);
        m.setFromTriplets(trips.begin(), trips.end());
        shift_family f = single_shift_family(shift::from_matrix(m));
        Eigen::VectorXd x = Eigen::VectorXd::Ones(6);
        REQUIRE_THROWS_WITH(sim_filter(poly_coeffs::univariate({0.0, 1.0}), f, x),
                            Catch::Matchers::ContainsSubstring("disconnected"));
    }
}

TEST_CASE("communication records export to CSV and JSON") {
    shift_family f = make_circulant_lsym_family(14, {1});
    Eigen::VectorXd x = testutil::random_vector(14, 2);
    auto [y, cs] = sim_filter(h1_poly(), f, x);

    const auto dir = std::filesystem::temp_directory_path();
    const std::string path = (dir / "polyshift_comm_test.csv").string();
    save_comm_csv(cs, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "round,src,dst,payload_size");
    long long rows = 0;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) ++rows;
    REQUIRE(rows == cs.total_messages);
    std::filesystem::remove(path);

    nlohmann::json summary = comm_summary_json(cs);
    REQUIRE(summary["rounds"].get<long long>() == cs.rounds);
    REQUIRE(summary["messages"].get<long long>() == cs.total_messages);
    REQUIRE(summary["multiplies"].get<long long>() == cs.multiplies);
    REQUIRE(summary["per_round_max"].get<long long>() == 2 * 14);
}
