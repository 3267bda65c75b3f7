#pragma once

// Vertex-level simulation of polynomial filtering and inverse filtering.
//
// Every vertex hosts an agent that owns its rows of the shift operators
// (restricted to its closed neighborhood), scalar working state, and its
// slice of the pipeline column storage. Communication happens in synchronized
// rounds: a round delivers each agent's transmit scalar to all of its
// neighbors — one logged message per directed edge — and agents then update
// their own state reading nothing but the delivered snapshot and their local
// storage. Within a round the agent execution order is irrelevant by
// construction (snapshot-read/own-write), so any schedule produces bitwise
// identical results.
//
// The update sequences mirror `apply`, `apply_cheb` and `iterative_approx`
// operation for operation, in the same summation order, so simulated and
// centralized runs coincide to the last bits rather than merely to rounding.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "polyshift/inverse.hpp"

namespace polyshift {

/// One delivered message; `payload_size` counts doubles on the wire (always 1
/// here — every exchange ships a single scalar).
struct comm_message {
    int round = 0;
    int src = 0;
    int dst = 0;
    int payload_size = 1;
};

/// Communication and work accounting for one simulated run.
struct comm_stats {
    long long rounds = 0;            ///< synchronized exchange rounds
    long long total_messages = 0;
    long long multiplies = 0;        ///< scalar multiplies across all agents
    std::vector<long long> per_round;   ///< messages delivered in each round
    std::vector<long long> per_vertex;  ///< messages sent by each vertex
    std::vector<comm_message> log;      ///< empty when logging is disabled
};

/// Simulation knobs. `schedule` fixes the order agents execute within a
/// round; any permutation must (and does) give bitwise identical output.
struct sim_options {
    const std::vector<int>* schedule = nullptr;
    bool log_messages = true;
};

/// Per-vertex state. `rows[k]` is the agent's row of S_k restricted to its
/// closed neighborhood, in ascending column order (the fixed summation
/// order). `sig` is the local copy of the current filter input, `z` doubles
/// as work register and transmit register, `x`/`e` hold the inverse-iteration
/// state, and `u` is the agent's row of the pipeline column storage U_m(i,.).
/// Filter coefficients are broadcast once and shared read-only; each agent
/// conceptually holds its own copy.
struct vertex_agent {
    int id = 0;
    std::vector<std::vector<std::pair<int, double>>> rows;
    double sig = 0.0;
    double z = 0.0;
    double x = 0.0;
    double e = 0.0;
    std::vector<double> u;
};

/// Structured (Kronecker) shifts are materialized for simulation only up to
/// this operator size; larger instances must run centralized.
inline constexpr int sim_materialize_cap = 4096;

/// True when the family can be simulated at the vertex level: every shift is
/// explicit, or small enough that its structured form may be materialized.
inline bool simulatable(const shift_family& f) {
    for (const auto& s : f.shifts)
        if (s.structured && f.n > sim_materialize_cap) return false;
    return true;
}

namespace detail {

// The network: agents, the union communication graph, and the synchronized
// exchange. All pipeline arithmetic lives here so that sim_filter and
// sim_inverse share one mechanism.
class network {
  public:
    network(const shift_family& f, const sim_options& so, comm_stats& stats)
        : stats_(stats), n_(f.n) {
        const int d = f.dims();
        std::vector<sparse_mat> mats;
        mats.reserve(d);
        for (int k = 0; k < d; ++k) {
            const shift& s = f.shifts[k];
            if (!s.structured) {
                mats.push_back(s.mat);
                continue;
            }
            if (n_ > sim_materialize_cap)
                throw std::invalid_argument(
                    "sim: structured shift of size " + std::to_string(n_) +
                    " exceeds the materialization cap (" +
                    std::to_string(sim_materialize_cap) + "); run centralized instead");
            std::fprintf(stderr,
                         "[polyshift] note: materializing structured shift %d (n=%d) "
                         "for vertex-level simulation\n",
                         k + 1, n_);
            mats.push_back(s.materialized());
        }

        agents_.resize(n_);
        nbrs_.assign(n_, {});
        nnz_.assign(d, 0);
        for (int i = 0; i < n_; ++i) {
            agents_[i].id = i;
            agents_[i].rows.resize(d);
        }
        for (int k = 0; k < d; ++k) {
            nnz_[k] = mats[k].nonZeros();
            for (int i = 0; i < n_; ++i)
                for (sparse_mat::InnerIterator it(mats[k], i); it; ++it) {
                    agents_[i].rows[k].emplace_back(static_cast<int>(it.col()), it.value());
                    if (it.col() != i) nbrs_[i].push_back(static_cast<int>(it.col()));
                }
        }
        for (int i = 0; i < n_; ++i) {
            std::sort(nbrs_[i].begin(), nbrs_[i].end());
            nbrs_[i].erase(std::unique(nbrs_[i].begin(), nbrs_[i].end()), nbrs_[i].end());
        }
        // Hard locality check: an agent's rows may only reach its closed
        // neighborhood. Cannot fire for consistent input; guards refactors.
        for (int i = 0; i < n_; ++i)
            for (int k = 0; k < d; ++k)
                for (const auto& [j, w] : agents_[i].rows[k])
                    if (j != i &&
                        !std::binary_search(nbrs_[i].begin(), nbrs_[i].end(), j))
                        throw std::logic_error("sim: shift row reaches outside the neighborhood");

        // Connected communication graph is a precondition of the algorithms.
        std::vector<char> seen(n_, 0);
        std::vector<int> stack{0};
        seen[0] = 1;
        int reached = 1;
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            for (int w : nbrs_[v])
                if (!seen[w]) {
                    seen[w] = 1;
                    ++reached;
                    stack.push_back(w);
                }
        }
        if (n_ > 1 && reached < n_)
            throw std::invalid_argument("sim: communication graph is disconnected");

        if (so.schedule != nullptr) {
            if (static_cast<int>(so.schedule->size()) != n_)
                throw std::invalid_argument("sim: schedule length != vertex count");
            std::vector<char> hit(n_, 0);
            for (int v : *so.schedule) {
                if (v < 0 || v >= n_ || hit[v])
                    throw std::invalid_argument("sim: schedule is not a permutation");
                hit[v] = 1;
            }
            schedule_ = *so.schedule;
        } else {
            schedule_.resize(n_);
            for (int i = 0; i < n_; ++i) schedule_[i] = i;
        }
        log_ = so.log_messages;
        stats_.per_vertex.assign(n_, 0);
    }

    int size() const { return n_; }
    const std::vector<std::vector<int>>& neighborhoods() const { return nbrs_; }

    // ---- agent state transfer --------------------------------------------
    void load_sig(const Eigen::VectorXd& v) {
        for (int i = 0; i < n_; ++i) agents_[i].sig = v[i];
    }
    void set_z(const Eigen::VectorXd& v) {
        for (int i = 0; i < n_; ++i) agents_[i].z = v[i];
    }
    Eigen::VectorXd gather_z() const {
        Eigen::VectorXd v(n_);
        for (int i = 0; i < n_; ++i) v[i] = agents_[i].z;
        return v;
    }
    Eigen::VectorXd gather_x() const {
        Eigen::VectorXd v(n_);
        for (int i = 0; i < n_; ++i) v[i] = agents_[i].x;
        return v;
    }
    Eigen::VectorXd gather_e() const {
        Eigen::VectorXd v(n_);
        for (int i = 0; i < n_; ++i) v[i] = agents_[i].e;
        return v;
    }
    void init_inverse(const Eigen::VectorXd& b) {
        for (int i = 0; i < n_; ++i) {
            agents_[i].x = 0.0;
            agents_[i].e = b[i];
        }
    }
    // x(i) += z(i); e(i) -= (Hz)(i): the purely local steps of the iteration.
    void accumulate_x_from_z() {
        for (int i = 0; i < n_; ++i) agents_[i].x += agents_[i].z;
    }
    void subtract_z_from_e() {
        for (int i = 0; i < n_; ++i) agents_[i].e -= agents_[i].z;
    }

    // ---- the synchronized exchange ---------------------------------------
    // Delivers every agent's transmit register z to all neighbors and returns
    // the snapshot agents read from. One message per directed edge.
    Eigen::VectorXd exchange() {
        const int round = static_cast<int>(stats_.rounds++);
        long long count = 0;
        for (int src = 0; src < n_; ++src)
            for (int dst : nbrs_[src]) {
                if (log_) stats_.log.push_back({round, src, dst, 1});
                ++stats_.per_vertex[src];
                ++count;
            }
        stats_.per_round.push_back(count);
        stats_.total_messages += count;
        Eigen::VectorXd snap(n_);
        for (int i = 0; i < n_; ++i) snap[i] = agents_[i].z;
        return snap;
    }

    // ---- Algorithm-1 steps over one shift --------------------------------
    // Fixed-order local weighted sum of the snapshot over the agent's row.
    double row_dot(int k, int i, const Eigen::VectorXd& snap) const {
        double s = 0.0;
        for (const auto& [j, w] : agents_[i].rows[k]) s += w * snap[j];
        return s;
    }
    // z(i) <- c * sig(i) + sum_j S_k(i,j) z_snap(j).
    void step_scale(int k, double c) {
        const Eigen::VectorXd snap = exchange();
        for (int idx = 0; idx < n_; ++idx) {
            const int i = schedule_[idx];
            agents_[i].z = c * agents_[i].sig + row_dot(k, i, snap);
        }
        stats_.multiplies += nnz_[k] + n_;
    }
    // z(i) <- u_col(i) + sum_j S_k(i,j) z_snap(j).
    void step_column(int k, int col) {
        const Eigen::VectorXd snap = exchange();
        for (int idx = 0; idx < n_; ++idx) {
            const int i = schedule_[idx];
            agents_[i].z = agents_[i].u[col] + row_dot(k, i, snap);
        }
        stats_.multiplies += nnz_[k];
    }

    // ---- monomial pipeline (mirrors `apply`) ------------------------------
    // Input in the sig registers; result left in the z registers.
    void run_poly(const poly_coeffs& h) {
        const int d = static_cast<int>(h.degrees.size());
        if (d != static_cast<int>(nnz_.size()))
            throw std::invalid_argument("sim: filter arity != family size");
        if (h.coeffs.size() != h.expected_size())
            throw std::invalid_argument("sim: coefficient tensor has wrong length");
        if (d == 1) {
            run_horner(h.coeffs.data(), h.degrees[0], 0);
            return;
        }
        Eigen::Index ncols = 1;
        for (int k = 0; k + 1 < d; ++k) ncols *= (h.degrees[k] + 1);
        const int last_deg = h.degrees[d - 1];
        for (int i = 0; i < n_; ++i) agents_[i].u.assign(ncols, 0.0);
        for (Eigen::Index p = 0; p < ncols; ++p) {
            run_horner(h.coeffs.data() + p * (last_deg + 1), last_deg, d - 1);
            for (int i = 0; i < n_; ++i) agents_[i].u[p] = agents_[i].z;
        }
        for (int j = d - 2; j >= 1; --j) {
            const int lj = h.degrees[j];
            const Eigen::Index new_cols = ncols / (lj + 1);
            for (Eigen::Index p = 0; p < new_cols; ++p) {
                const Eigen::Index base = p * (lj + 1);
                for (int i = 0; i < n_; ++i) agents_[i].z = agents_[i].u[base + lj];
                for (int s = 0; s < lj; ++s)
                    step_column(j, static_cast<int>(base + (lj - s - 1)));
                // Writing u[p] is safe: later columns only read indices > p.
                for (int i = 0; i < n_; ++i) agents_[i].u[p] = agents_[i].z;
            }
            ncols = new_cols;
        }
        const int l0 = h.degrees[0];
        for (int i = 0; i < n_; ++i) agents_[i].z = agents_[i].u[l0];
        for (int s = 0; s < l0; ++s) step_column(0, l0 - s - 1);
    }

    // ---- Chebyshev pipeline (mirrors `apply_cheb`) -------------------------
    Eigen::VectorXd run_cheb(const cheb_coeffs& c, const Eigen::VectorXd& x) {
        const int d = c.dims();
        if (d != static_cast<int>(nnz_.size()))
            throw std::invalid_argument("sim: filter arity != family size");
        Eigen::VectorXd result = Eigen::VectorXd::Zero(n_);
        std::vector<int> prefix(d, 0);
        auto rec = [&](auto&& self, int dim, int budget, const Eigen::VectorXd& v) -> void {
            Eigen::VectorXd w_prev, w = v;
            for (int k = 0; k <= budget; ++k) {
                if (k == 1) {
                    w_prev = w;
                    w = dist_sbar(dim, c.box[dim], v);
                } else if (k >= 2) {
                    Eigen::VectorXd w_next = 2.0 * dist_sbar(dim, c.box[dim], w) - w_prev;
                    w_prev = std::move(w);
                    w = std::move(w_next);
                }
                prefix[dim] = k;
                if (dim == d - 1) {
                    const double cv = c.at(prefix);
                    if (cv != 0.0) {
                        result += cv * w;
                        stats_.multiplies += n_;
                    }
                } else {
                    self(self, dim + 1, budget - k, w);
                }
            }
            prefix[dim] = 0;
        };
        rec(rec, 0, c.k_max, x);
        return result;
    }

  private:
    // Univariate backward Horner over shift k, coefficients h[0..deg].
    void run_horner(const double* h, int deg, int k) {
        for (int i = 0; i < n_; ++i) agents_[i].z = h[deg] * agents_[i].sig;
        stats_.multiplies += n_;
        for (int s = 0; s < deg; ++s) step_scale(k, h[deg - s - 1]);
    }

    // Normalized shift step: out(i) = a * sum_j S(i,j) v(j) + b * v(i), one
    // exchange round with v in the transmit registers.
    Eigen::VectorXd dist_sbar(int dim, const std::array<double, 2>& box,
                              const Eigen::VectorXd& v) {
        const double a = 2.0 / (box[1] - box[0]);
        const double b = -(box[0] + box[1]) / (box[1] - box[0]);
        for (int i = 0; i < n_; ++i) agents_[i].z = v[i];
        const Eigen::VectorXd snap = exchange();
        Eigen::VectorXd out(n_);
        for (int idx = 0; idx < n_; ++idx) {
            const int i = schedule_[idx];
            out[i] = a * row_dot(dim, i, snap) + b * v[i];
        }
        stats_.multiplies += nnz_[dim] + 2 * n_;
        return out;
    }

    comm_stats& stats_;
    int n_ = 0;
    std::vector<vertex_agent> agents_;
    std::vector<std::vector<int>> nbrs_;
    std::vector<long long> nnz_;
    std::vector<int> schedule_;
    bool log_ = true;
};

}  // namespace detail

/// @brief Runs the filtering pipeline at the vertex level: one synchronized
/// exchange per shift application, local weighted-sum updates in between.
/// Returns the output signal together with the communication record. A full
/// run takes prod_k (L_k + 1) - 1 rounds.
inline std::pair<Eigen::VectorXd, comm_stats> sim_filter(const poly_coeffs& h,
                                                         const shift_family& f,
                                                         const Eigen::VectorXd& x,
                                                         const sim_options& so = {}) {
    if (x.size() != f.n) throw std::invalid_argument("sim_filter: signal length mismatch");
    comm_stats stats;
    detail::network net(f, so, stats);
    net.load_sig(x);
    net.run_poly(h);
    return {net.gather_z(), std::move(stats)};
}

/// @brief Runs the inverse-filtering iteration at the vertex level:
/// per iteration one distributed apply of G to the residual, the purely local
/// updates x(i) += z(i) and e(i) -= (Hz)(i), with the distributed apply of H
/// in between. The trace matches the centralized iteration elementwise. The
/// approximant must act locally (scaled identity, polynomial, or Chebyshev);
/// spectral-value approximants need a global eigenbasis and are rejected.
inline std::tuple<Eigen::VectorXd, solve_trace, comm_stats> sim_inverse(
    const approximant& g, const poly_coeffs& h, const shift_family& f,
    const Eigen::VectorXd& b, int iterations, solve_options opt = {},
    const sim_options& so = {}) {
    if (b.size() != f.n) throw std::invalid_argument("sim_inverse: signal length mismatch");
    if (iterations < 0) throw std::invalid_argument("sim_inverse: negative iteration count");
    if (g.kind == approximant::kind_t::spectral_values)
        throw std::invalid_argument(
            "sim_inverse: spectral-value approximants are not vertex-local");
    opt.max_iterations = iterations;

    comm_stats stats;
    detail::network net(f, so, stats);

    // One distributed application of the approximant: residual in, z out.
    poly_coeffs gamma_poly;  // scaled identity as a degree-0 filter
    if (g.kind == approximant::kind_t::scaled_identity) {
        gamma_poly = poly_coeffs::zeros(std::vector<int>(f.dims(), 0));
        gamma_poly.coeffs[0] = g.gamma;
    }
    auto apply_g = [&](const Eigen::VectorXd& e) {
        if (g.kind == approximant::kind_t::chebyshev) return net.run_cheb(*g.cheb, e);
        net.load_sig(e);
        net.run_poly(g.kind == approximant::kind_t::polynomial ? *g.poly : gamma_poly);
        return net.gather_z();
    };

    detail::trace_builder tb(g.tag, b, opt);
    net.init_inverse(b);
    if (!tb.finished_at_start()) {
        for (int m = 1; m <= iterations; ++m) {
            Eigen::VectorXd z = apply_g(net.gather_e());
            net.set_z(z);
            net.accumulate_x_from_z();  // x(i) += z(i), purely local
            net.load_sig(z);
            net.run_poly(h);            // z registers now hold (Hz)(i)
            net.subtract_z_from_e();    // e(i) -= (Hz)(i), purely local
            if (tb.record(m, net.gather_x(), net.gather_e().norm()) != 1) break;
        }
    }
    return {net.gather_x(), tb.finish(net.gather_x()), std::move(stats)};
}

/// Writes the message log as "round,src,dst,payload_size" rows.
inline void save_comm_csv(const comm_stats& cs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_comm_csv: cannot open " + path);
    out << "round,src,dst,payload_size\n";
    for (const auto& msg : cs.log)
        out << msg.round << ',' << msg.src << ',' << msg.dst << ',' << msg.payload_size
            << '\n';
}

/// Totals of one run as JSON: rounds, messages, multiplies, and the busiest
/// vertex / round.
inline nlohmann::json comm_summary_json(const comm_stats& cs) {
    long long vmax = 0, rmax = 0;
    for (long long v : cs.per_vertex) vmax = std::max(vmax, v);
    for (long long v : cs.per_round) rmax = std::max(rmax, v);
    return nlohmann::json{{"rounds", cs.rounds},
                          {"messages", cs.total_messages},
                          {"multiplies", cs.multiplies},
                          {"per_vertex_max", vmax},
                          {"per_round_max", rmax}};
}

}  // namespace polyshift
