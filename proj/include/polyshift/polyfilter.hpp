#pragma once

// Multivariate polynomial filters h(S_1,...,S_d) and shifted-Chebyshev
// filters.  The fast apply path is the nested column-Horner recursion that
// touches each shift row once per stage; a dense materializer acts as the
// independent oracle.

#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Dense>

#include <json.hpp>

#include "polyshift/shift.hpp"
#include "polyshift/spectrum.hpp"

namespace polyshift {

/// Multiply/shift counters filled by the apply routines (optional).
struct filter_cost {
    long long multiplies = 0;
    long long shift_applications = 0;
};

/// Coefficient tensor h_{l_1..l_d} of a polynomial filter, stored flat in
/// lexicographic order with the last index varying fastest, i.e. flat index
/// v(l_1..l_d) = l_d + l_{d-1}(L_d+1) + l_{d-2}(L_d+1)(L_{d-1}+1) + ...
struct poly_coeffs {
    std::vector<int> degrees;  // (L_1, ..., L_d)
    Eigen::VectorXd coeffs;

    int dims() const { return static_cast<int>(degrees.size()); }

    Eigen::Index expected_size() const {
        Eigen::Index p = 1;
        for (int l : degrees) p *= (l + 1);
        return p;
    }

    static poly_coeffs zeros(std::vector<int> degrees_) {
        poly_coeffs h;
        for (int l : degrees_)
            if (l < 0) throw std::invalid_argument("poly_coeffs: negative degree");
        h.degrees = std::move(degrees_);
        h.coeffs = Eigen::VectorXd::Zero(h.expected_size());
        return h;
    }

    /// Univariate coefficients (h_0, ..., h_L).
    static poly_coeffs univariate(const std::vector<double>& c) {
        if (c.empty()) throw std::invalid_argument("poly_coeffs: empty coefficient list");
        poly_coeffs h;
        h.degrees = {static_cast<int>(c.size()) - 1};
        h.coeffs = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
        return h;
    }

    Eigen::Index flat_index(const std::vector<int>& idx) const {
        if (static_cast<int>(idx.size()) != dims())
            throw std::invalid_argument("poly_coeffs: index arity mismatch");
        Eigen::Index v = 0;
        for (int k = 0; k < dims(); ++k) {
            if (idx[k] < 0 || idx[k] > degrees[k])
                throw std::out_of_range("poly_coeffs: index out of range");
            v = v * (degrees[k] + 1) + idx[k];
        }
        return v;
    }

    double& at(const std::vector<int>& idx) { return coeffs[flat_index(idx)]; }
    double at(const std::vector<int>& idx) const { return coeffs[flat_index(idx)]; }

    /// Horner-nested evaluation of h(t_1..t_d).
    double eval(const Eigen::VectorXd& t) const {
        if (t.size() != dims()) throw std::invalid_argument("poly_coeffs::eval: arity mismatch");
        return eval_block(coeffs.data(), 0, t);
    }

  private:
    double eval_block(const double* c, int dim, const Eigen::VectorXd& t) const {
        const int ld = degrees[dim];
        if (dim == dims() - 1) {
            double acc = c[ld];
            for (int l = ld - 1; l >= 0; --l) acc = acc * t[dim] + c[l];
            return acc;
        }
        Eigen::Index block = 1;
        for (int k = dim + 1; k < dims(); ++k) block *= (degrees[k] + 1);
        double acc = eval_block(c + ld * block, dim + 1, t);
        for (int l = ld - 1; l >= 0; --l) acc = acc * t[dim] + eval_block(c + l * block, dim + 1, t);
        return acc;
    }
};

namespace detail {

// Horner recursion of Algorithm-1 shape: z <- coeff_of_step * x + S z.
// `h` points at (h_0..h_L).  Exactly L shift applications.
inline Eigen::VectorXd horner_single(const double* h, int deg, const shift& s,
                                     const Eigen::VectorXd& x, filter_cost* cost) {
    Eigen::VectorXd z = h[deg] * x;
    for (int n = 0; n < deg; ++n) {
        Eigen::VectorXd sz = s.apply(z);
        z = h[deg - n - 1] * x + sz;
        if (cost) {
            cost->multiplies += s.nonzeros() + x.size();
            ++cost->shift_applications;
        }
    }
    if (cost) cost->multiplies += x.size();  // the z^(0) scaling
    return z;
}

}  // namespace detail

/// @brief Applies the univariate filter h_0 + h_1 S + ... + h_L S^L to x by
/// the backward Horner recursion z^(0) = h_L x, z^(n+1) = h_{L-n-1} x + S z^(n).
inline Eigen::VectorXd apply_single(const std::vector<double>& h, const shift& s,
                                    const Eigen::VectorXd& x, filter_cost* cost = nullptr) {
    if (h.empty()) throw std::invalid_argument("apply_single: empty coefficients");
    if (x.size() != s.n) throw std::invalid_argument("apply_single: size mismatch");
    return detail::horner_single(h.data(), static_cast<int>(h.size()) - 1, s, x, cost);
}

/// @brief Applies h(S_1,...,S_d) to x through the nested column reduction:
/// stage one runs the univariate recursion over S_d for every leading
/// multi-index slice; each later stage collapses one dimension by the
/// unit-coefficient Horner pass over its shift, seeded from the
/// highest-degree column of the previous stage; the last pass runs over S_1
/// and yields h(S)x.  Equals the brute-force sum of monomials.
inline Eigen::VectorXd apply(const poly_coeffs& h, const shift_family& f,
                             const Eigen::VectorXd& x, filter_cost* cost = nullptr) {
    const int d = h.dims();
    if (d != f.dims()) throw std::invalid_argument("apply: filter arity != family size");
    if (x.size() != f.n) throw std::invalid_argument("apply: signal length mismatch");
    if (h.coeffs.size() != h.expected_size())
        throw std::invalid_argument("apply: coefficient tensor has wrong length");
    if (d == 1)
        return detail::horner_single(h.coeffs.data(), h.degrees[0], f.shifts[0], x, cost);

    // Stage one: columns over the leading d-1 indices, recursion over S_d.
    Eigen::Index ncols = 1;
    for (int k = 0; k + 1 < d; ++k) ncols *= (h.degrees[k] + 1);
    const int last_deg = h.degrees[d - 1];
    Eigen::MatrixXd u(f.n, ncols);
    for (Eigen::Index p = 0; p < ncols; ++p)
        u.col(p) = detail::horner_single(h.coeffs.data() + p * (last_deg + 1), last_deg,
                                         f.shifts[d - 1], x, cost);

    // Collapse dimensions d-2, ..., 1 (0-based shifts index j).
    for (int j = d - 2; j >= 1; --j) {
        const int lj = h.degrees[j];
        Eigen::Index new_cols = ncols / (lj + 1);
        Eigen::MatrixXd v(f.n, new_cols);
        for (Eigen::Index p = 0; p < new_cols; ++p) {
            Eigen::VectorXd z = u.col(p * (lj + 1) + lj);
            for (int n = 0; n < lj; ++n) {
                Eigen::VectorXd sz = f.shifts[j].apply(z);
                z = u.col(p * (lj + 1) + (lj - n - 1)) + sz;
                if (cost) {
                    cost->multiplies += f.shifts[j].nonzeros();
                    ++cost->shift_applications;
                }
            }
            v.col(p) = z;
        }
        u = std::move(v);
        ncols = new_cols;
    }

    // Final pass over S_1.
    const int l0 = h.degrees[0];
    Eigen::VectorXd z = u.col(l0);
    for (int n = 0; n < l0; ++n) {
        Eigen::VectorXd sz = f.shifts[0].apply(z);
        z = u.col(l0 - n - 1) + sz;
        if (cost) {
            cost->multiplies += f.shifts[0].nonzeros();
            ++cost->shift_applications;
        }
    }
    return z;
}

/// @brief Dense oracle: sum of h_l * S_1^{l_1} ... S_d^{l_d} assembled from
/// explicit dense powers.  Capped at n <= `dense_cap`.
inline Eigen::MatrixXd materialize(const poly_coeffs& h, const shift_family& f,
                                   int dense_cap = 2048) {
    if (h.dims() != f.dims()) throw std::invalid_argument("materialize: arity mismatch");
    if (f.n > dense_cap) throw std::invalid_argument("materialize: dense cap exceeded");
    const int d = h.dims();
    std::vector<std::vector<Eigen::MatrixXd>> powers(d);
    for (int k = 0; k < d; ++k) {
        powers[k].push_back(Eigen::MatrixXd::Identity(f.n, f.n));
        Eigen::MatrixXd sk(f.shifts[k].materialized());
        for (int l = 1; l <= h.degrees[k]; ++l) powers[k].push_back(powers[k].back() * sk);
    }
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(f.n, f.n);
    std::vector<int> idx(d, 0);
    for (Eigen::Index v = 0; v < h.coeffs.size(); ++v) {
        if (h.coeffs[v] != 0.0) {
            Eigen::MatrixXd term = powers[0][idx[0]];
            for (int k = 1; k < d; ++k) term = term * powers[k][idx[k]];
            out += h.coeffs[v] * term;
        }
        // odometer over the multi-index, last dimension fastest
        for (int k = d - 1; k >= 0; --k) {
            if (++idx[k] <= h.degrees[k]) break;
            idx[k] = 0;
        }
    }
    return out;
}

// --------------------------------------------------------------- Chebyshev ---

/// All multi-indices k >= 0 with |k| = k_1 + ... + k_d <= K, in lexicographic
/// order.  Count is C(K+d, d).
inline std::vector<std::vector<int>> total_degree_indices(int d, int k_max) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur(d, 0);
    auto rec = [&](auto&& self, int dim, int budget) -> void {
        if (dim == d) {
            out.push_back(cur);
            return;
        }
        for (int k = 0; k <= budget; ++k) {
            cur[dim] = k;
            self(self, dim + 1, budget - k);
        }
        cur[dim] = 0;
    };
    rec(rec, 0, k_max);
    return out;
}

/// Coefficients of a filter in the shifted multivariate Chebyshev basis on a
/// box: g = sum_{|k| <= K} c_k prod_i T_{k_i}((2 t_i - mu_i - nu_i)/(nu_i - mu_i)).
/// `terms` always enumerates every |k| <= K (zeros included), in the order of
/// total_degree_indices.
struct cheb_coeffs {
    int k_max = 0;
    std::vector<std::array<double, 2>> box;  // (mu_i, nu_i) per dimension
    std::vector<std::vector<int>> indices;
    Eigen::VectorXd values;

    int dims() const { return static_cast<int>(box.size()); }

    static cheb_coeffs zeros(int k_max_, std::vector<std::array<double, 2>> box_) {
        cheb_coeffs c;
        if (k_max_ < 0) throw std::invalid_argument("cheb_coeffs: negative degree");
        for (const auto& b : box_)
            if (!(b[0] < b[1])) throw std::invalid_argument("cheb_coeffs: box needs mu < nu");
        c.k_max = k_max_;
        c.box = std::move(box_);
        c.indices = total_degree_indices(c.dims(), k_max_);
        c.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c.indices.size()));
        return c;
    }

    Eigen::Index position(const std::vector<int>& k) const {
        for (std::size_t p = 0; p < indices.size(); ++p)
            if (indices[p] == k) return static_cast<Eigen::Index>(p);
        throw std::out_of_range("cheb_coeffs: multi-index outside |k| <= K");
    }

    double& at(const std::vector<int>& k) { return values[position(k)]; }
    double at(const std::vector<int>& k) const { return values[position(k)]; }

    /// Pointwise evaluation via per-dimension Chebyshev recurrences.
    double eval(const Eigen::VectorXd& t) const {
        if (t.size() != dims()) throw std::invalid_argument("cheb_coeffs::eval: arity mismatch");
        const int d = dims();
        Eigen::MatrixXd tvals(k_max + 1, d);
        for (int i = 0; i < d; ++i) {
            const double s = (2.0 * t[i] - box[i][0] - box[i][1]) / (box[i][1] - box[i][0]);
            tvals(0, i) = 1.0;
            if (k_max >= 1) tvals(1, i) = s;
            for (int k = 2; k <= k_max; ++k)
                tvals(k, i) = 2.0 * s * tvals(k - 1, i) - tvals(k - 2, i);
        }
        double acc = 0.0;
        for (std::size_t p = 0; p < indices.size(); ++p) {
            double term = values[static_cast<Eigen::Index>(p)];
            if (term == 0.0) continue;
            for (int i = 0; i < d; ++i) term *= tvals(indices[p][i], i);
            acc += term;
        }
        return acc;
    }
};

/// @brief Exact basis change from shifted-Chebyshev to monomial coefficients.
/// Guarded at K <= 30: beyond that the conversion is numerically abusive and
/// the recurrence evaluation path should be used instead.
inline poly_coeffs cheb_to_monomial(const cheb_coeffs& c) {
    if (c.k_max > 30) throw std::invalid_argument("cheb_to_monomial: K > 30 not supported");
    const int d = c.dims();
    const int kk = c.k_max;
    // Monomial coefficients (in t_i) of the shifted T_j per dimension.
    std::vector<std::vector<Eigen::VectorXd>> tpoly(d);
    for (int i = 0; i < d; ++i) {
        const double a = 2.0 / (c.box[i][1] - c.box[i][0]);
        const double b = -(c.box[i][0] + c.box[i][1]) / (c.box[i][1] - c.box[i][0]);
        tpoly[i].resize(kk + 1, Eigen::VectorXd::Zero(kk + 1));
        tpoly[i][0][0] = 1.0;
        if (kk >= 1) {
            tpoly[i][1][0] = b;
            tpoly[i][1][1] = a;
        }
        for (int j = 2; j <= kk; ++j) {
            // T_j = 2 (a t + b) T_{j-1} - T_{j-2}
            Eigen::VectorXd next = -tpoly[i][j - 2];
            next += 2.0 * b * tpoly[i][j - 1];
            next.segment(1, kk).noalias() += 2.0 * a * tpoly[i][j - 1].head(kk);
            tpoly[i][j] = next;
        }
    }
    poly_coeffs out = poly_coeffs::zeros(std::vector<int>(d, kk));
    std::vector<int> mono(d, 0);
    for (std::size_t p = 0; p < c.indices.size(); ++p) {
        const double cv = c.values[static_cast<Eigen::Index>(p)];
        if (cv == 0.0) continue;
        // accumulate cv * prod_i tpoly[i][k_i] into the dense tensor
        auto rec = [&](auto&& self, int dim, double factor) -> void {
            if (dim == d) {
                out.at(mono) += factor;
                return;
            }
            const Eigen::VectorXd& poly = tpoly[dim][c.indices[p][dim]];
            for (int m = 0; m <= kk; ++m) {
                if (poly[m] == 0.0) continue;
                mono[dim] = m;
                self(self, dim + 1, factor * poly[m]);
            }
            mono[dim] = 0;
        };
        rec(rec, 0, cv);
    }
    return out;
}

/// @brief Applies the Chebyshev filter g_K(S_1..S_d) to x by nested
/// per-dimension three-term recurrences on vectors; never converts to the
/// monomial basis.  If the family carries a cached spectrum that leaves the
/// box, a warning is logged (the series may then diverge; the box is the
/// caller's promise, so this is a notice rather than a hard error).
inline Eigen::VectorXd apply_cheb(const cheb_coeffs& c, const shift_family& f,
                                  const Eigen::VectorXd& x, filter_cost* cost = nullptr) {
    const int d = c.dims();
    if (d != f.dims()) throw std::invalid_argument("apply_cheb: arity mismatch");
    if (x.size() != f.n) throw std::invalid_argument("apply_cheb: signal length mismatch");
    if (f.spectrum_cache) {
        const joint_spectrum& js = *f.spectrum_cache;
        for (int k = 0; k < d && js.dims() == d; ++k) {
            const double lo = js.lambda.col(k).minCoeff(), hi = js.lambda.col(k).maxCoeff();
            const double slack = 1e-9 * (1.0 + c.box[k][1] - c.box[k][0]);
            if (lo < c.box[k][0] - slack || hi > c.box[k][1] + slack) {
                std::fprintf(stderr,
                             "[polyshift] warning: joint spectrum of shift %d spans [%g, %g], "
                             "outside the Chebyshev box [%g, %g]\n",
                             k + 1, lo, hi, c.box[k][0], c.box[k][1]);
                break;
            }
        }
    }

    Eigen::VectorXd result = Eigen::VectorXd::Zero(f.n);
    // Normalized shift application: s_bar(S) v = (2 S v - (mu+nu) v) / (nu - mu).
    auto sbar = [&](int dim, const Eigen::VectorXd& v) {
        const double a = 2.0 / (c.box[dim][1] - c.box[dim][0]);
        const double b = -(c.box[dim][0] + c.box[dim][1]) / (c.box[dim][1] - c.box[dim][0]);
        Eigen::VectorXd sv = f.shifts[dim].apply(v);
        if (cost) {
            cost->multiplies += f.shifts[dim].nonzeros() + 2 * f.n;
            ++cost->shift_applications;
        }
        return Eigen::VectorXd(a * sv + b * v);
    };
    std::vector<int> prefix(d, 0);
    auto rec = [&](auto&& self, int dim, int budget, const Eigen::VectorXd& v) -> void {
        Eigen::VectorXd w_prev, w = v;
        for (int k = 0; k <= budget; ++k) {
            if (k == 1) {
                w_prev = w;
                w = sbar(dim, v);
            } else if (k >= 2) {
                Eigen::VectorXd w_next = 2.0 * sbar(dim, w) - w_prev;
                w_prev = std::move(w);
                w = std::move(w_next);
            }
            prefix[dim] = k;
            if (dim == d - 1) {
                const double cv = c.at(prefix);
                if (cv != 0.0) {
                    result += cv * w;
                    if (cost) cost->multiplies += f.n;
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

// -------------------------------------------------------------------- JSON ---

inline nlohmann::json to_json(const poly_coeffs& h) {
    nlohmann::json j;
    j["degrees"] = h.degrees;
    j["coeffs"] = std::vector<double>(h.coeffs.data(), h.coeffs.data() + h.coeffs.size());
    return j;
}

inline nlohmann::json to_json(const cheb_coeffs& c) {
    nlohmann::json coeffs = nlohmann::json::object();
    for (std::size_t p = 0; p < c.indices.size(); ++p) {
        if (c.values[static_cast<Eigen::Index>(p)] == 0.0) continue;
        std::string key;
        for (std::size_t i = 0; i < c.indices[p].size(); ++i)
            key += (i ? "," : "") + std::to_string(c.indices[p][i]);
        coeffs[key] = c.values[static_cast<Eigen::Index>(p)];
    }
    nlohmann::json box = nlohmann::json::array();
    for (const auto& b : c.box) box.push_back({b[0], b[1]});
    return nlohmann::json{{"cheb", {{"K", c.k_max}, {"box", box}, {"coeffs", coeffs}}}};
}

inline poly_coeffs poly_from_json(const nlohmann::json& j) {
    poly_coeffs h;
    h.degrees = j.at("degrees").get<std::vector<int>>();
    auto flat = j.at("coeffs").get<std::vector<double>>();
    h.coeffs = Eigen::Map<const Eigen::VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size()));
    if (h.coeffs.size() != h.expected_size())
        throw std::invalid_argument("poly_from_json: coeffs length != prod(degrees+1)");
    return h;
}

inline cheb_coeffs cheb_from_json(const nlohmann::json& j) {
    const nlohmann::json& jc = j.at("cheb");
    std::vector<std::array<double, 2>> box;
    for (const auto& b : jc.at("box")) box.push_back({b.at(0).get<double>(), b.at(1).get<double>()});
    cheb_coeffs c = cheb_coeffs::zeros(jc.at("K").get<int>(), std::move(box));
    for (const auto& [key, val] : jc.at("coeffs").items()) {
        std::vector<int> idx;
        std::size_t pos = 0;
        while (pos <= key.size()) {
            const std::size_t comma = key.find(',', pos);
            idx.push_back(std::stoi(key.substr(pos, comma - pos)));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        c.at(idx) = val.get<double>();
    }
    return c;
}

/// A filter read from disk: exactly one representation is set.
struct filter_spec {
    std::optional<poly_coeffs> poly;
    std::optional<cheb_coeffs> cheb;
};

inline filter_spec load_filter_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_filter_json: cannot open " + path);
    nlohmann::json j;
    in >> j;
    filter_spec spec;
    if (j.contains("cheb"))
        spec.cheb = cheb_from_json(j);
    else
        spec.poly = poly_from_json(j);
    return spec;
}

inline void save_filter_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_filter_json: cannot open " + path);
    out << j.dump(2) << '\n';
}

}  // namespace polyshift
