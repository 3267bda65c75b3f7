#pragma once

// Undirected simple graphs: construction (circulant, path, random geometric,
// k-NN, Cartesian product), text I/O, traversal, and the standard matrices
// (adjacency, Laplacian, symmetric normalized Laplacian) as CSR sparse.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <queue>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace polyshift {

/// Row-major (CSR) sparse matrix with sorted column indices per row.
using sparse_mat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Undirected simple graph on vertices 0..n-1 with sorted adjacency lists.
/// `coords` is optional (empty unless the graph came with an embedding).
struct graph {
    int n = 0;
    std::vector<std::vector<int>> adj;
    std::vector<std::array<double, 2>> coords;

    /// Number of undirected edges.
    int edge_count() const {
        std::size_t twice = 0;
        for (const auto& nb : adj) twice += nb.size();
        return static_cast<int>(twice / 2);
    }

    int degree(int i) const { return static_cast<int>(adj[i].size()); }

    bool has_edge(int i, int j) const {
        const auto& nb = adj[i];
        return std::binary_search(nb.begin(), nb.end(), j);
    }
};

namespace detail {

// Deduplicates and sorts adjacency lists, dropping self loops.
inline void finalize_adjacency(graph& g) {
    for (int i = 0; i < g.n; ++i) {
        auto& nb = g.adj[i];
        std::sort(nb.begin(), nb.end());
        nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
        nb.erase(std::remove(nb.begin(), nb.end(), i), nb.end());
    }
}

inline void add_undirected_edge(graph& g, int i, int j) {
    if (i == j) return;
    g.adj[i].push_back(j);
    g.adj[j].push_back(i);
}

}  // namespace detail

/// @brief Circulant graph C(n, Q): vertex i is adjacent to (i +- q) mod n for
/// each generator q in Q.  Generators must be strictly increasing with
/// 1 <= q_1 < ... < q_M < n/2, so the graph is 2|Q|-regular.
inline graph build_circulant(int n, const std::vector<int>& generators) {
    if (n < 3) throw std::invalid_argument("build_circulant: need n >= 3");
    if (generators.empty())
        throw std::invalid_argument("build_circulant: empty generator set");
    for (std::size_t t = 0; t < generators.size(); ++t) {
        const int q = generators[t];
        if (q < 1 || 2 * q >= n)
            throw std::invalid_argument("build_circulant: generator out of range [1, n/2)");
        if (t > 0 && generators[t - 1] >= q)
            throw std::invalid_argument("build_circulant: generators must be strictly increasing");
    }
    graph g;
    g.n = n;
    g.adj.assign(n, {});
    for (int q : generators)
        for (int i = 0; i < n; ++i) detail::add_undirected_edge(g, i, (i + q) % n);
    detail::finalize_adjacency(g);
    return g;
}

/// @brief Path graph 0 - 1 - ... - m-1.
inline graph build_path(int m) {
    if (m < 2) throw std::invalid_argument("build_path: need m >= 2");
    graph g;
    g.n = m;
    g.adj.assign(m, {});
    for (int i = 0; i + 1 < m; ++i) detail::add_undirected_edge(g, i, i + 1);
    detail::finalize_adjacency(g);
    return g;
}

inline std::vector<int> bfs_distances(const graph& g, int src);

/// True when every vertex is reachable from vertex 0.
inline bool is_connected(const graph& g) {
    if (g.n == 0) return true;
    auto dist = bfs_distances(g, 0);
    return std::none_of(dist.begin(), dist.end(), [](int d) { return d < 0; });
}

/// @brief Random geometric graph: n points i.i.d. uniform on [0,1]^2, an edge
/// whenever the Euclidean distance is <= radius.  With `require_connected`
/// (the default) a disconnected sample is redrawn with seed+1, seed+2, ...
/// (at most 100 attempts); pass false to keep the first sample as-is.
inline graph build_random_geometric(int n, double radius, std::uint64_t seed,
                                    bool require_connected = true) {
    if (n < 1) throw std::invalid_argument("build_random_geometric: need n >= 1");
    if (radius < 0) throw std::invalid_argument("build_random_geometric: radius must be nonnegative");
    const double r2 = radius * radius;
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::mt19937_64 rng(seed + static_cast<std::uint64_t>(attempt));
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        graph g;
        g.n = n;
        g.adj.assign(n, {});
        g.coords.resize(n);
        for (int i = 0; i < n; ++i) {
            g.coords[i][0] = unif(rng);
            g.coords[i][1] = unif(rng);
        }
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const double dx = g.coords[i][0] - g.coords[j][0];
                const double dy = g.coords[i][1] - g.coords[j][1];
                if (dx * dx + dy * dy <= r2) detail::add_undirected_edge(g, i, j);
            }
        detail::finalize_adjacency(g);
        if (!require_connected || is_connected(g)) return g;
    }
    throw std::runtime_error("build_random_geometric: no connected sample in 100 attempts");
}

/// @brief k-nearest-neighbour graph from planar coordinates: each point gets a
/// directed edge to its k nearest others (Euclidean distance, ties broken by
/// smaller index), then directions are dropped (union symmetrization).
inline graph build_knn(const std::vector<std::array<double, 2>>& coords, int k) {
    const int n = static_cast<int>(coords.size());
    if (n < 2) throw std::invalid_argument("build_knn: need at least 2 points");
    if (k < 1 || k >= n) throw std::invalid_argument("build_knn: need 1 <= k < n");
    graph g;
    g.n = n;
    g.adj.assign(n, {});
    g.coords = coords;
    std::vector<std::pair<double, int>> cand(n - 1);
    for (int i = 0; i < n; ++i) {
        cand.clear();
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dx = coords[i][0] - coords[j][0];
            const double dy = coords[i][1] - coords[j][1];
            cand.emplace_back(dx * dx + dy * dy, j);
        }
        // (distance, index) pairs: sorting gives the tie rule for free.
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        for (int t = 0; t < k; ++t) detail::add_undirected_edge(g, i, cand[t].second);
    }
    detail::finalize_adjacency(g);
    return g;
}

/// @brief Cartesian product g1 x g2 on vertex pairs (i1, i2) indexed as
/// i1 * g2.n + i2: edges join pairs that differ in exactly one coordinate by
/// an edge of the corresponding factor.
inline graph cartesian_product(const graph& g1, const graph& g2) {
    graph g;
    g.n = g1.n * g2.n;
    g.adj.assign(g.n, {});
    for (int i1 = 0; i1 < g1.n; ++i1)
        for (int i2 = 0; i2 < g2.n; ++i2) {
            const int v = i1 * g2.n + i2;
            for (int j2 : g2.adj[i2]) detail::add_undirected_edge(g, v, i1 * g2.n + j2);
            for (int j1 : g1.adj[i1])
                if (j1 > i1) detail::add_undirected_edge(g, v, j1 * g2.n + i2);
        }
    detail::finalize_adjacency(g);
    return g;
}

/// BFS hop distances from `src`; unreachable vertices get -1.
inline std::vector<int> bfs_distances(const graph& g, int src) {
    std::vector<int> dist(g.n, -1);
    std::queue<int> q;
    dist[src] = 0;
    q.push(src);
    while (!q.empty()) {
        const int u = q.front();
        q.pop();
        for (int v : g.adj[u])
            if (dist[v] < 0) {
                dist[v] = dist[u] + 1;
                q.push(v);
            }
    }
    return dist;
}

/// Time-varying signal: M snapshots of an n-vertex signal.  Column j is the
/// snapshot at time t_j; the flat (vectorized) layout stacks time-major, so
/// entry v = j*n + i holds snapshot j at vertex i — the layout on which
/// Kronecker operators A_time (x) B_vertex act.
struct signal_grid {
    Eigen::MatrixXd snapshots;  // n rows, M columns

    int n() const { return static_cast<int>(snapshots.rows()); }
    int steps() const { return static_cast<int>(snapshots.cols()); }

    Eigen::VectorXd vectorize() const {
        return Eigen::Map<const Eigen::VectorXd>(snapshots.data(), snapshots.size());
    }
    static signal_grid unvectorize(const Eigen::VectorXd& x, int n) {
        if (n <= 0 || x.size() % n != 0)
            throw std::invalid_argument("signal_grid: length not a multiple of n");
        signal_grid s;
        s.snapshots = Eigen::Map<const Eigen::MatrixXd>(x.data(), n, x.size() / n);
        return s;
    }
};

// ------------------------------------------------------------------- I/O ---

/// @brief Reads the plain edge-list format: first line "n m", then m lines
/// "i j" with 0-based endpoints.
inline graph load_edge_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_edge_list: cannot open " + path);
    int n = 0, m = 0;
    if (!(in >> n >> m)) throw std::runtime_error("load_edge_list: bad header in " + path);
    if (n <= 0 || m < 0) throw std::runtime_error("load_edge_list: invalid sizes in " + path);
    graph g;
    g.n = n;
    g.adj.assign(n, {});
    for (int e = 0; e < m; ++e) {
        int i = 0, j = 0;
        if (!(in >> i >> j)) throw std::runtime_error("load_edge_list: truncated edge list");
        if (i < 0 || i >= n || j < 0 || j >= n)
            throw std::runtime_error("load_edge_list: endpoint out of range");
        detail::add_undirected_edge(g, i, j);
    }
    detail::finalize_adjacency(g);
    return g;
}

inline void save_edge_list(const graph& g, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_edge_list: cannot open " + path);
    out << g.n << ' ' << g.edge_count() << '\n';
    for (int i = 0; i < g.n; ++i)
        for (int j : g.adj[i])
            if (j > i) out << i << ' ' << j << '\n';
}

/// @brief Reads vertex coordinates from CSV lines "id,x,y" (an optional
/// non-numeric header line is skipped).  Rows may appear in any order; every
/// id in 0..n-1 must appear exactly once.
inline std::vector<std::array<double, 2>> load_coords_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_coords_csv: cannot open " + path);
    std::vector<std::pair<int, std::array<double, 2>>> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        int id = 0;
        double x = 0, y = 0;
        if (!(ls >> id >> x >> y)) {
            if (first) {
                first = false;  // header line
                continue;
            }
            throw std::runtime_error("load_coords_csv: malformed line: " + line);
        }
        first = false;
        rows.emplace_back(id, std::array<double, 2>{x, y});
    }
    std::vector<std::array<double, 2>> coords(rows.size());
    std::vector<bool> seen(rows.size(), false);
    for (const auto& [id, xy] : rows) {
        if (id < 0 || id >= static_cast<int>(rows.size()) || seen[id])
            throw std::runtime_error("load_coords_csv: ids must cover 0..n-1 exactly once");
        seen[id] = true;
        coords[id] = xy;
    }
    return coords;
}

// -------------------------------------------------------------- matrices ---

/// 0/1 adjacency matrix.
inline sparse_mat adjacency(const graph& g) {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(2 * static_cast<std::size_t>(g.edge_count()));
    for (int i = 0; i < g.n; ++i)
        for (int j : g.adj[i]) trip.emplace_back(i, j, 1.0);
    sparse_mat a(g.n, g.n);
    a.setFromTriplets(trip.begin(), trip.end());
    a.makeCompressed();
    return a;
}

/// Vertex degrees as a dense vector.
inline Eigen::VectorXd degree_vector(const graph& g) {
    Eigen::VectorXd d(g.n);
    for (int i = 0; i < g.n; ++i) d[i] = static_cast<double>(g.degree(i));
    return d;
}

/// Combinatorial Laplacian D - A.
inline sparse_mat laplacian(const graph& g) {
    std::vector<Eigen::Triplet<double>> trip;
    for (int i = 0; i < g.n; ++i) {
        trip.emplace_back(i, i, static_cast<double>(g.degree(i)));
        for (int j : g.adj[i]) trip.emplace_back(i, j, -1.0);
    }
    sparse_mat l(g.n, g.n);
    l.setFromTriplets(trip.begin(), trip.end());
    l.makeCompressed();
    return l;
}

/// Symmetric normalized Laplacian I - D^{-1/2} A D^{-1/2}.  Requires every
/// vertex to have at least one neighbour.
inline sparse_mat sym_normalized_laplacian(const graph& g) {
    std::vector<Eigen::Triplet<double>> trip;
    for (int i = 0; i < g.n; ++i) {
        if (g.degree(i) == 0)
            throw std::invalid_argument("sym_normalized_laplacian: isolated vertex " + std::to_string(i));
        trip.emplace_back(i, i, 1.0);
        const double di = std::sqrt(static_cast<double>(g.degree(i)));
        for (int j : g.adj[i])
            trip.emplace_back(i, j, -1.0 / (di * std::sqrt(static_cast<double>(g.degree(j)))));
    }
    sparse_mat l(g.n, g.n);
    l.setFromTriplets(trip.begin(), trip.end());
    l.makeCompressed();
    return l;
}

/// @brief Geodesic width of a matrix over a graph: the largest BFS distance
/// dist(i, j) over entries M(i,j) != 0.  A width <= 1 matrix touches only
/// edges and diagonal entries, so one round of neighbour exchange suffices to
/// apply it.
inline int geodesic_width(const sparse_mat& m, const graph& g) {
    if (m.rows() != g.n || m.cols() != g.n)
        throw std::invalid_argument("geodesic_width: matrix/graph size mismatch");
    int width = 0;
    for (int i = 0; i < m.outerSize(); ++i) {
        bool needs_bfs = false;
        for (sparse_mat::InnerIterator it(m, i); it; ++it)
            if (it.value() != 0.0 && it.col() != i && !g.has_edge(i, static_cast<int>(it.col())))
                needs_bfs = true;
        if (!needs_bfs) {
            for (sparse_mat::InnerIterator it(m, i); it; ++it)
                if (it.value() != 0.0 && it.col() != i) width = std::max(width, 1);
            continue;
        }
        auto dist = bfs_distances(g, i);
        for (sparse_mat::InnerIterator it(m, i); it; ++it) {
            if (it.value() == 0.0) continue;
            const int d = dist[it.col()];
            if (d < 0)
                throw std::invalid_argument("geodesic_width: nonzero entry between disconnected vertices");
            width = std::max(width, d);
        }
    }
    return width;
}

}  // namespace polyshift
