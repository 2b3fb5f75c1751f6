#include "mixsign/graph/graph.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "json.hpp"
#include "mixsign/util/log.h"
#include "mixsign/util/rng.h"

namespace mixsign {

std::string_view to_string(DistanceKind k) {
    switch (k) {
        case DistanceKind::euclidean: return "euclidean";
        case DistanceKind::cosine: return "cosine";
        case DistanceKind::chebyshev: return "chebyshev";
    }
    return "?";
}

std::string_view to_string(GraphKind k) {
    switch (k) {
        case GraphKind::local: return "local";
        case GraphKind::temporal: return "temporal";
        case GraphKind::hierarchical: return "hierarchical";
    }
    return "?";
}

DistanceKind parse_distance(std::string_view s) {
    for (auto k : {DistanceKind::euclidean, DistanceKind::cosine, DistanceKind::chebyshev}) {
        if (to_string(k) == s) return k;
    }
    throw std::invalid_argument("unknown distance kind '" + std::string(s) + "'");
}

double node_distance(std::span<const double> a, std::span<const double> b, DistanceKind kind) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("node_distance: dims " + std::to_string(a.size()) + " and " +
                                    std::to_string(b.size()) + " differ");
    }
    switch (kind) {
        case DistanceKind::euclidean: {
            double s = 0;
            for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
            return std::sqrt(s);
        }
        case DistanceKind::chebyshev: {
            double m = 0;
            for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
            return m;
        }
        case DistanceKind::cosine: {
            double dot = 0, na = 0, nb = 0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                dot += a[i] * b[i];
                na += a[i] * a[i];
                nb += b[i] * b[i];
            }
            if (na == 0 || nb == 0) return 1.0;
            // sqrt(na * nb) keeps a == b exact (sqrt of a rounded square is exact); clamp the rest.
            return std::max(0.0, 1.0 - dot / std::sqrt(na * nb));
        }
    }
    return 0;
}

std::size_t NodeSpace::total() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.frames * b.nodes_per_frame;
    return n;
}

std::string NodeSpace::label(std::size_t id) const {
    std::size_t base = 0;
    for (const auto& b : blocks) {
        const std::size_t size = b.frames * b.nodes_per_frame;
        if (id < base + size) {
            const std::size_t local = id - base;
            return "f" + std::to_string(local / b.nodes_per_frame) + "_" + b.tag +
                   std::to_string(local % b.nodes_per_frame);
        }
        base += size;
    }
    throw std::out_of_range("node id " + std::to_string(id) + " outside node space of " + std::to_string(base));
}

std::vector<std::vector<std::size_t>> SignGraph::adjacency() const {
    std::vector<std::vector<std::size_t>> adj(num_nodes());
    for (auto [a, b] : edges) {
        adj.at(a).push_back(b);
        adj.at(b).push_back(a);
    }
    for (auto& v : adj) std::sort(v.begin(), v.end());
    return adj;
}

void validate(const SignGraph& g) {
    const std::size_t n = g.num_nodes();
    std::set<Edge> seen;
    for (auto [a, b] : g.edges) {
        if (a == b) throw std::invalid_argument("graph has a self-loop at node " + std::to_string(a));
        if (a > b) throw std::invalid_argument("graph edge (" + std::to_string(a) + ", " + std::to_string(b) + ") is not normalized");
        if (b >= n) throw std::invalid_argument("graph edge endpoint " + std::to_string(b) + " out of range " + std::to_string(n));
        if (!seen.insert({a, b}).second) {
            throw std::invalid_argument("graph has duplicate edge (" + std::to_string(a) + ", " + std::to_string(b) + ")");
        }
    }
}

namespace {

std::span<const double> row(const Tensor& t, std::size_t i) {
    const std::size_t d = t.dim(1);
    return t.data().subspan(i * d, d);
}

void require_features(const Tensor& f, std::size_t n, const char* what) {
    if (!f.defined() || f.rank() != 2 || f.dim(0) != n) {
        throw std::invalid_argument(std::string(what) + ": features " +
                                    (f.defined() ? shape_str(f.shape()) : std::string("undefined")) +
                                    " do not match " + std::to_string(n) + " nodes");
    }
}

// Directed KNN lists of one frame, rows [offset, offset + n) of `features`.
void knn_frame(const Tensor& features, std::size_t offset, std::size_t n, std::size_t k, DistanceKind kind,
               std::set<Edge>& out) {
    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        cand.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) cand.emplace_back(node_distance(row(features, offset + i), row(features, offset + j), kind), j);
        }
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
        for (std::size_t r = 0; r < k; ++r) {
            const std::size_t a = offset + i, b = offset + cand[r].second;
            out.insert({std::min(a, b), std::max(a, b)});
        }
    }
}

std::size_t clamp_k(std::size_t k, std::size_t n) {
    if (k == 0) throw std::invalid_argument("build_local_graph: K_l must be >= 1");
    if (n >= 1 && k > n - 1) {
        warn_once("build_local_graph: K_l=" + std::to_string(k) + " clamped to " + std::to_string(n - 1) +
                  " for a grid of " + std::to_string(n) + " nodes");
        return n - 1;
    }
    return k;
}

// Closest pairs between two frames whose rows start at `a` and `b`.
void topk_pairs(const Tensor& fa, std::size_t a, const Tensor& fb, std::size_t b, std::size_t n, std::size_t k,
                DistanceKind kind, std::size_t id_a, std::size_t id_b, std::vector<Edge>& out) {
    std::vector<std::tuple<double, std::size_t, std::size_t>> m;
    m.reserve(n * n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t q = 0; q < n; ++q) m.emplace_back(node_distance(row(fa, a + j), row(fb, b + q), kind), j, q);
    }
    const std::size_t take = std::min(k, n * n);
    std::partial_sort(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(take), m.end());
    for (std::size_t r = 0; r < take; ++r) out.emplace_back(id_a + std::get<1>(m[r]), id_b + std::get<2>(m[r]));
}

}  // namespace

SignGraph build_local_graph(const NodeGrid& grid, std::size_t k, DistanceKind kind) {
    return build_local_graph(GridSeq::from_frame(grid), k, kind);
}

SignGraph build_local_graph(const GridSeq& seq, std::size_t k, DistanceKind kind) {
    const std::size_t n = seq.nodes_per_frame();
    if (n == 0 || seq.frames == 0) throw std::invalid_argument("build_local_graph: grid has no nodes");
    require_features(seq.features, seq.total_nodes(), "build_local_graph");
    k = clamp_k(k, n);
    std::set<Edge> edges;
    if (k > 0) {
        for (std::size_t f = 0; f < seq.frames; ++f) knn_frame(seq.features, f * n, n, k, kind, edges);
    }
    SignGraph g{GraphKind::local, {edges.begin(), edges.end()}, {}};
    g.space.blocks.push_back({"n", seq.frames, n});
    return g;
}

SignGraph build_temporal_graph(const NodeGrid& grid, const NodeGrid& next, std::size_t k, DistanceKind kind) {
    if (grid.nodes() != next.nodes()) {
        throw std::invalid_argument("build_temporal_graph: node counts " + std::to_string(grid.nodes()) + " and " +
                                    std::to_string(next.nodes()) + " differ");
    }
    if (k == 0) throw std::invalid_argument("build_temporal_graph: K_t must be >= 1");
    const std::size_t n = grid.nodes();
    require_features(grid.features, n, "build_temporal_graph");
    require_features(next.features, n, "build_temporal_graph");
    SignGraph g{GraphKind::temporal, {}, {}};
    topk_pairs(grid.features, 0, next.features, 0, n, k, kind, 0, n, g.edges);
    std::sort(g.edges.begin(), g.edges.end());
    g.space.blocks.push_back({"n", 2, n});
    return g;
}

SignGraph build_temporal_graph(const GridSeq& seq, std::size_t k, DistanceKind kind) {
    if (k == 0) throw std::invalid_argument("build_temporal_graph: K_t must be >= 1");
    const std::size_t n = seq.nodes_per_frame();
    require_features(seq.features, seq.total_nodes(), "build_temporal_graph");
    SignGraph g{GraphKind::temporal, {}, {}};
    for (std::size_t f = 0; f + 1 < seq.frames; ++f) {
        topk_pairs(seq.features, f * n, seq.features, (f + 1) * n, n, k, kind, f * n, (f + 1) * n, g.edges);
    }
    std::sort(g.edges.begin(), g.edges.end());
    g.space.blocks.push_back({"n", seq.frames, n});
    return g;
}

std::size_t hierarchical_parent(std::size_t j, std::size_t high_w, std::size_t low_w, std::size_t s) {
    return (j / high_w) / s * low_w + (j % high_w) / s;
}

SignGraph build_hierarchical_graph(std::size_t frames, std::size_t high_h, std::size_t high_w, std::size_t low_h,
                                   std::size_t low_w, std::size_t s) {
    if (s == 0 || high_h != s * low_h || high_w != s * low_w) {
        throw std::invalid_argument("build_hierarchical_graph: high-res extent " + std::to_string(high_h) + "x" +
                                    std::to_string(high_w) + " is not " + std::to_string(s) +
                                    " times low-res extent " + std::to_string(low_h) + "x" + std::to_string(low_w));
    }
    const std::size_t nh = high_h * high_w, nl = low_h * low_w;
    SignGraph g{GraphKind::hierarchical, {}, {}};
    g.edges.reserve(frames * nh);
    const std::size_t low_base = frames * nh;
    for (std::size_t f = 0; f < frames; ++f) {
        for (std::size_t j = 0; j < nh; ++j) {
            g.edges.emplace_back(f * nh + j, low_base + f * nl + hierarchical_parent(j, high_w, low_w, s));
        }
    }
    g.space.blocks.push_back({"h", frames, nh});
    g.space.blocks.push_back({"n", frames, nl});
    return g;
}

SignGraph build_hierarchical_graph(const NodeGrid& high, const NodeGrid& low, std::size_t s) {
    return build_hierarchical_graph(1, high.grid_h, high.grid_w, low.grid_h, low.grid_w, s);
}

SignGraph drop_edges(const SignGraph& g, double rate, std::uint64_t rng_seed) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("drop_edges: rate must be in [0, 1)");
    SignGraph out{g.kind, {}, g.space};
    if (rate == 0.0) {
        out.edges = g.edges;
        return out;
    }
    Rng rng = Rng::stream(rng_seed, {hash_name("drop_edges")});
    for (const Edge& e : g.edges) {
        if (rng.uniform() >= rate) out.edges.push_back(e);
    }
    return out;
}

std::string to_dot(const SignGraph& g) {
    std::ostringstream os;
    os << "graph " << to_string(g.kind) << " {\n";
    for (std::size_t i = 0; i < g.num_nodes(); ++i) os << "  " << g.space.label(i) << ";\n";
    for (auto [a, b] : g.edges) os << "  " << g.space.label(a) << " -- " << g.space.label(b) << ";\n";
    os << "}\n";
    return os.str();
}

std::string to_json(const SignGraph& g) {
    nlohmann::json j;
    j["kind"] = std::string(to_string(g.kind));
    auto edges = nlohmann::json::array();
    for (auto [a, b] : g.edges) edges.push_back({g.space.label(a), g.space.label(b)});
    j["edges"] = std::move(edges);
    return j.dump() + "\n";
}

}  // namespace mixsign
