#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mixsign/backbone/grid.h"

namespace mixsign {

enum class DistanceKind { euclidean, cosine, chebyshev };
enum class GraphKind { local, temporal, hierarchical };

std::string_view to_string(DistanceKind k);
std::string_view to_string(GraphKind k);
DistanceKind parse_distance(std::string_view s);

// Cosine distance against a zero vector is defined as 1.
double node_distance(std::span<const double> a, std::span<const double> b, DistanceKind kind);

// A contiguous range of node ids: `frames` grids of `nodes_per_frame` nodes,
// frame-major. Exported labels are "f{frame}_{tag}{index}".
struct NodeBlock {
    std::string tag = "n";
    std::size_t frames = 1;
    std::size_t nodes_per_frame = 0;
};

struct NodeSpace {
    std::vector<NodeBlock> blocks;

    std::size_t total() const;
    std::string label(std::size_t id) const;
};

using Edge = std::pair<std::size_t, std::size_t>;

// Undirected edge list. Each edge is stored once with first < second.
struct SignGraph {
    GraphKind kind = GraphKind::local;
    std::vector<Edge> edges;
    NodeSpace space;

    std::size_t num_nodes() const { return space.total(); }
    // Neighbour lists in both directions, each sorted ascending.
    std::vector<std::vector<std::size_t>> adjacency() const;
};

// Throws if an edge is a self-loop, a duplicate, unordered, or out of range.
void validate(const SignGraph& g);

// Per frame: each node links to its K nearest other nodes (ties to the lower
// index); the result is the deduplicated undirected union. K > N-1 is
// clamped with a warning. Feature rows are read from `grid.features`.
SignGraph build_local_graph(const NodeGrid& grid, std::size_t k, DistanceKind kind);
SignGraph build_local_graph(const GridSeq& seq, std::size_t k, DistanceKind kind);

// The min(K, N^2) closest (j, k) pairs between two frames, ties broken by
// lexicographic (j, k). Ids of `next` are offset by N.
SignGraph build_temporal_graph(const NodeGrid& grid, const NodeGrid& next, std::size_t k, DistanceKind kind);
// Union over all adjacent frame pairs of a video, ids as in the sequence.
SignGraph build_temporal_graph(const GridSeq& seq, std::size_t k, DistanceKind kind);

// Low-resolution parent of high-resolution node j.
std::size_t hierarchical_parent(std::size_t j, std::size_t high_w, std::size_t low_w, std::size_t s);

// One edge per high-resolution node to its parent region. High ids come
// first (tag "h"), low ids follow (tag "n"), both frame-major.
SignGraph build_hierarchical_graph(std::size_t frames, std::size_t high_h, std::size_t high_w, std::size_t low_h,
                                   std::size_t low_w, std::size_t s);
SignGraph build_hierarchical_graph(const NodeGrid& high, const NodeGrid& low, std::size_t s);

// Keeps each edge independently with probability 1 - rate.
SignGraph drop_edges(const SignGraph& g, double rate, std::uint64_t rng_seed);

std::string to_dot(const SignGraph& g);
std::string to_json(const SignGraph& g);

}  // namespace mixsign
