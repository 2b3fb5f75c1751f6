#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mixsign/backbone/grid.h"
#include "mixsign/graph/graph.h"
#include "mixsign/tensor/param_io.h"
#include "mixsign/util/rng.h"

namespace mixsign {

enum class Aggregation { edgeconv_max, mean };
enum class GraphModule { hsg, tsg, lsg };

std::string_view to_string(Aggregation a);
std::string_view to_string(GraphModule m);
Aggregation parse_aggregation(std::string_view s);
GraphModule parse_graph_module(std::string_view s);

// Message network of one graph convolution: linear over
// concat(x_i, x_j - x_i) followed by ReLU.
struct EdgeMlp {
    Tensor weight;  // [2 * D, D_out]
    Tensor bias;    // [D_out] or undefined
};

// out_i = aggregate over neighbours j of relu([x_i, x_j - x_i] W + b).
// Every undirected edge sends a message both ways; isolated nodes output 0.
// Max aggregation routes ties to the lowest-index neighbour.
Tensor edge_conv(const Tensor& features, const SignGraph& graph, const EdgeMlp& mlp, Aggregation agg);

// theta1 [D, M] projects into the graph space, the message network maps
// M -> M, theta2 [M, D] projects back (no bias, so zero theta2 gives an
// exact identity update).
struct GraphBlockWeights {
    Tensor theta1;
    EdgeMlp mlp;
    Tensor theta2;
};

// theta1 [C_high, C_low] lifts the high-resolution map into the low
// resolution's width; fusion [s, s, C_low, C_low] is the bias-free
// non-overlapping convolution used to merge the updated high-resolution
// nodes back into the low-resolution grid.
struct HsgWeights {
    GraphBlockWeights block;
    Tensor fusion;
};

GraphBlockWeights init_graph_block(std::size_t dim, std::size_t mid, Rng& rng);
HsgWeights init_hsg(std::size_t high_dim, std::size_t low_dim, std::size_t s, Rng& rng);
void collect(ParamList& out, const std::string& prefix, const GraphBlockWeights& w);
void collect(ParamList& out, const std::string& prefix, const HsgWeights& w);

// Graph selection is a non-differentiable structure: it reads the values of
// the projected features and nothing flows back through it.
SignGraph lsg_graph(const GridSeq& grid, const GraphBlockWeights& w, std::size_t k_l, DistanceKind kind);
SignGraph tsg_graph(const GridSeq& grid, const GraphBlockWeights& w, std::size_t k_t, DistanceKind kind);
SignGraph hsg_graph(const GridSeq& high, const GridSeq& low, std::size_t s);

// x + edge_conv(x theta1, g) theta2
GridSeq graph_residual(const GridSeq& grid, const GraphBlockWeights& w, const SignGraph& g, Aggregation agg);
GridSeq lsg_update(const GridSeq& grid, const GraphBlockWeights& w, std::size_t k_l, DistanceKind kind,
                   Aggregation agg = Aggregation::edgeconv_max);
GridSeq tsg_update(const GridSeq& grid, const GraphBlockWeights& w, std::size_t k_t, DistanceKind kind,
                   Aggregation agg = Aggregation::edgeconv_max);
GridSeq hsg_apply(const GridSeq& high, const GridSeq& low, const HsgWeights& w, const SignGraph& g, std::size_t s,
                  Aggregation agg);
GridSeq hsg_update(const GridSeq& high, const GridSeq& low, const HsgWeights& w, std::size_t s,
                   Aggregation agg = Aggregation::edgeconv_max);

struct StageConfig {
    std::vector<GraphModule> order{GraphModule::hsg, GraphModule::tsg, GraphModule::lsg};
    Aggregation aggregation = Aggregation::edgeconv_max;
    std::size_t k_l = 4;
    std::size_t k_t = 16;
    DistanceKind distance = DistanceKind::euclidean;
    double drop_rate = 0.0;
    std::size_t hsg_stride = 2;

    // Each module at most once. An empty order disables the stage's graphs.
    void validate() const;
    bool uses(GraphModule m) const;
};

struct StageWeights {
    GraphBlockWeights lsg;
    GraphBlockWeights tsg;
    HsgWeights hsg;
};

StageWeights init_stage(std::size_t dim, std::size_t tap_dim, std::size_t s, Rng& rng);
void collect(ParamList& out, const std::string& prefix, const StageWeights& w);

// Graphs used by one stage, indexed by GraphModule.
struct StageGraphs {
    std::optional<SignGraph> hsg, tsg, lsg;
    std::optional<SignGraph>& at(GraphModule m);
    const std::optional<SignGraph>& at(GraphModule m) const;
};

struct StageResult {
    GridSeq grids;
    StageGraphs graphs;
};

// Applies the modules of cfg.order in sequence. `fixed` supplies previously
// built graphs (used to hold structure constant under finite differences).
// When `drop_seed` is set and cfg.drop_rate > 0, built graphs are thinned by
// DropEdge; evaluation leaves it unset.
StageResult mix_stage(const GridSeq& grids, const std::optional<GridSeq>& taps, const StageConfig& cfg,
                      const StageWeights& w, const StageGraphs* fixed = nullptr,
                      std::optional<std::uint64_t> drop_seed = std::nullopt);

}  // namespace mixsign
