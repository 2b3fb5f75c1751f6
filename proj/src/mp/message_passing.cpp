#include "mixsign/mp/message_passing.h"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "mixsign/tensor/ops.h"

namespace mixsign {

std::string_view to_string(Aggregation a) { return a == Aggregation::mean ? "mean" : "edgeconv_max"; }

std::string_view to_string(GraphModule m) {
    switch (m) {
        case GraphModule::hsg: return "hsg";
        case GraphModule::tsg: return "tsg";
        case GraphModule::lsg: return "lsg";
    }
    return "?";
}

Aggregation parse_aggregation(std::string_view s) {
    if (s == "edgeconv_max") return Aggregation::edgeconv_max;
    if (s == "mean") return Aggregation::mean;
    throw std::invalid_argument("unknown aggregation '" + std::string(s) + "'");
}

GraphModule parse_graph_module(std::string_view s) {
    for (auto m : {GraphModule::hsg, GraphModule::tsg, GraphModule::lsg}) {
        if (to_string(m) == s) return m;
    }
    throw std::invalid_argument("unknown graph module '" + std::string(s) + "'");
}

namespace {

// out[i] = max_j relu(self[i] + nbr[j] + bias) over the sorted neighbour list
// of i, first index winning ties; zero for isolated nodes. Fused so that no
// [edges, D] intermediate is materialised.
Tensor max_messages(const Tensor& self_part, const Tensor& nbr_part, const Tensor& bias,
                    const std::vector<std::vector<std::size_t>>& adj) {
    const std::size_t n = self_part.dim(0), d = self_part.dim(1);
    const auto s = self_part.data(), nb = nbr_part.data();
    const bool has_bias = bias.defined();
    std::vector<double> value(n * d, 0.0);
    // Winning neighbour per (i, c), or n when the output is zero.
    auto winner = std::make_shared<std::vector<std::size_t>>(n * d, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            const double base = s[i * d + c] + (has_bias ? bias.at(c) : 0.0);
            double best = 0.0;
            std::size_t arg = n;
            for (std::size_t j : adj[i]) {
                const double v = base + nb[j * d + c];
                if (v > best) {
                    best = v;
                    arg = j;
                }
            }
            value[i * d + c] = best;
            (*winner)[i * d + c] = arg;
        }
    }
    std::vector<Tensor> inputs{self_part, nbr_part};
    if (has_bias) inputs.push_back(bias);
    return ops::custom("edge_max", std::move(inputs), {n, d}, std::move(value),
                       [winner, n, d, has_bias](std::span<const double> g) {
                           std::vector<std::vector<double>> grads(has_bias ? 3 : 2);
                           grads[0].assign(n * d, 0.0);
                           grads[1].assign(n * d, 0.0);
                           if (has_bias) grads[2].assign(d, 0.0);
                           for (std::size_t k = 0; k < n * d; ++k) {
                               const std::size_t j = (*winner)[k];
                               if (j == n) continue;
                               const std::size_t c = k % d;
                               grads[0][k] += g[k];
                               grads[1][j * d + c] += g[k];
                               if (has_bias) grads[2][c] += g[k];
                           }
                           return grads;
                       });
}

}  // namespace

Tensor edge_conv(const Tensor& x, const SignGraph& graph, const EdgeMlp& mlp, Aggregation agg) {
    if (x.rank() != 2) throw std::invalid_argument("edge_conv: features must be [N, D], got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (mlp.weight.rank() != 2 || mlp.weight.dim(0) != 2 * d) {
        throw std::invalid_argument("edge_conv: message weight " + shape_str(mlp.weight.shape()) +
                                    " does not accept concat of two " + std::to_string(d) + "-d rows");
    }
    const std::size_t dout = mlp.weight.dim(1);
    for (auto [a, b] : graph.edges) {
        if (a >= n || b >= n) {
            throw std::invalid_argument("edge_conv: edge (" + std::to_string(a) + ", " + std::to_string(b) +
                                        ") out of range for " + std::to_string(n) + " nodes");
        }
    }

    std::vector<std::vector<std::size_t>> adj(n);
    for (auto [a, b] : graph.edges) {
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    for (auto& v : adj) std::sort(v.begin(), v.end());

    // [x_i, x_j - x_i] W = x_i (W_top - W_bot) + x_j W_bot
    Tensor w_top = ops::slice(mlp.weight, 0, 0, d), w_bot = ops::slice(mlp.weight, 0, d, 2 * d);
    Tensor self_part = ops::matmul(x, ops::sub(w_top, w_bot));
    Tensor nbr_part = ops::matmul(x, w_bot);

    auto messages = [&](const std::vector<std::size_t>& dst, const std::vector<std::size_t>& src) {
        Tensor m = ops::add(ops::gather_rows(self_part, dst), ops::gather_rows(nbr_part, src));
        if (mlp.bias.defined()) m = ops::add(m, mlp.bias);
        return ops::relu(m);
    };

    std::size_t max_deg = 0;
    for (const auto& v : adj) max_deg = std::max(max_deg, v.size());
    if (max_deg == 0) return Tensor({n, dout}, 0.0);

    Tensor mask({n, 1}, 0.0);
    bool isolated = false;
    for (std::size_t i = 0; i < n; ++i) {
        if (adj[i].empty()) isolated = true;
    }

    Tensor out;
    if (agg == Aggregation::edgeconv_max) {
        out = max_messages(self_part, nbr_part, mlp.bias, adj);
        isolated = false;  // isolated rows are already zero
    } else {
        std::vector<std::size_t> dst, src;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j : adj[i]) {
                dst.push_back(i);
                src.push_back(j);
            }
            mask.mutable_data()[i] = adj[i].empty() ? 0.0 : 1.0 / static_cast<double>(adj[i].size());
        }
        out = ops::scatter_add_rows(messages(dst, src), dst, n);
        isolated = true;  // the mask carries 1/deg
    }
    return isolated ? ops::mul(out, mask) : out;
}

namespace {

Tensor normal_tensor(Shape shape, double sd, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.mutable_data()) v = sd * rng.normal();
    t.set_requires_grad(true);
    return t;
}

// Values-only copy of `seq` with replaced features, for graph selection.
GridSeq with_features(const GridSeq& seq, const Tensor& f) {
    return GridSeq{seq.frames, seq.grid_h, seq.grid_w, f, seq.stage};
}

Tensor project_values(const Tensor& x, const Tensor& theta) {
    // Selection only needs values; keep it off the tape.
    Tape scratch;
    Tape::Scope scope(scratch);
    return ops::matmul(x.detach(), theta.detach());
}

void check_block(const GridSeq& grid, const GraphBlockWeights& w, const char* what) {
    validate(grid);
    if (w.theta1.dim(0) != grid.dim() || w.theta2.dim(1) != grid.dim()) {
        throw std::invalid_argument(std::string(what) + ": weights " + shape_str(w.theta1.shape()) + " / " +
                                    shape_str(w.theta2.shape()) + " do not fit node dim " +
                                    std::to_string(grid.dim()));
    }
}

GridSeq residual(const GridSeq& grid, const Tensor& projected, const GraphBlockWeights& w, const SignGraph& g,
                 Aggregation agg) {
    Tensor branch = ops::matmul(edge_conv(projected, g, w.mlp, agg), w.theta2);
    return with_features(grid, ops::add(grid.features, branch));
}

}  // namespace

GraphBlockWeights init_graph_block(std::size_t dim, std::size_t mid, Rng& rng) {
    GraphBlockWeights w;
    w.theta1 = normal_tensor({dim, mid}, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
    w.mlp.weight = normal_tensor({2 * mid, mid}, std::sqrt(2.0 / static_cast<double>(2 * mid)), rng);
    w.mlp.bias = Tensor({mid}, 0.0);
    w.mlp.bias.set_requires_grad(true);
    w.theta2 = normal_tensor({mid, dim}, 0.5 / std::sqrt(static_cast<double>(mid)), rng);
    return w;
}

HsgWeights init_hsg(std::size_t high_dim, std::size_t low_dim, std::size_t s, Rng& rng) {
    HsgWeights w;
    w.block = init_graph_block(low_dim, low_dim, rng);
    w.block.theta1 = normal_tensor({high_dim, low_dim}, 1.0 / std::sqrt(static_cast<double>(high_dim)), rng);
    w.fusion = normal_tensor({s, s, low_dim, low_dim}, 0.5 / std::sqrt(static_cast<double>(s * s * low_dim)), rng);
    return w;
}

void collect(ParamList& out, const std::string& prefix, const GraphBlockWeights& w) {
    out.push_back({prefix + ".theta1", w.theta1});
    out.push_back({prefix + ".mlp.weight", w.mlp.weight});
    out.push_back({prefix + ".mlp.bias", w.mlp.bias});
    out.push_back({prefix + ".theta2", w.theta2});
}

void collect(ParamList& out, const std::string& prefix, const HsgWeights& w) {
    collect(out, prefix, w.block);
    out.push_back({prefix + ".fusion", w.fusion});
}

SignGraph lsg_graph(const GridSeq& grid, const GraphBlockWeights& w, std::size_t k_l, DistanceKind kind) {
    check_block(grid, w, "lsg");
    return build_local_graph(with_features(grid, project_values(grid.features, w.theta1)), k_l, kind);
}

SignGraph tsg_graph(const GridSeq& grid, const GraphBlockWeights& w, std::size_t k_t, DistanceKind kind) {
    check_block(grid, w, "tsg");
    return build_temporal_graph(with_features(grid, project_values(grid.features, w.theta1)), k_t, kind);
}

SignGraph hsg_graph(const GridSeq& high, const GridSeq& low, std::size_t s) {
    if (high.frames != low.frames) {
        throw std::invalid_argument("hsg: " + std::to_string(high.frames) + " high-res frames vs " +
                                    std::to_string(low.frames) + " low-res frames");
    }
    return build_hierarchical_graph(high.frames, high.grid_h, high.grid_w, low.grid_h, low.grid_w, s);
}

GridSeq graph_residual(const GridSeq& grid, const GraphBlockWeights& w, const SignGraph& g, Aggregation agg) {
    check_block(grid, w, "graph_residual");
    return residual(grid, ops::matmul(grid.features, w.theta1), w, g, agg);
}

GridSeq lsg_update(const GridSeq& grid, const GraphBlockWeights& w, std::size_t k_l, DistanceKind kind,
                   Aggregation agg) {
    check_block(grid, w, "lsg");
    Tensor p = ops::matmul(grid.features, w.theta1);
    SignGraph g = build_local_graph(with_features(grid, p), k_l, kind);
    return residual(grid, p, w, g, agg);
}

GridSeq tsg_update(const GridSeq& grid, const GraphBlockWeights& w, std::size_t k_t, DistanceKind kind,
                   Aggregation agg) {
    check_block(grid, w, "tsg");
    if (grid.frames < 2) return grid;
    Tensor p = ops::matmul(grid.features, w.theta1);
    SignGraph g = build_temporal_graph(with_features(grid, p), k_t, kind);
    return residual(grid, p, w, g, agg);
}

GridSeq hsg_apply(const GridSeq& high, const GridSeq& low, const HsgWeights& w, const SignGraph& g, std::size_t s,
                  Aggregation agg) {
    validate(high);
    validate(low);
    if (high.frames != low.frames || high.grid_h != s * low.grid_h || high.grid_w != s * low.grid_w) {
        throw std::invalid_argument("hsg: high-res " + std::to_string(high.grid_h) + "x" + std::to_string(high.grid_w) +
                                    " is not " + std::to_string(s) + " times low-res " + std::to_string(low.grid_h) +
                                    "x" + std::to_string(low.grid_w));
    }
    if (w.block.theta1.dim(0) != high.dim() || w.block.theta1.dim(1) != low.dim()) {
        throw std::invalid_argument("hsg: theta1 " + shape_str(w.block.theta1.shape()) + " does not map " +
                                    std::to_string(high.dim()) + " -> " + std::to_string(low.dim()));
    }
    const std::size_t nh = high.total_nodes(), c = low.dim();
    Tensor lifted = ops::matmul(high.features, w.block.theta1);
    Tensor x = ops::concat({lifted, low.features}, 0);
    Tensor updated = ops::add(x, ops::matmul(edge_conv(x, g, w.block.mlp, agg), w.block.theta2));
    Tensor high_new = ops::reshape(ops::slice(updated, 0, 0, nh), {high.frames, high.grid_h, high.grid_w, c});
    Tensor low_new = ops::slice(updated, 0, nh, nh + low.total_nodes());
    Tensor fused = ops::reshape(ops::strided_conv2d(high_new, w.fusion), {low.total_nodes(), c});
    return with_features(low, ops::add(low_new, fused));
}

GridSeq hsg_update(const GridSeq& high, const GridSeq& low, const HsgWeights& w, std::size_t s, Aggregation agg) {
    return hsg_apply(high, low, w, hsg_graph(high, low, s), s, agg);
}

void StageConfig::validate() const {
    for (std::size_t i = 0; i < order.size(); ++i) {
        for (std::size_t j = i + 1; j < order.size(); ++j) {
            if (order[i] == order[j]) {
                throw std::invalid_argument("stage order lists " + std::string(to_string(order[i])) + " twice");
            }
        }
    }
    if (k_l < 1 || k_t < 1) throw std::invalid_argument("stage K_l and K_t must be >= 1");
    if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw std::invalid_argument("stage drop_rate must be in [0, 1)");
    if (hsg_stride < 1) throw std::invalid_argument("stage hsg_stride must be >= 1");
}

bool StageConfig::uses(GraphModule m) const { return std::find(order.begin(), order.end(), m) != order.end(); }

StageWeights init_stage(std::size_t dim, std::size_t tap_dim, std::size_t s, Rng& rng) {
    StageWeights w;
    w.hsg = init_hsg(tap_dim, dim, s, rng);
    w.tsg = init_graph_block(dim, dim, rng);
    w.lsg = init_graph_block(dim, dim, rng);
    return w;
}

void collect(ParamList& out, const std::string& prefix, const StageWeights& w) {
    collect(out, prefix + ".hsg", w.hsg);
    collect(out, prefix + ".tsg", w.tsg);
    collect(out, prefix + ".lsg", w.lsg);
}

std::optional<SignGraph>& StageGraphs::at(GraphModule m) {
    return m == GraphModule::hsg ? hsg : m == GraphModule::tsg ? tsg : lsg;
}

const std::optional<SignGraph>& StageGraphs::at(GraphModule m) const {
    return m == GraphModule::hsg ? hsg : m == GraphModule::tsg ? tsg : lsg;
}

StageResult mix_stage(const GridSeq& grids, const std::optional<GridSeq>& taps, const StageConfig& cfg,
                      const StageWeights& w, const StageGraphs* fixed, std::optional<std::uint64_t> drop_seed) {
    cfg.validate();
    StageResult res{grids, {}};
    const bool dropping = drop_seed.has_value() && cfg.drop_rate > 0.0;
    auto finish_graph = [&](GraphModule m, SignGraph g) {
        if (dropping) g = drop_edges(g, cfg.drop_rate, splitmix64(*drop_seed + static_cast<std::uint64_t>(m)));
        return g;
    };
    for (GraphModule m : cfg.order) {
        const std::optional<SignGraph>* given = fixed ? &fixed->at(m) : nullptr;
        GridSeq& x = res.grids;
        switch (m) {
            case GraphModule::hsg: {
                if (!taps) throw std::invalid_argument("mix_stage: HSG requires a high-resolution tap");
                SignGraph g = given && *given ? **given : finish_graph(m, hsg_graph(*taps, x, cfg.hsg_stride));
                x = hsg_apply(*taps, x, w.hsg, g, cfg.hsg_stride, cfg.aggregation);
                res.graphs.hsg = std::move(g);
                break;
            }
            case GraphModule::tsg:
            case GraphModule::lsg: {
                const GraphBlockWeights& bw = m == GraphModule::tsg ? w.tsg : w.lsg;
                check_block(x, bw, to_string(m).data());
                Tensor p = ops::matmul(x.features, bw.theta1);
                SignGraph g;
                if (given && *given) {
                    g = **given;
                } else {
                    GridSeq sel = with_features(x, p);
                    g = finish_graph(m, m == GraphModule::tsg ? build_temporal_graph(sel, cfg.k_t, cfg.distance)
                                                              : build_local_graph(sel, cfg.k_l, cfg.distance));
                }
                x = residual(x, p, bw, g, cfg.aggregation);
                res.graphs.at(m) = std::move(g);
                break;
            }
        }
    }
    return res;
}

}  // namespace mixsign
