#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mixsign/mp/message_passing.h"
#include "mixsign/tensor/grad_check.h"
#include "mixsign/tensor/ops.h"

using namespace mixsign;

namespace {

double relu(double v) { return v > 0 ? v : 0; }

GridSeq seq_from(std::size_t frames, std::size_t h, std::size_t w, std::vector<double> values, std::size_t d) {
    return GridSeq{frames, h, w, Tensor({frames * h * w, d}, std::move(values)), 1};
}

GridSeq random_seq(std::size_t frames, std::size_t h, std::size_t w, std::size_t d, Rng& rng) {
    GridSeq s{frames, h, w, Tensor({frames * h * w, d}), 1};
    for (double& v : s.features.mutable_data()) v = rng.normal();
    return s;
}

GraphBlockWeights scalar_block(double theta1, double a, double b, double c, double theta2) {
    return GraphBlockWeights{Tensor({1, 1}, {theta1}), EdgeMlp{Tensor({2, 1}, {a, b}), Tensor({1}, {c})},
                             Tensor({1, 1}, {theta2})};
}

void zero(Tensor t) {
    for (double& v : t.mutable_data()) v = 0.0;
}

void expect_same(const Tensor& a, const Tensor& b) {
    ASSERT_EQ(a.shape(), b.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.at(i), b.at(i)) << "index " << i;
}

}  // namespace

TEST(EdgeConv, IsolatedNodeOutputsZero) {
    SignGraph g{GraphKind::local, {{0, 1}}, {{{"n", 1, 3}}}};
    EdgeMlp mlp{Tensor({4, 2}, 0.7), Tensor({2}, 0.3)};
    Tensor out = edge_conv(Tensor({3, 2}, 1.0), g, mlp, Aggregation::edgeconv_max);
    EXPECT_EQ(out.at(4), 0.0);
    EXPECT_EQ(out.at(5), 0.0);
    EXPECT_GT(out.at(0), 0.0);
}

TEST(EdgeConv, EqualNeighboursReduceToSelfTerm) {
    SignGraph g{GraphKind::local, {{0, 1}, {0, 2}}, {{{"n", 1, 3}}}};
    Tensor x({3, 1}, 2.0);
    EdgeMlp mlp{Tensor({2, 1}, {0.5, -9.0}), Tensor({1}, {0.25})};
    Tensor out = edge_conv(x, g, mlp, Aggregation::edgeconv_max);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(out.at(i), relu(0.5 * 2.0 + 0.25));
}

TEST(EdgeConv, TwoNodeHandExample) {
    SignGraph g{GraphKind::local, {{0, 1}}, {{{"n", 1, 2}}}};
    EdgeMlp mlp{Tensor({2, 1}, {1.0, 1.0}), Tensor()};
    Tensor out = edge_conv(Tensor({2, 1}, {1.0, 3.0}), g, mlp, Aggregation::edgeconv_max);
    EXPECT_DOUBLE_EQ(out.at(0), 3.0);
    EXPECT_DOUBLE_EQ(out.at(1), 1.0);
}

TEST(EdgeConv, OutOfRangeIdRejected) {
    SignGraph g{GraphKind::local, {{0, 5}}, {{{"n", 1, 6}}}};
    EdgeMlp mlp{Tensor({2, 1}, 1.0), Tensor()};
    EXPECT_THROW(edge_conv(Tensor({2, 1}, 1.0), g, mlp, Aggregation::edgeconv_max), std::invalid_argument);
}

TEST(EdgeConv, MaxAndMeanAgreeOnSingletonNeighbourhoods) {
    Rng rng = Rng::stream(3);
    SignGraph g{GraphKind::local, {{0, 3}, {1, 2}, {4, 5}}, {{{"n", 1, 6}}}};
    Tensor x({6, 3});
    for (double& v : x.mutable_data()) v = rng.normal();
    EdgeMlp mlp{Tensor({6, 4}), Tensor({4}, 0.1)};
    for (double& v : mlp.weight.mutable_data()) v = rng.normal();
    Tensor a = edge_conv(x, g, mlp, Aggregation::edgeconv_max), b = edge_conv(x, g, mlp, Aggregation::mean);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-15);
}

TEST(EdgeConv, MeanAveragesMessages) {
    SignGraph g{GraphKind::local, {{0, 1}, {0, 2}}, {{{"n", 1, 3}}}};
    EdgeMlp mlp{Tensor({2, 1}, {0.0, 1.0}), Tensor()};
    Tensor out = edge_conv(Tensor({3, 1}, {0.0, 2.0, 4.0}), g, mlp, Aggregation::mean);
    EXPECT_DOUBLE_EQ(out.at(0), 3.0);  // mean(relu(2), relu(4))
}

TEST(Lsg, ZeroTheta2IsIdentity) {
    Rng rng = Rng::stream(4);
    GridSeq x = random_seq(2, 2, 2, 3, rng);
    auto w = init_graph_block(3, 3, rng);
    zero(w.theta2);
    expect_same(lsg_update(x, w, 2, DistanceKind::euclidean).features, x.features);
}

TEST(Lsg, SingleNodeIsIdentity) {
    Rng rng = Rng::stream(5);
    GridSeq x = random_seq(1, 1, 1, 3, rng);
    auto w = init_graph_block(3, 3, rng);
    expect_same(lsg_update(x, w, 3, DistanceKind::euclidean).features, x.features);
}

TEST(Lsg, ThreeNodeHandEvaluation) {
    const double a = 0.5, b = 0.25, c = 0.1, t = 0.3;
    auto w = scalar_block(1.0, a, b, c, t);
    GridSeq x = seq_from(1, 1, 3, {0, 1, 10}, 1);
    // Graph on projected features (theta1 = 1): {(0,1), (1,2)}.
    auto msg = [&](double xi, double xj) { return relu(a * xi + b * (xj - xi) + c); };
    const double m0 = msg(0, 1), m1 = std::max(msg(1, 0), msg(1, 10)), m2 = msg(10, 1);
    Tensor out = lsg_update(x, w, 1, DistanceKind::euclidean).features;
    EXPECT_NEAR(out.at(0), 0 + t * m0, 1e-15);
    EXPECT_NEAR(out.at(1), 1 + t * m1, 1e-15);
    EXPECT_NEAR(out.at(2), 10 + t * m2, 1e-15);
}

TEST(Tsg, SingleFrameIsIdentity) {
    Rng rng = Rng::stream(6);
    GridSeq x = random_seq(1, 2, 2, 3, rng);
    auto w = init_graph_block(3, 3, rng);
    expect_same(tsg_update(x, w, 4, DistanceKind::euclidean).features, x.features);
}

TEST(Tsg, IdenticalFramesPairTwins) {
    Rng rng = Rng::stream(7);
    GridSeq one = random_seq(1, 2, 2, 3, rng);
    std::vector<double> v(one.features.data().begin(), one.features.data().end());
    v.insert(v.end(), one.features.data().begin(), one.features.data().end());
    GridSeq x = seq_from(2, 2, 2, v, 3);
    auto w = init_graph_block(3, 3, rng);
    auto g = tsg_graph(x, w, 4, DistanceKind::euclidean);
    for (auto [p, q] : g.edges) EXPECT_EQ(q, p + 4);
    // x_j - x_i = 0 on every edge, so each node's message is relu(x_i W_top' + b) with W_top' = theta1-space self term.
    Tensor p = ops::matmul(x.features, w.theta1);
    Tensor self = ops::relu(ops::add(ops::matmul(p, ops::slice(w.mlp.weight, 0, 0, 3)), w.mlp.bias));
    Tensor expect = ops::add(x.features, ops::matmul(self, w.theta2));
    Tensor out = tsg_update(x, w, 4, DistanceKind::euclidean).features;
    for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out.at(i), expect.at(i), 1e-12);
}

TEST(Tsg, TwoFrameHandEvaluation) {
    const double a = 0.5, b = -0.75, c = 0.2, t = 0.4;
    auto w = scalar_block(1.0, a, b, c, t);
    GridSeq x = seq_from(2, 1, 2, {0, 5, 1, 9}, 1);
    // Edges (0,0') and (1,0') after the tie-break; node 1' is isolated.
    auto msg = [&](double xi, double xj) { return relu(a * xi + b * (xj - xi) + c); };
    const double expect[4] = {0 + t * msg(0, 1), 5 + t * msg(5, 1), 1 + t * std::max(msg(1, 0), msg(1, 5)), 9};
    Tensor out = tsg_update(x, w, 2, DistanceKind::euclidean).features;
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.at(i), expect[i], 1e-15) << i;
}

TEST(Hsg, UnitStrideZeroWeightsIsIdentity) {
    Rng rng = Rng::stream(8);
    GridSeq high = random_seq(2, 2, 2, 2, rng), low = random_seq(2, 2, 2, 3, rng);
    auto w = init_hsg(2, 3, 1, rng);
    zero(w.block.theta2);
    zero(w.fusion);
    expect_same(hsg_update(high, low, w, 1).features, low.features);
}

TEST(Hsg, TwoByTwoToOneHandEvaluation) {
    const double th1 = 2.0, a = 0.5, b = 0.3, c = -0.1, t = 0.7;
    const double f[4] = {0.1, -0.2, 0.3, 0.4};
    HsgWeights w{scalar_block(th1, a, b, c, t), Tensor({2, 2, 1, 1}, std::vector<double>(f, f + 4))};
    const double h[4] = {0.2, -1.0, 1.5, 0.7}, l = 0.9;
    GridSeq high = seq_from(1, 2, 2, std::vector<double>(h, h + 4), 1);
    GridSeq low = seq_from(1, 1, 1, {l}, 1);
    auto msg = [&](double xi, double xj) { return relu(a * xi + b * (xj - xi) + c); };
    double lifted[4], m_low = 0;
    for (int j = 0; j < 4; ++j) {
        lifted[j] = th1 * h[j];
        m_low = std::max(m_low, msg(l, lifted[j]));
    }
    double fused = 0;
    for (int j = 0; j < 4; ++j) fused += f[j] * (lifted[j] + t * msg(lifted[j], l));
    const double expect = l + t * m_low + fused;
    EXPECT_NEAR(hsg_update(high, low, w, 2).features.item(), expect, 1e-14);
}

TEST(Hsg, LowNodeIgnoresHighNodesOutsideItsRegion) {
    Rng rng = Rng::stream(9);
    GridSeq high = random_seq(1, 4, 4, 2, rng), low = random_seq(1, 2, 2, 3, rng);
    auto w = init_hsg(2, 3, 2, rng);
    Tensor base = hsg_update(high, low, w, 2).features;
    // High node 15 = (3,3) belongs to low node 3; low nodes 0..2 must not move.
    GridSeq moved{1, 4, 4, high.features.clone(), 1};
    for (std::size_t k = 0; k < 2; ++k) moved.features.mutable_data()[15 * 2 + k] += 5.0;
    Tensor out = hsg_update(moved, low, w, 2).features;
    for (std::size_t i = 0; i < 3 * 3; ++i) EXPECT_EQ(out.at(i), base.at(i));
    bool changed = false;
    for (std::size_t i = 9; i < 12; ++i) changed |= out.at(i) != base.at(i);
    EXPECT_TRUE(changed);
}

TEST(Hsg, RatioMismatchRejected) {
    Rng rng = Rng::stream(10);
    GridSeq high = random_seq(1, 4, 4, 2, rng), low = random_seq(1, 3, 3, 3, rng);
    EXPECT_THROW(hsg_update(high, low, init_hsg(2, 3, 2, rng), 2), std::invalid_argument);
}

namespace {

struct StageFixture {
    Rng rng = Rng::stream(11);
    GridSeq taps = random_seq(3, 4, 4, 2, rng);
    GridSeq grids = random_seq(3, 2, 2, 4, rng);
    StageConfig cfg;
    StageWeights w = init_stage(4, 2, 2, rng);
    StageFixture() {
        cfg.k_l = 2;
        cfg.k_t = 3;
    }
};

}  // namespace

TEST(MixStage, AllZeroWeightsIsIdentity) {
    StageFixture s;
    ParamList params;
    collect(params, "stage", s.w);
    for (auto& p : params) zero(p.value);
    expect_same(mix_stage(s.grids, s.taps, s.cfg, s.w).grids.features, s.grids.features);
}

TEST(MixStage, DefaultEqualsManualComposition) {
    StageFixture s;
    GridSeq manual = hsg_update(s.taps, s.grids, s.w.hsg, 2);
    manual = tsg_update(manual, s.w.tsg, s.cfg.k_t, s.cfg.distance);
    manual = lsg_update(manual, s.w.lsg, s.cfg.k_l, s.cfg.distance);
    expect_same(mix_stage(s.grids, s.taps, s.cfg, s.w).grids.features, manual.features);
}

TEST(MixStage, OrderMatters) {
    StageFixture s;
    StageConfig other = s.cfg;
    other.order = {GraphModule::lsg, GraphModule::tsg, GraphModule::hsg};
    Tensor a = mix_stage(s.grids, s.taps, s.cfg, s.w).grids.features;
    Tensor b = mix_stage(s.grids, s.taps, other, s.w).grids.features;
    double diff = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a.at(i) - b.at(i)));
    EXPECT_GT(diff, 1e-6);
}

TEST(MixStage, MissingTapRejected) {
    StageFixture s;
    EXPECT_THROW(mix_stage(s.grids, std::nullopt, s.cfg, s.w), std::invalid_argument);
    StageConfig no_hsg = s.cfg;
    no_hsg.order = {GraphModule::tsg, GraphModule::lsg};
    EXPECT_NO_THROW(mix_stage(s.grids, std::nullopt, no_hsg, s.w));
}

TEST(MixStage, DuplicateModuleRejected) {
    StageConfig c;
    c.order = {GraphModule::lsg, GraphModule::lsg};
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(MixStage, FixedGraphsReproduceBuiltOutput) {
    StageFixture s;
    auto built = mix_stage(s.grids, s.taps, s.cfg, s.w);
    auto replay = mix_stage(s.grids, s.taps, s.cfg, s.w, &built.graphs);
    expect_same(built.grids.features, replay.grids.features);
    EXPECT_EQ(built.graphs.tsg->edges.size(), 2u * 3u);
    EXPECT_EQ(built.graphs.hsg->edges.size(), 3u * 16u);
}

TEST(MixStage, DropEdgeOnlyWhenSeeded) {
    StageFixture s;
    s.cfg.drop_rate = 0.5;
    auto eval = mix_stage(s.grids, s.taps, s.cfg, s.w);
    auto train = mix_stage(s.grids, s.taps, s.cfg, s.w, nullptr, 42);
    EXPECT_EQ(eval.graphs.hsg->edges.size(), 48u);
    EXPECT_LT(train.graphs.hsg->edges.size(), 48u);
}

// Finite-difference checks with the graph structure held fixed.
TEST(MixStageGradient, EachUpdatePassesGradCheck) {
    Rng rng = Rng::stream(12);
    GridSeq taps = random_seq(2, 4, 4, 2, rng), grids = random_seq(2, 2, 2, 3, rng);
    StageWeights w = init_stage(3, 2, 2, rng);
    for (auto agg : {Aggregation::edgeconv_max, Aggregation::mean}) {
        for (GraphModule m : {GraphModule::hsg, GraphModule::tsg, GraphModule::lsg}) {
            StageConfig cfg;
            cfg.order = {m};
            cfg.k_l = 2;
            cfg.k_t = 3;
            cfg.aggregation = agg;
            auto graphs = mix_stage(grids, taps, cfg, w).graphs;
            Tensor r({grids.total_nodes(), 3});
            for (double& v : r.mutable_data()) v = rng.normal();
            ParamList params;
            collect(params, "s", w);
            std::vector<Tensor> checked{grids.features, taps.features};
            for (auto& p : params) checked.push_back(p.value);
            auto f = [&] {
                GridSeq g = grids, t = taps;
                return ops::sum(ops::mul(mix_stage(g, t, cfg, w, &graphs).grids.features, r));
            };
            auto rep = grad_check_params(f, checked, 1e-5, 1e-4);
            EXPECT_TRUE(rep.passed) << to_string(m) << "/" << to_string(agg) << " rel " << rep.max_rel_error;
        }
    }
}
