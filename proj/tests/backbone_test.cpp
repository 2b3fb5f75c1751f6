#include <gtest/gtest.h>

#include <algorithm>

#include "mixsign/backbone/stem.h"
#include "mixsign/tensor/ops.h"

using namespace mixsign;

namespace {

StemConfig desk_stem() { return StemConfig{{16, 32, 64}, {2, 2, 2}, 3, 1}; }

Tensor random_frames(std::size_t t, std::size_t h, std::size_t w, Rng& rng) {
    Tensor f({t, h, w, 3});
    for (double& v : f.mutable_data()) v = rng.uniform();
    return f;
}

}  // namespace

TEST(Stem, DeskShapes) {
    Rng rng = Rng::stream(1);
    StemConfig cfg = desk_stem();
    auto w = init_stem(cfg, rng);
    auto out = patchify_stem(random_frames(2, 64, 64, rng), cfg, w);
    EXPECT_EQ(cfg.patch_size(), 8u);
    EXPECT_EQ(out.grids.frames, 2u);
    EXPECT_EQ(out.grids.nodes_per_frame(), 64u);  // 64*64 / 8^2
    EXPECT_EQ(out.grids.dim(), 64u);
    ASSERT_TRUE(out.taps.has_value());
    EXPECT_EQ(out.taps->grid_h, 16u);
    EXPECT_EQ(out.taps->grid_w, 16u);
    EXPECT_EQ(out.taps->dim(), 32u);  // D/2
}

TEST(Stem, PatchSixteenOn224Gives196Nodes) {
    Rng rng = Rng::stream(2);
    StemConfig cfg{{2, 2, 2, 4}, {2, 2, 2, 2}, 3, 2};
    auto w = init_stem(cfg, rng);
    auto out = patchify_stem(random_frames(1, 224, 224, rng), cfg, w);
    EXPECT_EQ(cfg.patch_size(), 16u);
    EXPECT_EQ(out.grids.nodes_per_frame(), 196u);
}

TEST(Stem, SingleStrideEightBlockGivesOneNode) {
    Rng rng = Rng::stream(3);
    StemConfig cfg{{5}, {8}, 3, -1};
    auto w = init_stem(cfg, rng);
    auto out = patchify_stem(random_frames(1, 8, 8, rng), cfg, w);
    EXPECT_EQ(out.grids.nodes_per_frame(), 1u);
    EXPECT_EQ(out.grids.dim(), 5u);
    EXPECT_FALSE(out.taps.has_value());
}

TEST(Stem, IndivisibleExtentNamesStride) {
    Rng rng = Rng::stream(4);
    StemConfig cfg = desk_stem();
    auto w = init_stem(cfg, rng);
    try {
        patchify_stem(random_frames(1, 60, 64, rng), cfg, w);  // 60 -> 30 -> 15, not divisible by 2
        FAIL() << "expected rejection";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("stride 2"), std::string::npos) << e.what();
    }
}

TEST(Stem, DeterministicGivenWeights) {
    Rng rng = Rng::stream(5);
    StemConfig cfg = desk_stem();
    auto w = init_stem(cfg, rng);
    Tensor f = random_frames(1, 32, 32, rng);
    auto a = patchify_stem(f, cfg, w), b = patchify_stem(f, cfg, w);
    EXPECT_TRUE(std::equal(a.grids.features.data().begin(), a.grids.features.data().end(),
                           b.grids.features.data().begin()));
}

TEST(Stem, HeInitScaleAndZeroBias) {
    Rng rng = Rng::stream(6);
    auto c = init_conv(3, 32, 64, rng);
    double ss = 0;
    for (double v : c.weight.data()) ss += v * v;
    const double var = ss / static_cast<double>(c.weight.numel());
    EXPECT_NEAR(var, 2.0 / (9 * 32), 0.1 * 2.0 / (9 * 32));
    for (double v : c.bias.data()) EXPECT_EQ(v, 0.0);
}

// Shifting the input by one full patch shifts the node grid by one node.
TEST(Stem, TranslationConsistentOnZeroPaddedFrames) {
    Rng rng = Rng::stream(7);
    StemConfig cfg = desk_stem();
    auto w = init_stem(cfg, rng);
    const std::size_t H = 64, P = 8;
    Tensor a({1, H, H, 3}, 0.0), b({1, H, H, 3}, 0.0);
    for (std::size_t y = 16; y < 40; ++y) {
        for (std::size_t x = 16; x < 40; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = rng.uniform();
                a.mutable_data()[(y * H + x) * 3 + c] = v;
                b.mutable_data()[(y * H + x + P) * 3 + c] = v;
            }
        }
    }
    auto ga = patchify_stem(a, cfg, w).grids, gb = patchify_stem(b, cfg, w).grids;
    const std::size_t gw = ga.grid_w, d = ga.dim();
    for (std::size_t r = 0; r < ga.grid_h; ++r) {
        for (std::size_t c = 0; c + 1 < gw; ++c) {
            for (std::size_t k = 0; k < d; ++k) {
                ASSERT_NEAR(ga.features.at((r * gw + c) * d + k), gb.features.at((r * gw + c + 1) * d + k), 1e-12);
            }
        }
    }
}

TEST(PatchMerge, DeskAndFullSizeShapes) {
    Rng rng = Rng::stream(8);
    {
        NodeGrid g{8, 8, Tensor({64, 64}, 0.5), 1};
        auto out = patch_merge(g, init_patch_merge(64, rng));
        EXPECT_EQ(out.grid_h, 4u);
        EXPECT_EQ(out.grid_w, 4u);
        EXPECT_EQ(out.dim(), 128u);
        EXPECT_EQ(out.stage, 2);
    }
    {
        NodeGrid g{14, 14, Tensor({196, 512}, 0.1), 1};
        auto out = patch_merge(g, init_patch_merge(512, rng));
        EXPECT_EQ(out.grid_h, 7u);
        EXPECT_EQ(out.dim(), 1024u);
    }
}

TEST(PatchMerge, ZeroWeightsGiveZeroOutput) {
    Rng rng = Rng::stream(9);
    NodeGrid g{2, 2, Tensor({4, 3}, 1.0), 1};
    ConvWeights w{Tensor({3, 3, 3, 6}, 0.0), Tensor({6}, 0.0)};
    auto out = patch_merge(g, w);
    EXPECT_EQ(out.nodes(), 1u);
    EXPECT_EQ(out.dim(), 6u);
    for (double v : out.features.data()) EXPECT_EQ(v, 0.0);
}

TEST(PatchMerge, OddExtentRejected) {
    Rng rng = Rng::stream(10);
    NodeGrid g{3, 2, Tensor({6, 2}, 1.0), 1};
    EXPECT_THROW(patch_merge(g, init_patch_merge(2, rng)), std::invalid_argument);
}

TEST(PatchMerge, NodeCountQuartersPerMerge) {
    Rng rng = Rng::stream(11);
    GridSeq g{2, 16, 16, Tensor({2 * 256, 2}, 0.3), 1};
    const std::size_t n0 = g.nodes_per_frame();
    for (std::size_t k = 1; k <= 3; ++k) {
        g = patch_merge(g, init_patch_merge(g.dim(), rng));
        EXPECT_EQ(g.nodes_per_frame() * (1u << (2 * k)), n0);
        EXPECT_EQ(g.frames, 2u);
    }
}

TEST(NodeGrid, RowMajorIndexRoundTrips) {
    NodeGrid g{5, 7, Tensor({35, 1}), 1};
    for (std::size_t j = 0; j < g.nodes(); ++j) {
        auto [r, c] = g.row_col(j);
        EXPECT_LT(c, 7u);
        EXPECT_EQ(g.index(r, c), j);
    }
}
