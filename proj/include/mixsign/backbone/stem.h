#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "mixsign/backbone/grid.h"
#include "mixsign/tensor/param_io.h"
#include "mixsign/util/rng.h"

namespace mixsign {

// Convolutional patchify stem: a chain of (conv k x k, stride s, ReLU)
// blocks. The effective patch size is the product of the strides and the
// node dimension D is the last block's width. `tap_block` selects the block
// whose output is exposed as the high-resolution input of the first
// hierarchical graph (-1 for none).
struct StemConfig {
    std::vector<std::size_t> channels{8, 16, 32};
    std::vector<std::size_t> strides{2, 2, 2};
    std::size_t kernel = 3;
    int tap_block = 1;

    std::size_t patch_size() const;
    std::size_t dim() const { return channels.back(); }
    void validate() const;
};

struct ConvWeights {
    Tensor weight;  // [k, k, Cin, Cout]
    Tensor bias;    // [Cout]
};

// He fan-in initialisation, zero bias.
ConvWeights init_conv(std::size_t k, std::size_t cin, std::size_t cout, Rng& rng);
void collect(ParamList& out, const std::string& prefix, const ConvWeights& w);

struct StemWeights {
    std::vector<ConvWeights> blocks;
};

StemWeights init_stem(const StemConfig& cfg, Rng& rng);
void collect(ParamList& out, const std::string& prefix, const StemWeights& w);

struct StemOutput {
    GridSeq grids;               // stride P, dim D
    std::optional<GridSeq> taps;  // output of cfg.tap_block
};

// frames: [T, H, W, 3]. H and W must be divisible by every cumulative stride.
StemOutput patchify_stem(const Tensor& frames, const StemConfig& cfg, const StemWeights& w);

// Stride-2 3x3 convolution + ReLU: (h, w, D) -> (h/2, w/2, 2D).
ConvWeights init_patch_merge(std::size_t dim, Rng& rng);
GridSeq patch_merge(const GridSeq& grid, const ConvWeights& w);
NodeGrid patch_merge(const NodeGrid& grid, const ConvWeights& w);

}  // namespace mixsign
