#pragma once

#include <cstddef>
#include <utility>

#include "mixsign/tensor/tensor.h"

namespace mixsign {

// One frame as a grid_h x grid_w patch grid. Node j sits at
// (j / grid_w, j % grid_w); features are [grid_h * grid_w, D].
struct NodeGrid {
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    Tensor features;
    int stage = 0;

    std::size_t nodes() const { return grid_h * grid_w; }
    std::size_t dim() const { return features.dim(1); }
    std::pair<std::size_t, std::size_t> row_col(std::size_t j) const { return {j / grid_w, j % grid_w}; }
    std::size_t index(std::size_t row, std::size_t col) const { return row * grid_w + col; }
};

// The grids of every frame of a video, stacked frame-major into one
// [frames * grid_h * grid_w, D] tensor so whole-video graphs can run a
// single message-passing call.
struct GridSeq {
    std::size_t frames = 0;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    Tensor features;
    int stage = 0;

    std::size_t nodes_per_frame() const { return grid_h * grid_w; }
    std::size_t total_nodes() const { return frames * nodes_per_frame(); }
    std::size_t dim() const { return features.dim(1); }

    // Copy of one frame's grid (values only, no gradient link).
    NodeGrid frame(std::size_t i) const;
    static GridSeq from_frame(const NodeGrid& g);
    // [frames, grid_h, grid_w, D] view for convolutions.
    Tensor as_image() const;
};

// Throws unless `seq` is internally consistent.
void validate(const GridSeq& seq);

}  // namespace mixsign
