#include "mixsign/backbone/grid.h"

#include <stdexcept>
#include <string>

#include "mixsign/tensor/ops.h"

namespace mixsign {

void validate(const GridSeq& seq) {
    if (!seq.features.defined() || seq.features.rank() != 2 || seq.features.dim(0) != seq.total_nodes()) {
        throw std::invalid_argument("grid sequence of " + std::to_string(seq.frames) + " frames x " +
                                    std::to_string(seq.grid_h) + "x" + std::to_string(seq.grid_w) +
                                    " does not match features " +
                                    (seq.features.defined() ? shape_str(seq.features.shape()) : "undefined"));
    }
}

NodeGrid GridSeq::frame(std::size_t i) const {
    if (i >= frames) throw std::out_of_range("frame index " + std::to_string(i) + " out of range");
    const std::size_t n = nodes_per_frame(), d = dim();
    auto src = features.data().subspan(i * n * d, n * d);
    return NodeGrid{grid_h, grid_w, Tensor({n, d}, std::vector<double>(src.begin(), src.end())), stage};
}

GridSeq GridSeq::from_frame(const NodeGrid& g) { return GridSeq{1, g.grid_h, g.grid_w, g.features, g.stage}; }

Tensor GridSeq::as_image() const { return ops::reshape(features, {frames, grid_h, grid_w, dim()}); }

}  // namespace mixsign
