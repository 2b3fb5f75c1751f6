#include "mixsign/backbone/stem.h"

#include <cmath>
#include <stdexcept>

#include "mixsign/tensor/ops.h"

namespace mixsign {

std::size_t StemConfig::patch_size() const {
    std::size_t p = 1;
    for (std::size_t s : strides) p *= s;
    return p;
}

void StemConfig::validate() const {
    if (channels.empty() || channels.size() != strides.size()) {
        throw std::invalid_argument("stem config needs one stride per block");
    }
    for (std::size_t s : strides) {
        if (s < 1) throw std::invalid_argument("stem strides must be >= 1");
    }
    if (tap_block >= static_cast<int>(channels.size()) || tap_block < -1) {
        throw std::invalid_argument("stem tap_block " + std::to_string(tap_block) + " out of range");
    }
}

ConvWeights init_conv(std::size_t k, std::size_t cin, std::size_t cout, Rng& rng) {
    ConvWeights w{Tensor({k, k, cin, cout}), Tensor({cout}, 0.0)};
    const double sd = std::sqrt(2.0 / static_cast<double>(k * k * cin));
    for (double& v : w.weight.mutable_data()) v = sd * rng.normal();
    w.weight.set_requires_grad(true);
    w.bias.set_requires_grad(true);
    return w;
}

void collect(ParamList& out, const std::string& prefix, const ConvWeights& w) {
    out.push_back({prefix + ".weight", w.weight});
    out.push_back({prefix + ".bias", w.bias});
}

StemWeights init_stem(const StemConfig& cfg, Rng& rng) {
    cfg.validate();
    StemWeights w;
    std::size_t cin = 3;
    for (std::size_t c : cfg.channels) {
        w.blocks.push_back(init_conv(cfg.kernel, cin, c, rng));
        cin = c;
    }
    return w;
}

void collect(ParamList& out, const std::string& prefix, const StemWeights& w) {
    for (std::size_t i = 0; i < w.blocks.size(); ++i) collect(out, prefix + ".block" + std::to_string(i), w.blocks[i]);
}

StemOutput patchify_stem(const Tensor& frames, const StemConfig& cfg, const StemWeights& w) {
    cfg.validate();
    if (frames.rank() != 4 || frames.dim(3) != 3) {
        throw std::invalid_argument("patchify_stem: frames must be [T, H, W, 3], got " + shape_str(frames.shape()));
    }
    if (w.blocks.size() != cfg.channels.size()) throw std::invalid_argument("patchify_stem: weight/config block mismatch");

    StemOutput out;
    Tensor x = frames;
    std::size_t h = frames.dim(1), wd = frames.dim(2);
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
        const std::size_t s = cfg.strides[i];
        if (h % s != 0 || wd % s != 0) {
            throw std::invalid_argument("patchify_stem: extent " + std::to_string(h) + "x" + std::to_string(wd) +
                                        " at block " + std::to_string(i) + " is not divisible by stride " +
                                        std::to_string(s));
        }
        x = ops::relu(ops::conv2d(x, w.blocks[i].weight, w.blocks[i].bias, s, (cfg.kernel - 1) / 2));
        if (x.dim(1) != h / s || x.dim(2) != wd / s) {
            throw std::invalid_argument("patchify_stem: kernel " + std::to_string(cfg.kernel) +
                                        " does not tile stride " + std::to_string(s));
        }
        h = x.dim(1);
        wd = x.dim(2);
        auto as_seq = [&] {
            return GridSeq{x.dim(0), h, wd, ops::reshape(x, {x.dim(0) * h * wd, x.dim(3)}), 0};
        };
        if (static_cast<int>(i) == cfg.tap_block) out.taps = as_seq();
        if (i + 1 == cfg.channels.size()) out.grids = as_seq();
    }
    out.grids.stage = 1;
    return out;
}

ConvWeights init_patch_merge(std::size_t dim, Rng& rng) { return init_conv(3, dim, 2 * dim, rng); }

GridSeq patch_merge(const GridSeq& grid, const ConvWeights& w) {
    validate(grid);
    if (grid.grid_h % 2 != 0 || grid.grid_w % 2 != 0) {
        throw std::invalid_argument("patch_merge: grid " + std::to_string(grid.grid_h) + "x" +
                                    std::to_string(grid.grid_w) + " has an odd extent");
    }
    Tensor y = ops::relu(ops::conv2d(grid.as_image(), w.weight, w.bias, 2, 1));
    const std::size_t h = y.dim(1), wd = y.dim(2), d = y.dim(3);
    return GridSeq{grid.frames, h, wd, ops::reshape(y, {grid.frames * h * wd, d}), grid.stage + 1};
}

NodeGrid patch_merge(const NodeGrid& grid, const ConvWeights& w) {
    GridSeq out = patch_merge(GridSeq::from_frame(grid), w);
    return NodeGrid{out.grid_h, out.grid_w, out.features, out.stage};
}

}  // namespace mixsign
