#pragma once

#include <cstddef>
#include <vector>

#include "mixsign/tensor/param_io.h"

namespace mixsign {

// Adam with L2 weight decay folded into the gradient (g + wd * theta).
struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

class Adam {
public:
    Adam(ParamList params, AdamConfig cfg);

    // Applies one update from the parameters' current gradient buffers;
    // parameters without a gradient are treated as having gradient zero.
    void step();
    void zero_grad();
    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }
    std::size_t steps() const { return t_; }

    // Moment buffers as named tensors ("m.<name>", "v.<name>") for checkpoints.
    ParamList state() const;
    void load_state(const ParamList& state, std::size_t steps);

    const ParamList& params() const { return params_; }

private:
    ParamList params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace mixsign
