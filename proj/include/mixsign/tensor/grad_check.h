#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mixsign/tensor/tensor.h"

namespace mixsign {

struct GradCheckReport {
    bool passed = false;
    double max_rel_error = 0.0;
    std::size_t worst_param = 0;  // index into the checked parameter list
    std::size_t worst_index = 0;  // flat coordinate within that parameter
    std::size_t coordinates = 0;
};

// Central-difference check of analytic gradients.
//
// For every coordinate i of every parameter, compares the tape gradient with
// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps). The relative error of a
// coordinate is |a - n| / max(|a|, |n|, 1e-8); the check passes iff the
// maximum over all coordinates is below tol. f must return a scalar and be
// deterministic: it is evaluated twice up front and rejected if the results
// differ bitwise. Parameters are perturbed in place and restored.
GradCheckReport grad_check_params(const std::function<Tensor()>& f, std::vector<Tensor> params, double eps,
                                  double tol);

// Single-input form: f is called with a leaf copy of x.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps, double tol);

}  // namespace mixsign
