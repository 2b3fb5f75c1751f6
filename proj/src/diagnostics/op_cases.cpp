#include <algorithm>
#include <cmath>
#include <numeric>

#include "mixsign/diagnostics/gradient_suite.h"

namespace mixsign {

namespace {

std::size_t pick(Rng& rng, int lo, int hi) { return static_cast<std::size_t>(rng.range(lo, hi)); }

Tensor random_tensor(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.mutable_data()) v = rng.uniform(-1.0, 1.0);
    return t;
}

// Values with |v| >= 0.1 so relu is differentiable at every coordinate.
Tensor off_kink_tensor(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.mutable_data()) {
        const double m = rng.uniform(0.1, 1.0);
        v = rng.bernoulli(0.5) ? m : -m;
    }
    return t;
}

// Distinct values spaced 0.05 apart (shuffled) so max never sits on a tie.
Tensor distinct_tensor(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    auto d = t.mutable_data();
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = -1.0 + 0.05 * static_cast<double>(order[i]);
    return t;
}

Shape random_shape(Rng& rng, int rank) {
    Shape s;
    for (int i = 0; i < rank; ++i) s.push_back(pick(rng, 1, 4));
    return s;
}

}  // namespace

OpCase random_op_case(OpKind kind, Rng& rng) {
    OpCase c;
    switch (kind) {
        case OpKind::matmul: {
            const auto m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
            c.inputs = {random_tensor({m, k}, rng), random_tensor({k, n}, rng)};
            break;
        }
        case OpKind::conv2d: {
            const std::size_t k = rng.bernoulli(0.5) ? 3 : 1;
            const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
            c.attrs.stride = pick(rng, 1, 2);
            c.attrs.padding = k == 3 ? pick(rng, 0, 1) : 0;
            const std::size_t h = pick(rng, 3, 5), w = pick(rng, 3, 5);
            c.inputs = {random_tensor({pick(rng, 1, 2), h, w, cin}, rng), random_tensor({k, k, cin, cout}, rng),
                        random_tensor({cout}, rng)};
            break;
        }
        case OpKind::conv1d: {
            const std::size_t k = 1 + 2 * pick(rng, 0, 2);
            const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
            c.attrs.padding = k / 2;
            c.inputs = {random_tensor({pick(rng, 3, 6), cin}, rng), random_tensor({k, cin, cout}, rng),
                        random_tensor({cout}, rng)};
            break;
        }
        case OpKind::add:
        case OpKind::sub:
        case OpKind::mul: {
            const Shape a = random_shape(rng, 2 + static_cast<int>(rng.below(2)));
            Shape b = a;
            switch (rng.below(4)) {
                case 0: break;
                case 1: b = Shape(a.begin() + 1, a.end()); break;  // trailing suffix
                case 2: b.back() = 1; break;                       // column broadcast
                default: b = Shape{1}; break;                      // scalar
            }
            c.inputs = {random_tensor(a, rng), random_tensor(b, rng)};
            break;
        }
        case OpKind::relu:
            c.inputs = {off_kink_tensor(random_shape(rng, 2), rng)};
            break;
        case OpKind::sigmoid:
        case OpKind::tanh:
        case OpKind::exp:
        case OpKind::sum:
        case OpKind::transpose:
            c.inputs = {random_tensor(random_shape(rng, 2), rng)};
            break;
        case OpKind::softmax_log:
            c.inputs = {random_tensor({pick(rng, 1, 4), pick(rng, 2, 5)}, rng)};
            break;
        case OpKind::max_over_axis:
        case OpKind::mean_over_axis: {
            const int rank = 2 + static_cast<int>(rng.below(2));
            const Shape s = random_shape(rng, rank);
            c.attrs.axis = rng.below(static_cast<std::uint64_t>(rank));
            c.inputs = {kind == OpKind::max_over_axis ? distinct_tensor(s, rng) : random_tensor(s, rng)};
            break;
        }
        case OpKind::concat: {
            const int rank = 2;
            const Shape base = random_shape(rng, rank);
            c.attrs.axis = rng.below(rank);
            const std::size_t parts = pick(rng, 2, 3);
            for (std::size_t p = 0; p < parts; ++p) {
                Shape s = base;
                s[c.attrs.axis] = pick(rng, 1, 3);
                c.inputs.push_back(random_tensor(s, rng));
            }
            break;
        }
        case OpKind::gather_rows: {
            const std::size_t rows = pick(rng, 1, 4);
            c.inputs = {random_tensor({rows, pick(rng, 1, 3)}, rng)};
            const std::size_t n = pick(rng, 1, 6);
            for (std::size_t i = 0; i < n; ++i) c.attrs.indices.push_back(rng.below(rows));
            break;
        }
        case OpKind::scatter_add_rows: {
            const std::size_t n = pick(rng, 1, 5);
            c.attrs.rows = pick(rng, 1, 4);
            c.inputs = {random_tensor({n, pick(rng, 1, 3)}, rng)};
            for (std::size_t i = 0; i < n; ++i) c.attrs.indices.push_back(rng.below(c.attrs.rows));
            break;
        }
        case OpKind::strided_conv2d: {
            const std::size_t s = pick(rng, 1, 2), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
            c.inputs = {random_tensor({pick(rng, 1, 2), s * pick(rng, 1, 2), s * pick(rng, 1, 2), cin}, rng),
                        random_tensor({s, s, cin, cout}, rng)};
            break;
        }
        case OpKind::reshape: {
            const Shape s = random_shape(rng, 2);
            c.attrs.shape = {shape_numel(s)};
            c.inputs = {random_tensor(s, rng)};
            break;
        }
        case OpKind::slice: {
            const Shape s = {pick(rng, 2, 4), pick(rng, 2, 4)};
            c.attrs.axis = rng.below(2);
            c.attrs.begin = rng.below(s[c.attrs.axis] - 1);
            c.attrs.end = c.attrs.begin + 1 + rng.below(s[c.attrs.axis] - c.attrs.begin);
            c.inputs = {random_tensor(s, rng)};
            break;
        }
    }
    return c;
}

GradSuiteRow check_op_kind(OpKind kind, int cases, std::uint64_t seed, double eps, double tol) {
    GradSuiteRow row{std::string("op:") + std::string(op_name(kind))};
    Rng rng = Rng::stream(seed, {hash_name("op-case"), static_cast<std::uint64_t>(kind)});
    for (int i = 0; i < cases; ++i) {
        OpCase oc = random_op_case(kind, rng);
        // Probe output shape once, then weight the output with fixed random
        // coefficients so the scalar objective exercises every coordinate.
        const Tensor probe = apply_op(kind, oc.inputs, oc.attrs);
        Tensor weights(probe.shape());
        for (double& v : weights.mutable_data()) v = rng.uniform(-1.0, 1.0);
        auto f = [&] { return ops::sum(ops::mul(apply_op(kind, oc.inputs, oc.attrs), weights)); };
        const GradCheckReport rep = grad_check_params(f, oc.inputs, eps, tol);
        ++row.cases;
        if (rep.passed) ++row.passed;
        row.worst_rel_error = std::max(row.worst_rel_error, rep.max_rel_error);
    }
    return row;
}

}  // namespace mixsign
