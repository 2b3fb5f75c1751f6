#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "mixsign/tensor/tensor.h"

namespace mixsign {

// Kernel kinds reachable through apply_op. The typed functions in ops:: are
// the primary API; apply_op is the uniform entry point used by the gradient
// suite and the CLI's gradcheck table.
enum class OpKind {
    matmul,
    conv2d,
    conv1d,
    add,
    mul,
    relu,
    max_over_axis,
    mean_over_axis,
    softmax_log,
    concat,
    gather_rows,
    scatter_add_rows,
    strided_conv2d,
    // Extensions needed by the recurrent head and decoder.
    sub,
    sigmoid,
    tanh,
    transpose,
    reshape,
    slice,
    sum,
    exp,
};

std::string_view op_name(OpKind kind);
std::span<const OpKind> all_op_kinds();

struct OpAttrs {
    std::size_t axis = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t rows = 0;                // scatter_add_rows output rows
    std::vector<std::size_t> indices;    // gather/scatter row indices
    Shape shape;                         // reshape target
};

Tensor apply_op(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

namespace ops {

// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);
// [M,N] -> [N,M]
Tensor transpose(const Tensor& a);

// Elementwise with numpy-style broadcasting (trailing-aligned, extent-1 dims
// broadcast). Gradients are summed over broadcast dimensions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// relu'(0) = 0.
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);

// Reduce one axis (removed from the output shape). max routes gradient to
// the first maximal index on ties.
Tensor max_over_axis(const Tensor& a, std::size_t axis);
Tensor mean_over_axis(const Tensor& a, std::size_t axis);
Tensor sum(const Tensor& a);  // -> shape [1]

// Log-softmax over the last axis.
Tensor log_softmax(const Tensor& a);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& a, Shape shape);

// [R,C] -> [len(idx), C]
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> idx);
// [R,C] -> [rows, C]; out[idx[r]] += a[r]
Tensor scatter_add_rows(const Tensor& a, std::span<const std::size_t> idx, std::size_t rows);

// x: [B,H,W,Cin], w: [kh,kw,Cin,Cout], bias: [Cout] or undefined.
// Output [B,Ho,Wo,Cout] with Ho = (H + 2p - kh) / stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t padding);
// Non-overlapping patch convolution: kernel == stride == s taken from w, no
// padding, no bias. H and W must be multiples of s.
Tensor strided_conv2d(const Tensor& x, const Tensor& w);
// x: [T,Cin], w: [k,Cin,Cout], bias [Cout] or undefined; zero padding.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t padding);

// Records an op with a caller-supplied backward. `backward` receives the
// output gradient and must return one gradient buffer per input (empty to
// skip an input).
using CustomBackward =
    std::function<std::vector<std::vector<double>>(std::span<const double> out_grad)>;
Tensor custom(std::string_view name, std::vector<Tensor> inputs, Shape shape, std::vector<double> value,
              CustomBackward backward);

}  // namespace ops

// Throws if any element is NaN or infinite; `what` names the op.
void require_finite(const Tensor& t, std::string_view what);

}  // namespace mixsign
