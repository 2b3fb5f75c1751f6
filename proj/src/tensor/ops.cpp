#include "mixsign/tensor/ops.h"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

namespace mixsign {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b, std::string_view detail = {}) {
    std::string msg = std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b);
    if (!detail.empty()) msg += " (" + std::string(detail) + ")";
    throw std::invalid_argument(msg);
}

[[noreturn]] void op_error(std::string_view op, const std::string& detail) {
    throw std::invalid_argument(std::string(op) + ": " + detail);
}

void check_inputs(std::string_view op, std::initializer_list<const Tensor*> ins) {
    for (const Tensor* t : ins) {
        if (!t->defined()) op_error(op, "undefined input");
        require_finite(*t, op);
    }
}

bool wants_record(std::initializer_list<const Tensor*> ins) {
    if (Tape::current() == nullptr) return false;
    return std::any_of(ins.begin(), ins.end(), [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

// Builds the result tensor and, when recording, registers `bwd` on the tape.
// `bwd` is called with the output gradient during replay.
template <class Backward>
Tensor finish(std::string_view op, std::vector<Tensor> inputs, Shape shape, Buffer value,
              bool record, Backward&& bwd) {
    Tensor out = Tensor::make_result(std::move(shape), std::move(value));
    if (record) {
        out.mark_recorded();
        Tape::current()->record(op, std::move(inputs), out,
                                [out, fn = std::forward<Backward>(bwd)]() mutable { fn(out.grad()); });
    }
    return out;
}

// Adds `src` into the gradient of `t` when t participates in differentiation.
void accumulate(const Tensor& t, std::span<const double> src) {
    if (!t.defined() || !t.requires_grad()) return;
    auto g = t.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
}

// Outer/axis/inner decomposition used by reductions, concat and slice.
struct AxisSplit {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

Shape drop_axis(const Shape& s, std::size_t axis) {
    Shape out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != axis) out.push_back(s[i]);
    }
    if (out.empty()) out.push_back(1);
    return out;
}

// ---- broadcasting ---------------------------------------------------------

struct Broadcast {
    Shape out;
    std::vector<std::size_t> ia, ib;  // empty => identity / fast path
    enum class Mode { same, b_scalar, b_suffix, general } mode = Mode::same;
};

Broadcast plan_broadcast(std::string_view op, const Shape& a, const Shape& b) {
    Broadcast br;
    if (a == b) {
        br.out = a;
        br.mode = Broadcast::Mode::same;
        return br;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    Shape pa(rank, 1), pb(rank, 1);
    std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));
    br.out.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        if (pa[i] == pb[i] || pb[i] == 1) {
            br.out[i] = pa[i];
        } else if (pa[i] == 1) {
            br.out[i] = pb[i];
        } else {
            shape_error(op, a, b, "not broadcastable");
        }
    }
    if (shape_numel(b) == 1 && br.out == a) {
        br.mode = Broadcast::Mode::b_scalar;
        return br;
    }
    if (br.out == a && b.size() <= a.size() && std::equal(b.begin(), b.end(), a.end() - b.size())) {
        br.mode = Broadcast::Mode::b_suffix;
        return br;
    }
    br.mode = Broadcast::Mode::general;
    const std::size_t n = shape_numel(br.out);
    std::vector<std::size_t> sa(rank), sb(rank);
    std::size_t acc_a = 1, acc_b = 1;
    for (std::size_t i = rank; i-- > 0;) {
        sa[i] = pa[i] == 1 ? 0 : acc_a;
        sb[i] = pb[i] == 1 ? 0 : acc_b;
        acc_a *= pa[i];
        acc_b *= pb[i];
    }
    br.ia.resize(n);
    br.ib.resize(n);
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t oa = 0, ob = 0;
        for (std::size_t i = 0; i < rank; ++i) {
            oa += idx[i] * sa[i];
            ob += idx[i] * sb[i];
        }
        br.ia[k] = oa;
        br.ib[k] = ob;
        for (std::size_t i = rank; i-- > 0;) {
            if (++idx[i] < br.out[i]) break;
            idx[i] = 0;
        }
    }
    return br;
}

inline std::size_t bidx_a(const Broadcast& br, std::size_t k) {
    return br.mode == Broadcast::Mode::general ? br.ia[k] : k;
}
inline std::size_t bidx_b(const Broadcast& br, std::size_t k, std::size_t bn) {
    switch (br.mode) {
        case Broadcast::Mode::same: return k;
        case Broadcast::Mode::b_scalar: return 0;
        case Broadcast::Mode::b_suffix: return k % bn;
        case Broadcast::Mode::general: return br.ib[k];
    }
    return k;
}

enum class Binary { add, sub, mul };

Tensor binary(std::string_view op, Binary kind, const Tensor& a, const Tensor& b) {
    check_inputs(op, {&a, &b});
    auto br = std::make_shared<Broadcast>(plan_broadcast(op, a.shape(), b.shape()));
    const std::size_t n = shape_numel(br->out);
    const std::size_t bn = b.numel();
    auto da = a.data();
    auto db = b.data();
    Buffer out(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double x = da[bidx_a(*br, k)];
        const double y = db[bidx_b(*br, k, bn)];
        out[k] = kind == Binary::add ? x + y : kind == Binary::sub ? x - y : x * y;
    }
    return finish(op, {a, b}, br->out, std::move(out), wants_record({&a, &b}),
                  [a, b, br, kind, bn](std::span<const double> g) mutable {
                      if (a.requires_grad()) {
                          auto ga = a.mutable_grad();
                          auto vb = b.data();
                          for (std::size_t k = 0; k < g.size(); ++k) {
                              const double f = kind == Binary::mul ? vb[bidx_b(*br, k, bn)] : 1.0;
                              ga[bidx_a(*br, k)] += g[k] * f;
                          }
                      }
                      if (b.requires_grad()) {
                          auto gb = b.mutable_grad();
                          auto va = a.data();
                          for (std::size_t k = 0; k < g.size(); ++k) {
                              double f = 1.0;
                              if (kind == Binary::sub) f = -1.0;
                              if (kind == Binary::mul) f = va[bidx_a(*br, k)];
                              gb[bidx_b(*br, k, bn)] += g[k] * f;
                          }
                      }
                  });
}

enum class Unary { relu, sigmoid, tanh, exp };

Tensor unary(std::string_view op, Unary kind, const Tensor& a) {
    check_inputs(op, {&a});
    auto da = a.data();
    Buffer out(da.size());
    for (std::size_t i = 0; i < da.size(); ++i) {
        const double x = da[i];
        switch (kind) {
            case Unary::relu: out[i] = x > 0.0 ? x : 0.0; break;
            case Unary::sigmoid:
                out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
                break;
            case Unary::tanh: out[i] = std::tanh(x); break;
            case Unary::exp: out[i] = std::exp(x); break;
        }
    }
    // sigmoid/tanh/exp derivatives are functions of the output; keep a copy.
    auto y = std::make_shared<Buffer>(kind == Unary::relu ? Buffer{} : out);
    return finish(op, {a}, a.shape(), std::move(out), wants_record({&a}),
                  [a, y, kind](std::span<const double> g) mutable {
                      auto x = a.data();
                      auto ga = a.mutable_grad();
                      for (std::size_t i = 0; i < g.size(); ++i) {
                          double d = 0.0;
                          switch (kind) {
                              case Unary::relu: d = x[i] > 0.0 ? 1.0 : 0.0; break;
                              case Unary::sigmoid: d = (*y)[i] * (1.0 - (*y)[i]); break;
                              case Unary::tanh: d = 1.0 - (*y)[i] * (*y)[i]; break;
                              case Unary::exp: d = (*y)[i]; break;
                          }
                          ga[i] += g[i] * d;
                      }
                  });
}

}  // namespace

void require_finite(const Tensor& t, std::string_view what) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument(std::string(what) + ": non-finite input value in tensor " +
                                        shape_str(t.shape()));
        }
    }
}

std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::matmul: return "matmul";
        case OpKind::conv2d: return "conv2d";
        case OpKind::conv1d: return "conv1d";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::relu: return "relu";
        case OpKind::max_over_axis: return "max_over_axis";
        case OpKind::mean_over_axis: return "mean_over_axis";
        case OpKind::softmax_log: return "softmax_log";
        case OpKind::concat: return "concat";
        case OpKind::gather_rows: return "gather_rows";
        case OpKind::scatter_add_rows: return "scatter_add_rows";
        case OpKind::strided_conv2d: return "strided_conv2d";
        case OpKind::sub: return "sub";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::tanh: return "tanh";
        case OpKind::transpose: return "transpose";
        case OpKind::reshape: return "reshape";
        case OpKind::slice: return "slice";
        case OpKind::sum: return "sum";
        case OpKind::exp: return "exp";
    }
    return "unknown";
}

std::span<const OpKind> all_op_kinds() {
    static constexpr std::array kinds{
        OpKind::matmul,   OpKind::conv2d,        OpKind::conv1d,      OpKind::add,
        OpKind::mul,      OpKind::relu,          OpKind::max_over_axis, OpKind::mean_over_axis,
        OpKind::softmax_log, OpKind::concat,     OpKind::gather_rows, OpKind::scatter_add_rows,
        OpKind::strided_conv2d, OpKind::sub,     OpKind::sigmoid,     OpKind::tanh,
        OpKind::transpose, OpKind::reshape,      OpKind::slice,       OpKind::sum,
        OpKind::exp,
    };
    return kinds;
}


namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_inputs("matmul", {&a, &b});
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
    const auto m = static_cast<Eigen::Index>(a.dim(0));
    const auto k = static_cast<Eigen::Index>(a.dim(1));
    const auto n = static_cast<Eigen::Index>(b.dim(1));
    Buffer out(static_cast<std::size_t>(m * n));
    MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
    return finish("matmul", {a, b}, Shape{a.dim(0), b.dim(1)}, std::move(out), wants_record({&a, &b}),
                  [a, b, m, k, n](std::span<const double> g) mutable {
                      ConstMap gm(g.data(), m, n);
                      if (a.requires_grad()) {
                          MutMap(a.mutable_grad().data(), m, k).noalias() += gm * ConstMap(b.data().data(), k, n).transpose();
                      }
                      if (b.requires_grad()) {
                          MutMap(b.mutable_grad().data(), k, n).noalias() += ConstMap(a.data().data(), m, k).transpose() * gm;
                      }
                  });
}

Tensor transpose(const Tensor& a) {
    check_inputs("transpose", {&a});
    if (a.rank() != 2) op_error("transpose", "expected rank 2, got " + shape_str(a.shape()));
    const std::size_t r = a.dim(0), c = a.dim(1);
    Buffer out(r * c);
    auto d = a.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = d[i * c + j];
    return finish("transpose", {a}, Shape{c, r}, std::move(out), wants_record({&a}),
                  [a, r, c](std::span<const double> g) mutable {
                      auto ga = a.mutable_grad();
                      for (std::size_t i = 0; i < r; ++i)
                          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
                  });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", Binary::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", Binary::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", Binary::mul, a, b); }

Tensor scale(const Tensor& a, double factor) { return mul(a, Tensor::scalar(factor)); }

Tensor relu(const Tensor& a) { return unary("relu", Unary::relu, a); }
Tensor sigmoid(const Tensor& a) { return unary("sigmoid", Unary::sigmoid, a); }
Tensor exp(const Tensor& a) { return unary("exp", Unary::exp, a); }
Tensor tanh(const Tensor& a) { return unary("tanh", Unary::tanh, a); }

Tensor max_over_axis(const Tensor& a, std::size_t axis) {
    check_inputs("max_over_axis", {&a});
    if (axis >= a.rank()) op_error("max_over_axis", "axis out of range for " + shape_str(a.shape()));
    const AxisSplit sp = split_axis(a.shape(), axis);
    auto d = a.data();
    Buffer out(sp.outer * sp.inner);
    auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            std::size_t best = o * sp.n * sp.inner + i;
            for (std::size_t j = 1; j < sp.n; ++j) {
                const std::size_t idx = (o * sp.n + j) * sp.inner + i;
                if (d[idx] > d[best]) best = idx;  // strict: first max wins ties
            }
            out[o * sp.inner + i] = d[best];
            (*arg)[o * sp.inner + i] = best;
        }
    }
    return finish("max_over_axis", {a}, drop_axis(a.shape(), axis), std::move(out), wants_record({&a}),
                  [a, arg](std::span<const double> g) mutable {
                      auto ga = a.mutable_grad();
                      for (std::size_t k = 0; k < g.size(); ++k) ga[(*arg)[k]] += g[k];
                  });
}

Tensor mean_over_axis(const Tensor& a, std::size_t axis) {
    check_inputs("mean_over_axis", {&a});
    if (axis >= a.rank()) op_error("mean_over_axis", "axis out of range for " + shape_str(a.shape()));
    const AxisSplit sp = split_axis(a.shape(), axis);
    auto d = a.data();
    Buffer out(sp.outer * sp.inner, 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t j = 0; j < sp.n; ++j)
            for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += d[(o * sp.n + j) * sp.inner + i];
    const double inv = 1.0 / static_cast<double>(sp.n);
    for (double& v : out) v *= inv;
    return finish("mean_over_axis", {a}, drop_axis(a.shape(), axis), std::move(out), wants_record({&a}),
                  [a, sp, inv](std::span<const double> g) mutable {
                      auto ga = a.mutable_grad();
                      for (std::size_t o = 0; o < sp.outer; ++o)
                          for (std::size_t j = 0; j < sp.n; ++j)
                              for (std::size_t i = 0; i < sp.inner; ++i)
                                  ga[(o * sp.n + j) * sp.inner + i] += g[o * sp.inner + i] * inv;
                  });
}

Tensor sum(const Tensor& a) {
    check_inputs("sum", {&a});
    double s = 0.0;
    for (double v : a.data()) s += v;
    return finish("sum", {a}, Shape{1}, Buffer{s}, wants_record({&a}),
                  [a](std::span<const double> g) mutable {
                      for (double& v : a.mutable_grad()) v += g[0];
                  });
}

Tensor log_softmax(const Tensor& a) {
    check_inputs("softmax_log", {&a});
    const std::size_t cols = a.shape().back();
    const std::size_t rows = a.numel() / cols;
    auto d = a.data();
    Buffer out(a.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = d.data() + r * cols;
        const double mx = *std::max_element(x, x + cols);
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += std::exp(x[c] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[c] - lse;
    }
    auto y = std::make_shared<Buffer>(out);
    return finish("softmax_log", {a}, a.shape(), std::move(out), wants_record({&a}),
                  [a, y, rows, cols](std::span<const double> g) mutable {
                      auto ga = a.mutable_grad();
                      for (std::size_t r = 0; r < rows; ++r) {
                          double gs = 0.0;
                          for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
                          for (std::size_t c = 0; c < cols; ++c) {
                              const std::size_t k = r * cols + c;
                              ga[k] += g[k] - std::exp((*y)[k]) * gs;
                          }
                      }
                  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) op_error("concat", "no inputs");
    const Shape& ref = parts.front().shape();
    if (axis >= ref.size()) op_error("concat", "axis out of range for " + shape_str(ref));
    Shape out_shape = ref;
    out_shape[axis] = 0;
    bool rec = false;
    for (const Tensor& p : parts) {
        check_inputs("concat", {&p});
        if (p.rank() != ref.size()) shape_error("concat", ref, p.shape());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            if (i != axis && p.dim(i) != ref[i]) shape_error("concat", ref, p.shape());
        }
        out_shape[axis] += p.dim(axis);
        rec = rec || p.requires_grad();
    }
    rec = rec && Tape::current() != nullptr;
    const AxisSplit sp = split_axis(out_shape, axis);
    Buffer out(shape_numel(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        offsets.push_back(off);
        const std::size_t pn = p.dim(axis);
        auto d = p.data();
        for (std::size_t o = 0; o < sp.outer; ++o)
            std::copy_n(d.data() + o * pn * sp.inner, pn * sp.inner, out.data() + (o * sp.n + off) * sp.inner);
        off += pn;
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return finish("concat", inputs, out_shape, std::move(out), rec,
                  [inputs, offsets, sp, axis](std::span<const double> g) mutable {
                      for (std::size_t t = 0; t < inputs.size(); ++t) {
                          Tensor& p = inputs[t];
                          if (!p.requires_grad()) continue;
                          const std::size_t pn = p.dim(axis);
                          auto gp = p.mutable_grad();
                          for (std::size_t o = 0; o < sp.outer; ++o) {
                              const double* src = g.data() + (o * sp.n + offsets[t]) * sp.inner;
                              double* dst = gp.data() + o * pn * sp.inner;
                              for (std::size_t i = 0; i < pn * sp.inner; ++i) dst[i] += src[i];
                          }
                      }
                  });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
    return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
    check_inputs("slice", {&a});
    if (axis >= a.rank() || begin >= end || end > a.dim(axis)) {
        op_error("slice", "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                              std::to_string(axis) + " invalid for " + shape_str(a.shape()));
    }
    const AxisSplit sp = split_axis(a.shape(), axis);
    const std::size_t len = end - begin;
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    Buffer out(sp.outer * len * sp.inner);
    auto d = a.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        std::copy_n(d.data() + (o * sp.n + begin) * sp.inner, len * sp.inner, out.data() + o * len * sp.inner);
    return finish("slice", {a}, out_shape, std::move(out), wants_record({&a}),
                  [a, sp, begin, len](std::span<const double> g) mutable {
                      auto ga = a.mutable_grad();
                      for (std::size_t o = 0; o < sp.outer; ++o) {
                          double* dst = ga.data() + (o * sp.n + begin) * sp.inner;
                          const double* src = g.data() + o * len * sp.inner;
                          for (std::size_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
                      }
                  });
}

Tensor reshape(const Tensor& a, Shape shape) {
    check_inputs("reshape", {&a});
    if (shape_numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
    Buffer out(a.data().begin(), a.data().end());
    return finish("reshape", {a}, std::move(shape), std::move(out), wants_record({&a}),
                  [a](std::span<const double> g) mutable { accumulate(a, g); });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> idx) {
    check_inputs("gather_rows", {&a});
    if (a.rank() != 2) op_error("gather_rows", "expected rank 2, got " + shape_str(a.shape()));
    if (idx.empty()) op_error("gather_rows", "empty index list");
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    Buffer out(idx.size() * cols);
    auto d = a.data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= rows) {
            op_error("gather_rows", "row index " + std::to_string(idx[r]) + " out of range for " + shape_str(a.shape()));
        }
        std::copy_n(d.data() + idx[r] * cols, cols, out.data() + r * cols);
    }
    auto ids = std::make_shared<std::vector<std::size_t>>(idx.begin(), idx.end());
    return finish("gather_rows", {a}, Shape{idx.size(), cols}, std::move(out), wants_record({&a}),
                  [a, ids, cols](std::span<const double> g) mutable {
                      auto ga = a.mutable_grad();
                      for (std::size_t r = 0; r < ids->size(); ++r) {
                          double* dst = ga.data() + (*ids)[r] * cols;
                          const double* src = g.data() + r * cols;
                          for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                      }
                  });
}

Tensor scatter_add_rows(const Tensor& a, std::span<const std::size_t> idx, std::size_t rows) {
    check_inputs("scatter_add_rows", {&a});
    if (a.rank() != 2) op_error("scatter_add_rows", "expected rank 2, got " + shape_str(a.shape()));
    if (idx.size() != a.dim(0)) {
        op_error("scatter_add_rows", "index count " + std::to_string(idx.size()) + " does not match " +
                                         shape_str(a.shape()));
    }
    if (rows == 0) op_error("scatter_add_rows", "output rows must be positive");
    const std::size_t cols = a.dim(1);
    Buffer out(rows * cols, 0.0);
    auto d = a.data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= rows) {
            op_error("scatter_add_rows", "row index " + std::to_string(idx[r]) + " out of range for " +
                                             std::to_string(rows) + " rows");
        }
        for (std::size_t c = 0; c < cols; ++c) out[idx[r] * cols + c] += d[r * cols + c];
    }
    auto ids = std::make_shared<std::vector<std::size_t>>(idx.begin(), idx.end());
    return finish("scatter_add_rows", {a}, Shape{rows, cols}, std::move(out), wants_record({&a}),
                  [a, ids, cols](std::span<const double> g) mutable {
                      auto ga = a.mutable_grad();
                      for (std::size_t r = 0; r < ids->size(); ++r)
                          for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[(*ids)[r] * cols + c];
                  });
}

namespace {

struct ConvGeom {
    std::size_t batch, h, w, cin, kh, kw, cout, stride, pad, ho, wo;
};

// Builds the [B*Ho*Wo, kh*kw*Cin] patch matrix.
Buffer im2col(std::span<const double> x, const ConvGeom& g) {
    const std::size_t kcols = g.kh * g.kw * g.cin;
    Buffer cols(g.batch * g.ho * g.wo * kcols, 0.0);
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t oy = 0; oy < g.ho; ++oy)
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
                double* row = cols.data() + ((b * g.ho + oy) * g.wo + ox) * kcols;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        const double* src = x.data() + ((b * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.cin;
                        std::copy_n(src, g.cin, row + (ky * g.kw + kx) * g.cin);
                    }
                }
            }
    return cols;
}

void col2im_add(std::span<const double> cols, const ConvGeom& g, std::span<double> gx) {
    const std::size_t kcols = g.kh * g.kw * g.cin;
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t oy = 0; oy < g.ho; ++oy)
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
                const double* row = cols.data() + ((b * g.ho + oy) * g.wo + ox) * kcols;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        double* dst = gx.data() + ((b * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.cin;
                        const double* src = row + (ky * g.kw + kx) * g.cin;
                        for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
                    }
                }
            }
}

Tensor conv_core(std::string_view op, const Tensor& x, const Tensor& w, const Tensor& bias, const ConvGeom& geom,
                 Shape out_shape) {
    const bool has_bias = bias.defined();
    if (has_bias) {
        check_inputs(op, {&bias});
        if (bias.rank() != 1 || bias.dim(0) != geom.cout) shape_error(op, w.shape(), bias.shape(), "bias");
    }
    auto cols = std::make_shared<Buffer>(im2col(x.data(), geom));
    const auto rows = static_cast<Eigen::Index>(geom.batch * geom.ho * geom.wo);
    const auto kc = static_cast<Eigen::Index>(geom.kh * geom.kw * geom.cin);
    const auto co = static_cast<Eigen::Index>(geom.cout);
    Buffer out(static_cast<std::size_t>(rows * co));
    MutMap om(out.data(), rows, co);
    om.noalias() = ConstMap(cols->data(), rows, kc) * ConstMap(w.data().data(), kc, co);
    if (has_bias) om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), co);
    const bool rec = wants_record({&x, &w, &bias});
    std::vector<Tensor> inputs{x, w};
    if (has_bias) inputs.push_back(bias);
    return finish(op, inputs, std::move(out_shape), std::move(out), rec,
                  [x, w, bias, cols, geom, rows, kc, co, has_bias](std::span<const double> g) mutable {
                      ConstMap gm(g.data(), rows, co);
                      if (x.requires_grad()) {
                          Buffer dcols(static_cast<std::size_t>(rows * kc));
                          MutMap(dcols.data(), rows, kc).noalias() = gm * ConstMap(w.data().data(), kc, co).transpose();
                          col2im_add(dcols, geom, x.mutable_grad());
                      }
                      if (w.requires_grad()) {
                          MutMap(w.mutable_grad().data(), kc, co).noalias() += ConstMap(cols->data(), rows, kc).transpose() * gm;
                      }
                      if (has_bias && bias.requires_grad()) {
                          Eigen::Map<Eigen::RowVectorXd>(bias.mutable_grad().data(), co) += gm.colwise().sum();
                      }
                  });
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t padding) {
    check_inputs("conv2d", {&x, &w});
    if (x.rank() != 4 || w.rank() != 4 || x.dim(3) != w.dim(2)) shape_error("conv2d", x.shape(), w.shape());
    if (stride < 1) op_error("conv2d", "stride must be >= 1");
    ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(1), w.dim(3), stride, padding, 0, 0};
    if (g.h + 2 * padding < g.kh || g.w + 2 * padding < g.kw) shape_error("conv2d", x.shape(), w.shape(), "kernel larger than padded input");
    g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
    g.wo = (g.w + 2 * padding - g.kw) / stride + 1;
    return conv_core("conv2d", x, w, bias, g, Shape{g.batch, g.ho, g.wo, g.cout});
}

Tensor strided_conv2d(const Tensor& x, const Tensor& w) {
    check_inputs("strided_conv2d", {&x, &w});
    if (x.rank() != 4 || w.rank() != 4 || x.dim(3) != w.dim(2) || w.dim(0) != w.dim(1)) {
        shape_error("strided_conv2d", x.shape(), w.shape());
    }
    const std::size_t s = w.dim(0);
    if (x.dim(1) % s != 0 || x.dim(2) % s != 0) {
        shape_error("strided_conv2d", x.shape(), w.shape(), "spatial extents must be multiples of the stride " + std::to_string(s));
    }
    ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), s, s, w.dim(3), s, 0, x.dim(1) / s, x.dim(2) / s};
    return conv_core("strided_conv2d", x, w, Tensor{}, g, Shape{g.batch, g.ho, g.wo, g.cout});
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t padding) {
    check_inputs("conv1d", {&x, &w});
    if (x.rank() != 2 || w.rank() != 3 || x.dim(1) != w.dim(1)) shape_error("conv1d", x.shape(), w.shape());
    if (x.dim(0) + 2 * padding < w.dim(0)) shape_error("conv1d", x.shape(), w.shape(), "kernel larger than padded input");
    // A length-T sequence is a 1 x T image with a 1 x k kernel.
    ConvGeom g{1, 1, x.dim(0), x.dim(1), 1, w.dim(0), w.dim(2), 1, 0, 1, 0};
    g.wo = x.dim(0) + 2 * padding - w.dim(0) + 1;
    // Horizontal-only padding: shift handled by building columns directly.
    const std::size_t T = x.dim(0), cin = x.dim(1), k = w.dim(0);
    auto cols = std::make_shared<Buffer>(g.wo * k * cin, 0.0);
    auto xd = x.data();
    for (std::size_t t = 0; t < g.wo; ++t)
        for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(padding);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
            std::copy_n(xd.data() + static_cast<std::size_t>(src) * cin, cin, cols->data() + (t * k + j) * cin);
        }
    const bool has_bias = bias.defined();
    if (has_bias) {
        check_inputs("conv1d", {&bias});
        if (bias.rank() != 1 || bias.dim(0) != g.cout) shape_error("conv1d", w.shape(), bias.shape(), "bias");
    }
    const auto rows = static_cast<Eigen::Index>(g.wo);
    const auto kc = static_cast<Eigen::Index>(k * cin);
    const auto co = static_cast<Eigen::Index>(g.cout);
    Buffer out(static_cast<std::size_t>(rows * co));
    MutMap om(out.data(), rows, co);
    om.noalias() = ConstMap(cols->data(), rows, kc) * ConstMap(w.data().data(), kc, co);
    if (has_bias) om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), co);
    std::vector<Tensor> inputs{x, w};
    if (has_bias) inputs.push_back(bias);
    return finish("conv1d", inputs, Shape{g.wo, g.cout}, std::move(out), wants_record({&x, &w, &bias}),
                  [x, w, bias, cols, rows, kc, co, k, cin, T, padding, has_bias](std::span<const double> gr) mutable {
                      ConstMap gm(gr.data(), rows, co);
                      if (x.requires_grad()) {
                          RowMat dcols = gm * ConstMap(w.data().data(), kc, co).transpose();
                          auto gx = x.mutable_grad();
                          for (Eigen::Index t = 0; t < rows; ++t)
                              for (std::size_t j = 0; j < k; ++j) {
                                  const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) -
                                                             static_cast<std::ptrdiff_t>(padding);
                                  if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
                                  for (std::size_t c = 0; c < cin; ++c)
                                      gx[static_cast<std::size_t>(src) * cin + c] += dcols(t, static_cast<Eigen::Index>(j * cin + c));
                              }
                      }
                      if (w.requires_grad()) {
                          MutMap(w.mutable_grad().data(), kc, co).noalias() += ConstMap(cols->data(), rows, kc).transpose() * gm;
                      }
                      if (has_bias && bias.requires_grad()) {
                          Eigen::Map<Eigen::RowVectorXd>(bias.mutable_grad().data(), co) += gm.colwise().sum();
                      }
                  });
}

Tensor custom(std::string_view name, std::vector<Tensor> inputs, Shape shape, std::vector<double> value,
              CustomBackward backward) {
    bool rec = false;
    for (const Tensor& t : inputs) {
        check_inputs(name, {&t});
        rec = rec || t.requires_grad();
    }
    rec = rec && Tape::current() != nullptr;
    std::vector<Tensor> captured = inputs;
    return finish(name, std::move(inputs), std::move(shape), Buffer(value.begin(), value.end()), rec,
                  [captured, backward = std::move(backward)](std::span<const double> g) mutable {
                      auto grads = backward(g);
                      for (std::size_t i = 0; i < captured.size() && i < grads.size(); ++i) {
                          if (grads[i].empty()) continue;
                          if (grads[i].size() != captured[i].numel()) {
                              throw std::logic_error("custom op gradient has wrong length");
                          }
                          accumulate(captured[i], grads[i]);
                      }
                  });
}

}  // namespace ops

Tensor apply_op(OpKind kind, std::span<const Tensor> in, const OpAttrs& at) {
    auto need = [&](std::size_t lo, std::size_t hi) {
        if (in.size() < lo || in.size() > hi) {
            op_error(op_name(kind), "expected " + std::to_string(lo) + (lo == hi ? "" : "-" + std::to_string(hi)) +
                                        " inputs, got " + std::to_string(in.size()));
        }
    };
    switch (kind) {
        case OpKind::matmul: need(2, 2); return ops::matmul(in[0], in[1]);
        case OpKind::conv2d: need(2, 3); return ops::conv2d(in[0], in[1], in.size() > 2 ? in[2] : Tensor{}, at.stride, at.padding);
        case OpKind::conv1d: need(2, 3); return ops::conv1d(in[0], in[1], in.size() > 2 ? in[2] : Tensor{}, at.padding);
        case OpKind::add: need(2, 2); return ops::add(in[0], in[1]);
        case OpKind::mul: need(2, 2); return ops::mul(in[0], in[1]);
        case OpKind::sub: need(2, 2); return ops::sub(in[0], in[1]);
        case OpKind::relu: need(1, 1); return ops::relu(in[0]);
        case OpKind::sigmoid: need(1, 1); return ops::sigmoid(in[0]);
        case OpKind::exp: need(1, 1); return ops::exp(in[0]);
        case OpKind::tanh: need(1, 1); return ops::tanh(in[0]);
        case OpKind::max_over_axis: need(1, 1); return ops::max_over_axis(in[0], at.axis);
        case OpKind::mean_over_axis: need(1, 1); return ops::mean_over_axis(in[0], at.axis);
        case OpKind::softmax_log: need(1, 1); return ops::log_softmax(in[0]);
        case OpKind::concat: need(1, 64); return ops::concat(in, at.axis);
        case OpKind::gather_rows: need(1, 1); return ops::gather_rows(in[0], at.indices);
        case OpKind::scatter_add_rows: need(1, 1); return ops::scatter_add_rows(in[0], at.indices, at.rows);
        case OpKind::strided_conv2d: need(2, 2); return ops::strided_conv2d(in[0], in[1]);
        case OpKind::transpose: need(1, 1); return ops::transpose(in[0]);
        case OpKind::reshape: need(1, 1); return ops::reshape(in[0], at.shape);
        case OpKind::slice: need(1, 1); return ops::slice(in[0], at.axis, at.begin, at.end);
        case OpKind::sum: need(1, 1); return ops::sum(in[0]);
    }
    op_error("apply_op", "unknown op kind");
}

}  // namespace mixsign
