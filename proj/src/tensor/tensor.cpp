#include "mixsign/tensor/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mixsign {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {
void validate_shape(const Shape& shape) {
    for (std::size_t d : shape) {
        if (d == 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape));
    }
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) {
    validate_shape(shape);
    node_ = std::make_shared<detail::TensorNode>();
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data) {
    validate_shape(shape);
    if (shape_numel(shape) != data.size()) {
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    }
    node_ = std::make_shared<detail::TensorNode>();
    node_->shape = std::move(shape);
    node_->data.assign(data.begin(), data.end());
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty() || rows.front().empty()) throw std::invalid_argument("from_rows: empty input");
    const std::size_t cols = rows.front().size();
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        if (r.size() != cols) throw std::invalid_argument("from_rows: ragged rows");
        data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor(Shape{rows.size(), cols}, std::move(data));
}

Tensor Tensor::make_result(Shape shape, Buffer data) {
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(data);
    return t;
}

detail::TensorNode& Tensor::node() const {
    if (!node_) throw std::logic_error("use of undefined tensor");
    return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) throw std::out_of_range("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return s[axis];
}

std::size_t Tensor::numel() const { return node().data.size(); }

std::span<const double> Tensor::data() const { return node().data; }
std::span<double> Tensor::mutable_data() { return node().data; }

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
    return node().data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    node().requires_grad = on;
    return *this;
}

bool Tensor::is_leaf() const { return node().is_leaf; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw std::logic_error("tensor has no gradient");
    return node_->grad;
}

std::span<double> Tensor::mutable_grad() const {
    auto& n = node();
    if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
    return n.grad;
}

void Tensor::zero_grad() {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::release_grad() {
    if (node_) Buffer().swap(node_->grad);
}

void Tensor::mark_recorded() {
    node().requires_grad = true;
    node().is_leaf = false;
}

Tensor Tensor::detach() const { return make_result(shape(), node().data); }

// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_current_tape = nullptr;
}

Tape::Scope::Scope(Tape& tape) : previous_(g_current_tape) { g_current_tape = &tape; }
Tape::Scope::~Scope() { g_current_tape = previous_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(std::string_view op, std::vector<Tensor> inputs, Tensor output,
                  std::function<void()> backward) {
    entries_.push_back(Entry{std::string(op), std::move(inputs), std::move(output), std::move(backward)});
}

bool Tape::produced(const Tensor& t) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const Entry& e) { return e.output.same_as(t); });
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar tensor, got " +
                                    (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    if (!produced(loss)) throw std::invalid_argument("backward: loss was not produced by an op on this tape");

    for (auto& e : entries_) e.output.release_grad();
    Tensor seed = loss;
    seed.mutable_grad()[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (!it->output.has_grad()) continue;  // not on any path to the loss
        it->backward();
    }
}

void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

}  // namespace mixsign
