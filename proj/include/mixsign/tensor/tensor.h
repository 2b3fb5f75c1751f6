#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mixsign {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// 64-byte aligned storage. Eigen's vectorised kernels pick their loop
// split from the buffer address, so unaligned storage makes results vary
// in the last bit from run to run.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};
    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

namespace detail {
struct TensorNode {
    Shape shape;
    Buffer data;
    Buffer grad;  // empty until first accumulation
    bool requires_grad = false;
    bool is_leaf = true;
};
}  // namespace detail

// Dense row-major array of doubles with an optional gradient slot.
//
// Tensors are handles: copies share storage, which is what lets the tape
// route gradients back to parameters. Use clone() for an independent copy.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor from_rows(const std::vector<std::vector<double>>& rows);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    // Mutating a tensor that is already referenced by a tape invalidates the
    // recorded backward pass; only parameters are updated in place, and only
    // between steps.
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t i) const { return data()[i]; }

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    // Allocates a zero buffer on first use. Const because Tensor is a handle:
    // the buffer belongs to the shared node, not to this object.
    std::span<double> mutable_grad() const;
    void zero_grad();
    void release_grad();  // drops the buffer; has_grad() becomes false

    Tensor detach() const;  // shares nothing, no grad
    Tensor clone() const { return detach(); }

    const detail::TensorNode* id() const { return node_.get(); }
    bool same_as(const Tensor& o) const { return node_ == o.node_; }

    // Internal: used by ops to build results.
    static Tensor make_result(Shape shape, Buffer data);
    void mark_recorded();  // non-leaf output of a taped op

private:
    std::shared_ptr<detail::TensorNode> node_;
    detail::TensorNode& node() const;
};

// Records executed ops so gradients can be replayed in exact reverse order.
// A tape is installed for the current thread with Tape::Scope; ops record
// only while a scope is active and at least one input requires a gradient.
class Tape {
public:
    struct Entry {
        std::string op;
        std::vector<Tensor> inputs;
        Tensor output;
        std::function<void()> backward;
    };

    class Scope {
    public:
        explicit Scope(Tape& tape);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* previous_;
    };

    static Tape* current();

    void record(std::string_view op, std::vector<Tensor> inputs, Tensor output,
                std::function<void()> backward);

    // Populates gradients of every requires_grad tensor reachable from loss.
    // Leaf gradients accumulate across calls; intermediate gradients are
    // reset at the start of each call.
    void backward(const Tensor& loss);

    std::size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }
    bool produced(const Tensor& t) const;
    void clear() { entries_.clear(); }

private:
    std::vector<Entry> entries_;
};

// Convenience for the common single-loss case.
void backward(Tape& tape, const Tensor& loss);

}  // namespace mixsign
