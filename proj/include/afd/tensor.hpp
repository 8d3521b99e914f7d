#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace afd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tensor;

namespace detail {

template <typename T>
using BackwardFn = std::function<void(std::span<const T> grad_out, std::span<std::vector<T>* const> grad_in)>;

// One recorded value. Leaves have no backward_fn; interior nodes hold their
// inputs and the rule that maps the output gradient onto them.
template <typename T>
struct Node {
    Shape shape;
    std::shared_ptr<const std::vector<T>> value;
    bool requires_grad = false;
    std::vector<T> grad;
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn<T> backward_fn;
    const char* op = "leaf";
};

}  // namespace detail

/// Dense row-major tensor handle with reverse-mode differentiation.
///
/// Copies share the underlying node. Values are immutable once produced;
/// parameter leaves change through assign(), which swaps in a fresh buffer
/// so graphs recorded earlier keep seeing the values they were built from.
template <typename T>
class Tensor {
public:
    using value_type = T;
    using Buffer = std::vector<T>;
    using BufferPtr = std::shared_ptr<const Buffer>;

    Tensor() = default;
    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const T> data() const;
    const BufferPtr& buffer() const;
    T item() const;
    T operator[](std::size_t flat_index) const { return data()[flat_index]; }

    bool requires_grad() const;
    Tensor& set_requires_grad(bool flag);
    bool is_leaf() const;
    const char* op_name() const;

    bool has_grad() const;
    /// Accumulated gradient; only leaves accumulate. Empty span when absent.
    std::span<const T> grad() const;
    void zero_grad();
    /// Drops the accumulator so the tensor reports no gradient.
    void clear_grad();

    /// Reverse pass from a scalar. Leaf grads accumulate (sum) across calls.
    void backward() const;
    /// Reverse pass seeded with an explicit output gradient (vector-Jacobian product).
    void backward(std::span<const T> seed) const;

    /// Reverse pass that only propagates along paths reaching `targets`;
    /// only those targets accumulate gradient. Everything else on the graph
    /// is left untouched, as if detached.
    void backward_to(std::span<const Tensor> targets) const;
    void backward_to(std::span<const Tensor> targets, std::span<const T> seed) const;

    /// Same values, no graph history, no gradient requirement.
    Tensor detach() const;

    /// Replace the values of a leaf. Shape must match.
    void assign(std::vector<T> values);

    bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

    /// Builds the output of an operation. Records it on the graph when
    /// gradients are enabled and any input requires them.
    static Tensor make_result(Shape shape, std::vector<T> values, std::vector<Tensor> inputs,
                              detail::BackwardFn<T> backward_fn, const char* op);

    const std::shared_ptr<detail::Node<T>>& node() const noexcept { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

    std::shared_ptr<detail::Node<T>> node_;
};

/// Nodes reachable from `root` through gradient-requiring edges, ordered so
/// every node follows all of its inputs. Each node appears once.
template <typename T>
std::vector<const detail::Node<T>*> tape_order(const Tensor<T>& root);

/// True unless a NoGradGuard is alive on this thread.
bool grad_enabled() noexcept;

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace afd
