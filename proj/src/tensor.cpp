#include "afd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "afd/errors.hpp"

namespace afd {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void validate_shape(const Shape& shape, std::size_t values) {
    for (std::size_t d : shape) {
        if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != values) {
        throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(values) + " values");
    }
}

template <typename T>
void require_finite(std::span<const T> values, const char* op) {
    for (T v : values) {
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
    }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
    validate_shape(shape, values.size());
    require_finite<T>(values, "tensor construction");
    node_ = std::make_shared<detail::Node<T>>();
    node_->shape = std::move(shape);
    node_->value = std::make_shared<const Buffer>(std::move(values));
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
    if (!node_) throw UsageError("undefined tensor");
    return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return s[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
    return shape_numel(shape());
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
    if (!node_) throw UsageError("undefined tensor");
    return {node_->value->data(), node_->value->size()};
}

template <typename T>
const typename Tensor<T>::BufferPtr& Tensor<T>::buffer() const {
    if (!node_) throw UsageError("undefined tensor");
    return node_->value;
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return data()[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
    return node_ && node_->requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
    if (!is_leaf()) throw UsageError("requires_grad can only be set on leaves");
    node_->requires_grad = flag;
    return *this;
}

template <typename T>
bool Tensor<T>::is_leaf() const {
    if (!node_) throw UsageError("undefined tensor");
    return !node_->backward_fn;
}

template <typename T>
const char* Tensor<T>::op_name() const {
    if (!node_) throw UsageError("undefined tensor");
    return node_->op;
}

template <typename T>
bool Tensor<T>::has_grad() const {
    return node_ && !node_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    if (!node_) throw UsageError("undefined tensor");
    return {node_->grad.data(), node_->grad.size()};
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (node_) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
void Tensor<T>::clear_grad() {
    if (node_) node_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = shape();
    node->value = node_->value;
    return Tensor(std::move(node));
}

template <typename T>
void Tensor<T>::assign(std::vector<T> values) {
    if (!is_leaf()) throw UsageError("assign() on a non-leaf tensor");
    if (values.size() != numel()) {
        throw DimensionError("assign() of " + std::to_string(values.size()) + " values to " + shape_str(shape()));
    }
    require_finite<T>(values, "assign");
    node_->value = std::make_shared<const Buffer>(std::move(values));
}

template <typename T>
Tensor<T> Tensor<T>::make_result(Shape shape, std::vector<T> values, std::vector<Tensor> inputs,
                                 detail::BackwardFn<T> backward_fn, const char* op) {
    validate_shape(shape, values.size());
    require_finite<T>(values, op);
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->value = std::make_shared<const Buffer>(std::move(values));
    node->op = op;
    bool track = false;
    if (g_grad_enabled) {
        for (const Tensor& in : inputs) track = track || in.requires_grad();
    }
    if (track) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (const Tensor& in : inputs) node->inputs.push_back(in.node_);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

template <typename T>
std::vector<const detail::Node<T>*> tape_order(const Tensor<T>& root) {
    using NodeT = detail::Node<T>;
    std::vector<const NodeT*> order;
    if (!root.requires_grad()) return order;
    std::unordered_set<const NodeT*> seen;
    // Iterative post-order DFS: (node, next input index).
    std::vector<std::pair<const NodeT*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            const NodeT* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

template <typename T>
void Tensor<T>::backward() const {
    if (!node_) throw UsageError("backward() on undefined tensor");
    if (numel() != 1) throw UsageError("backward() requires a scalar, got shape " + shape_str(shape()));
    std::vector<T> seed{T(1)};
    backward(seed);
}

namespace {

template <typename T>
void run_backward(const detail::Node<T>* root, std::span<const T> seed,
                  const std::unordered_set<const detail::Node<T>*>* targets,
                  const std::vector<const detail::Node<T>*>& order) {
    using NodeT = detail::Node<T>;
    // With targets, only nodes from which some target is reachable take part.
    std::unordered_set<const NodeT*> relevant;
    if (targets != nullptr) {
        for (const NodeT* node : order) {
            bool hit = targets->count(node) > 0;
            for (const auto& in : node->inputs) hit = hit || relevant.count(in.get()) > 0;
            if (hit) relevant.insert(node);
        }
        if (!relevant.count(root)) return;
    }
    auto participates = [&](const NodeT* node) { return targets == nullptr || relevant.count(node) > 0; };

    std::unordered_map<const NodeT*, std::vector<T>> pending;
    pending[root].assign(seed.begin(), seed.end());
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT* node = const_cast<NodeT*>(*it);
        auto found = pending.find(node);
        if (found == pending.end()) continue;
        std::vector<T> grad_out = std::move(found->second);
        pending.erase(found);

        if (!node->backward_fn) {
            if (node->grad.empty()) node->grad.assign(grad_out.size(), T(0));
            for (std::size_t i = 0; i < grad_out.size(); ++i) node->grad[i] += grad_out[i];
            continue;
        }
        if (targets != nullptr && targets->count(node)) {
            // Interior targets keep their gradient in the leaf accumulator slot.
            if (node->grad.empty()) node->grad.assign(grad_out.size(), T(0));
            for (std::size_t i = 0; i < grad_out.size(); ++i) node->grad[i] += grad_out[i];
        }
        std::vector<std::vector<T>*> grad_in(node->inputs.size(), nullptr);
        bool any = false;
        for (std::size_t i = 0; i < node->inputs.size(); ++i) {
            const NodeT* in = node->inputs[i].get();
            if (!in->requires_grad || !participates(in)) continue;
            auto& slot = pending[in];
            if (slot.empty()) slot.assign(shape_numel(in->shape), T(0));
            grad_in[i] = &slot;
            any = true;
        }
        if (any) node->backward_fn(grad_out, grad_in);
    }
}

}  // namespace

template <typename T>
void Tensor<T>::backward(std::span<const T> seed) const {
    if (!node_) throw UsageError("backward() on undefined tensor");
    if (seed.size() != numel()) throw DimensionError("backward seed size does not match " + shape_str(shape()));
    if (!node_->requires_grad) throw UsageError("backward() on a tensor that is not recorded on the tape");
    run_backward<T>(node_.get(), seed, nullptr, tape_order(*this));
}

template <typename T>
void Tensor<T>::backward_to(std::span<const Tensor> targets) const {
    if (!node_) throw UsageError("backward_to() on undefined tensor");
    if (numel() != 1) throw UsageError("backward_to() requires a scalar, got shape " + shape_str(shape()));
    std::vector<T> seed{T(1)};
    backward_to(targets, seed);
}

template <typename T>
void Tensor<T>::backward_to(std::span<const Tensor> targets, std::span<const T> seed) const {
    if (!node_) throw UsageError("backward_to() on undefined tensor");
    if (seed.size() != numel()) throw DimensionError("backward seed size does not match " + shape_str(shape()));
    if (!node_->requires_grad) throw UsageError("backward_to() on a tensor that is not recorded on the tape");
    std::unordered_set<const detail::Node<T>*> target_set;
    for (const Tensor& t : targets) {
        if (t.defined()) target_set.insert(t.node_.get());
    }
    run_backward<T>(node_.get(), seed, &target_set, tape_order(*this));
}

template class Tensor<float>;
template class Tensor<double>;
template std::vector<const detail::Node<float>*> tape_order(const Tensor<float>&);
template std::vector<const detail::Node<double>*> tape_order(const Tensor<double>&);

}  // namespace afd
