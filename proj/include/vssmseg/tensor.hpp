#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vssmseg/error.hpp"

namespace vssmseg {

using Shape = std::vector<int64_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        if (d < 0) throw ShapeError("shape has negative extent: " + shape_str(s));
        n *= d;
    }
    return n;
}

enum class DType : uint8_t { f32 = 1, f64 = 2 };

template <typename T>
struct dtype_tag;
template <>
struct dtype_tag<float> {
    static constexpr DType value = DType::f32;
};
template <>
struct dtype_tag<double> {
    static constexpr DType value = DType::f64;
};

template <typename T>
class Tape;

// Dense row-major tensor. Value type with shared storage; once a tensor has
// been recorded on a tape its buffer must be treated as immutable.
template <typename T>
class Tensor {
public:
    Tensor() : store_(std::make_shared<std::vector<T>>()) {}

    Tensor(Shape shape, std::vector<T> values)
        : shape_(std::move(shape)),
          store_(std::make_shared<std::vector<T>>(std::move(values))) {
        if (numel_of(shape_) != static_cast<int64_t>(store_->size()))
            throw ShapeError("tensor data length " + std::to_string(store_->size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape s) {
        int64_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<T>(static_cast<size_t>(n), T(0)));
    }
    static Tensor full(Shape s, T v) {
        int64_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<T>(static_cast<size_t>(n), v));
    }
    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(store_->size()); }
    DType dtype() const { return dtype_tag<T>::value; }

    const T* data() const { return store_->data(); }
    T* data() { return store_->data(); }  // for init and optimizer updates only
    const std::vector<T>& vec() const { return *store_; }
    const std::shared_ptr<std::vector<T>>& store() const { return store_; }

    bool requires_grad() const { return node_ >= 0; }
    Tape<T>* tape() const { return tape_; }
    int node() const { return node_; }
    void detach() {
        tape_ = nullptr;
        node_ = -1;
    }

    T item() const {
        if (numel() != 1)
            throw ContractError("item(): tensor is not scalar, shape " + shape_str(shape_));
        return (*store_)[0];
    }

private:
    friend class Tape<T>;
    Shape shape_;
    std::shared_ptr<std::vector<T>> store_;
    Tape<T>* tape_ = nullptr;
    int node_ = -1;
};

// Reverse-mode tape. Nodes are appended in forward order, so walking the node
// list backward is a reverse topological visit. Gradient buffers are keyed by
// node id and allocated zero-filled on first touch, which also gives
// disconnected leaves a well-defined zero gradient.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape<T>&, int self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Register a leaf (parameter or input that needs a gradient).
    int watch(Tensor<T>& t) {
        if (t.tape_ == this && t.node_ >= 0) return t.node_;
        t.tape_ = this;
        t.node_ = add_node(t.numel(), nullptr);
        return t.node_;
    }

    // Record an op result together with its backward closure.
    Tensor<T> emit(Shape shape, std::vector<T> values, BackwardFn backward) {
        Tensor<T> out(std::move(shape), std::move(values));
        out.tape_ = this;
        out.node_ = add_node(out.numel(), std::move(backward));
        return out;
    }

    std::vector<T>& grad_buf(int node) {
        auto& g = grads_[static_cast<size_t>(node)];
        if (g.empty() && numel_[static_cast<size_t>(node)] > 0)
            g.assign(static_cast<size_t>(numel_[static_cast<size_t>(node)]), T(0));
        return g;
    }

    bool grad_flowed(int node) const { return !grads_[static_cast<size_t>(node)].empty(); }
    const std::vector<T>& grad_at(int node) const { return grads_[static_cast<size_t>(node)]; }

    void backward(const Tensor<T>& loss) {
        if (loss.tape_ != this || loss.node_ < 0)
            throw ContractError("backward: loss is not recorded on this tape");
        if (loss.numel() != 1)
            throw ContractError("backward: loss must be a scalar, got shape " +
                                shape_str(loss.shape()));
        for (auto& g : grads_) g.clear();
        grad_buf(loss.node_)[0] = T(1);
        for (int i = loss.node_; i >= 0; --i) {
            if (grads_[static_cast<size_t>(i)].empty()) continue;
            if (backward_[static_cast<size_t>(i)]) backward_[static_cast<size_t>(i)](*this, i);
        }
    }

    // Gradient of a watched tensor; zero-filled if nothing flowed into it.
    const std::vector<T>& grad_vec(const Tensor<T>& t) {
        if (t.tape_ != this || t.node_ < 0)
            throw ContractError("grad: tensor is not recorded on this tape");
        return grad_buf(t.node_);
    }
    Tensor<T> grad(const Tensor<T>& t) { return Tensor<T>(t.shape(), grad_vec(t)); }

    size_t size() const { return numel_.size(); }

    void reset() {
        backward_.clear();
        numel_.clear();
        grads_.clear();
    }

private:
    int add_node(int64_t numel, BackwardFn fn) {
        backward_.push_back(std::move(fn));
        numel_.push_back(numel);
        grads_.emplace_back();
        return static_cast<int>(backward_.size()) - 1;
    }

    std::vector<BackwardFn> backward_;
    std::vector<int64_t> numel_;
    std::vector<std::vector<T>> grads_;
};

// The tape shared by a set of operands; null when none is recorded.
template <typename T>
inline Tape<T>* merge_tapes(std::initializer_list<const Tensor<T>*> ins) {
    Tape<T>* tape = nullptr;
    for (const Tensor<T>* p : ins) {
        if (!p || !p->tape() || p->node() < 0) continue;
        if (!tape)
            tape = p->tape();
        else if (tape != p->tape())
            throw ContractError("operands are recorded on different tapes");
    }
    return tape;
}

}  // namespace vssmseg
