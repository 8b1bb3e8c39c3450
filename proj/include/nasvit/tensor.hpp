#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nasvit/errors.hpp"

namespace nasvit {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until the first accumulation
    bool requires_grad = false;
    bool on_tape = false;  // produced by a recorded operation
};

}  // namespace detail

/**
 * Dense row-major tensor with an optional gradient buffer.
 *
 * Copies share storage (handle semantics, like the autograd graph needs);
 * use clone() for a deep copy. Forward operations never mutate their inputs.
 */
template <typename T>
class BasicTensor {
  public:
    using value_type = T;

    BasicTensor();
    explicit BasicTensor(Shape shape, T fill = T(0));
    BasicTensor(Shape shape, std::vector<T> values);

    static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, std::vector<T>{value}); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return node_->data.size(); }
    bool empty() const { return node_->data.empty(); }

    std::span<const T> data() const { return node_->data; }
    /// Mutable view; only meant for leaves (parameters, inputs) outside of a recorded forward pass.
    std::span<T> mutable_data() { return node_->data; }
    const std::vector<T>& values() const { return node_->data; }

    T operator[](std::size_t i) const { return node_->data[i]; }
    T item() const;

    bool requires_grad() const { return node_->requires_grad; }
    BasicTensor& set_requires_grad(bool on = true);

    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient values; all zeros when nothing has been accumulated.
    std::vector<T> grad() const;
    std::span<T> grad_buffer();  // allocates zeros on first use
    void zero_grad() { node_->grad.clear(); }

    BasicTensor clone() const;
    bool same_storage(const BasicTensor& other) const { return node_ == other.node_; }

    std::shared_ptr<detail::TensorNode<T>> node() const { return node_; }

  private:
    std::shared_ptr<detail::TensorNode<T>> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename U, typename T>
BasicTensor<U> tensor_cast(const BasicTensor<T>& src) {
    std::vector<U> out(src.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
    return BasicTensor<U>(src.shape(), std::move(out));
}

/// Centered Gaussian samples; used for parameter init and random test inputs.
template <typename T>
BasicTensor<T> randn(const Shape& shape, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<T>(dist(rng));
    return BasicTensor<T>(shape, std::move(values));
}

template <typename T>
BasicTensor<T> rand_uniform(const Shape& shape, double lo, double hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<T> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<T>(dist(rng));
    return BasicTensor<T>(shape, std::move(values));
}

}  // namespace nasvit
