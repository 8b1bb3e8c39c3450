#include "nasvit/tensor.hpp"

#include <fmt/format.h>

namespace nasvit {

std::string shape_to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

template <typename T>
BasicTensor<T>::BasicTensor() : node_(std::make_shared<detail::TensorNode<T>>()) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : node_(std::make_shared<detail::TensorNode<T>>()) {
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
    }
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values) : node_(std::make_shared<detail::TensorNode<T>>()) {
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
    }
    if (shape_numel(shape) != values.size()) {
        throw ShapeError(fmt::format("shape {} needs {} values, got {}", shape_to_string(shape), shape_numel(shape),
                                     values.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
    if (axis >= rank()) throw IndexError(fmt::format("axis {} out of range for {}", axis, shape_to_string(shape())));
    return node_->shape[axis];
}

template <typename T>
T BasicTensor<T>::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
    return node_->data[0];
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
}

template <typename T>
std::vector<T> BasicTensor<T>::grad() const {
    if (node_->grad.empty()) return std::vector<T>(numel(), T(0));
    return node_->grad;
}

template <typename T>
std::span<T> BasicTensor<T>::grad_buffer() {
    if (node_->grad.empty()) node_->grad.assign(numel(), T(0));
    return node_->grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
    BasicTensor out(node_->shape, node_->data);
    out.node_->requires_grad = node_->requires_grad;
    return out;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace nasvit
