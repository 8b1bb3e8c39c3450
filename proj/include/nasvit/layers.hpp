#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nasvit/autograd.hpp"

namespace nasvit {

template <typename T>
struct ConvParams {
    BasicTensor<T> weight;  // [C_out × C_in/groups × k × k]
    BasicTensor<T> bias;    // [C_out]
};

template <typename T>
struct LinearParams {
    BasicTensor<T> weight;  // [out × in]
    BasicTensor<T> bias;    // [out]
};

template <typename T>
struct LayerNormParams {
    BasicTensor<T> gamma;
    BasicTensor<T> beta;
};

/// Training flag plus the random source for dropout masks.
struct ForwardMode {
    bool training = false;
    std::mt19937_64* rng = nullptr;  // required when training with a non-zero dropout rate
};

/// Shapes of the intermediate activations, in execution order.
struct ForwardTrace {
    std::vector<std::pair<std::string, Shape>> steps;
    void add(std::string name, const Shape& shape) { steps.emplace_back(std::move(name), shape); }
};

template <typename T>
BasicTensor<T> apply_dropout(const BasicTensor<T>& x, double rate, const ForwardMode& mode) {
    if (!mode.training || rate == 0.0) return x;
    if (mode.rng == nullptr) throw ContractError("training forward with dropout needs a random source");
    return dropout(x, rate, *mode.rng);
}

}  // namespace nasvit
