#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "nasvit/layers.hpp"

namespace nasvit {

inline constexpr std::size_t kNumClasses = 5;

struct FusionConfig {
    std::size_t fusion_dim = 64;
    std::size_t mlp_hidden = 32;
    std::size_t num_classes = kNumClasses;
    double dropout_rate = 0.1;

    void validate() const;
};

template <typename T>
struct BasicFusionParams {
    LinearParams<T> project_nasnet;  // [D_f × D_n]
    LinearParams<T> project_vit;     // [D_f × d]
    LinearParams<T> hidden;          // [hidden × D_f]
    LinearParams<T> output;          // [classes × hidden]
};

using FusionParams = BasicFusionParams<float>;

struct ClassProbs {
    std::vector<float> probabilities;
    std::size_t predicted_class = 0;
};

/// Index of the largest value; the lowest index wins ties.
template <typename T>
std::size_t argmax(std::span<const T> values);

ClassProbs to_class_probs(const Tensor& probs);

template <typename T>
BasicTensor<T> project(const BasicTensor<T>& f, const LinearParams<T>& p);

/// Elementwise product of two equal-length feature vectors.
template <typename T>
BasicTensor<T> fuse(const BasicTensor<T>& fn, const BasicTensor<T>& fv);

/// linear -> ReLU -> dropout (training only) -> linear -> softmax.
template <typename T>
BasicTensor<T> mlp_head(const BasicTensor<T>& f, const BasicFusionParams<T>& p, const FusionConfig& cfg,
                        const ForwardMode& mode);

}  // namespace nasvit
