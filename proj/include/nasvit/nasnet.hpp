#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nasvit/layers.hpp"

namespace nasvit {

struct NasnetConfig {
    std::size_t stem_channels = 16;
    std::size_t cells_per_stage = 2;
    std::size_t num_stages = 3;

    /// stem_channels · 2^(num_stages-1)
    std::size_t output_dim() const { return stem_channels << (num_stages - 1); }
    void validate() const;
};

enum class CellKind { normal, reduction };

/// Depthwise 3×3 followed by pointwise 1×1.
template <typename T>
struct CellParams {
    CellKind kind = CellKind::normal;
    std::string name;  // e.g. "nasnet.stage0.normal1"
    ConvParams<T> depthwise;
    ConvParams<T> pointwise;
};

template <typename T>
struct BasicNasnetParams {
    ConvParams<T> stem;
    std::vector<CellParams<T>> cells;  // execution order
};

using NasnetParams = BasicNasnetParams<float>;

/// 3×3 conv, stride 2, padding 1, then ReLU.
template <typename T>
BasicTensor<T> stem_forward(const BasicTensor<T>& x, const ConvParams<T>& stem);

/// x + ReLU(pointwise(depthwise(x))); shape preserving.
template <typename T>
BasicTensor<T> normal_cell_forward(const BasicTensor<T>& x, const CellParams<T>& cell);

/// ReLU(pointwise(depthwise_stride2(x))): [C×H×W] -> [2C×H/2×W/2].
template <typename T>
BasicTensor<T> reduction_cell_forward(const BasicTensor<T>& x, const CellParams<T>& cell);

/// Final feature map before pooling (Z in the pooling step).
template <typename T>
BasicTensor<T> nasnet_feature_map(const BasicTensor<T>& x, const NasnetConfig& cfg, const BasicNasnetParams<T>& p,
                                  ForwardTrace* trace = nullptr);

/// Global average pool of nasnet_feature_map: [3×H×W] -> [output_dim].
template <typename T>
BasicTensor<T> nasnet_forward(const BasicTensor<T>& x, const NasnetConfig& cfg, const BasicNasnetParams<T>& p,
                              ForwardTrace* trace = nullptr);

}  // namespace nasvit
