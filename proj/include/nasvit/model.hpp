#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "nasvit/fusion.hpp"
#include "nasvit/nasnet.hpp"
#include "nasvit/vit.hpp"

namespace nasvit {

struct ModelConfig {
    std::size_t image_size = 224;
    std::size_t in_channels = 3;
    NasnetConfig nasnet;
    VitConfig vit;
    FusionConfig fusion;

    void validate() const;
};

template <typename T>
struct BasicModelParams {
    BasicNasnetParams<T> nasnet;
    BasicVitParams<T> vit;
    BasicFusionParams<T> fusion;

    /// (name, handle) for every tensor in a fixed order. Handles share storage with the params.
    std::vector<std::pair<std::string, BasicTensor<T>>> named() const;
};

using ModelParams = BasicModelParams<float>;
using ModelParams64 = BasicModelParams<double>;

/// Correctly shaped parameters: zeros everywhere except layer-norm gains (1).
template <typename T>
BasicModelParams<T> allocate_params(const ModelConfig& cfg);

/// Same names and shapes, values converted to U.
template <typename U, typename T>
BasicModelParams<U> cast_params(const ModelConfig& cfg, const BasicModelParams<T>& src) {
    auto out = allocate_params<U>(cfg);
    auto dst_named = out.named();
    auto src_named = src.named();
    if (dst_named.size() != src_named.size()) throw ShapeError("cast_params: parameter sets differ");
    for (std::size_t i = 0; i < dst_named.size(); ++i) {
        auto& d = dst_named[i].second;
        const auto& s = src_named[i].second;
        if (d.shape() != s.shape()) throw ShapeError("cast_params: shape mismatch at " + dst_named[i].first);
        auto values = d.mutable_data();
        for (std::size_t j = 0; j < values.size(); ++j) values[j] = static_cast<U>(s[j]);
    }
    return out;
}

template <typename T>
std::size_t parameter_count(const BasicModelParams<T>& p) {
    std::size_t total = 0;
    for (const auto& [name, t] : p.named()) total += t.numel();
    return total;
}

/// Checks every tensor shape against cfg; throws ShapeError naming the first mismatch.
template <typename T>
void check_params(const ModelConfig& cfg, const BasicModelParams<T>& p);

/// Both branches on the same input, projection, fusion and the MLP head: [C×H×W] -> probabilities [classes].
template <typename T>
BasicTensor<T> model_forward(const BasicTensor<T>& x, const ModelConfig& cfg, const BasicModelParams<T>& p,
                             const ForwardMode& mode, ForwardTrace* trace = nullptr);

ClassProbs predict(const Tensor& x, const ModelConfig& cfg, const ModelParams& p);

}  // namespace nasvit
