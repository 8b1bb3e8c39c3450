#pragma once

#include <cstddef>
#include <vector>

#include "nasvit/layers.hpp"

namespace nasvit {

struct VitConfig {
    std::size_t patch_size = 16;
    std::size_t embed_dim = 64;
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t ffn_dim = 128;
    double dropout_rate = 0.1;

    std::size_t head_dim() const { return embed_dim / num_heads; }
    std::size_t num_patches(std::size_t image_size) const {
        const std::size_t side = image_size / patch_size;
        return side * side;
    }
    std::size_t patch_length(std::size_t channels) const { return channels * patch_size * patch_size; }
    void validate(std::size_t image_size) const;
};

/// Pre-norm transformer encoder layer.
template <typename T>
struct EncoderLayerParams {
    LayerNormParams<T> attn_norm;
    LinearParams<T> query;
    LinearParams<T> key;
    LinearParams<T> value;
    LinearParams<T> attn_out;
    LayerNormParams<T> ffn_norm;
    LinearParams<T> ffn_in;
    LinearParams<T> ffn_out;
};

template <typename T>
struct BasicVitParams {
    LinearParams<T> patch_embed;  // weight [d × (C·p·p)]
    BasicTensor<T> positions;     // [N × d], learned
    std::vector<EncoderLayerParams<T>> layers;
};

using VitParams = BasicVitParams<float>;

/// Linear patch embedding plus the positional table: [N×(C·p·p)] -> [N×d].
template <typename T>
BasicTensor<T> embed(const BasicTensor<T>& patches, const BasicVitParams<T>& p);

/**
 * t <- t + MHSA(LN(t)); t <- t + FFN(LN(t)).
 * When attention is non-null it receives one [N×N] row-stochastic matrix per head.
 */
template <typename T>
BasicTensor<T> encoder_layer(const BasicTensor<T>& tokens, const EncoderLayerParams<T>& layer, const VitConfig& cfg,
                             const ForwardMode& mode, std::vector<BasicTensor<T>>* attention = nullptr);

/// patchify -> embed -> encoder layers -> mean over tokens: [C×H×W] -> [d].
template <typename T>
BasicTensor<T> vit_forward(const BasicTensor<T>& x, const VitConfig& cfg, const BasicVitParams<T>& p,
                           const ForwardMode& mode, ForwardTrace* trace = nullptr);

}  // namespace nasvit
