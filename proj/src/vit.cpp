#include "nasvit/vit.hpp"

#include <cmath>
#include <fmt/format.h>

namespace nasvit {

void VitConfig::validate(std::size_t image_size) const {
    if (patch_size == 0 || image_size % patch_size != 0) {
        throw ConfigError(fmt::format("vit.patch_size {} must divide image size {}", patch_size, image_size));
    }
    if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
        throw ConfigError(fmt::format("vit.embed_dim {} must be a positive multiple of vit.num_heads {}", embed_dim,
                                      num_heads));
    }
    if (ffn_dim == 0) throw ConfigError("vit.ffn_dim must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("vit.dropout_rate must be in [0, 1)");
}

template <typename T>
BasicTensor<T> embed(const BasicTensor<T>& patches, const BasicVitParams<T>& p) {
    auto projected = linear(patches, p.patch_embed.weight, p.patch_embed.bias);
    if (projected.shape() != p.positions.shape()) {
        throw ShapeError(fmt::format("embed: {} tokens vs positional table {}", shape_to_string(projected.shape()),
                                     shape_to_string(p.positions.shape())));
    }
    return add(projected, p.positions);
}

template <typename T>
BasicTensor<T> encoder_layer(const BasicTensor<T>& tokens, const EncoderLayerParams<T>& layer, const VitConfig& cfg,
                             const ForwardMode& mode, std::vector<BasicTensor<T>>* attention) {
    if (tokens.rank() != 2 || tokens.dim(1) != cfg.embed_dim) {
        throw ShapeError(fmt::format("encoder layer: tokens {} vs embed_dim {}", shape_to_string(tokens.shape()),
                                     cfg.embed_dim));
    }
    const std::size_t dh = cfg.head_dim();
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    auto normed = layer_norm(tokens, layer.attn_norm.gamma, layer.attn_norm.beta);
    auto q = linear(normed, layer.query.weight, layer.query.bias);
    auto k = linear(normed, layer.key.weight, layer.key.bias);
    auto v = linear(normed, layer.value.weight, layer.value.bias);
    std::vector<BasicTensor<T>> heads;
    heads.reserve(cfg.num_heads);
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        auto qh = slice_cols(q, h * dh, dh);
        auto kh = slice_cols(k, h * dh, dh);
        auto vh = slice_cols(v, h * dh, dh);
        auto weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt));
        if (attention) attention->push_back(weights);
        heads.push_back(matmul(weights, vh));
    }
    auto merged = cfg.num_heads == 1 ? heads.front() : concat_cols(heads);
    auto attn = apply_dropout(linear(merged, layer.attn_out.weight, layer.attn_out.bias), cfg.dropout_rate, mode);
    auto t = add(tokens, attn);

    auto ffn_normed = layer_norm(t, layer.ffn_norm.gamma, layer.ffn_norm.beta);
    auto hidden = relu(linear(ffn_normed, layer.ffn_in.weight, layer.ffn_in.bias));
    auto ffn = apply_dropout(linear(hidden, layer.ffn_out.weight, layer.ffn_out.bias), cfg.dropout_rate, mode);
    return add(t, ffn);
}

template <typename T>
BasicTensor<T> vit_forward(const BasicTensor<T>& x, const VitConfig& cfg, const BasicVitParams<T>& p,
                           const ForwardMode& mode, ForwardTrace* trace) {
    if (p.layers.size() != cfg.num_layers) {
        throw ShapeError(fmt::format("vit: params hold {} layers, config needs {}", p.layers.size(), cfg.num_layers));
    }
    BasicTensor<T> tokens;
    try {
        auto patches = patchify(x, cfg.patch_size);
        if (trace) trace->add("vit.patches", patches.shape());
        tokens = embed(patches, p);
    } catch (const ShapeError& e) {
        throw ShapeError(fmt::format("vit.embed: {}", e.what()));
    }
    if (trace) trace->add("vit.tokens", tokens.shape());
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        try {
            tokens = encoder_layer(tokens, p.layers[i], cfg, mode);
        } catch (const ShapeError& e) {
            throw ShapeError(fmt::format("vit.layer{}: {}", i, e.what()));
        }
        if (trace) trace->add(fmt::format("vit.layer{}", i), tokens.shape());
    }
    auto features = mean_rows(tokens);
    if (trace) trace->add("vit.features", features.shape());
    return features;
}

#define NASVIT_INSTANTIATE_VIT(T)                                                                                     \
    template BasicTensor<T> embed<T>(const BasicTensor<T>&, const BasicVitParams<T>&);                                \
    template BasicTensor<T> encoder_layer<T>(const BasicTensor<T>&, const EncoderLayerParams<T>&, const VitConfig&,   \
                                             const ForwardMode&, std::vector<BasicTensor<T>>*);                       \
    template BasicTensor<T> vit_forward<T>(const BasicTensor<T>&, const VitConfig&, const BasicVitParams<T>&,         \
                                           const ForwardMode&, ForwardTrace*);

NASVIT_INSTANTIATE_VIT(float)
NASVIT_INSTANTIATE_VIT(double)

}  // namespace nasvit
