#include "nasvit/model.hpp"

#include <fmt/format.h>

namespace nasvit {

void ModelConfig::validate() const {
    nasnet.validate();
    vit.validate(image_size);
    fusion.validate();
    if (in_channels != 3) throw ConfigError(fmt::format("model.in_channels must be 3, got {}", in_channels));
    const std::size_t step = std::size_t{1} << nasnet.num_stages;
    if (image_size == 0 || image_size % step != 0) {
        throw ConfigError(fmt::format("model.image_size {} must be a multiple of {} for {} nasnet stages", image_size,
                                      step, nasnet.num_stages));
    }
}

namespace {

template <typename T>
void push_linear(std::vector<std::pair<std::string, BasicTensor<T>>>& out, const std::string& prefix,
                 const LinearParams<T>& p) {
    out.emplace_back(prefix + ".weight", p.weight);
    out.emplace_back(prefix + ".bias", p.bias);
}

template <typename T>
void push_norm(std::vector<std::pair<std::string, BasicTensor<T>>>& out, const std::string& prefix,
               const LayerNormParams<T>& p) {
    out.emplace_back(prefix + ".gamma", p.gamma);
    out.emplace_back(prefix + ".beta", p.beta);
}

template <typename T>
LinearParams<T> make_linear(std::size_t out, std::size_t in) {
    return {BasicTensor<T>(Shape{out, in}), BasicTensor<T>(Shape{out})};
}

template <typename T>
ConvParams<T> make_conv(std::size_t out, std::size_t in_per_group, std::size_t k) {
    return {BasicTensor<T>(Shape{out, in_per_group, k, k}), BasicTensor<T>(Shape{out})};
}

template <typename T>
LayerNormParams<T> make_norm(std::size_t d) {
    return {BasicTensor<T>(Shape{d}, T(1)), BasicTensor<T>(Shape{d})};
}

template <typename T>
CellParams<T> make_cell(CellKind kind, std::string name, std::size_t in_channels) {
    CellParams<T> cell;
    cell.kind = kind;
    cell.name = std::move(name);
    const std::size_t out_channels = kind == CellKind::normal ? in_channels : 2 * in_channels;
    cell.depthwise = make_conv<T>(in_channels, 1, 3);
    cell.pointwise = make_conv<T>(out_channels, in_channels, 1);
    return cell;
}

}  // namespace

template <typename T>
std::vector<std::pair<std::string, BasicTensor<T>>> BasicModelParams<T>::named() const {
    std::vector<std::pair<std::string, BasicTensor<T>>> out;
    out.emplace_back("nasnet.stem.weight", nasnet.stem.weight);
    out.emplace_back("nasnet.stem.bias", nasnet.stem.bias);
    for (const auto& cell : nasnet.cells) {
        out.emplace_back(cell.name + ".depthwise.weight", cell.depthwise.weight);
        out.emplace_back(cell.name + ".depthwise.bias", cell.depthwise.bias);
        out.emplace_back(cell.name + ".pointwise.weight", cell.pointwise.weight);
        out.emplace_back(cell.name + ".pointwise.bias", cell.pointwise.bias);
    }
    push_linear(out, "vit.patch_embed", vit.patch_embed);
    out.emplace_back("vit.positions", vit.positions);
    for (std::size_t i = 0; i < vit.layers.size(); ++i) {
        const auto& l = vit.layers[i];
        const std::string prefix = fmt::format("vit.layer{}", i);
        push_norm(out, prefix + ".attn_norm", l.attn_norm);
        push_linear(out, prefix + ".query", l.query);
        push_linear(out, prefix + ".key", l.key);
        push_linear(out, prefix + ".value", l.value);
        push_linear(out, prefix + ".attn_out", l.attn_out);
        push_norm(out, prefix + ".ffn_norm", l.ffn_norm);
        push_linear(out, prefix + ".ffn_in", l.ffn_in);
        push_linear(out, prefix + ".ffn_out", l.ffn_out);
    }
    push_linear(out, "fusion.project_nasnet", fusion.project_nasnet);
    push_linear(out, "fusion.project_vit", fusion.project_vit);
    push_linear(out, "fusion.hidden", fusion.hidden);
    push_linear(out, "fusion.output", fusion.output);
    return out;
}

template <typename T>
BasicModelParams<T> allocate_params(const ModelConfig& cfg) {
    cfg.validate();
    BasicModelParams<T> p;
    const auto& nc = cfg.nasnet;
    p.nasnet.stem = make_conv<T>(nc.stem_channels, cfg.in_channels, 3);
    std::size_t channels = nc.stem_channels;
    for (std::size_t s = 0; s < nc.num_stages; ++s) {
        for (std::size_t c = 0; c < nc.cells_per_stage; ++c) {
            p.nasnet.cells.push_back(
                make_cell<T>(CellKind::normal, fmt::format("nasnet.stage{}.normal{}", s, c), channels));
        }
        if (s + 1 < nc.num_stages) {
            p.nasnet.cells.push_back(
                make_cell<T>(CellKind::reduction, fmt::format("nasnet.stage{}.reduction", s), channels));
            channels *= 2;
        }
    }

    const auto& vc = cfg.vit;
    const std::size_t d = vc.embed_dim;
    p.vit.patch_embed = make_linear<T>(d, vc.patch_length(cfg.in_channels));
    p.vit.positions = BasicTensor<T>(Shape{vc.num_patches(cfg.image_size), d});
    for (std::size_t i = 0; i < vc.num_layers; ++i) {
        EncoderLayerParams<T> l;
        l.attn_norm = make_norm<T>(d);
        l.query = make_linear<T>(d, d);
        l.key = make_linear<T>(d, d);
        l.value = make_linear<T>(d, d);
        l.attn_out = make_linear<T>(d, d);
        l.ffn_norm = make_norm<T>(d);
        l.ffn_in = make_linear<T>(vc.ffn_dim, d);
        l.ffn_out = make_linear<T>(d, vc.ffn_dim);
        p.vit.layers.push_back(std::move(l));
    }

    const auto& fc = cfg.fusion;
    p.fusion.project_nasnet = make_linear<T>(fc.fusion_dim, nc.output_dim());
    p.fusion.project_vit = make_linear<T>(fc.fusion_dim, d);
    p.fusion.hidden = make_linear<T>(fc.mlp_hidden, fc.fusion_dim);
    p.fusion.output = make_linear<T>(fc.num_classes, fc.mlp_hidden);
    return p;
}

template <typename T>
void check_params(const ModelConfig& cfg, const BasicModelParams<T>& p) {
    const auto expected = allocate_params<T>(cfg).named();
    const auto actual = p.named();
    if (expected.size() != actual.size()) {
        throw ShapeError(fmt::format("model has {} tensors, config needs {}", actual.size(), expected.size()));
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (expected[i].first != actual[i].first) {
            throw ShapeError(fmt::format("tensor {} is named '{}', expected '{}'", i, actual[i].first,
                                         expected[i].first));
        }
        if (expected[i].second.shape() != actual[i].second.shape()) {
            throw ShapeError(fmt::format("{}: shape {} but config needs {}", actual[i].first,
                                         shape_to_string(actual[i].second.shape()),
                                         shape_to_string(expected[i].second.shape())));
        }
    }
}

template <typename T>
BasicTensor<T> model_forward(const BasicTensor<T>& x, const ModelConfig& cfg, const BasicModelParams<T>& p,
                             const ForwardMode& mode, ForwardTrace* trace) {
    if (trace) trace->add("input", x.shape());
    BasicTensor<T> fn;
    BasicTensor<T> fv;
    try {
        fn = project(nasnet_forward(x, cfg.nasnet, p.nasnet, trace), p.fusion.project_nasnet);
    } catch (const ShapeError& e) {
        throw ShapeError(fmt::format("nasnet branch: {}", e.what()));
    }
    try {
        fv = project(vit_forward(x, cfg.vit, p.vit, mode, trace), p.fusion.project_vit);
    } catch (const ShapeError& e) {
        throw ShapeError(fmt::format("vit branch: {}", e.what()));
    }
    auto ensemble = fuse(fn, fv);
    if (trace) trace->add("fusion.ensemble", ensemble.shape());
    auto probs = mlp_head(ensemble, p.fusion, cfg.fusion, mode);
    if (trace) trace->add("fusion.probs", probs.shape());
    return probs;
}

ClassProbs predict(const Tensor& x, const ModelConfig& cfg, const ModelParams& p) {
    return to_class_probs(model_forward(x, cfg, p, ForwardMode{}));
}

#define NASVIT_INSTANTIATE_MODEL(T)                                                                                   \
    template struct BasicModelParams<T>;                                                                              \
    template BasicModelParams<T> allocate_params<T>(const ModelConfig&);                                              \
    template void check_params<T>(const ModelConfig&, const BasicModelParams<T>&);                                    \
    template BasicTensor<T> model_forward<T>(const BasicTensor<T>&, const ModelConfig&, const BasicModelParams<T>&,   \
                                             const ForwardMode&, ForwardTrace*);

NASVIT_INSTANTIATE_MODEL(float)
NASVIT_INSTANTIATE_MODEL(double)

}  // namespace nasvit
