#include "nasvit/fusion.hpp"

#include <fmt/format.h>

namespace nasvit {

void FusionConfig::validate() const {
    if (fusion_dim < 1) throw ConfigError("fusion.dim must be >= 1");
    if (mlp_hidden < 1) throw ConfigError("fusion.mlp_hidden must be >= 1");
    if (num_classes != kNumClasses) {
        throw ConfigError(fmt::format("fusion.num_classes must be {}, got {}", kNumClasses, num_classes));
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("fusion.dropout_rate must be in [0, 1)");
}

template <typename T>
std::size_t argmax(std::span<const T> values) {
    if (values.empty()) throw ShapeError("argmax of an empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

template std::size_t argmax<float>(std::span<const float>);
template std::size_t argmax<double>(std::span<const double>);

ClassProbs to_class_probs(const Tensor& probs) {
    ClassProbs out;
    out.probabilities = probs.values();
    out.predicted_class = argmax(probs.data());
    return out;
}

template <typename T>
BasicTensor<T> project(const BasicTensor<T>& f, const LinearParams<T>& p) {
    if (f.rank() != 1 || p.weight.rank() != 2 || p.weight.dim(1) != f.numel()) {
        throw ShapeError(fmt::format("project: feature {} vs weight {}", shape_to_string(f.shape()),
                                     shape_to_string(p.weight.shape())));
    }
    return linear(f, p.weight, p.bias);
}

template <typename T>
BasicTensor<T> fuse(const BasicTensor<T>& fn, const BasicTensor<T>& fv) {
    if (fn.shape() != fv.shape()) {
        throw ShapeError(fmt::format("fuse: length mismatch {} vs {}", shape_to_string(fn.shape()),
                                     shape_to_string(fv.shape())));
    }
    return mul(fn, fv);
}

template <typename T>
BasicTensor<T> mlp_head(const BasicTensor<T>& f, const BasicFusionParams<T>& p, const FusionConfig& cfg,
                        const ForwardMode& mode) {
    auto h = relu(linear(f, p.hidden.weight, p.hidden.bias));
    h = apply_dropout(h, cfg.dropout_rate, mode);
    return softmax(linear(h, p.output.weight, p.output.bias));
}

#define NASVIT_INSTANTIATE_FUSION(T)                                                                                  \
    template BasicTensor<T> project<T>(const BasicTensor<T>&, const LinearParams<T>&);                                \
    template BasicTensor<T> fuse<T>(const BasicTensor<T>&, const BasicTensor<T>&);                                    \
    template BasicTensor<T> mlp_head<T>(const BasicTensor<T>&, const BasicFusionParams<T>&, const FusionConfig&,      \
                                        const ForwardMode&);

NASVIT_INSTANTIATE_FUSION(float)
NASVIT_INSTANTIATE_FUSION(double)

}  // namespace nasvit
