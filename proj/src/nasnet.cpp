#include "nasvit/nasnet.hpp"

#include <fmt/format.h>

namespace nasvit {

void NasnetConfig::validate() const {
    if (stem_channels < 1) throw ConfigError("nasnet.stem_channels must be >= 1");
    if (cells_per_stage < 1) throw ConfigError("nasnet.cells_per_stage must be >= 1");
    if (num_stages < 1) throw ConfigError("nasnet.num_stages must be >= 1");
    if (num_stages > 16) throw ConfigError("nasnet.num_stages must be <= 16");
}

namespace {

template <typename T>
void require_even_spatial(const BasicTensor<T>& x, const char* what) {
    if (x.rank() != 3) throw ShapeError(fmt::format("{}: expected [C×H×W], got {}", what, shape_to_string(x.shape())));
    if (x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0) {
        throw ShapeError(fmt::format("{}: spatial dims must be even, got {}", what, shape_to_string(x.shape())));
    }
}

}  // namespace

template <typename T>
BasicTensor<T> stem_forward(const BasicTensor<T>& x, const ConvParams<T>& stem) {
    require_even_spatial(x, "stem");
    return relu(conv2d(x, stem.weight, stem.bias, 2, 1, 1));
}

template <typename T>
BasicTensor<T> normal_cell_forward(const BasicTensor<T>& x, const CellParams<T>& cell) {
    if (x.rank() != 3) throw ShapeError("normal cell: expected [C×H×W], got " + shape_to_string(x.shape()));
    const std::size_t channels = x.dim(0);
    auto h = conv2d(x, cell.depthwise.weight, cell.depthwise.bias, 1, 1, channels);
    h = relu(conv2d(h, cell.pointwise.weight, cell.pointwise.bias, 1, 0, 1));
    if (h.shape() != x.shape()) {
        throw ShapeError(fmt::format("normal cell: output {} differs from input {}", shape_to_string(h.shape()),
                                     shape_to_string(x.shape())));
    }
    return add(x, h);
}

template <typename T>
BasicTensor<T> reduction_cell_forward(const BasicTensor<T>& x, const CellParams<T>& cell) {
    require_even_spatial(x, "reduction cell");
    const std::size_t channels = x.dim(0);
    auto h = conv2d(x, cell.depthwise.weight, cell.depthwise.bias, 2, 1, channels);
    return relu(conv2d(h, cell.pointwise.weight, cell.pointwise.bias, 1, 0, 1));
}

template <typename T>
BasicTensor<T> nasnet_feature_map(const BasicTensor<T>& x, const NasnetConfig& cfg, const BasicNasnetParams<T>& p,
                                  ForwardTrace* trace) {
    const std::size_t expected_cells = cfg.num_stages * cfg.cells_per_stage + (cfg.num_stages - 1);
    if (p.cells.size() != expected_cells) {
        throw ShapeError(fmt::format("nasnet: params hold {} cells, config needs {}", p.cells.size(), expected_cells));
    }
    BasicTensor<T> h;
    try {
        h = stem_forward(x, p.stem);
    } catch (const ShapeError& e) {
        throw ShapeError(fmt::format("nasnet.stem: {}", e.what()));
    }
    if (trace) trace->add("nasnet.stem", h.shape());
    for (const auto& cell : p.cells) {
        try {
            h = cell.kind == CellKind::normal ? normal_cell_forward(h, cell) : reduction_cell_forward(h, cell);
        } catch (const ShapeError& e) {
            throw ShapeError(fmt::format("{}: {}", cell.name, e.what()));
        }
        if (trace && cell.kind == CellKind::reduction) trace->add(cell.name, h.shape());
    }
    if (trace) trace->add("nasnet.feature_map", h.shape());
    return h;
}

template <typename T>
BasicTensor<T> nasnet_forward(const BasicTensor<T>& x, const NasnetConfig& cfg, const BasicNasnetParams<T>& p,
                              ForwardTrace* trace) {
    auto features = global_avg_pool(nasnet_feature_map(x, cfg, p, trace));
    if (trace) trace->add("nasnet.features", features.shape());
    return features;
}

#define NASVIT_INSTANTIATE_NASNET(T)                                                                                  \
    template BasicTensor<T> stem_forward<T>(const BasicTensor<T>&, const ConvParams<T>&);                             \
    template BasicTensor<T> normal_cell_forward<T>(const BasicTensor<T>&, const CellParams<T>&);                      \
    template BasicTensor<T> reduction_cell_forward<T>(const BasicTensor<T>&, const CellParams<T>&);                   \
    template BasicTensor<T> nasnet_feature_map<T>(const BasicTensor<T>&, const NasnetConfig&,                         \
                                                  const BasicNasnetParams<T>&, ForwardTrace*);                        \
    template BasicTensor<T> nasnet_forward<T>(const BasicTensor<T>&, const NasnetConfig&, const BasicNasnetParams<T>&, \
                                              ForwardTrace*);

NASVIT_INSTANTIATE_NASNET(float)
NASVIT_INSTANTIATE_NASNET(double)

}  // namespace nasvit
