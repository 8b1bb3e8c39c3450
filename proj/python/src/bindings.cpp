#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "nasvit/config.hpp"
#include "nasvit/dataset.hpp"
#include "nasvit/metrics.hpp"
#include "nasvit/mixprocessing.hpp"
#include "nasvit/training.hpp"

namespace py = pybind11;
using namespace nasvit;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// HxW or HxWxC float array -> ImageBuffer (copy).
ImageBuffer to_image(const FloatArray& a) {
    if (a.ndim() != 2 && a.ndim() != 3) throw InputError("image array must be HxW or HxWxC");
    ImageBuffer img(a.shape(0), a.shape(1), a.ndim() == 3 ? a.shape(2) : 1);
    std::memcpy(img.pixels.data(), a.data(), img.pixels.size() * sizeof(float));
    img.validate();
    return img;
}

py::array_t<float> from_image(const ImageBuffer& img) {
    std::vector<py::ssize_t> shape = {py::ssize_t(img.height), py::ssize_t(img.width)};
    if (img.channels != 1) shape.push_back(py::ssize_t(img.channels));
    py::array_t<float> out(shape);
    std::memcpy(out.mutable_data(), img.pixels.data(), img.pixels.size() * sizeof(float));
    return out;
}

Plane to_plane(const FloatArray& a) {
    if (a.ndim() != 2) throw InputError("plane array must be 2-D");
    Plane p(a.shape(0), a.shape(1));
    std::memcpy(p.values.data(), a.data(), p.values.size() * sizeof(float));
    return p;
}

py::array_t<float> from_plane(const Plane& p) {
    py::array_t<float> out({py::ssize_t(p.height), py::ssize_t(p.width)});
    std::memcpy(out.mutable_data(), p.values.data(), p.values.size() * sizeof(float));
    return out;
}

Tensor to_tensor(const FloatArray& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<float> out(shape);
    const auto& v = t.values();
    std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(float));
    return out;
}

py::array_t<std::uint8_t> from_mask(const BinaryMask& m) {
    py::array_t<std::uint8_t> out({py::ssize_t(m.height), py::ssize_t(m.width)});
    std::memcpy(out.mutable_data(), m.bits.data(), m.bits.size());
    return out;
}

BinaryMask to_mask(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw InputError("mask array must be 2-D");
    BinaryMask m(a.shape(0), a.shape(1));
    std::memcpy(m.bits.data(), a.data(), m.bits.size());
    return m;
}

std::string get_key(const RunConfig& cfg, const std::string& name) {
    for (const auto& k : config_keys())
        if (k.name == name) return k.get(cfg);
    throw ConfigError("unknown key '" + name + "'");
}

void set_key(RunConfig& cfg, const std::string& name, const std::string& value) {
    for (const auto& k : config_keys()) {
        if (k.name == name) {
            k.set(cfg, value);
            return;
        }
    }
    throw ConfigError("unknown key '" + name + "'");
}

py::dict report_dict(const EvalReport& r) {
    py::list rows;
    for (std::size_t i = 0; i < r.per_class.size(); ++i) {
        const auto& c = r.per_class[i];
        py::dict d;
        d["class"] = r.class_names[i];
        d["tp"] = c.tp;
        d["fp"] = c.fp;
        d["fn"] = c.fn;
        d["tn"] = c.tn;
        d["sensitivity"] = c.sensitivity;
        d["specificity"] = c.specificity;
        d["precision"] = c.precision;
        d["f1"] = c.f1;
        rows.append(d);
    }
    py::dict out;
    out["per_class"] = rows;
    out["macro_sensitivity"] = r.macro_sensitivity;
    out["macro_specificity"] = r.macro_specificity;
    out["macro_precision"] = r.macro_precision;
    out["macro_f1"] = r.macro_f1;
    out["accuracy"] = r.accuracy;
    out["sample_count"] = r.sample_count;
    return out;
}

ConfusionMatrix matrix_from(const py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast>& counts) {
    if (counts.ndim() != 2 || counts.shape(0) != counts.shape(1)) throw ShapeError("confusion matrix must be square");
    const auto n = static_cast<std::size_t>(counts.shape(0));
    std::vector<std::pair<std::size_t, std::size_t>> none;
    auto cm = confusion(none, n);
    cm.counts.assign(counts.data(), counts.data() + counts.size());
    return cm;
}

}  // namespace

PYBIND11_MODULE(_nasvit, m) {
    m.doc() = "Image enhancement, hybrid CNN/transformer classifier and evaluation metrics.";

    auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ShapeError>(m, "ShapeError", error.ptr());
    py::register_exception<IndexError>(m, "IndexError", error.ptr());
    py::register_exception<ContractError>(m, "ContractError", error.ptr());
    py::register_exception<InputError>(m, "InputError", error.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
    py::register_exception<IoError>(m, "IoError", error.ptr());
    py::register_exception<FormatError>(m, "FormatError", error.ptr());
    py::register_exception<NumericError>(m, "NumericError", error.ptr());

    m.attr("CLASS_NAMES") = py::tuple(py::cast(std::vector<std::string>(kClassNames.begin(), kClassNames.end())));

    // ---- images and enhancement

    m.def("read_image", [](const std::filesystem::path& p) { return from_image(read_image(p)); }, py::arg("path"));
    m.def("write_png", [](const FloatArray& a, const std::filesystem::path& p) { write_png(to_image(a), p); },
          py::arg("image"), py::arg("path"));
    m.def("resize_bilinear",
          [](const FloatArray& a, std::size_t h, std::size_t w) { return from_image(resize_bilinear(to_image(a), h, w)); },
          py::arg("image"), py::arg("height"), py::arg("width"));

    m.def("dwt2_haar", [](const FloatArray& a) {
        const auto s = dwt2_haar(to_image(a));
        py::dict d;
        d["approx"] = from_plane(s.approx);
        d["detail_h"] = from_plane(s.detail_h);
        d["detail_v"] = from_plane(s.detail_v);
        d["detail_d"] = from_plane(s.detail_d);
        d["shape"] = py::make_tuple(s.original_height, s.original_width);
        return d;
    }, py::arg("image"), "One-level Haar decomposition of a single-channel image.");
    m.def("idwt2_haar", [](const py::dict& d) {
        WaveletSubbands s;
        s.approx = to_plane(d["approx"].cast<FloatArray>());
        s.detail_h = to_plane(d["detail_h"].cast<FloatArray>());
        s.detail_v = to_plane(d["detail_v"].cast<FloatArray>());
        s.detail_d = to_plane(d["detail_d"].cast<FloatArray>());
        const auto shape = d["shape"].cast<std::pair<std::size_t, std::size_t>>();
        s.original_height = shape.first;
        s.original_width = shape.second;
        return from_image(idwt2_haar(s));
    }, py::arg("subbands"));
    m.def("wavelet_enhance", [](const FloatArray& a, float gain) { return from_image(wavelet_enhance(to_image(a), gain)); },
          py::arg("image"), py::arg("detail_gain") = 1.5f);
    m.def("clahe",
          [](const FloatArray& a, std::size_t tr, std::size_t tc, float clip) {
              return from_image(clahe(to_image(a), tr, tc, clip));
          },
          py::arg("image"), py::arg("tile_rows") = 8, py::arg("tile_cols") = 8, py::arg("clip") = 2.0f);
    m.def("bandpass_plane",
          [](const FloatArray& a, float lo, float hi) { return from_plane(bandpass_plane(to_plane(a), lo, hi)); },
          py::arg("plane"), py::arg("low"), py::arg("high"));
    m.def("fourier_bandpass",
          [](const FloatArray& a, float lo, float hi) { return from_image(fourier_bandpass(to_image(a), lo, hi)); },
          py::arg("image"), py::arg("low") = 0.0f, py::arg("high") = 0.45f);
    m.def("bilateral_filter",
          [](const FloatArray& a, float ss, float sr) { return from_image(bilateral_filter(to_image(a), ss, sr)); },
          py::arg("image"), py::arg("sigma_spatial") = 2.0f, py::arg("sigma_range") = 0.1f);
    m.def("otsu_threshold_bin", [](const FloatArray& a) { return otsu_threshold_bin(to_image(a)); }, py::arg("image"));
    m.def("otsu_mask", [](const FloatArray& a) { return from_mask(otsu_mask(to_image(a))); }, py::arg("image"));
    m.def("binary_close",
          [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a, std::size_t r) {
              return from_mask(binary_close(to_mask(a), r));
          },
          py::arg("mask"), py::arg("radius"));
    m.def("morphological_enhance",
          [](const FloatArray& a, std::size_t r, float alpha) {
              return from_image(morphological_enhance(to_image(a), r, alpha));
          },
          py::arg("image"), py::arg("se_radius") = 3, py::arg("alpha") = 0.7f);
    m.def("mixprocess", [](const FloatArray& a, const RunConfig& cfg) {
        return from_image(mixprocess(to_image(a), cfg.preprocess));
    }, py::arg("image"), py::arg("config"), "All enabled enhancement stages, using the preprocess.* keys of config.");
    m.def("normalize", [](const FloatArray& a) { return from_tensor(normalize(to_image(a))); }, py::arg("image"),
          "HxWx3 image in [0, 1] -> 3xHxW tensor, (x - mean_c) / std_c.");

    // ---- config

    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def_static("parse", [](const std::string& text) { return parse_config(text); }, py::arg("text"))
        .def_static("load", [](const std::filesystem::path& p) { return load_config(p); }, py::arg("path"))
        .def("validate", &RunConfig::validate)
        .def("to_text", [](const RunConfig& c) { return to_config_text(c); })
        .def("__getitem__", &get_key)
        .def("__setitem__", &set_key)
        .def_static("keys", [] {
            std::vector<std::string> names;
            for (const auto& k : config_keys()) names.push_back(k.name);
            return names;
        });

    // ---- model

    py::class_<Checkpoint>(m, "Model")
        .def(py::init([](const RunConfig& cfg, std::uint64_t seed) {
                 cfg.validate();
                 Checkpoint c;
                 c.config = cfg;
                 c.params = init_params(cfg.model, seed);
                 return c;
             }),
             py::arg("config"), py::arg("seed") = 42)
        .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); }, py::arg("path"))
        .def("save", [](const Checkpoint& c, const std::filesystem::path& p) { save_checkpoint(c, p); }, py::arg("path"))
        .def_property_readonly("config", [](const Checkpoint& c) { return c.config; })
        .def_property_readonly("epoch", [](const Checkpoint& c) { return c.epoch; })
        .def("parameter_count", [](const Checkpoint& c) { return parameter_count(c.params); })
        .def("file_size", [](const Checkpoint& c) { return checkpoint_size(c); })
        .def("parameters", [](const Checkpoint& c) {
            py::dict d;
            for (const auto& [name, t] : c.params.named()) d[py::str(name)] = from_tensor(t);
            return d;
        })
        .def("forward", [](const Checkpoint& c, const FloatArray& x) {
            return from_tensor(model_forward(to_tensor(x), c.config.model, c.params, ForwardMode{}));
        }, py::arg("x"), "CxHxW tensor -> class probabilities (inference mode).")
        .def("trace", [](const Checkpoint& c, const FloatArray& x) {
            ForwardTrace trace;
            model_forward(to_tensor(x), c.config.model, c.params, ForwardMode{}, &trace);
            std::vector<std::pair<std::string, std::vector<std::size_t>>> steps(trace.steps.begin(), trace.steps.end());
            return steps;
        }, py::arg("x"))
        .def("predict", [](const Checkpoint& c, const std::filesystem::path& p) {
            const auto img = prepare_image(p, c.config.preprocess, c.config.model.image_size);
            const auto probs = predict(normalize(img), c.config.model, c.params);
            return py::make_tuple(probs.predicted_class, probs.probabilities);
        }, py::arg("path"), "Reads, enhances, resizes and classifies an image file. Returns (class, probabilities).");

    // ---- metrics

    m.def("confusion", [](const std::vector<std::pair<std::size_t, std::size_t>>& pairs, std::size_t n) {
        const auto cm = confusion(pairs, n);
        py::array_t<std::uint64_t> out({py::ssize_t(n), py::ssize_t(n)});
        std::memcpy(out.mutable_data(), cm.counts.data(), cm.counts.size() * sizeof(std::uint64_t));
        return out;
    }, py::arg("pairs"), py::arg("num_classes") = kNumClasses, "(truth, prediction) pairs -> counts[truth, pred].");
    m.def("metrics", [](const py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast>& counts) {
        return report_dict(metrics(matrix_from(counts)));
    }, py::arg("counts"));
    m.def("metrics_csv", [](const py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast>& counts) {
        const auto cm = matrix_from(counts);
        return metrics_csv(metrics(cm), cm);
    }, py::arg("counts"));
    m.def("confusion_svg", [](const py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast>& counts) {
        return confusion_svg(matrix_from(counts));
    }, py::arg("counts"));
}
