#include "nasvit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "nasvit/dataset.hpp"
#include "nasvit/errors.hpp"

namespace nasvit {

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
}

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < num_classes; ++i) t += at(i, i);
    return t;
}

ConfusionMatrix confusion(const std::vector<std::pair<std::size_t, std::size_t>>& pairs, std::size_t num_classes,
                          std::vector<std::string> class_names) {
    if (num_classes == 0) throw ContractError("confusion matrix needs at least one class");
    if (class_names.empty()) {
        for (std::size_t i = 0; i < num_classes; ++i) {
            class_names.push_back(num_classes == kClassNames.size() ? kClassNames[i] : fmt::format("class{}", i));
        }
    }
    if (class_names.size() != num_classes) {
        throw ContractError(fmt::format("{} class names for {} classes", class_names.size(), num_classes));
    }
    ConfusionMatrix cm{num_classes, std::vector<std::uint64_t>(num_classes * num_classes, 0), std::move(class_names)};
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto [t, p] = pairs[i];
        if (t >= num_classes || p >= num_classes) {
            throw IndexError(fmt::format("pair {} = ({}, {}) has a class id outside [0, {})", i, t, p, num_classes));
        }
        ++cm.counts[t * num_classes + p];
    }
    return cm;
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den, bool& undefined) {
    undefined = den == 0;
    return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

EvalReport metrics(const ConfusionMatrix& cm) {
    const std::size_t n = cm.num_classes;
    EvalReport r;
    r.class_names = cm.class_names;
    r.sample_count = cm.total();
    r.per_class.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        auto& m = r.per_class[k];
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t p = 0; p < n; ++p) {
                const auto c = cm.at(t, p);
                if (t == k && p == k) {
                    m.tp += c;
                } else if (t == k) {
                    m.fn += c;
                } else if (p == k) {
                    m.fp += c;
                } else {
                    m.tn += c;
                }
            }
        }
        m.sensitivity = ratio(m.tp, m.tp + m.fn, m.sensitivity_undefined);
        m.specificity = ratio(m.tn, m.tn + m.fp, m.specificity_undefined);
        m.precision = ratio(m.tp, m.tp + m.fp, m.precision_undefined);
        const double denom = m.precision + m.sensitivity;
        m.f1_undefined = denom == 0.0;
        m.f1 = m.f1_undefined ? 0.0 : 2.0 * m.precision * m.sensitivity / denom;
        r.macro_sensitivity += m.sensitivity;
        r.macro_specificity += m.specificity;
        r.macro_precision += m.precision;
        r.macro_f1 += m.f1;
    }
    const double dn = static_cast<double>(n);
    r.macro_sensitivity /= dn;
    r.macro_specificity /= dn;
    r.macro_precision /= dn;
    r.macro_f1 /= dn;
    bool unused = false;
    r.accuracy = ratio(cm.trace(), r.sample_count, unused);
    return r;
}

std::string metrics_csv(const EvalReport& r, const ConfusionMatrix& cm) {
    std::string out = "class,tp,fp,fn,tn,sensitivity,specificity,precision,f1\n";
    for (std::size_t k = 0; k < r.per_class.size(); ++k) {
        const auto& m = r.per_class[k];
        out += fmt::format("{},{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6f}\n", r.class_names[k], m.tp, m.fp, m.fn, m.tn,
                           m.sensitivity, m.specificity, m.precision, m.f1);
    }
    out += fmt::format("macro,,,,,{:.6f},{:.6f},{:.6f},{:.6f}\n", r.macro_sensitivity, r.macro_specificity,
                       r.macro_precision, r.macro_f1);
    out += fmt::format("accuracy,{},,,,{:.6f},,,\n", r.sample_count, r.accuracy);

    out += "\n# confusion matrix: rows = true class, columns = predicted class\n";
    out += "true\\predicted";
    for (const auto& name : cm.class_names) out += "," + name;
    out += "\n";
    for (std::size_t t = 0; t < cm.num_classes; ++t) {
        out += cm.class_names[t];
        for (std::size_t p = 0; p < cm.num_classes; ++p) out += fmt::format(",{}", cm.at(t, p));
        out += "\n";
    }

    out += "\n# undefined metrics (zero denominator, reported as 0)\n";
    out += "class,metric\n";
    for (std::size_t k = 0; k < r.per_class.size(); ++k) {
        const auto& m = r.per_class[k];
        if (m.sensitivity_undefined) out += r.class_names[k] + ",sensitivity\n";
        if (m.specificity_undefined) out += r.class_names[k] + ",specificity\n";
        if (m.precision_undefined) out += r.class_names[k] + ",precision\n";
        if (m.f1_undefined) out += r.class_names[k] + ",f1\n";
    }
    return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
    out << text;
    if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

void emit_csv(const EvalReport& r, const ConfusionMatrix& cm, const std::filesystem::path& path) {
    write_text_file(path, metrics_csv(r, cm));
}

double cell_intensity(std::uint64_t count, std::uint64_t max_count) {
    if (max_count == 0) return 0.0;
    return static_cast<double>(count) / static_cast<double>(max_count);
}

namespace {

std::string fill_for(double t) {
    // white (t = 0) to dark blue (t = 1)
    auto mix = [t](int lo) { return static_cast<int>(std::lround(255.0 + (lo - 255.0) * t)); };
    return fmt::format("#{:02x}{:02x}{:02x}", mix(8), mix(48), mix(107));
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::string confusion_svg(const ConfusionMatrix& cm) {
    constexpr int cell = 64;
    constexpr int left = 130;
    constexpr int top = 110;
    const int n = static_cast<int>(cm.num_classes);
    const int width = left + n * cell + 20;
    const int height = top + n * cell + 40;
    std::uint64_t max_count = 0;
    for (auto c : cm.counts) max_count = std::max(max_count, c);

    std::string out;
    out += fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
        "font-family=\"sans-serif\" font-size=\"12\">\n",
        width, height, width, height);
    out += "<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
    out += fmt::format("<text class=\"axis-title\" x=\"{}\" y=\"20\" text-anchor=\"middle\">predicted</text>\n",
                       left + n * cell / 2);
    out += fmt::format(
        "<text class=\"axis-title\" x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">true</text>\n",
        top + n * cell / 2, top + n * cell / 2);
    for (int i = 0; i < n; ++i) {
        const auto name = xml_escape(cm.class_names[static_cast<std::size_t>(i)]);
        const int cx = left + i * cell + cell / 2;
        out += fmt::format(
            "<text class=\"label\" x=\"{}\" y=\"{}\" text-anchor=\"start\" transform=\"rotate(-45 {} {})\">{}</text>\n", cx,
            top - 8, cx, top - 8, name);
        out += fmt::format("<text class=\"label\" x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", left - 8,
                           top + i * cell + cell / 2 + 4, name);
    }
    for (int t = 0; t < n; ++t) {
        for (int p = 0; p < n; ++p) {
            const auto count = cm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
            const double intensity = cell_intensity(count, max_count);
            const int x = left + p * cell;
            const int y = top + t * cell;
            out += fmt::format(
                "<rect class=\"cell\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"#cccccc\" "
                "data-intensity=\"{:.6f}\"/>\n",
                x, y, cell, cell, fill_for(intensity), intensity);
            out += fmt::format(
                "<text class=\"count\" x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{}\">{}</text>\n", x + cell / 2,
                y + cell / 2 + 4, intensity > 0.5 ? "#ffffff" : "#000000", count);
        }
    }
    out += "</svg>\n";
    return out;
}

void emit_confusion_svg(const ConfusionMatrix& cm, const std::filesystem::path& path) {
    write_text_file(path, confusion_svg(cm));
}

const std::vector<ReferenceRow>& reference_rows() {
    static const std::vector<ReferenceRow> rows = {
        {"NASNet-ViT", "98.9", "0.99", "0.985", "0.988", "0.99", "12.4", "25.6"},
        {"MixNet-LD", "99.0", "0.99", "0.98", "0.98", "0.99", "14.7", "30.2"},
        {"D-ResNet", "85.2", "0.84", "0.85", "0.87", "0.86", "18.3", "50.1"},
        {"MobileNet", "84.5", "0.82", "0.83", "0.84", "0.85", "20.1", "48.3"},
        {"ResNet50", "82.1", "0.77", "0.81", "0.82", "0.81", "22.5", "60.5"},
    };
    return rows;
}

std::string comparison_csv(const EvalReport& r, std::optional<double> time_s, std::optional<double> size_mb,
                           const std::string& label) {
    std::string out =
        "model,source,accuracy_pct,macro_sensitivity,macro_specificity,macro_f1,macro_recall,time_s,model_size_mb\n";
    for (const auto& row : reference_rows()) {
        out += fmt::format("{},paper-reported,{},{},{},{},{},{},{}\n", row.model, row.accuracy_pct, row.sensitivity,
                           row.specificity, row.f1, row.recall, row.time_s, row.size_mb);
    }
    out += fmt::format("{},measured,{:.1f},{:.3f},{:.3f},{:.3f},{:.3f},{},{}\n", label, 100.0 * r.accuracy,
                       r.macro_sensitivity, r.macro_specificity, r.macro_f1, r.macro_sensitivity,
                       time_s ? fmt::format("{:.4f}", *time_s) : std::string(),
                       size_mb ? fmt::format("{:.4f}", *size_mb) : std::string());
    return out;
}

void emit_comparison_table(const EvalReport& r, const std::filesystem::path& path, std::optional<double> time_s,
                           std::optional<double> size_mb, const std::string& label) {
    write_text_file(path, comparison_csv(r, time_s, size_mb, label));
}

}  // namespace nasvit
