#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nasvit {

/// counts[t·n + p]: rows are true classes, columns predictions.
struct ConfusionMatrix {
    std::size_t num_classes = 0;
    std::vector<std::uint64_t> counts;
    std::vector<std::string> class_names;

    std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * num_classes + pred]; }
    std::uint64_t total() const;
    std::uint64_t trace() const;
};

/// Default class names are the five dataset classes; other sizes get "class<i>".
ConfusionMatrix confusion(const std::vector<std::pair<std::size_t, std::size_t>>& pairs, std::size_t num_classes = 5,
                          std::vector<std::string> class_names = {});

struct ClassMetrics {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
    // Set when the denominator was zero and the metric was reported as 0.
    bool sensitivity_undefined = false;
    bool specificity_undefined = false;
    bool precision_undefined = false;
    bool f1_undefined = false;
};

struct EvalReport {
    std::vector<std::string> class_names;
    std::vector<ClassMetrics> per_class;
    double macro_sensitivity = 0.0;
    double macro_specificity = 0.0;
    double macro_precision = 0.0;
    double macro_f1 = 0.0;
    double accuracy = 0.0;
    std::uint64_t sample_count = 0;
};

/// One-vs-rest counts per class; zero denominators give 0 plus a flag; macro = unweighted mean.
EvalReport metrics(const ConfusionMatrix& cm);

/**
 * class,tp,fp,fn,tn,sensitivity,specificity,precision,f1 with one row per class,
 * then "macro" and "accuracy" rows, then the confusion matrix and the list of
 * undefined metrics as labelled blocks. Floats use 6 decimals.
 */
std::string metrics_csv(const EvalReport& r, const ConfusionMatrix& cm);
void emit_csv(const EvalReport& r, const ConfusionMatrix& cm, const std::filesystem::path& path);

/// Heatmap with one rect.cell and one text.count per matrix entry; fill is linear in the count.
std::string confusion_svg(const ConfusionMatrix& cm);
void emit_confusion_svg(const ConfusionMatrix& cm, const std::filesystem::path& path);

/// Fill intensity in [0, 1] used for a count, given the matrix maximum.
double cell_intensity(std::uint64_t count, std::uint64_t max_count);

struct ReferenceRow {
    const char* model;
    const char* accuracy_pct;
    const char* sensitivity;
    const char* specificity;
    const char* f1;
    const char* recall;
    const char* time_s;
    const char* size_mb;
};

/// Published reference results, kept as text so they are reproduced verbatim.
const std::vector<ReferenceRow>& reference_rows();

/// Reference rows labelled "paper-reported" plus one "measured" row for this run.
std::string comparison_csv(const EvalReport& r, std::optional<double> time_s = std::nullopt,
                           std::optional<double> size_mb = std::nullopt, const std::string& label = "this-run");
void emit_comparison_table(const EvalReport& r, const std::filesystem::path& path,
                           std::optional<double> time_s = std::nullopt, std::optional<double> size_mb = std::nullopt,
                           const std::string& label = "this-run");

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace nasvit
