// Runs the ten acceptance criteria and prints one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "commands.hpp"
#include "gradcheck.hpp"
#include "nasvit/metrics.hpp"
#include "nasvit/mixprocessing.hpp"
#include "nasvit/training.hpp"
#include "param_count.hpp"
#include "synthetic.hpp"

using namespace nasvit;
using namespace nasvit::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ImageBuffer random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    ImageBuffer img(h, w, 1);
    for (auto& v : img.pixels) v = u(rng);
    return img;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) return INFINITY;
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(double(a[i]) - b[i]));
    return worst;
}

// Every coordinate of every parameter tensor of the toy model, end-to-end cross-entropy,
// 64-bit central differences. The pass metric is max |analytic - numeric| over the tensor,
// relative to the tensor's largest gradient; the worst single-coordinate ratio is printed too.
Outcome gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = gradcheck_model_config();
    double worst_tensor = 0.0, worst_coord = 0.0;
    std::string worst_name;
    std::size_t probes = 0, kinks = 0, unchecked = 0, redraws = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::size_t r = 0;
        const auto checks = check_model_gradients(cfg, seed, 1e-3, SIZE_MAX, 1e-6, 1.0, &r);
        redraws += r;
        for (const auto& c : checks) {
            probes += c.checked + c.kinks;
            kinks += c.kinks;
            if (c.checked == 0) ++unchecked;
            if (c.tensor_rel_error() > worst_tensor) {
                worst_tensor = c.tensor_rel_error();
                worst_name = c.name;
            }
            worst_coord = std::max(worst_coord, c.max_rel_error);
        }
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = worst_tensor < 1e-3 && unchecked == 0 && secs < 120.0;
    o.detail = fmt::format(
        "max tensor-scaled rel error {:.2e} ({}), 5 seeds, {} probes, {} ReLU kinks skipped, "
        "{} tensors without probes, {} inputs redrawn; worst single-coordinate rel error {:.2e}; {:.1f}s",
        worst_tensor, worst_name, probes, kinks, unchecked, redraws, worst_coord, secs);
    return o;
}

Outcome mix_oracles() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<std::size_t> side(8, 64), tiles(1, 6);
    std::uniform_real_distribution<float> clip(0.5f, 6.0f);

    double haar = 0.0;
    for (int i = 0; i < 100; ++i) {
        const auto img = random_image(side(rng), side(rng), rng);
        haar = std::max(haar, max_abs_diff(idwt2_haar(dwt2_haar(img)).pixels, img.pixels));
    }
    double full_band = 0.0, idem = 0.0;
    for (int i = 0; i < 20; ++i) {
        const auto img = random_image(side(rng), side(rng), rng);
        full_band = std::max(full_band, max_abs_diff(fourier_bandpass(img, 0.0f, 0.71f).pixels, img.pixels));
        Plane p(img.height, img.width);
        p.values = img.pixels;
        const auto once = bandpass_plane(p, 0.05f, 0.3f);
        idem = std::max(idem, max_abs_diff(bandpass_plane(once, 0.05f, 0.3f).values, once.values));
    }
    bool bilateral_exact = true;
    for (float c : {0.0f, 0.137f, 0.5f, 0.9f, 1.0f}) {
        const auto out = bilateral_filter(ImageBuffer(23, 31, 1, c), 2.0f, 0.1f);
        bilateral_exact = bilateral_exact && std::all_of(out.pixels.begin(), out.pixels.end(), [c](float v) { return v == c; });
    }
    std::size_t non_monotone = 0;
    for (int i = 0; i < 100; ++i) {
        const auto img = random_image(side(rng), side(rng), rng);
        for (const auto& m : clahe_tile_mappings(img, tiles(rng), tiles(rng), clip(rng)))
            for (std::size_t v = 1; v < 256; ++v) non_monotone += m[v] < m[v - 1];
    }
    std::size_t closing_failures = 0;
    std::bernoulli_distribution bit(0.45);
    for (int i = 0; i < 100; ++i) {
        BinaryMask m(side(rng), side(rng));
        for (auto& b : m.bits) b = bit(rng);
        for (std::size_t r : {1, 2, 3}) {
            const auto once = binary_close(m, r);
            closing_failures += !(binary_close(once, r) == once);
        }
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = haar < 1e-5 && full_band < 1e-5 && idem < 1e-5 && bilateral_exact && non_monotone == 0 &&
             closing_failures == 0 && secs < 60.0;
    o.detail = fmt::format(
        "haar round trip {:.1e}, full band {:.1e}, band idempotence {:.1e}, bilateral constants {}, "
        "clahe decreasing steps {} over 100 images, closing changes {}; {:.1f}s",
        haar, full_band, idem, bilateral_exact ? "exact" : "changed", non_monotone, closing_failures, secs);
    return o;
}

Outcome shape_schedule() {
    ModelConfig cfg;
    const auto params = init_params(cfg, 1);
    ForwardTrace trace;
    std::mt19937_64 rng(3);
    const auto probs = model_forward(randn<float>({3, 224, 224}, 1.0, rng), cfg, params, ForwardMode{}, &trace);
    const std::vector<std::pair<std::string, Shape>> expect = {
        {"input", {3, 224, 224}},
        {"nasnet.stem", {16, 112, 112}},
        {"nasnet.stage0.reduction", {32, 56, 56}},
        {"nasnet.stage1.reduction", {64, 28, 28}},
        {"nasnet.feature_map", {64, 28, 28}},
        {"nasnet.features", {64}},
        {"vit.patches", {196, 768}},
        {"vit.tokens", {196, 64}},
        {"vit.layer0", {196, 64}},
        {"vit.layer1", {196, 64}},
        {"vit.features", {64}},
        {"fusion.ensemble", {64}},
        {"fusion.probs", {5}},
    };
    Outcome o;
    o.pass = trace.steps == expect && probs.shape() == Shape{5};
    std::string got;
    for (const auto& [name, shape] : trace.steps) {
        if (name == "input" || name == "nasnet.stem" || name.find("reduction") != std::string::npos ||
            name == "nasnet.features" || name == "vit.patches" || name == "vit.tokens" || name == "vit.features" ||
            name == "fusion.probs")
            got += (got.empty() ? "" : " -> ") + shape_to_string(shape);
    }
    o.detail = fmt::format("{} trace steps, {}", trace.steps.size(), got);
    return o;
}

Outcome normalization_zero() {
    ImageBuffer img(16, 16, 3);
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = kChannelMean[c];
    const auto t = normalize(img);
    std::size_t nonzero = 0;
    for (float v : t.data()) nonzero += v != 0.0f;
    Outcome o;
    o.pass = nonzero == 0 && t.numel() == 768;
    o.detail = fmt::format("mean ({}, {}, {}) std ({}, {}, {}): {} of {} outputs non-zero", kChannelMean[0],
                           kChannelMean[1], kChannelMean[2], kChannelStd[0], kChannelStd[1], kChannelStd[2], nonzero,
                           t.numel());
    return o;
}

Outcome fusion_identities() {
    std::mt19937_64 rng(5);
    std::size_t failures = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto v = randn<float>({64}, 10.0, rng);
        const auto u = randn<float>({64}, 10.0, rng);
        failures += fuse(Tensor({64}, 1.0f), v).values() != v.values();
        failures += fuse(u, v).values() != fuse(v, u).values();
    }
    Outcome o;
    o.pass = failures == 0;
    o.detail = fmt::format("ones-identity and commutativity on 1000 random pairs of length 64: {} mismatches", failures);
    return o;
}

Outcome metric_oracle() {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<std::size_t> n_dist(0, 300), c_dist(0, 4);
    std::bernoulli_distribution correct(0.5);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<std::pair<std::size_t, std::size_t>> pairs(n_dist(rng));
        for (auto& [t, p] : pairs) {
            t = c_dist(rng);
            p = correct(rng) ? t : c_dist(rng);
        }
        const auto r = metrics(confusion(pairs));
        std::size_t right = 0;
        for (const auto& [t, p] : pairs) right += t == p;
        mismatches += r.accuracy != (pairs.empty() ? 0.0 : double(right) / double(pairs.size()));
        for (std::size_t k = 0; k < 5; ++k) {
            std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
            for (const auto& [t, p] : pairs) {
                tp += t == k && p == k;
                fn += t == k && p != k;
                fp += t != k && p == k;
                tn += t != k && p != k;
            }
            const auto& m = r.per_class[k];
            mismatches += m.tp != tp || m.fp != fp || m.fn != fn || m.tn != tn;
            mismatches += m.sensitivity != (tp + fn ? double(tp) / double(tp + fn) : 0.0);
            mismatches += m.specificity != (tn + fp ? double(tn) / double(tn + fp) : 0.0);
            mismatches += m.precision != (tp + fp ? double(tp) / double(tp + fp) : 0.0);
            mismatches += std::abs(m.f1 - (tp ? 2.0 * double(tp) / double(2 * tp + fp + fn) : 0.0)) > 1e-12;
        }
    }
    Outcome o;
    o.pass = mismatches == 0;
    o.detail = fmt::format("1000 random 5-class instances, {} mismatches against per-sample counting", mismatches);
    return o;
}

Outcome learning(const fs::path& data) {
    const auto t0 = std::chrono::steady_clock::now();
    auto cfg = toy_run_config();
    cfg.train.epochs = 200;
    const auto manifest = stratified_split(scan_directory(data), cfg.split);
    SampleCache cache;
    const auto result = train(cfg, manifest, init_params(cfg.model, cfg.train.seed), {}, &cache);
    const auto opts = batch_options(cfg, Split::val);
    const double train_acc = evaluate(cfg.model, result.last, manifest, Split::train, opts, &cache).report.accuracy;
    const double best_train_acc = evaluate(cfg.model, result.best, manifest, Split::train, opts, &cache).report.accuracy;
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = train_acc >= 0.95 && result.best_val_macro_f1 >= 0.8 && secs < 600.0;
    o.detail = fmt::format(
        "{} images ({} train / {} val), train accuracy after 200 epochs {:.3f}, best val macro-F1 {:.3f} at epoch {} "
        "(train accuracy of that checkpoint {:.3f}); {:.1f}s",
        manifest.samples.size(), manifest.indices(Split::train).size(), manifest.indices(Split::val).size(), train_acc,
        result.best_val_macro_f1, result.best_epoch, best_train_acc, secs);
    return o;
}

Outcome determinism(const fs::path& data, const fs::path& work) {
    auto cfg = toy_run_config();
    cfg.train.epochs = 5;
    write_text_file(work / "run.cfg", to_config_text(cfg));
    std::vector<std::string> files;
    int codes = 0;
    for (const char* run : {"a", "b"}) {
        const auto out = work / run;
        codes |= cli::cmd_train({data.string(), (work / "run.cfg").string(), out.string()});
        codes |= cli::cmd_eval({data.string(), (out / "best.nvit").string(), (out / "eval").string(), "test"});
    }
    std::size_t differing = 0;
    const std::vector<fs::path> artifacts = {"history.csv", "eval/metrics.csv", "eval/confusion.svg",
                                             "eval/comparison.csv"};
    for (const auto& f : artifacts) {
        const auto a = slurp(work / "a" / f), b = slurp(work / "b" / f);
        differing += a.empty() || a != b;
    }
    Outcome o;
    o.pass = codes == 0 && differing == 0;
    o.detail = fmt::format("two train+eval runs, exit codes {}, {} of {} artifacts differ", codes, differing,
                           artifacts.size());
    return o;
}

Outcome reporting() {
    EvalReport r;
    r.per_class.resize(5);
    const auto lines = [&] {
        std::vector<std::string> out;
        std::istringstream in(comparison_csv(r));
        for (std::string l; std::getline(in, l);) out.push_back(l);
        return out;
    }();
    const std::vector<std::string> expect = {
        "NASNet-ViT,paper-reported,98.9,0.99,0.985,0.988,0.99,12.4,25.6",
        "MixNet-LD,paper-reported,99.0,0.99,0.98,0.98,0.99,14.7,30.2",
        "D-ResNet,paper-reported,85.2,0.84,0.85,0.87,0.86,18.3,50.1",
        "MobileNet,paper-reported,84.5,0.82,0.83,0.84,0.85,20.1,48.3",
        "ResNet50,paper-reported,82.1,0.77,0.81,0.82,0.81,22.5,60.5",
    };
    std::size_t matched = 0;
    for (std::size_t i = 0; i < expect.size(); ++i) matched += lines.size() > i + 1 && lines[i + 1] == expect[i];
    Outcome o;
    o.pass = matched == expect.size() && lines.size() == 7 && lines[6].find(",measured,") != std::string::npos;
    o.detail = fmt::format("{} of 5 reference rows verbatim, {} lines in total", matched, lines.size());
    return o;
}

Outcome bench_audit(const fs::path& work) {
    std::string detail;
    bool pass = true;
    for (const auto& [label, model] :
         std::vector<std::pair<std::string, ModelConfig>>{{"default", ModelConfig{}}, {"toy", toy_run_config().model}}) {
        const auto params = init_params(model, 1);
        const auto counted = parameter_count(params);
        const auto analytic = analytic_parameter_count(model);
        Checkpoint c;
        c.config.model = model;
        c.params = params;
        const auto path = work / (label + ".nvit");
        save_checkpoint(c, path);
        const auto bytes = fs::file_size(path);
        pass = pass && counted == analytic && bytes == checkpoint_size(c);
        detail += fmt::format("{}{}: {} params (analytic {}), file {} bytes (formula {}, {:.4f} MB)",
                              detail.empty() ? "" : "; ", label, counted, analytic, bytes, checkpoint_size(c),
                              double(bytes) / 1048576.0);
    }
    return {pass, detail};
}

}  // namespace

int main() {
    const auto work = fresh_dir("acceptance");
    const auto data = work / "textures";
    write_texture_dataset(data, 20, 48, 2024);

    const std::vector<std::function<Outcome()>> criteria = {
        gradients,
        mix_oracles,
        shape_schedule,
        normalization_zero,
        fusion_identities,
        metric_oracle,
        [&] { return learning(data); },
        [&] {
            fs::create_directories(work / "determinism");
            return determinism(data, work / "determinism");
        },
        reporting,
        [&] { return bench_audit(work); },
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i]();
        } catch (const std::exception& e) {
            o = {false, fmt::format("threw: {}", e.what())};
        }
        failed += !o.pass;
        std::cout << fmt::format("criterion {}: {} {}", i + 1, o.pass ? "PASS" : "FAIL", o.detail) << std::endl;
    }
    std::cout << fmt::format("{} of {} criteria passed", criteria.size() - failed, criteria.size()) << std::endl;
    return failed == 0 ? 0 : 1;
}
