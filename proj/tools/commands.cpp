#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <iostream>
#include <thread>

#include <unistd.h>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "nasvit/config.hpp"
#include "nasvit/dataset.hpp"
#include "nasvit/metrics.hpp"
#include "nasvit/mixprocessing.hpp"
#include "nasvit/training.hpp"

namespace fs = std::filesystem;

namespace nasvit::cli {

namespace {

template <typename F>
int guarded(F&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumericError;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIoError;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIoError;
    }
}

RunConfig config_or_defaults(const std::string& path) {
    if (path.empty()) {
        RunConfig cfg;
        cfg.validate();
        return cfg;
    }
    return load_config(path);
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(fmt::format("cannot create directory {}: {}", dir.string(), ec.message()));
}

std::string join_counts(const std::vector<std::size_t>& counts) {
    return fmt::format("{}", fmt::join(counts, ";"));
}

struct PreprocessResult {
    fs::path output;
    std::size_t height = 0;
    std::size_t width = 0;
    StageTimings timings{};
    std::string error;
};

}  // namespace

int cmd_preprocess(const PreprocessArgs& a) {
    return guarded([&] {
        const RunConfig cfg = config_or_defaults(a.config);
        const fs::path in_dir(a.in_dir);
        const fs::path out_dir(a.out_dir);
        std::error_code ec;
        if (!fs::is_directory(in_dir, ec)) throw IoError(fmt::format("input directory {} does not exist", a.in_dir));
        std::vector<fs::path> inputs;
        for (const auto& entry : fs::recursive_directory_iterator(in_dir)) {
            if (entry.is_regular_file() && is_image_file(entry.path())) inputs.push_back(entry.path());
        }
        std::sort(inputs.begin(), inputs.end());
        if (inputs.empty()) throw IoError(fmt::format("no images found in {}", a.in_dir));
        ensure_dir(out_dir);

        std::vector<PreprocessResult> results(inputs.size());
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            auto rel = fs::relative(inputs[i], in_dir);
            rel.replace_extension(".png");
            results[i].output = out_dir / rel;
        }
        auto work = [&](std::size_t first, std::size_t step) {
            for (std::size_t i = first; i < inputs.size(); i += step) {
                auto& r = results[i];
                try {
                    const auto img = read_image(inputs[i]);
                    const auto out = mixprocess(img, cfg.preprocess, &r.timings);
                    r.height = out.height;
                    r.width = out.width;
                    fs::create_directories(r.output.parent_path());
                    write_png(out, r.output);
                } catch (const std::exception& e) {
                    r.error = e.what();
                }
            }
        };
        const std::size_t workers = std::min(cfg.workers, inputs.size());
        if (workers <= 1) {
            work(0, 1);
        } else {
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
            for (auto& t : pool) t.join();
        }

        std::string index = "input,output,height,width";
        for (auto s : kStageOrder) index += fmt::format(",{}_us", stage_name(s));
        index += ",status\n";
        std::size_t failures = 0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const auto& r = results[i];
            index += fmt::format("{},{},{},{}", fs::relative(inputs[i], in_dir).generic_string(),
                                 fs::relative(r.output, out_dir).generic_string(), r.height, r.width);
            for (auto t : r.timings) index += fmt::format(",{}", t);
            index += r.error.empty() ? ",ok\n" : ",failed\n";
            if (!r.error.empty()) {
                ++failures;
                std::cerr << "failed: " << inputs[i].string() << ": " << r.error << "\n";
            }
        }
        write_text_file(out_dir / "index.csv", index);
        std::cout << fmt::format("processed {} of {} images\n", inputs.size() - failures, inputs.size());
        return failures == 0 ? kOk : kIoError;
    });
}

int cmd_train(const TrainArgs& a) {
    return guarded([&] {
        RunConfig cfg = config_or_defaults(a.config);
        if (!a.data_dir.empty()) cfg.data_dir = a.data_dir;
        if (!a.out_dir.empty()) cfg.output_dir = a.out_dir;
        if (cfg.data_dir.empty()) throw ConfigError("no data directory (--data or data.root)");
        if (cfg.output_dir.empty()) throw ConfigError("no output directory (--out or output.dir)");
        const fs::path out_dir(cfg.output_dir);

        const auto manifest = stratified_split(scan_directory(cfg.data_dir), cfg.split);
        ensure_dir(out_dir);
        write_manifest_csv(manifest, out_dir / "manifest.csv");

        SampleCache cache;
        auto params = init_params(cfg.model, cfg.train.seed);
        const auto result = train(
            cfg, manifest, std::move(params),
            [](const EpochRecord& r) {
                std::cerr << fmt::format("epoch {:>4}  train_loss {:.6f}  val_loss {:.6f}  val_acc {:.4f}  val_f1 {:.4f}\n",
                                         r.epoch, r.train_loss, r.val_loss, r.val_accuracy, r.val_macro_f1);
            },
            &cache);

        Checkpoint ckpt{cfg, result.best, result.best_epoch, result.best_val_macro_f1, result.best_val_accuracy};
        save_checkpoint(ckpt, out_dir / "best.nvit");
        write_text_file(out_dir / "history.csv", history_csv(result.history));

        const auto train_eval =
            evaluate(cfg.model, result.best, manifest, Split::train, batch_options(cfg, Split::val), &cache);
        const auto config_text = to_config_text(cfg);
        std::string run = "# run manifest\n";
        run += fmt::format("config_hash = {:016x}\n", fnv1a64(config_text));
        run += fmt::format("seed = {}\n", cfg.train.seed);
        run += fmt::format("split_seed = {}\n", cfg.split.seed);
        run += fmt::format("classes = {}\n", fmt::join(manifest.class_names, ";"));
        for (auto s : {Split::train, Split::val, Split::test}) {
            run += fmt::format("{}_count = {}\n", split_name(s), manifest.indices(s).size());
            run += fmt::format("{}_class_counts = {}\n", split_name(s), join_counts(manifest.class_counts(s)));
        }
        run += fmt::format("epochs = {}\n", cfg.train.epochs);
        run += fmt::format("best_epoch = {}\n", result.best_epoch);
        run += fmt::format("best_val_macro_f1 = {:.6f}\n", result.best_val_macro_f1);
        run += fmt::format("best_val_accuracy = {:.6f}\n", result.best_val_accuracy);
        run += fmt::format("best_train_accuracy = {:.6f}\n", train_eval.report.accuracy);
        run += fmt::format("parameter_count = {}\n", parameter_count(result.best));
        write_text_file(out_dir / "run_manifest.txt", run);
        write_text_file(out_dir / "config.txt", config_text);

        std::cout << fmt::format("best epoch {}  val macro-F1 {:.4f}  train accuracy {:.3f}\n", result.best_epoch,
                                 result.best_val_macro_f1, train_eval.report.accuracy);
        return kOk;
    });
}

int cmd_eval(const EvalArgs& a) {
    return guarded([&] {
        const auto ckpt = load_checkpoint(a.checkpoint);
        const RunConfig& cfg = ckpt.config;
        const auto split = parse_split(a.split);

        const auto dirs = list_class_dirs(a.data_dir);
        if (dirs.size() != cfg.model.fusion.num_classes) {
            throw ConfigError(fmt::format("checkpoint has {} classes but {} holds {} class directories",
                                          cfg.model.fusion.num_classes, a.data_dir, dirs.size()));
        }
        const auto manifest = stratified_split(scan_directory(a.data_dir), cfg.split);
        if (manifest.indices(split).empty()) throw InputError(fmt::format("{} split is empty", split_name(split)));

        const auto outcome = evaluate(cfg.model, ckpt.params, manifest, split, batch_options(cfg, split));
        const fs::path out_dir(a.out_dir);
        ensure_dir(out_dir);
        emit_csv(outcome.report, outcome.confusion, out_dir / "metrics.csv");
        emit_confusion_svg(outcome.confusion, out_dir / "confusion.svg");
        const double size_mb = static_cast<double>(fs::file_size(a.checkpoint)) / 1048576.0;
        emit_comparison_table(outcome.report, out_dir / "comparison.csv", std::nullopt, size_mb);

        std::cout << fmt::format("split {}  samples {}\n", split_name(split), outcome.report.sample_count);
        std::cout << fmt::format("accuracy {:.3f}\n", outcome.report.accuracy);
        std::cout << fmt::format("macro_f1 {:.3f}\n", outcome.report.macro_f1);
        return kOk;
    });
}

int cmd_predict(const PredictArgs& a) {
    return guarded([&] {
        const auto ckpt = load_checkpoint(a.checkpoint);
        const auto& cfg = ckpt.config;
        const auto img = prepare_image(a.image, cfg.preprocess, cfg.model.image_size);
        const auto probs = predict(normalize(img), cfg.model, ckpt.params);
        std::cout << "image,class";
        for (const auto& name : kClassNames) std::cout << ',' << name;
        std::cout << '\n' << a.image << ',' << kClassNames.at(probs.predicted_class);
        for (float p : probs.probabilities) std::cout << fmt::format(",{:.6f}", p);
        std::cout << '\n';
        return kOk;
    });
}

namespace {

ImageBuffer synthetic_image(std::size_t size) {
    ImageBuffer img(size, size, 3);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double r = std::hypot(static_cast<double>(y) - size / 2.0, static_cast<double>(x) - size / 2.0);
            const float v = static_cast<float>(0.5 + 0.4 * std::sin(r / 6.0) * std::exp(-r / size));
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = v;
        }
    }
    return img;
}

double percentile_nearest_rank(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size())));
    return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

}  // namespace

int cmd_bench(const BenchArgs& a) {
    return guarded([&] {
        const RunConfig cfg = config_or_defaults(a.config);
        if (a.iterations < 1) throw ConfigError("--iterations must be >= 1");
        const std::size_t n = a.iterations;
        const ImageBuffer img = a.image.empty() ? synthetic_image(cfg.model.image_size) : read_image(a.image);

        std::array<double, 5> stage_us{};
        for (std::size_t i = 0; i < n; ++i) {
            StageTimings t{};
            mixprocess(img, cfg.preprocess, &t);
            for (std::size_t s = 0; s < 5; ++s) stage_us[s] += static_cast<double>(t[s]);
        }
        std::cout << fmt::format("image {}x{}x{}\n", img.height, img.width, img.channels);
        std::cout << "stage,enabled,mean_us,images_per_s\n";
        for (std::size_t s = 0; s < 5; ++s) {
            const double mean = stage_us[s] / static_cast<double>(n);
            const bool on = cfg.preprocess.enabled(kStageOrder[s]);
            std::cout << fmt::format("{},{},{:.1f},{:.2f}\n", stage_name(kStageOrder[s]), on ? "yes" : "no", mean,
                                     on && mean > 0 ? 1e6 / mean : 0.0);
        }

        const auto params = init_params(cfg.model, cfg.train.seed);
        auto resized = resize_bilinear(img.channels == 3 ? img : replicate_channels(to_grayscale(img), 3),
                                       cfg.model.image_size, cfg.model.image_size);
        const auto x = normalize(resized);
        std::vector<double> latency_ms;
        for (std::size_t i = 0; i < n; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            (void)predict(x, cfg.model, params);
            const auto t1 = std::chrono::steady_clock::now();
            latency_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        double mean = 0.0;
        for (double v : latency_ms) mean += v;
        mean /= static_cast<double>(n);
        std::cout << fmt::format("latency_samples = {}\n", latency_ms.size());
        std::cout << fmt::format("latency_ms = {:.3f}\n", fmt::join(latency_ms, ";"));
        std::cout << fmt::format("latency_mean_ms = {:.3f}\n", mean);
        std::cout << fmt::format("latency_p95_ms = {:.3f}\n", percentile_nearest_rank(latency_ms, 95.0));
        std::cout << fmt::format("parameter_count = {}\n", parameter_count(params));

        const Checkpoint ckpt{cfg, params, 0, 0.0, 0.0};
        const fs::path tmp = fs::temp_directory_path() / fmt::format("nasvit-bench-{}.nvit", ::getpid());
        save_checkpoint(ckpt, tmp);
        const auto bytes = fs::file_size(tmp);
        fs::remove(tmp);
        std::cout << fmt::format("checkpoint_bytes = {}\n", bytes);
        std::cout << fmt::format("checkpoint_mb = {:.6f}\n", static_cast<double>(bytes) / 1048576.0);
        return kOk;
    });
}

int cmd_init_checkpoint(const InitArgs& a) {
    return guarded([&] {
        const RunConfig cfg = config_or_defaults(a.config);
        ModelParams params = a.zero ? allocate_params<float>(cfg.model) : init_params(cfg.model, a.seed.value_or(cfg.train.seed));
        save_checkpoint(Checkpoint{cfg, params, 0, 0.0, 0.0}, a.out);
        std::cout << fmt::format("wrote {} ({} parameters)\n", a.out, parameter_count(params));
        return kOk;
    });
}

}  // namespace nasvit::cli
