#include "nasvit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace fs = std::filesystem;

namespace nasvit {

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ConfigError(fmt::format("unknown split '{}' (train, val, test)", name));
}

std::vector<std::size_t> DatasetManifest::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].split == s) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> DatasetManifest::class_counts() const {
    std::vector<std::size_t> counts(class_names.size(), 0);
    for (const auto& s : samples) ++counts.at(s.class_id);
    return counts;
}

std::vector<std::size_t> DatasetManifest::class_counts(Split split) const {
    std::vector<std::size_t> counts(class_names.size(), 0);
    for (const auto& s : samples) {
        if (s.split == split) ++counts.at(s.class_id);
    }
    return counts;
}

std::vector<std::string> list_class_dirs(const fs::path& root) {
    std::error_code ec;
    if (!fs::is_directory(root, ec)) throw IoError(fmt::format("data directory {} does not exist", root.string()));
    std::vector<std::string> out;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) out.push_back(entry.path().filename().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

DatasetManifest scan_directory(const fs::path& root) {
    const auto dirs = list_class_dirs(root);
    const std::set<std::string> present(dirs.begin(), dirs.end());
    const std::string expected = fmt::format("{}", fmt::join(kClassNames, ", "));
    for (const auto& d : dirs) {
        if (std::find(kClassNames.begin(), kClassNames.end(), d) == kClassNames.end()) {
            throw InputError(fmt::format("unknown class directory '{}' in {} (expected: {})", d, root.string(),
                                         expected));
        }
    }
    for (const auto& name : kClassNames) {
        if (!present.count(name)) {
            throw InputError(fmt::format("missing class directory '{}' in {} (expected: {})", name, root.string(),
                                         expected));
        }
    }

    DatasetManifest m;
    m.class_names.assign(kClassNames.begin(), kClassNames.end());
    for (std::size_t c = 0; c < kClassNames.size(); ++c) {
        for (const auto& entry : fs::directory_iterator(root / kClassNames[c])) {
            if (entry.is_regular_file() && is_image_file(entry.path())) m.samples.push_back({entry.path(), c});
        }
    }
    if (m.samples.empty()) throw InputError(fmt::format("no images found under {}", root.string()));
    std::sort(m.samples.begin(), m.samples.end(), [](const Sample& a, const Sample& b) { return a.path < b.path; });
    return m;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitConfig& f) {
    const std::array<double, 3> fractions = {f.train, f.val, f.test};
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> remainder{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = static_cast<double>(n) * fractions[i];
        sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        remainder[i] = exact - static_cast<double>(sizes[i]);
        assigned += sizes[i];
    }
    std::array<std::size_t, 3> by_remainder = {0, 1, 2};
    std::stable_sort(by_remainder.begin(), by_remainder.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b] + 1e-12; });
    for (std::size_t k = 0; assigned < n; k = (k + 1) % 3, ++assigned) ++sizes[by_remainder[k]];
    if (n >= 3) {
        for (std::size_t i = 0; i < 3; ++i) {
            if (sizes[i] == 0) {
                const auto largest = std::max_element(sizes.begin(), sizes.end());
                --*largest;
                ++sizes[i];
            }
        }
    }
    return sizes;
}

DatasetManifest stratified_split(const DatasetManifest& m, const SplitConfig& fractions) {
    fractions.validate();
    DatasetManifest out = m;
    out.seed = fractions.seed;
    for (std::size_t c = 0; c < m.class_names.size(); ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < m.samples.size(); ++i) {
            if (m.samples[i].class_id == c) members.push_back(i);
        }
        if (members.size() < 3) {
            throw InputError(fmt::format("class '{}' has {} samples; at least 3 are needed for train/val/test",
                                         m.class_names[c], members.size()));
        }
        std::seed_seq seq{static_cast<std::uint32_t>(fractions.seed), static_cast<std::uint32_t>(fractions.seed >> 32),
                          static_cast<std::uint32_t>(c)};
        std::mt19937_64 rng(seq);
        std::shuffle(members.begin(), members.end(), rng);
        const auto sizes = split_sizes(members.size(), fractions);
        std::size_t k = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            for (std::size_t j = 0; j < sizes[s]; ++j) out.samples[members[k++]].split = static_cast<Split>(s);
        }
    }
    return out;
}

void write_manifest_csv(const DatasetManifest& m, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
    out << "path,class,split\n";
    for (const auto& s : m.samples) {
        out << fmt::format("{},{},{}\n", s.path.generic_string(), m.class_names.at(s.class_id), split_name(s.split));
    }
    if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

namespace {

ImageBuffer to_rgb(ImageBuffer img) {
    if (img.channels == 3) return img;
    return replicate_channels(to_grayscale(img), 3);
}

}  // namespace

ImageBuffer load_resize(const fs::path& path, std::size_t target) {
    auto img = read_image(path);
    auto out = resize_bilinear(to_rgb(std::move(img)), target, target);
    out.source_path = path.string();
    return out;
}

ImageBuffer prepare_image(const fs::path& path, const PreprocessConfig& pre, std::size_t target) {
    try {
        auto img = read_image(path);
        img = mixprocess(img, pre);
        auto out = resize_bilinear(to_rgb(std::move(img)), target, target);
        clamp01(out);
        out.source_path = path.string();
        return out;
    } catch (const IoError&) {
        throw;
    } catch (const Error& e) {
        throw InputError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

Tensor normalize(const ImageBuffer& img) {
    if (img.channels != 3) throw InputError(fmt::format("normalize needs 3 channels, got {}", img.channels));
    const std::size_t hw = img.height * img.width;
    std::vector<float> out(3 * hw);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] = (img.pixels[i * 3 + c] - kChannelMean[c]) / kChannelStd[c];
    }
    return Tensor(Shape{3, img.height, img.width}, std::move(out));
}

ImageBuffer denormalize(const Tensor& t) {
    if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("denormalize expects [3×H×W], got " + shape_to_string(t.shape()));
    const std::size_t h = t.dim(1);
    const std::size_t w = t.dim(2);
    ImageBuffer img(h, w, 3);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < h * w; ++i) img.pixels[i * 3 + c] = t[c * h * w + i] * kChannelStd[c] + kChannelMean[c];
    }
    return img;
}

ImageBuffer hflip(const ImageBuffer& img) {
    ImageBuffer out = img;
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
        }
    }
    return out;
}

namespace {

float sample_clamped(const ImageBuffer& img, double sy, double sx, std::size_t c) {
    sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
    sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
    const auto y0 = static_cast<std::size_t>(sy);
    const auto x0 = static_cast<std::size_t>(sx);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const std::size_t x1 = std::min(x0 + 1, img.width - 1);
    const double fy = sy - static_cast<double>(y0);
    const double fx = sx - static_cast<double>(x0);
    const double top = img.at(y0, x0, c) * (1 - fx) + img.at(y0, x1, c) * fx;
    const double bottom = img.at(y1, x0, c) * (1 - fx) + img.at(y1, x1, c) * fx;
    return static_cast<float>(top * (1 - fy) + bottom * fy);
}

ImageBuffer rotate_scale(const ImageBuffer& img, double angle_rad, double zoom) {
    ImageBuffer out(img.height, img.width, img.channels);
    out.source_path = img.source_path;
    out.label = img.label;
    const double cy = static_cast<double>(img.height) / 2.0;
    const double cx = static_cast<double>(img.width) / 2.0;
    const double cs = std::cos(angle_rad);
    const double sn = std::sin(angle_rad);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            const double dy = static_cast<double>(y) + 0.5 - cy;
            const double dx = static_cast<double>(x) + 0.5 - cx;
            // inverse map: rotate by -angle, then undo the zoom
            const double sx = (cs * dx + sn * dy) / zoom + cx - 0.5;
            const double sy = (-sn * dx + cs * dy) / zoom + cy - 0.5;
            for (std::size_t c = 0; c < img.channels; ++c) out.at(y, x, c) = sample_clamped(img, sy, sx, c);
        }
    }
    return out;
}

}  // namespace

ImageBuffer augment(const ImageBuffer& img, const AugmentConfig& cfg, std::size_t sample_index, std::size_t epoch) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(sample_index), static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    // Always draw all four so each transform sees the same stream regardless of the others.
    const double flip_draw = unit(rng);
    const double angle_deg = (2.0 * unit(rng) - 1.0) * cfg.rotation_max_deg;
    const double zoom = cfg.scale_min + unit(rng) * (cfg.scale_max - cfg.scale_min);
    const double delta = (2.0 * unit(rng) - 1.0) * cfg.brightness_delta_max;

    ImageBuffer out = flip_draw < cfg.hflip_prob ? hflip(img) : img;
    if (angle_deg != 0.0 || zoom != 1.0) out = rotate_scale(out, angle_deg * std::numbers::pi / 180.0, zoom);
    if (delta != 0.0) {
        for (auto& v : out.pixels) v = static_cast<float>(v + delta);
        clamp01(out);
    }
    return out;
}

Tensor Batch::stacked() const {
    if (images.empty()) throw ShapeError("empty batch");
    Shape shape = images.front().shape();
    shape.insert(shape.begin(), images.size());
    std::vector<float> values;
    values.reserve(shape_numel(shape));
    for (const auto& t : images) values.insert(values.end(), t.data().begin(), t.data().end());
    return Tensor(shape, std::move(values));
}

std::optional<ImageBuffer> SampleCache::get(std::size_t index) const {
    std::lock_guard lock(mu_);
    auto it = images_.find(index);
    if (it == images_.end()) return std::nullopt;
    return it->second;
}

void SampleCache::put(std::size_t index, ImageBuffer img) {
    std::lock_guard lock(mu_);
    images_.insert_or_assign(index, std::move(img));
}

std::size_t SampleCache::size() const {
    std::lock_guard lock(mu_);
    return images_.size();
}

BatchStream::BatchStream(const DatasetManifest& manifest, Split split, BatchOptions options, SampleCache* cache)
    : manifest_(manifest), split_(split), options_(std::move(options)), cache_(cache), members_(manifest.indices(split)) {
    if (options_.batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (options_.workers < 1) options_.workers = 1;
    if (options_.augment && split_ != Split::train) {
        throw ContractError(fmt::format("augmentation is only allowed on the train split, not {}", split_name(split_)));
    }
    if (options_.augment) options_.augment->validate();
}

std::vector<std::size_t> BatchStream::order(std::size_t epoch) const {
    auto out = members_;
    if (split_ == Split::train) {
        const auto seed = options_.shuffle_seed;
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(epoch), 0x5eedu};
        std::mt19937_64 rng(seq);
        std::shuffle(out.begin(), out.end(), rng);
    }
    return out;
}

std::size_t BatchStream::batch_count() const {
    return (members_.size() + options_.batch_size - 1) / options_.batch_size;
}

std::vector<std::size_t> BatchStream::batch_sizes() const {
    std::vector<std::size_t> out;
    for (std::size_t start = 0; start < members_.size(); start += options_.batch_size) {
        out.push_back(std::min(options_.batch_size, members_.size() - start));
    }
    return out;
}

void BatchStream::start_epoch(std::size_t epoch) {
    epoch_ = epoch;
    cursor_ = 0;
    current_order_ = order(epoch);
}

Tensor BatchStream::sample_tensor(std::size_t manifest_index, std::size_t epoch) const {
    std::optional<ImageBuffer> img = cache_ ? cache_->get(manifest_index) : std::nullopt;
    if (!img) {
        img = prepare_image(manifest_.samples.at(manifest_index).path, options_.preprocess, options_.image_size);
        if (cache_) cache_->put(manifest_index, *img);
    }
    if (options_.augment && options_.augment->enabled) {
        return normalize(augment(*img, *options_.augment, manifest_index, epoch));
    }
    return normalize(*img);
}

bool BatchStream::next(Batch& out) {
    if (cursor_ >= current_order_.size()) return false;
    const std::size_t n = std::min(options_.batch_size, current_order_.size() - cursor_);
    out = Batch{};
    out.sample_indices.assign(current_order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                              current_order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + n));
    cursor_ += n;
    out.images.resize(n);
    out.labels.resize(n);
    std::vector<std::exception_ptr> errors(n);
    auto work = [&](std::size_t first, std::size_t step) {
        for (std::size_t i = first; i < n; i += step) {
            try {
                out.images[i] = sample_tensor(out.sample_indices[i], epoch_);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t workers = std::min(options_.workers, n);
    if (workers <= 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work, w, workers);
        for (auto& t : threads) t.join();
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (errors[i]) std::rethrow_exception(errors[i]);
        out.labels[i] = manifest_.samples[out.sample_indices[i]].class_id;
    }
    return true;
}

}  // namespace nasvit
