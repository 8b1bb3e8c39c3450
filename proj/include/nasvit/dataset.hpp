#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "nasvit/config.hpp"
#include "nasvit/image.hpp"
#include "nasvit/tensor.hpp"

namespace nasvit {

/// Class ids are positions in this list.
inline const std::array<std::string, 5> kClassNames = {"normal", "pneumonia", "tuberculosis", "covid19",
                                                       "lung_cancer"};

inline constexpr std::array<float, 3> kChannelMean = {0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kChannelStd = {0.229f, 0.224f, 0.225f};

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

const char* split_name(Split s);
Split parse_split(std::string_view name);

struct Sample {
    std::filesystem::path path;
    std::size_t class_id = 0;
    Split split = Split::train;
};

struct DatasetManifest {
    std::vector<Sample> samples;  // sorted by path
    std::vector<std::string> class_names;
    std::uint64_t seed = 0;

    /// Manifest positions of the samples in one split, in manifest order.
    std::vector<std::size_t> indices(Split s) const;
    std::vector<std::size_t> class_counts() const;
    std::vector<std::size_t> class_counts(Split s) const;
};

/// Names of the immediate subdirectories of root, sorted.
std::vector<std::string> list_class_dirs(const std::filesystem::path& root);

/**
 * One subdirectory per entry of kClassNames, PNG/JPEG files inside (non-recursive).
 * Missing or unknown class directories and an empty dataset raise InputError.
 */
DatasetManifest scan_directory(const std::filesystem::path& root);

/**
 * Per-class shuffle (seeded) and largest-remainder allocation of the three
 * fractions. Classes with fewer than 3 samples raise InputError.
 */
DatasetManifest stratified_split(const DatasetManifest& m, const SplitConfig& fractions);

/// Split sizes for n samples: floors of n·f, leftovers to the largest remainders
/// (ties: train, val, test), then no split left empty when n >= 3.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitConfig& fractions);

/// path,class,split rows.
void write_manifest_csv(const DatasetManifest& m, const std::filesystem::path& path);

/// Decode, replicate grayscale to 3 channels, bilinear resize to target×target.
ImageBuffer load_resize(const std::filesystem::path& path, std::size_t target);

/// Decode, enhance at native size, resize, ensure 3 channels.
ImageBuffer prepare_image(const std::filesystem::path& path, const PreprocessConfig& pre, std::size_t target);

/// [H×W×3] in [0,1] -> [3×H×W], (x - mean_c) / std_c.
Tensor normalize(const ImageBuffer& img);
ImageBuffer denormalize(const Tensor& t);

ImageBuffer hflip(const ImageBuffer& img);

/// Flip, rotate+scale about the centre (bilinear, edge fill), brightness shift.
/// Randomness comes from (cfg.seed, sample_index, epoch) only.
ImageBuffer augment(const ImageBuffer& img, const AugmentConfig& cfg, std::size_t sample_index, std::size_t epoch);

struct Batch {
    std::vector<Tensor> images;  // each [3×H×W], normalized
    std::vector<std::size_t> labels;
    std::vector<std::size_t> sample_indices;  // manifest positions

    std::size_t size() const { return labels.size(); }
    /// [B×3×H×W] copy.
    Tensor stacked() const;
};

/// Thread-safe store of prepared (enhanced + resized, not augmented) images by manifest position.
class SampleCache {
  public:
    std::optional<ImageBuffer> get(std::size_t index) const;
    void put(std::size_t index, ImageBuffer img);
    std::size_t size() const;

  private:
    mutable std::mutex mu_;
    std::map<std::size_t, ImageBuffer> images_;
};

struct BatchOptions {
    std::size_t batch_size = 16;
    std::size_t image_size = 224;
    PreprocessConfig preprocess;
    std::optional<AugmentConfig> augment;  // train split only
    std::uint64_t shuffle_seed = 0;
    std::size_t workers = 1;
};

/**
 * Batches of one split. Train order is reshuffled per epoch from
 * (shuffle_seed, epoch); val/test keep manifest order. Samples of a batch are
 * prepared on up to `workers` threads and reassembled in order.
 */
class BatchStream {
  public:
    BatchStream(const DatasetManifest& manifest, Split split, BatchOptions options, SampleCache* cache = nullptr);

    /// Sample order for an epoch.
    std::vector<std::size_t> order(std::size_t epoch) const;
    std::size_t batch_count() const;
    std::vector<std::size_t> batch_sizes() const;

    void start_epoch(std::size_t epoch);
    /// False once the epoch is exhausted.
    bool next(Batch& out);

    /// One prepared, augmented (if configured) and normalized sample.
    Tensor sample_tensor(std::size_t manifest_index, std::size_t epoch) const;

  private:
    const DatasetManifest& manifest_;
    Split split_;
    BatchOptions options_;
    SampleCache* cache_;
    std::vector<std::size_t> members_;
    std::vector<std::size_t> current_order_;
    std::size_t epoch_ = 0;
    std::size_t cursor_ = 0;
};

}  // namespace nasvit
