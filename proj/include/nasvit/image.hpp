#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nasvit/errors.hpp"

namespace nasvit {

/// H×W×C image, interleaved row-major, values in [0, 1].
struct ImageBuffer {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;
    std::vector<float> pixels;
    std::optional<std::string> source_path;
    std::optional<int> label;

    ImageBuffer() = default;
    ImageBuffer(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
        : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

    float at(std::size_t y, std::size_t x, std::size_t c = 0) const { return pixels[(y * width + x) * channels + c]; }
    float& at(std::size_t y, std::size_t x, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
    std::size_t pixel_count() const { return height * width; }

    /// Throws InputError on empty images, unsupported channel counts or size mismatch.
    void validate() const;
};

/// Real-valued single-channel plane with no range restriction (wavelet coefficients, spectra).
struct Plane {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> values;

    Plane() = default;
    Plane(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), values(h * w, fill) {}

    float at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
    float& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
};

void clamp01(ImageBuffer& img);

/// Luminance 0.299R + 0.587G + 0.114B; single-channel input is returned as is.
ImageBuffer to_grayscale(const ImageBuffer& img);
ImageBuffer replicate_channels(const ImageBuffer& gray, std::size_t channels);

/// Half-pixel-centred bilinear resampling with edge clamping.
ImageBuffer resize_bilinear(const ImageBuffer& img, std::size_t height, std::size_t width);

/// PNG (8/16-bit, any colour type) or baseline/progressive JPEG; alpha is dropped.
ImageBuffer read_image(const std::filesystem::path& path);

/// 8-bit PNG, grayscale or RGB by channel count.
void write_png(const ImageBuffer& img, const std::filesystem::path& path);

bool is_image_file(const std::filesystem::path& path);

}  // namespace nasvit
