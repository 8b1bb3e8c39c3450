#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nasvit/image.hpp"

namespace nasvit {

/**
 * One-level orthonormal Haar decomposition.
 *
 * For each 2×2 block [a b; c d]:
 *   approx   = (a + b + c + d) / 2
 *   detail_h = (a + b - c - d) / 2   (top row minus bottom row)
 *   detail_v = (a - b + c - d) / 2   (left column minus right column)
 *   detail_d = (a - b - c + d) / 2
 * so a constant image c gives approx == 2c and zero details. Odd extents are
 * padded by repeating the last row/column; original_height/width undo that.
 */
struct WaveletSubbands {
    Plane approx;
    Plane detail_h;
    Plane detail_v;
    Plane detail_d;
    std::size_t original_height = 0;
    std::size_t original_width = 0;
};

enum class Stage : std::uint8_t { wavelet = 0, clahe = 1, fourier = 2, bilateral = 3, morphology = 4 };

inline constexpr std::array<Stage, 5> kStageOrder = {Stage::wavelet, Stage::clahe, Stage::fourier, Stage::bilateral,
                                                     Stage::morphology};

const char* stage_name(Stage stage);

struct PreprocessConfig {
    float wavelet_detail_gain = 1.5f;
    std::size_t clahe_tile_rows = 8;
    std::size_t clahe_tile_cols = 8;
    float clahe_clip = 2.0f;
    float band_low = 0.0f;
    float band_high = 0.45f;
    float bilateral_sigma_spatial = 2.0f;
    float bilateral_sigma_range = 0.1f;
    std::size_t morph_se_radius = 3;
    float morph_blend_alpha = 0.7f;
    std::array<bool, 5> stage_enabled = {true, true, true, true, true};

    bool enabled(Stage s) const { return stage_enabled[static_cast<std::size_t>(s)]; }
    void set_enabled(Stage s, bool on) { stage_enabled[static_cast<std::size_t>(s)] = on; }
    bool any_enabled() const;

    /// Throws ConfigError on out-of-range values.
    void validate() const;
};

/// Per-stage wall time in microseconds, in kStageOrder order (0 for disabled stages).
using StageTimings = std::array<std::int64_t, 5>;

WaveletSubbands dwt2_haar(const ImageBuffer& img);
ImageBuffer idwt2_haar(const WaveletSubbands& sub);

/// Multiplies the three detail planes by gain and reconstructs.
ImageBuffer wavelet_enhance(const ImageBuffer& img, float detail_gain);

/**
 * Per-tile transfer function used by clahe(): entry v maps histogram bin v
 * (of 256) to an output level in [0, 1]. Exposed for monotonicity checks.
 */
std::vector<std::array<float, 256>> clahe_tile_mappings(const ImageBuffer& img, std::size_t tile_rows,
                                                        std::size_t tile_cols, float clip);

ImageBuffer clahe(const ImageBuffer& img, std::size_t tile_rows, std::size_t tile_cols, float clip);

/**
 * Ideal annular band-pass on a real plane, without clamping.
 *
 * Frequencies are normalised so the Nyquist frequency on each axis is 0.5;
 * a coefficient at radial frequency r is kept iff low <= r <= high.
 */
Plane bandpass_plane(const Plane& plane, float low, float high);

/// bandpass_plane followed by clamping to [0, 1].
ImageBuffer fourier_bandpass(const ImageBuffer& img, float low, float high);

/// Window radius ceil(3·sigma_s); out-of-image neighbours are skipped.
ImageBuffer bilateral_filter(const ImageBuffer& img, float sigma_s, float sigma_r);

/// Binary mask, 1 = foreground. Stored row-major.
struct BinaryMask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> bits;

    BinaryMask() = default;
    BinaryMask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), bits(h * w, fill) {}
    std::uint8_t at(std::size_t y, std::size_t x) const { return bits[y * width + x]; }
    std::uint8_t& at(std::size_t y, std::size_t x) { return bits[y * width + x]; }
    bool operator==(const BinaryMask&) const = default;
};

/// Otsu split on a 256-bin histogram: the first bin of the foreground class
/// (0 for degenerate single-bin histograms, i.e. everything is foreground).
std::size_t otsu_threshold_bin(const ImageBuffer& img);
BinaryMask otsu_mask(const ImageBuffer& img);

BinaryMask dilate(const BinaryMask& mask, std::size_t radius);
BinaryMask erode(const BinaryMask& mask, std::size_t radius);
/// Dilation then erosion with a disk of the given radius.
BinaryMask binary_close(const BinaryMask& mask, std::size_t radius);

/// alpha·img + (1 - alpha)·(img ⊙ close(otsu_mask(img)))
ImageBuffer morphological_enhance(const ImageBuffer& img, std::size_t se_radius, float alpha);

/// Five-stage enhancement in kStageOrder. Stage failures are rethrown as
/// InputError / ConfigError carrying the stage name.
ImageBuffer mixprocess(const ImageBuffer& img, const PreprocessConfig& cfg, StageTimings* timings = nullptr);

}  // namespace nasvit
