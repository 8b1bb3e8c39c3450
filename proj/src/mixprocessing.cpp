#include "nasvit/mixprocessing.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <mutex>

#include <fftw3.h>

namespace nasvit {

const char* stage_name(Stage stage) {
    switch (stage) {
        case Stage::wavelet: return "wavelet";
        case Stage::clahe: return "clahe";
        case Stage::fourier: return "fourier";
        case Stage::bilateral: return "bilateral";
        case Stage::morphology: return "morphology";
    }
    return "unknown";
}

bool PreprocessConfig::any_enabled() const {
    return std::any_of(stage_enabled.begin(), stage_enabled.end(), [](bool b) { return b; });
}

void PreprocessConfig::validate() const {
    if (!(wavelet_detail_gain >= 1.0f)) throw ConfigError(fmt::format("wavelet_detail_gain must be >= 1, got {}", wavelet_detail_gain));
    if (clahe_tile_rows == 0 || clahe_tile_cols == 0) throw ConfigError("clahe tile grid must be at least 1x1");
    if (!(clahe_clip > 0.0f)) throw ConfigError(fmt::format("clahe_clip must be > 0, got {}", clahe_clip));
    if (!(band_low >= 0.0f) || !(band_low < band_high) || !(band_high <= 1.0f)) {
        throw ConfigError(fmt::format("band must satisfy 0 <= low < high <= 1, got [{}, {}]", band_low, band_high));
    }
    if (!(bilateral_sigma_spatial > 0.0f) || !(bilateral_sigma_range > 0.0f)) {
        throw ConfigError("bilateral sigmas must be > 0");
    }
    if (morph_se_radius < 1) throw ConfigError("morph_se_radius must be >= 1");
    if (!(morph_blend_alpha >= 0.0f && morph_blend_alpha <= 1.0f)) {
        throw ConfigError(fmt::format("morph_blend_alpha must be in [0, 1], got {}", morph_blend_alpha));
    }
}

namespace {

void require_gray(const ImageBuffer& img, const char* op) {
    img.validate();
    if (img.channels != 1) throw InputError(fmt::format("{}: expected a single-channel image, got {}", op, img.channels));
}

ImageBuffer like(const ImageBuffer& img) {
    ImageBuffer out(img.height, img.width, img.channels);
    out.source_path = img.source_path;
    out.label = img.label;
    return out;
}

std::size_t bin_of(float v) {
    const float scaled = std::clamp(v, 0.0f, 1.0f) * 256.0f;
    return std::min<std::size_t>(255, static_cast<std::size_t>(scaled));
}

}  // namespace

// ---- wavelet -----------------------------------------------------------------

WaveletSubbands dwt2_haar(const ImageBuffer& img) {
    if (img.height == 0 || img.width == 0) throw InputError("dwt2_haar: zero-sized image");
    require_gray(img, "dwt2_haar");
    const std::size_t hh = (img.height + 1) / 2, hw = (img.width + 1) / 2;
    WaveletSubbands sub{Plane(hh, hw), Plane(hh, hw), Plane(hh, hw), Plane(hh, hw), img.height, img.width};
    auto px = [&](std::size_t y, std::size_t x) {
        return static_cast<double>(img.at(std::min(y, img.height - 1), std::min(x, img.width - 1)));
    };
    for (std::size_t y = 0; y < hh; ++y)
        for (std::size_t x = 0; x < hw; ++x) {
            const double a = px(2 * y, 2 * x), b = px(2 * y, 2 * x + 1);
            const double c = px(2 * y + 1, 2 * x), d = px(2 * y + 1, 2 * x + 1);
            sub.approx.at(y, x) = static_cast<float>((a + b + c + d) * 0.5);
            sub.detail_h.at(y, x) = static_cast<float>((a + b - c - d) * 0.5);
            sub.detail_v.at(y, x) = static_cast<float>((a - b + c - d) * 0.5);
            sub.detail_d.at(y, x) = static_cast<float>((a - b - c + d) * 0.5);
        }
    return sub;
}

ImageBuffer idwt2_haar(const WaveletSubbands& sub) {
    const std::size_t hh = sub.approx.height, hw = sub.approx.width;
    for (const Plane* p : {&sub.detail_h, &sub.detail_v, &sub.detail_d}) {
        if (p->height != hh || p->width != hw || p->values.size() != hh * hw) {
            throw InputError("idwt2_haar: subband shapes differ");
        }
    }
    if (sub.approx.values.size() != hh * hw || hh == 0 || hw == 0) throw InputError("idwt2_haar: empty subbands");
    if (sub.original_height > 2 * hh || sub.original_width > 2 * hw || sub.original_height + 1 < 2 * hh ||
        sub.original_width + 1 < 2 * hw) {
        throw InputError(fmt::format("idwt2_haar: original size {}x{} inconsistent with {}x{} subbands",
                                     sub.original_height, sub.original_width, hh, hw));
    }
    ImageBuffer out(sub.original_height, sub.original_width, 1);
    for (std::size_t y = 0; y < hh; ++y)
        for (std::size_t x = 0; x < hw; ++x) {
            const double ll = sub.approx.at(y, x), h = sub.detail_h.at(y, x);
            const double v = sub.detail_v.at(y, x), d = sub.detail_d.at(y, x);
            const double block[2][2] = {{(ll + h + v + d) * 0.5, (ll + h - v - d) * 0.5},
                                        {(ll - h + v - d) * 0.5, (ll - h - v + d) * 0.5}};
            for (std::size_t dy = 0; dy < 2; ++dy)
                for (std::size_t dx = 0; dx < 2; ++dx) {
                    const std::size_t oy = 2 * y + dy, ox = 2 * x + dx;
                    if (oy < out.height && ox < out.width) {
                        out.at(oy, ox) = std::clamp(static_cast<float>(block[dy][dx]), 0.0f, 1.0f);
                    }
                }
        }
    return out;
}

ImageBuffer wavelet_enhance(const ImageBuffer& img, float detail_gain) {
    auto sub = dwt2_haar(img);
    for (Plane* p : {&sub.detail_h, &sub.detail_v, &sub.detail_d})
        for (auto& v : p->values) v *= detail_gain;
    auto out = idwt2_haar(sub);
    out.source_path = img.source_path;
    out.label = img.label;
    return out;
}

// ---- CLAHE -------------------------------------------------------------------

namespace {

struct TileMapping {
    std::array<float, 256> levels{};
    bool identity = false;  // single occupied bin: no contrast to redistribute
};

std::size_t tile_start(std::size_t i, std::size_t extent, std::size_t tiles) { return i * extent / tiles; }

std::vector<TileMapping> build_tile_mappings(const ImageBuffer& img, std::size_t rows, std::size_t cols, float clip) {
    require_gray(img, "clahe");
    if (rows == 0 || cols == 0) throw InputError("clahe: tile grid must be at least 1x1");
    if (rows > img.height || cols > img.width) {
        throw InputError(fmt::format("clahe: {}x{} tile grid larger than {}x{} image", rows, cols, img.height, img.width));
    }
    if (!(clip > 0.0f)) throw InputError(fmt::format("clahe: clip must be > 0, got {}", clip));
    std::vector<TileMapping> maps(rows * cols);
    for (std::size_t ty = 0; ty < rows; ++ty)
        for (std::size_t tx = 0; tx < cols; ++tx) {
            const std::size_t y0 = tile_start(ty, img.height, rows), y1 = tile_start(ty + 1, img.height, rows);
            const std::size_t x0 = tile_start(tx, img.width, cols), x1 = tile_start(tx + 1, img.width, cols);
            std::array<double, 256> hist{};
            for (std::size_t y = y0; y < y1; ++y)
                for (std::size_t x = x0; x < x1; ++x) hist[bin_of(img.at(y, x))] += 1.0;
            const double n = static_cast<double>((y1 - y0) * (x1 - x0));
            TileMapping& m = maps[ty * cols + tx];
            const auto occupied = std::count_if(hist.begin(), hist.end(), [](double h) { return h > 0; });
            if (occupied <= 1) {
                m.identity = true;
                for (std::size_t v = 0; v < 256; ++v) m.levels[v] = (static_cast<float>(v) + 0.5f) / 256.0f;
                continue;
            }
            const double limit = std::max(1.0, static_cast<double>(clip) * n / 256.0);
            double excess = 0;
            for (auto& h : hist) {
                if (h > limit) {
                    excess += h - limit;
                    h = limit;
                }
            }
            const double share = excess / 256.0;
            double before = 0;
            for (std::size_t v = 0; v < 256; ++v) {
                const double h = hist[v] + share;
                m.levels[v] = static_cast<float>((before + 0.5 * h) / n);
                before += h;
            }
        }
    return maps;
}

// Neighbouring tile indices and the weight of the second one for coordinate p.
struct AxisBlend {
    std::size_t lo, hi;
    float w;
};

std::vector<AxisBlend> axis_blend(std::size_t extent, std::size_t tiles) {
    std::vector<double> centers(tiles);
    for (std::size_t i = 0; i < tiles; ++i) {
        centers[i] = 0.5 * static_cast<double>(tile_start(i, extent, tiles) + tile_start(i + 1, extent, tiles)) - 0.5;
    }
    std::vector<AxisBlend> out(extent);
    for (std::size_t p = 0; p < extent; ++p) {
        const double pos = static_cast<double>(p);
        if (pos <= centers.front()) {
            out[p] = {0, 0, 0.0f};
        } else if (pos >= centers.back()) {
            out[p] = {tiles - 1, tiles - 1, 0.0f};
        } else {
            std::size_t i = 0;
            while (centers[i + 1] < pos) ++i;
            out[p] = {i, i + 1, static_cast<float>((pos - centers[i]) / (centers[i + 1] - centers[i]))};
        }
    }
    return out;
}

}  // namespace

std::vector<std::array<float, 256>> clahe_tile_mappings(const ImageBuffer& img, std::size_t tile_rows,
                                                        std::size_t tile_cols, float clip) {
    auto maps = build_tile_mappings(img, tile_rows, tile_cols, clip);
    std::vector<std::array<float, 256>> out;
    out.reserve(maps.size());
    for (const auto& m : maps) out.push_back(m.levels);
    return out;
}

ImageBuffer clahe(const ImageBuffer& img, std::size_t tile_rows, std::size_t tile_cols, float clip) {
    const auto maps = build_tile_mappings(img, tile_rows, tile_cols, clip);
    const auto by = axis_blend(img.height, tile_rows);
    const auto bx = axis_blend(img.width, tile_cols);
    ImageBuffer out = like(img);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
            const float v = img.at(y, x);
            const std::size_t b = bin_of(v);
            auto level = [&](std::size_t ty, std::size_t tx) {
                const TileMapping& m = maps[ty * tile_cols + tx];
                return m.identity ? v : m.levels[b];
            };
            const AxisBlend& ay = by[y];
            const AxisBlend& ax = bx[x];
            const float top = (1.0f - ax.w) * level(ay.lo, ax.lo) + ax.w * level(ay.lo, ax.hi);
            const float bot = (1.0f - ax.w) * level(ay.hi, ax.lo) + ax.w * level(ay.hi, ax.hi);
            out.at(y, x) = std::clamp((1.0f - ay.w) * top + ay.w * bot, 0.0f, 1.0f);
        }
    return out;
}

// ---- Fourier band-pass ---------------------------------------------------------

namespace {
// FFTW's planner is not thread-safe; execution with distinct buffers is.
std::mutex g_fftw_planner_mutex;
}  // namespace

Plane bandpass_plane(const Plane& plane, float low, float high) {
    if (!(low >= 0.0f) || !(low < high)) {
        throw ConfigError(fmt::format("fourier_bandpass: need 0 <= low < high, got [{}, {}]", low, high));
    }
    const std::size_t h = plane.height, w = plane.width;
    if (h == 0 || w == 0) throw InputError("fourier_bandpass: zero-sized image");
    const std::size_t wc = w / 2 + 1;
    double* real = fftw_alloc_real(h * w);
    fftw_complex* spec = fftw_alloc_complex(h * wc);
    fftw_plan fwd, inv;
    {
        std::lock_guard lock(g_fftw_planner_mutex);
        fwd = fftw_plan_dft_r2c_2d(static_cast<int>(h), static_cast<int>(w), real, spec, FFTW_ESTIMATE);
        inv = fftw_plan_dft_c2r_2d(static_cast<int>(h), static_cast<int>(w), spec, real, FFTW_ESTIMATE);
    }
    for (std::size_t i = 0; i < h * w; ++i) real[i] = plane.values[i];
    fftw_execute(fwd);
    for (std::size_t ky = 0; ky < h; ++ky) {
        const double fy = (ky <= h / 2 ? static_cast<double>(ky) : static_cast<double>(ky) - static_cast<double>(h)) /
                          static_cast<double>(h);
        for (std::size_t kx = 0; kx < wc; ++kx) {
            const double fx = static_cast<double>(kx) / static_cast<double>(w);
            const double r = std::sqrt(fx * fx + fy * fy);
            if (r < low || r > high) {
                spec[ky * wc + kx][0] = 0.0;
                spec[ky * wc + kx][1] = 0.0;
            }
        }
    }
    fftw_execute(inv);
    Plane out(h, w);
    const double norm = 1.0 / static_cast<double>(h * w);
    for (std::size_t i = 0; i < h * w; ++i) out.values[i] = static_cast<float>(real[i] * norm);
    {
        std::lock_guard lock(g_fftw_planner_mutex);
        fftw_destroy_plan(fwd);
        fftw_destroy_plan(inv);
    }
    fftw_free(real);
    fftw_free(spec);
    return out;
}

ImageBuffer fourier_bandpass(const ImageBuffer& img, float low, float high) {
    require_gray(img, "fourier_bandpass");
    Plane in(img.height, img.width);
    in.values = img.pixels;
    const Plane filtered = bandpass_plane(in, low, high);
    ImageBuffer out = like(img);
    for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = std::clamp(filtered.values[i], 0.0f, 1.0f);
    return out;
}

// ---- bilateral ---------------------------------------------------------------

ImageBuffer bilateral_filter(const ImageBuffer& img, float sigma_s, float sigma_r) {
    require_gray(img, "bilateral_filter");
    if (!(sigma_s > 0.0f) || !(sigma_r > 0.0f)) throw InputError("bilateral_filter: sigmas must be > 0");
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma_s));
    const std::size_t span = static_cast<std::size_t>(2 * radius + 1);
    std::vector<double> spatial(span * span);
    const double ss = 2.0 * static_cast<double>(sigma_s) * sigma_s;
    const double rr = 2.0 * static_cast<double>(sigma_r) * sigma_r;
    for (std::ptrdiff_t dy = -radius; dy <= radius; ++dy)
        for (std::ptrdiff_t dx = -radius; dx <= radius; ++dx)
            spatial[(dy + radius) * span + (dx + radius)] = std::exp(-static_cast<double>(dy * dy + dx * dx) / ss);
    ImageBuffer out = like(img);
    const auto h = static_cast<std::ptrdiff_t>(img.height), w = static_cast<std::ptrdiff_t>(img.width);
    for (std::ptrdiff_t y = 0; y < h; ++y)
        for (std::ptrdiff_t x = 0; x < w; ++x) {
            const double center = img.at(y, x);
            double num = 0, den = 0;
            for (std::ptrdiff_t yy = std::max<std::ptrdiff_t>(0, y - radius); yy <= std::min(h - 1, y + radius); ++yy)
                for (std::ptrdiff_t xx = std::max<std::ptrdiff_t>(0, x - radius); xx <= std::min(w - 1, x + radius);
                     ++xx) {
                    const double v = img.at(yy, xx);
                    const double diff = v - center;
                    const double wgt = spatial[(yy - y + radius) * span + (xx - x + radius)] * std::exp(-diff * diff / rr);
                    num += wgt * v;
                    den += wgt;
                }
            out.at(y, x) = static_cast<float>(num / den);
        }
    return out;
}

// ---- morphology ----------------------------------------------------------------

std::size_t otsu_threshold_bin(const ImageBuffer& img) {
    require_gray(img, "otsu_threshold");
    std::array<double, 256> hist{};
    for (float v : img.pixels) hist[bin_of(v)] += 1.0;
    const double total = static_cast<double>(img.pixels.size());
    double sum_all = 0;
    for (std::size_t v = 0; v < 256; ++v) sum_all += static_cast<double>(v) * hist[v];
    double w0 = 0, sum0 = 0, best = 0;
    std::size_t best_k = 0;
    for (std::size_t k = 1; k < 256; ++k) {
        w0 += hist[k - 1];
        sum0 += static_cast<double>(k - 1) * hist[k - 1];
        const double w1 = total - w0;
        if (w0 == 0 || w1 == 0) continue;
        const double mu0 = sum0 / w0, mu1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (between > best) {
            best = between;
            best_k = k;
        }
    }
    return best_k;
}

BinaryMask otsu_mask(const ImageBuffer& img) {
    const std::size_t k = otsu_threshold_bin(img);
    BinaryMask mask(img.height, img.width);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) mask.bits[i] = bin_of(img.pixels[i]) >= k ? 1 : 0;
    return mask;
}

namespace {

std::vector<std::pair<std::ptrdiff_t, std::ptrdiff_t>> disk_offsets(std::size_t radius) {
    std::vector<std::pair<std::ptrdiff_t, std::ptrdiff_t>> offsets;
    const auto r = static_cast<std::ptrdiff_t>(radius);
    for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
        for (std::ptrdiff_t dx = -r; dx <= r; ++dx)
            if (dy * dy + dx * dx <= r * r) offsets.emplace_back(dy, dx);
    return offsets;
}

// Structuring element truncated at the border, so dilate/erode stay adjoint on the image domain.
BinaryMask morph(const BinaryMask& mask, std::size_t radius, bool dilation) {
    const auto offsets = disk_offsets(radius);
    BinaryMask out(mask.height, mask.width);
    const auto h = static_cast<std::ptrdiff_t>(mask.height), w = static_cast<std::ptrdiff_t>(mask.width);
    for (std::ptrdiff_t y = 0; y < h; ++y)
        for (std::ptrdiff_t x = 0; x < w; ++x) {
            bool result = !dilation;
            for (auto [dy, dx] : offsets) {
                const std::ptrdiff_t yy = y + dy, xx = x + dx;
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                const bool bit = mask.at(yy, xx) != 0;
                if (dilation && bit) {
                    result = true;
                    break;
                }
                if (!dilation && !bit) {
                    result = false;
                    break;
                }
            }
            out.at(y, x) = result ? 1 : 0;
        }
    return out;
}

}  // namespace

BinaryMask dilate(const BinaryMask& mask, std::size_t radius) { return morph(mask, radius, true); }
BinaryMask erode(const BinaryMask& mask, std::size_t radius) { return morph(mask, radius, false); }
BinaryMask binary_close(const BinaryMask& mask, std::size_t radius) { return erode(dilate(mask, radius), radius); }

ImageBuffer morphological_enhance(const ImageBuffer& img, std::size_t se_radius, float alpha) {
    require_gray(img, "morphological_enhance");
    if (se_radius < 1) throw InputError("morphological_enhance: se_radius must be >= 1");
    const BinaryMask closed = binary_close(otsu_mask(img), se_radius);
    ImageBuffer out = like(img);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const float v = img.pixels[i];
        const float masked = closed.bits[i] ? v : 0.0f;
        out.pixels[i] = std::clamp(alpha * v + (1.0f - alpha) * masked, 0.0f, 1.0f);
    }
    return out;
}

// ---- pipeline ------------------------------------------------------------------

ImageBuffer mixprocess(const ImageBuffer& img, const PreprocessConfig& cfg, StageTimings* timings) {
    img.validate();
    cfg.validate();
    if (timings) timings->fill(0);
    if (!cfg.any_enabled()) return img;

    ImageBuffer current = to_grayscale(img);
    for (Stage stage : kStageOrder) {
        if (!cfg.enabled(stage)) continue;
        const auto start = std::chrono::steady_clock::now();
        try {
            switch (stage) {
                case Stage::wavelet: current = wavelet_enhance(current, cfg.wavelet_detail_gain); break;
                case Stage::clahe:
                    current = clahe(current, cfg.clahe_tile_rows, cfg.clahe_tile_cols, cfg.clahe_clip);
                    break;
                case Stage::fourier: current = fourier_bandpass(current, cfg.band_low, cfg.band_high); break;
                case Stage::bilateral:
                    current = bilateral_filter(current, cfg.bilateral_sigma_spatial, cfg.bilateral_sigma_range);
                    break;
                case Stage::morphology:
                    current = morphological_enhance(current, cfg.morph_se_radius, cfg.morph_blend_alpha);
                    break;
            }
        } catch (const ConfigError& e) {
            throw ConfigError(fmt::format("stage {}: {}", stage_name(stage), e.what()));
        } catch (const InputError& e) {
            throw InputError(fmt::format("stage {}: {}", stage_name(stage), e.what()));
        }
        if (timings) {
            (*timings)[static_cast<std::size_t>(stage)] =
                std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - start).count();
        }
    }
    current.source_path = img.source_path;
    current.label = img.label;
    return img.channels == 1 ? current : replicate_channels(current, img.channels);
}

}  // namespace nasvit
