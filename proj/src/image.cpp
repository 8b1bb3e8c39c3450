#include "nasvit/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fmt/format.h>
#include <fstream>
#include <memory>

#include <jpeglib.h>
#include <png.h>

#include <csetjmp>

namespace nasvit {

void ImageBuffer::validate() const {
    if (height == 0 || width == 0) throw InputError("image has zero size");
    if (channels != 1 && channels != 3) throw InputError(fmt::format("unsupported channel count {}", channels));
    if (pixels.size() != height * width * channels) {
        throw InputError(fmt::format("pixel buffer holds {} values, expected {}x{}x{}", pixels.size(), height, width,
                                     channels));
    }
}

void clamp01(ImageBuffer& img) {
    for (auto& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

ImageBuffer to_grayscale(const ImageBuffer& img) {
    img.validate();
    if (img.channels == 1) return img;
    ImageBuffer out(img.height, img.width, 1);
    out.source_path = img.source_path;
    out.label = img.label;
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        const float* p = &img.pixels[i * 3];
        out.pixels[i] = std::clamp(0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2], 0.0f, 1.0f);
    }
    return out;
}

ImageBuffer replicate_channels(const ImageBuffer& gray, std::size_t channels) {
    if (gray.channels != 1) throw InputError("replicate_channels expects a single-channel image");
    ImageBuffer out(gray.height, gray.width, channels);
    out.source_path = gray.source_path;
    out.label = gray.label;
    for (std::size_t i = 0; i < gray.pixel_count(); ++i)
        for (std::size_t c = 0; c < channels; ++c) out.pixels[i * channels + c] = gray.pixels[i];
    return out;
}

ImageBuffer resize_bilinear(const ImageBuffer& img, std::size_t height, std::size_t width) {
    img.validate();
    if (height == 0 || width == 0) throw InputError("resize target has zero size");
    if (height == img.height && width == img.width) return img;
    ImageBuffer out(height, width, img.channels);
    out.source_path = img.source_path;
    out.label = img.label;
    const double sy = static_cast<double>(img.height) / static_cast<double>(height);
    const double sx = static_cast<double>(img.width) / static_cast<double>(width);
    for (std::size_t y = 0; y < height; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < width; ++x) {
            const double fx =
                std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < img.channels; ++c) {
                const double top = (1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c);
                const double bot = (1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c);
                out.at(y, x, c) = static_cast<float>((1 - wy) * top + wy * bot);
            }
        }
    }
    return out;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError("cannot open " + path.string());
    return f;
}

ImageBuffer from_8bit(const std::vector<unsigned char>& raw, std::size_t h, std::size_t w, std::size_t c) {
    ImageBuffer img(h, w, c);
    for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
    return img;
}

ImageBuffer read_png(const std::filesystem::path& path) {
    auto f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    std::vector<unsigned char> raw;
    std::vector<png_bytep> rows;
    std::size_t h = 0, w = 0, c = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("cannot decode PNG " + path.string());
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    h = png_get_image_height(png, info);
    w = png_get_image_width(png, info);
    c = png_get_channels(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    raw.resize(h * rowbytes);
    rows.resize(h);
    for (std::size_t y = 0; y < h; ++y) rows[y] = raw.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    if (c != 1 && c != 3) throw IoError(fmt::format("unsupported PNG channel layout ({}) in {}", c, path.string()));
    return from_8bit(raw, h, w, c);
}

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

ImageBuffer read_jpeg(const std::filesystem::path& path) {
    auto f = open_file(path, "rb");
    jpeg_decompress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    std::vector<unsigned char> raw;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError("cannot decode JPEG " + path.string());
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f.get());
    jpeg_read_header(&cinfo, TRUE);
    if (cinfo.num_components != 1) cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    const std::size_t h = cinfo.output_height, w = cinfo.output_width, c = cinfo.output_components;
    raw.resize(h * w * c);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = raw.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * c;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return from_8bit(raw, h, w, c);
}

}  // namespace

bool is_image_file(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

ImageBuffer read_image(const std::filesystem::path& path) {
    unsigned char magic[8] = {};
    {
        auto f = open_file(path, "rb");
        if (std::fread(magic, 1, sizeof magic, f.get()) < 3) throw IoError("cannot decode image " + path.string());
    }
    ImageBuffer img;
    if (png_sig_cmp(magic, 0, 8) == 0) {
        img = read_png(path);
    } else if (magic[0] == 0xFF && magic[1] == 0xD8 && magic[2] == 0xFF) {
        img = read_jpeg(path);
    } else {
        throw IoError("cannot decode image " + path.string() + ": not a PNG or JPEG file");
    }
    img.source_path = path.string();
    return img;
}

void write_png(const ImageBuffer& img, const std::filesystem::path& path) {
    img.validate();
    auto f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    std::vector<unsigned char> raw(img.pixels.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        raw[i] = static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0f, 1.0f) * 255.0f));
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("cannot write PNG " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = img.width * img.channels;
    for (std::size_t y = 0; y < img.height; ++y) png_write_row(png, raw.data() + y * stride);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fflush(f.get()) != 0) throw IoError("cannot write PNG " + path.string());
}

}  // namespace nasvit
