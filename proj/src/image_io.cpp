#include "deghost/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "deghost/errors.hpp"

namespace deghost::io {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw DataError("cannot open " + path.string());
    return f;
}

// (3, H, W) -> contiguous (H, W, 3) float32
torch::Tensor to_hwc(const torch::Tensor& image, const std::filesystem::path& path) {
    if (image.dim() != 3 || image.size(0) != 3)
        throw InvalidArgument("cannot write " + path.string() + ": expected a (3, H, W) image");
    return image.detach().to(torch::kCPU, torch::kFloat).permute({1, 2, 0}).contiguous();
}

torch::Tensor from_hwc(std::vector<float>& data, int64_t h, int64_t w) {
    return torch::from_blob(data.data(), {h, w, 3}, torch::kFloat).permute({2, 0, 1}).clone();
}

void png_error_fn(png_structp png, png_const_charp msg) {
    auto* what = static_cast<std::string*>(png_get_error_ptr(png));
    if (what) *what = msg;
    png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace

torch::Tensor read_png(const std::filesystem::path& path, int* bit_depth_out) {
    auto fp = open_file(path, "rb");
    std::string error;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_error_fn, png_warning_fn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng init failed for " + path.string());
    }
    std::vector<uint8_t> buffer;
    std::vector<png_bytep> rows;
    png_uint_32 width = 0, height = 0;
    int depth = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("cannot decode PNG " + path.string() + ": " + error);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    if (depth == 16) png_set_swap(png);  // host order (little-endian)
    png_read_update_info(png, info);
    const int out_depth = png_get_bit_depth(png, info);
    const size_t rowbytes = png_get_rowbytes(png, info);
    buffer.resize(rowbytes * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    const size_t n = static_cast<size_t>(width) * height * 3;
    std::vector<float> data(n);
    if (out_depth == 16) {
        const auto* src = reinterpret_cast<const uint16_t*>(buffer.data());
        for (size_t i = 0; i < n; ++i) data[i] = static_cast<float>(src[i] / 65535.0);
    } else {
        for (size_t i = 0; i < n; ++i) data[i] = static_cast<float>(buffer[i] / 255.0);
    }
    if (bit_depth_out) *bit_depth_out = out_depth;
    return from_hwc(data, height, width);
}

void write_png(const std::filesystem::path& path, const torch::Tensor& image, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) throw InvalidArgument("PNG bit depth must be 8 or 16");
    auto hwc = to_hwc(image, path);
    const auto h = static_cast<png_uint_32>(hwc.size(0)), w = static_cast<png_uint_32>(hwc.size(1));
    const double maxv = bit_depth == 16 ? 65535.0 : 255.0;
    const size_t n = static_cast<size_t>(w) * h * 3;
    const float* src = hwc.data_ptr<float>();
    std::vector<uint8_t> buffer(n * (bit_depth / 8));
    for (size_t i = 0; i < n; ++i) {
        const double v = std::clamp(static_cast<double>(src[i]), 0.0, 1.0);
        const auto code = static_cast<uint32_t>(std::lround(v * maxv));
        if (bit_depth == 16) {
            buffer[2 * i] = static_cast<uint8_t>(code >> 8);  // PNG is big-endian
            buffer[2 * i + 1] = static_cast<uint8_t>(code & 0xff);
        } else {
            buffer[i] = static_cast<uint8_t>(code);
        }
    }

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto fp = open_file(path, "wb");
    std::string error;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_error_fn, png_warning_fn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng init failed for " + path.string());
    }
    std::vector<png_bytep> rows(h);
    const size_t rowbytes = static_cast<size_t>(w) * 3 * (bit_depth / 8);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = buffer.data() + y * rowbytes;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("cannot encode PNG " + path.string() + ": " + error);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, w, h, bit_depth, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

torch::Tensor read_pfm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    std::string magic;
    int64_t w = 0, h = 0;
    double scale = 0.0;
    is >> magic >> w >> h >> scale;
    is.get();  // single whitespace before the raster
    if (!is || (magic != "PF" && magic != "Pf") || w <= 0 || h <= 0 || scale == 0.0)
        throw DataError("malformed PFM header in " + path.string());
    const int64_t channels = magic == "PF" ? 3 : 1;
    std::vector<float> raw(static_cast<size_t>(w * h * channels));
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float))))
        throw DataError("truncated PFM raster in " + path.string());
    if (scale > 0.0) {  // big-endian payload
        for (auto& v : raw) {
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            bits = __builtin_bswap32(bits);
            std::memcpy(&v, &bits, 4);
        }
    }
    std::vector<float> data(static_cast<size_t>(w * h * 3));
    for (int64_t y = 0; y < h; ++y)  // PFM rows run bottom to top
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                data[static_cast<size_t>(((h - 1 - y) * w + x) * 3 + c)] =
                    raw[static_cast<size_t>((y * w + x) * channels + (channels == 3 ? c : 0))];
    return from_hwc(data, h, w);
}

void write_pfm(const std::filesystem::path& path, const torch::Tensor& image) {
    auto hwc = to_hwc(image, path);
    const int64_t h = hwc.size(0), w = hwc.size(1);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + path.string());
    os << "PF\n" << w << " " << h << "\n-1.0\n";
    const float* src = hwc.data_ptr<float>();
    for (int64_t y = h - 1; y >= 0; --y)
        os.write(reinterpret_cast<const char*>(src + y * w * 3), static_cast<std::streamsize>(w * 3 * sizeof(float)));
    if (!os) throw DataError("failed writing " + path.string());
}

namespace {

void rgbe_to_float(const uint8_t* rgbe, float* rgb) {
    if (rgbe[3] == 0) {
        rgb[0] = rgb[1] = rgb[2] = 0.0f;
        return;
    }
    const float f = std::ldexp(1.0f, static_cast<int>(rgbe[3]) - (128 + 8));
    for (int c = 0; c < 3; ++c) rgb[c] = (static_cast<float>(rgbe[c]) + 0.5f) * f;
}

void float_to_rgbe(const float* rgb, uint8_t* rgbe) {
    const float v = std::max({rgb[0], rgb[1], rgb[2]});
    if (v < 1e-32f) {
        rgbe[0] = rgbe[1] = rgbe[2] = rgbe[3] = 0;
        return;
    }
    int e = 0;
    const float scale = std::frexp(v, &e) * 256.0f / v;
    for (int c = 0; c < 3; ++c)
        rgbe[c] = static_cast<uint8_t>(std::clamp(rgb[c], 0.0f, v) * scale);
    rgbe[3] = static_cast<uint8_t>(e + 128);
}

}  // namespace

torch::Tensor read_hdr(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    std::string line;
    std::getline(is, line);
    if (line.rfind("#?", 0) != 0) throw DataError("not a Radiance HDR file: " + path.string());
    while (std::getline(is, line) && !line.empty()) {
        if (line.rfind("FORMAT=", 0) == 0 && line != "FORMAT=32-bit_rle_rgbe")
            throw DataError("unsupported HDR pixel format '" + line + "' in " + path.string());
    }
    std::getline(is, line);
    std::istringstream res(line);
    std::string ya, xa;
    int64_t h = 0, w = 0;
    res >> ya >> h >> xa >> w;
    if (ya != "-Y" || xa != "+X" || h <= 0 || w <= 0)
        throw DataError("unsupported HDR resolution line '" + line + "' in " + path.string());

    std::vector<uint8_t> scan(static_cast<size_t>(w * 4));
    std::vector<float> data(static_cast<size_t>(w * h * 3));
    auto fail = [&] { throw DataError("truncated HDR raster in " + path.string()); };
    for (int64_t y = 0; y < h; ++y) {
        uint8_t head[4];
        if (!is.read(reinterpret_cast<char*>(head), 4)) fail();
        const bool rle = w >= 8 && w < 32768 && head[0] == 2 && head[1] == 2 && !(head[2] & 0x80) &&
                         ((head[2] << 8) | head[3]) == w;
        if (!rle) {
            std::memcpy(scan.data(), head, 4);
            if (!is.read(reinterpret_cast<char*>(scan.data() + 4), static_cast<std::streamsize>(w * 4 - 4))) fail();
        } else {
            for (int c = 0; c < 4; ++c) {
                int64_t x = 0;
                while (x < w) {
                    int count = is.get();
                    if (count == EOF) fail();
                    if (count > 128) {
                        count -= 128;
                        const int value = is.get();
                        if (value == EOF || x + count > w) fail();
                        for (int k = 0; k < count; ++k) scan[static_cast<size_t>((x++) * 4 + c)] = static_cast<uint8_t>(value);
                    } else {
                        if (count == 0 || x + count > w) fail();
                        for (int k = 0; k < count; ++k) {
                            const int value = is.get();
                            if (value == EOF) fail();
                            scan[static_cast<size_t>((x++) * 4 + c)] = static_cast<uint8_t>(value);
                        }
                    }
                }
            }
        }
        for (int64_t x = 0; x < w; ++x)
            rgbe_to_float(scan.data() + x * 4, data.data() + (y * w + x) * 3);
    }
    return from_hwc(data, h, w);
}

void write_hdr(const std::filesystem::path& path, const torch::Tensor& image) {
    auto hwc = to_hwc(image, path);
    const int64_t h = hwc.size(0), w = hwc.size(1);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + path.string());
    os << "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y " << h << " +X " << w << "\n";
    const float* src = hwc.data_ptr<float>();
    std::vector<uint8_t> scan(static_cast<size_t>(w * 4));
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) float_to_rgbe(src + (y * w + x) * 3, scan.data() + x * 4);
        os.write(reinterpret_cast<const char*>(scan.data()), static_cast<std::streamsize>(scan.size()));
    }
    if (!os) throw DataError("failed writing " + path.string());
}

torch::Tensor read_image(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") return read_png(path);
    if (ext == ".pfm") return read_pfm(path);
    if (ext == ".hdr") return read_hdr(path);
    throw DataError("unsupported image format: " + path.string());
}

}  // namespace deghost::io
