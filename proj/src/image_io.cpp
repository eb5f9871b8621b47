#include "stroke/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "stroke/errors.hpp"

namespace stroke {

namespace {

uint8_t quantize(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return static_cast<uint8_t>(std::lround(v * 255.0));
}

}  // namespace

ImageU8 read_png(const std::filesystem::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str()))
        throw ImageDecodeError("cannot decode " + path.string() + ": " + img.message);
    const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
    img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    ImageU8 out;
    out.width = img.width;
    out.height = img.height;
    out.channels = color ? 3 : 1;
    if (out.width == 0 || out.height == 0) {
        png_image_free(&img);
        throw ImageDecodeError("zero-dimension image: " + path.string());
    }
    out.pixels.resize(static_cast<size_t>(out.width * out.height * out.channels));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw ImageDecodeError("cannot decode " + path.string() + ": " + msg);
    }
    return out;
}

void write_png_gray(const std::filesystem::path& path, const double* vals, int64_t height, int64_t width) {
    std::vector<uint8_t> buf(static_cast<size_t>(height * width));
    for (int64_t i = 0; i < height * width; ++i) buf[static_cast<size_t>(i)] = quantize(vals[i]);
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(width);
    img.height = static_cast<png_uint_32>(height);
    img.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr))
        throw IoError("cannot write " + path.string() + ": " + img.message);
}

void write_png_rgb(const std::filesystem::path& path, const double* chw, int64_t height, int64_t width) {
    const int64_t plane = height * width;
    std::vector<uint8_t> buf(static_cast<size_t>(plane * 3));
    for (int64_t i = 0; i < plane; ++i) {
        buf[static_cast<size_t>(3 * i + 0)] = quantize(chw[i]);
        buf[static_cast<size_t>(3 * i + 1)] = quantize(chw[plane + i]);
        buf[static_cast<size_t>(3 * i + 2)] = quantize(chw[2 * plane + i]);
    }
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(width);
    img.height = static_cast<png_uint_32>(height);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr))
        throw IoError("cannot write " + path.string() + ": " + img.message);
}

}  // namespace stroke
