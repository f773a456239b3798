#include "fusionnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "fusionnet/errors.hpp"

namespace fusionnet {

Image read_png(const std::filesystem::path& path) {
    png_image png;
    std::memset(&png, 0, sizeof png);
    png.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&png, path.c_str()) == 0) {
        throw_error(ErrorKind::item, path.string() + ": " + png.message);
    }
    png.format = PNG_FORMAT_RGB;
    const std::size_t width = png.width;
    const std::size_t height = png.height;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
    if (png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr) == 0) {
        const std::string message = png.message;
        png_image_free(&png);
        throw_error(ErrorKind::item, path.string() + ": " + message);
    }
    if (width == 0 || height == 0) {
        throw_error(ErrorKind::item, path.string() + ": empty image");
    }
    Image image({3, height, width});
    const std::size_t plane = height * width;
    for (std::size_t p = 0; p < plane; ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
            image[c * plane + p] = static_cast<float>(buffer[p * 3 + c]) / 255.0f;
        }
    }
    return image;
}

void write_png(const std::filesystem::path& path, const Image& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw_error(ErrorKind::dimension, "write_png expects [3,H,W], got " + shape_string(image.shape()));
    }
    const std::size_t height = image.dim(1);
    const std::size_t width = image.dim(2);
    const std::size_t plane = height * width;
    std::vector<png_byte> buffer(plane * 3);
    for (std::size_t p = 0; p < plane; ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
            const float v = std::clamp(image[c * plane + p], 0.0f, 1.0f);
            buffer[p * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0f));
        }
    }
    png_image png;
    std::memset(&png, 0, sizeof png);
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(width);
    png.height = static_cast<png_uint_32>(height);
    png.format = PNG_FORMAT_RGB;
    if (png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr) == 0) {
        throw_error(ErrorKind::io, path.string() + ": " + png.message);
    }
}

}  // namespace fusionnet
