#include "ink/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "ink/common.hpp"

namespace ink {

namespace {

unsigned char quantize(double v) {
    double c = std::clamp(v, 0.0, 1.0);
    return static_cast<unsigned char>(std::lround(c * 255.0));
}

void check_image(const Tensor& img, const char* who) {
    if (img.rank() != 3 || img.dim(0) != 3)
        throw DataError(std::string(who) + ": want a [3,H,W] image, got " + img.shape_str());
}

void check_mask(const Tensor& mask, const char* who) {
    if (mask.rank() != 2)
        throw DataError(std::string(who) + ": want a [H,W] mask, got " + mask.shape_str());
}

}  // namespace

Tensor read_image_png(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw DataError("cannot read PNG " + path + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&image);
        throw DataError("cannot decode PNG " + path + ": " + image.message);
    }
    int h = static_cast<int>(image.height);
    int w = static_cast<int>(image.width);
    Tensor out({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(c, y, x) = buf[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.0;
    return out;
}

void write_image_png(const std::string& path, const Tensor& img) {
    check_image(img, "write_image_png");
    int h = img.dim(1), w = img.dim(2);
    std::vector<unsigned char> buf(static_cast<size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                buf[(static_cast<size_t>(y) * w + x) * 3 + c] = quantize(img.at(c, y, x));
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
        throw DataError("cannot write PNG " + path + ": " + image.message);
}

Tensor read_mask_png(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw DataError("cannot read PNG " + path + ": " + image.message);
    image.format = PNG_FORMAT_GRAY;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&image);
        throw DataError("cannot decode PNG " + path + ": " + image.message);
    }
    int h = static_cast<int>(image.height);
    int w = static_cast<int>(image.width);
    Tensor out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.at(y, x) = buf[static_cast<size_t>(y) * w + x] >= 128 ? 1.0 : 0.0;
    return out;
}

void write_mask_png(const std::string& path, const Tensor& mask) {
    check_mask(mask, "write_mask_png");
    int h = mask.dim(0), w = mask.dim(1);
    std::vector<unsigned char> buf(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            buf[static_cast<size_t>(y) * w + x] = mask.at(y, x) != 0.0 ? 255 : 0;
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
        throw DataError("cannot write PNG " + path + ": " + image.message);
}

Tensor resize_bilinear(const Tensor& img, int out_h, int out_w) {
    check_image(img, "resize_bilinear");
    if (out_h <= 0 || out_w <= 0) throw DataError("resize_bilinear: non-positive output size");
    int h = img.dim(1), w = img.dim(2);
    Tensor out({3, out_h, out_w});
    double sy = static_cast<double>(h) / out_h;
    double sx = static_cast<double>(w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int ya = std::clamp(y0, 0, h - 1);
        int yb = std::clamp(y0 + 1, 0, h - 1);
        for (int ox = 0; ox < out_w; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int xa = std::clamp(x0, 0, w - 1);
            int xb = std::clamp(x0 + 1, 0, w - 1);
            for (int c = 0; c < 3; ++c) {
                double top = (1.0 - wx) * img.at(c, ya, xa) + wx * img.at(c, ya, xb);
                double bot = (1.0 - wx) * img.at(c, yb, xa) + wx * img.at(c, yb, xb);
                out.at(c, oy, ox) = (1.0 - wy) * top + wy * bot;
            }
        }
    }
    return out;
}

Tensor resize_mask_cover(const Tensor& mask, int out_h, int out_w) {
    check_mask(mask, "resize_mask_cover");
    if (out_h <= 0 || out_w <= 0) throw DataError("resize_mask_cover: non-positive output size");
    int h = mask.dim(0), w = mask.dim(1);
    Tensor out({out_h, out_w});
    for (int oy = 0; oy < out_h; ++oy) {
        int ys = static_cast<int>(std::floor(static_cast<double>(oy) * h / out_h));
        int ye = static_cast<int>(std::ceil(static_cast<double>(oy + 1) * h / out_h));
        for (int ox = 0; ox < out_w; ++ox) {
            int xs = static_cast<int>(std::floor(static_cast<double>(ox) * w / out_w));
            int xe = static_cast<int>(std::ceil(static_cast<double>(ox + 1) * w / out_w));
            double v = 0.0;
            for (int y = ys; y < ye && v == 0.0; ++y)
                for (int x = xs; x < xe; ++x)
                    if (mask.at(y, x) != 0.0) {
                        v = 1.0;
                        break;
                    }
            out.at(oy, ox) = v;
        }
    }
    return out;
}

Tensor crop_image(const Tensor& img, int y0, int x0, int h, int w) {
    check_image(img, "crop_image");
    if (y0 < 0 || x0 < 0 || y0 + h > img.dim(1) || x0 + w > img.dim(2) || h <= 0 || w <= 0)
        throw DataError("crop_image: window out of bounds");
    Tensor out({3, h, w});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
    return out;
}

Tensor crop_mask(const Tensor& mask, int y0, int x0, int h, int w) {
    check_mask(mask, "crop_mask");
    if (y0 < 0 || x0 < 0 || y0 + h > mask.dim(0) || x0 + w > mask.dim(1) || h <= 0 || w <= 0)
        throw DataError("crop_mask: window out of bounds");
    Tensor out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(y, x) = mask.at(y0 + y, x0 + x);
    return out;
}

void paste_image(Tensor& dst, const Tensor& src, int y0, int x0) {
    check_image(dst, "paste_image");
    check_image(src, "paste_image");
    if (y0 < 0 || x0 < 0 || y0 + src.dim(1) > dst.dim(1) || x0 + src.dim(2) > dst.dim(2))
        throw DataError("paste_image: region out of bounds");
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < src.dim(1); ++y)
            for (int x = 0; x < src.dim(2); ++x) dst.at(c, y0 + y, x0 + x) = src.at(c, y, x);
}

}  // namespace ink
