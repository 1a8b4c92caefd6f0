#include "ink/codec.hpp"

#include <algorithm>
#include <cmath>

#include "ink/common.hpp"

namespace ink {

namespace {

void check_divisible(const Tensor& image, int f, const char* who) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw DataError(std::string(who) + ": want a [3,H,W] image, got " + image.shape_str());
    if (f <= 0) throw DataError(std::string(who) + ": factor must be positive");
    if (image.dim(1) % f != 0 || image.dim(2) % f != 0)
        throw DataError(std::string(who) + ": dimensions " + image.shape_str() +
                        " not divisible by factor " + std::to_string(f));
}

}  // namespace

Tensor encode(const Tensor& image, int f) {
    check_divisible(image, f, "encode");
    int h = image.dim(1) / f, w = image.dim(2) / f;
    Tensor out({3 * f * f, h, w});
    for (int c = 0; c < 3; ++c)
        for (int dy = 0; dy < f; ++dy)
            for (int dx = 0; dx < f; ++dx) {
                int oc = (c * f + dy) * f + dx;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        out.at(oc, y, x) = image.at(c, y * f + dy, x * f + dx);
            }
    return out;
}

Tensor decode(const Tensor& latent, int f) {
    if (latent.rank() != 3 || latent.dim(0) != 3 * f * f)
        throw DataError("decode: want a [3f²,h,w] latent for f=" + std::to_string(f) + ", got " +
                        latent.shape_str());
    int h = latent.dim(1), w = latent.dim(2);
    Tensor out({3, h * f, w * f});
    for (int c = 0; c < 3; ++c)
        for (int dy = 0; dy < f; ++dy)
            for (int dx = 0; dx < f; ++dx) {
                int ic = (c * f + dy) * f + dx;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        out.at(c, y * f + dy, x * f + dx) = latent.at(ic, y, x);
            }
    return out;
}

Tensor encode_masked_source(const Tensor& image, const Tensor& mask, int f) {
    check_divisible(image, f, "encode_masked_source");
    if (mask.rank() != 2 || mask.dim(0) != image.dim(1) || mask.dim(1) != image.dim(2))
        throw DataError("encode_masked_source: mask " + mask.shape_str() +
                        " does not match image " + image.shape_str());
    Tensor masked = image;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < image.dim(1); ++y)
            for (int x = 0; x < image.dim(2); ++x)
                if (mask.at(y, x) != 0.0) masked.at(c, y, x) = 0.0;
    return encode(masked, f);
}

Tensor resize_mask(const Tensor& mask, int f) {
    if (mask.rank() != 2) throw DataError("resize_mask: want a [H,W] mask");
    if (f <= 0 || mask.dim(0) % f != 0 || mask.dim(1) % f != 0)
        throw DataError("resize_mask: mask " + mask.shape_str() + " not divisible by factor " +
                        std::to_string(f));
    int h = mask.dim(0) / f, w = mask.dim(1) / f;
    Tensor out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = 0.0;
            for (int dy = 0; dy < f && v == 0.0; ++dy)
                for (int dx = 0; dx < f; ++dx)
                    if (mask.at(y * f + dy, x * f + dx) != 0.0) {
                        v = 1.0;
                        break;
                    }
            out.at(y, x) = v;
        }
    return out;
}

Tensor assemble_input(const Tensor& z, const Tensor& m_star, const Tensor& z_s) {
    if (z.rank() != 3 || !z.same_shape(z_s))
        throw DataError("assemble_input: z " + z.shape_str() + " vs z_s " + z_s.shape_str());
    if (m_star.rank() != 2 || m_star.dim(0) != z.dim(1) || m_star.dim(1) != z.dim(2))
        throw DataError("assemble_input: mask " + m_star.shape_str() + " does not match latent " +
                        z.shape_str());
    int c = z.dim(0), h = z.dim(1), w = z.dim(2);
    Tensor out({2 * c + 1, h, w});
    std::copy(z.data.begin(), z.data.end(), out.data.begin());
    std::copy(m_star.data.begin(), m_star.data.end(), out.data.begin() + z.numel());
    std::copy(z_s.data.begin(), z_s.data.end(), out.data.begin() + z.numel() + m_star.numel());
    return out;
}

CropWindow zoom_window(const Tensor& mask, double margin, int f) {
    if (mask.rank() != 2) throw DataError("zoom_window: want a [H,W] mask");
    if (margin < 0.0) throw DataError("zoom_window: negative margin");
    int h = mask.dim(0), w = mask.dim(1);
    int by0 = h, by1 = -1, bx0 = w, bx1 = -1;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask.at(y, x) != 0.0) {
                by0 = std::min(by0, y);
                by1 = std::max(by1, y);
                bx0 = std::min(bx0, x);
                bx1 = std::max(bx1, x);
            }
    if (by1 < 0) throw DataError("zoom_window: empty mask");

    int bw = bx1 - bx0 + 1, bh = by1 - by0 + 1;
    int longer = std::max(bw, bh);
    int max_side = std::min((h / f) * f, (w / f) * f);
    int min_side = ((longer + f - 1) / f) * f;
    if (min_side > max_side)
        throw DataError("zoom_window: mask bounding box does not fit a square f-aligned window");
    int pad = static_cast<int>(std::ceil(margin * longer));
    int side = ((longer + 2 * pad + f - 1) / f) * f;
    side = std::clamp(side, min_side, max_side);

    CropWindow win;
    win.side = side;
    win.x0 = std::clamp(bx0 + (bw - side) / 2, 0, w - side);
    win.y0 = std::clamp(by0 + (bh - side) / 2, 0, h - side);
    return win;
}

Tensor composite(const Tensor& x_s, const Tensor& m, const Tensor& generated) {
    if (x_s.rank() != 3 || !x_s.same_shape(generated))
        throw DataError("composite: source " + x_s.shape_str() + " vs generated " +
                        generated.shape_str());
    if (m.rank() != 2 || m.dim(0) != x_s.dim(1) || m.dim(1) != x_s.dim(2))
        throw DataError("composite: mask " + m.shape_str() + " does not match image " +
                        x_s.shape_str());
    Tensor out = x_s;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < x_s.dim(1); ++y)
            for (int x = 0; x < x_s.dim(2); ++x)
                if (m.at(y, x) != 0.0) out.at(c, y, x) = generated.at(c, y, x);
    return out;
}

}  // namespace ink
