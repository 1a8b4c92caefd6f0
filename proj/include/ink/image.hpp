#pragma once

#include <string>

#include "ink/tensor.hpp"

namespace ink {

// Images are [3,H,W] tensors with values in [0,1]; masks are [H,W] tensors
// with values in {0,1}, 1 marking the region to inpaint. On disk both are
// 8-bit PNG (RGB and grayscale 0/255), so a write/read round trip lands on
// the 1/255 grid exactly.

Tensor read_image_png(const std::string& path);
void write_image_png(const std::string& path, const Tensor& img);

Tensor read_mask_png(const std::string& path);
void write_mask_png(const std::string& path, const Tensor& mask);

Tensor resize_bilinear(const Tensor& img, int out_h, int out_w);

// Binary resize with any-coverage semantics: an output cell is 1 iff any
// source pixel in its footprint is 1, so the resized mask never under-covers.
Tensor resize_mask_cover(const Tensor& mask, int out_h, int out_w);

Tensor crop_image(const Tensor& img, int y0, int x0, int h, int w);
Tensor crop_mask(const Tensor& mask, int y0, int x0, int h, int w);
void paste_image(Tensor& dst, const Tensor& src, int y0, int x0);

}  // namespace ink
