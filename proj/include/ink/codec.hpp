#pragma once

#include "ink/tensor.hpp"

namespace ink {

// Square, f-aligned crop region used by the zoom-in sampling strategy.
struct CropWindow {
    int x0 = 0;
    int y0 = 0;
    int side = 0;
};

// Invertible space-to-depth transform standing in for the latent encoder: a
// [3,H,W] image becomes a [3f²,H/f,W/f] latent with no mixing, so every latent
// property is bit-exactly checkable. Latent channel (c·f + dy)·f + dx holds
// image channel c at patch offset (dy,dx).
Tensor encode(const Tensor& image, int f);
Tensor decode(const Tensor& latent, int f);

// Latent of the source with masked pixels zeroed before encoding.
Tensor encode_masked_source(const Tensor& image, const Tensor& mask, int f);

// Latent-resolution mask: a cell is 1 iff any pixel of its f×f patch is 1.
Tensor resize_mask(const Tensor& mask, int f);

// Channel concatenation [z; m_star; z_s] with 2c+1 output channels.
Tensor assemble_input(const Tensor& z, const Tensor& m_star, const Tensor& z_s);

// Smallest square window that contains the mask's bounding box dilated by
// `margin` (a ratio of the box's longer side), rounded up to a multiple of f
// and clipped to the image.
CropWindow zoom_window(const Tensor& mask, double margin, int f);

// Pixel-space paste: masked pixels from `generated`, everything else from the
// source, bit-identical outside the mask.
Tensor composite(const Tensor& x_s, const Tensor& m, const Tensor& generated);

}  // namespace ink
