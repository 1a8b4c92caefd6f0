#pragma once

#include <optional>
#include <string>

#include "ink/codec.hpp"
#include "ink/sampler.hpp"

namespace ink {

// Full-resolution inpainting: zoom into the mask's window, run the sampler at
// model resolution, paste the result back, and composite so every pixel
// outside the mask stays bit-identical to the source.
struct InpaintResult {
    Tensor image;       // [3,H,W], same size as the source
    CropWindow window;  // the zoomed region that was actually sampled
    SampleStats stats;
};

InpaintResult inpaint_image(const Model& model, const Tensor& x_s, const Tensor& mask,
                            const std::optional<Tensor>& x_obj,
                            const std::optional<std::string>& prompt,
                            const GuidanceConfig& cfg, double margin = 0.3,
                            const StepObserver& observer = {});

}  // namespace ink
