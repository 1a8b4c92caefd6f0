#include "ink/pipeline.hpp"

#include "ink/common.hpp"
#include "ink/image.hpp"

namespace ink {

InpaintResult inpaint_image(const Model& model, const Tensor& x_s, const Tensor& mask,
                            const std::optional<Tensor>& x_obj,
                            const std::optional<std::string>& prompt,
                            const GuidanceConfig& cfg, double margin,
                            const StepObserver& observer) {
    if (x_s.rank() != 3 || x_s.shape[0] != 3)
        throw DataError("inpaint_image: source must be [3,H,W]");
    if (mask.rank() != 2 || mask.shape[0] != x_s.shape[1] || mask.shape[1] != x_s.shape[2])
        throw DataError("inpaint_image: mask size does not match the source");

    const int res = model.config().res;
    const int f = model.config().f;

    CropWindow win = zoom_window(mask, margin, f);
    Tensor crop_s = crop_image(x_s, win.y0, win.x0, win.side, win.side);
    Tensor crop_m = crop_mask(mask, win.y0, win.x0, win.side, win.side);

    InpaintRequest req;
    req.x_s = resize_bilinear(crop_s, res, res);
    req.mask = resize_mask_cover(crop_m, res, res);
    req.prompt = prompt;
    if (x_obj) {
        if (x_obj->rank() != 3 || x_obj->shape[0] != 3)
            throw DataError("inpaint_image: subject must be [3,h,w]");
        req.x_obj = (x_obj->shape[1] == res && x_obj->shape[2] == res)
                        ? *x_obj
                        : resize_bilinear(*x_obj, res, res);
    }

    InpaintResult out;
    out.window = win;
    Tensor gen = sample(model, req, cfg, &out.stats, observer);

    Tensor pasted = x_s;
    paste_image(pasted, resize_bilinear(gen, win.side, win.side), win.y0, win.x0);
    out.image = cfg.composite ? composite(x_s, mask, pasted) : pasted;
    return out;
}

}  // namespace ink
