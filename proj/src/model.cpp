#include "ink/model.hpp"

#include <stdexcept>
#include <string>

#include "ink/common.hpp"

namespace ink {

UNetConfig ModelConfig::unet_config() const {
    if (f < 1 || res < f || res % f != 0)
        throw DataError("model config: res must be a positive multiple of f");
    UNetConfig u;
    u.c = latent_channels();
    u.h = latent_side();
    u.w = latent_side();
    u.c0 = c0;
    u.c1 = c1;
    u.cond_dim = cond_dim;
    u.temb_dim = temb_dim;
    return u;
}

ModelConfig ModelConfig::normalized() const {
    ModelConfig out = *this;
    out.cond.res = res;
    out.cond.cond_dim = cond_dim;
    return out;
}

Model::Model(const ModelConfig& cfg, uint64_t init_seed, bool with_refine)
    : cfg_(cfg.normalized()),
      init_seed_(init_seed),
      sched_(NoiseSchedule::linear(cfg.T, cfg.beta_start, cfg.beta_end)) {
    const UNetConfig ucfg = cfg_.unet_config();
    Rng rng(init_seed);
    unet_ = std::make_unique<Denoiser>(ucfg, "unet.", params_, rng);
    cond_ = std::make_unique<Conditioner>(cfg_.cond, params_, rng);
    if (with_refine)
        refine_ = std::make_unique<Denoiser>(ucfg, "refine.", params_, rng);
}

void Model::init_refine_from_unet() {
    if (!refine_)
        throw DataError("init_refine_from_unet: model was built without a refine branch");
    for (const std::string& name : params_.names()) {
        if (name.rfind("unet.", 0) != 0) continue;
        const std::string target = "refine." + name.substr(5);
        params_.get(target).value = params_.get(name).value;
    }
}

}  // namespace ink
