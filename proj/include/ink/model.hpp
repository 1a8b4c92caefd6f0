#pragma once

#include <cstdint>
#include <memory>

#include "ink/conditioner.hpp"
#include "ink/denoiser.hpp"
#include "ink/params.hpp"
#include "ink/schedule.hpp"

namespace ink {

struct ModelConfig {
    int f = 4;     // codec factor; latent channels c = 3f²
    int res = 32;  // model pixel resolution; latent dims res/f
    int c0 = 24;
    int c1 = 32;
    int cond_dim = 32;
    int temb_dim = 32;
    CondConfig cond;
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    int latent_channels() const { return 3 * f * f; }
    int latent_side() const { return res / f; }
    UNetConfig unet_config() const;

    // Copy with the conditioner dims synced to the model dims, the form the
    // Model constructor stores and checkpoints echo.
    ModelConfig normalized() const;

    bool operator==(const ModelConfig&) const = default;
};

// Owns every parameter plus the main denoiser, the optional RefineNet clone,
// the conditioner and the schedule. Parameter names: "unet.*", "cond.*",
// "refine.*".
class Model {
public:
    Model(const ModelConfig& cfg, uint64_t init_seed, bool with_refine);

    // Copies every unet.* value into the matching refine.* parameter.
    void init_refine_from_unet();

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const Denoiser& unet() const { return *unet_; }
    const Denoiser* refine() const { return refine_.get(); }
    const Conditioner& conditioner() const { return *cond_; }
    const NoiseSchedule& schedule() const { return sched_; }
    const ModelConfig& config() const { return cfg_; }
    uint64_t init_seed() const { return init_seed_; }

private:
    ModelConfig cfg_;
    uint64_t init_seed_;
    ParamStore params_;
    NoiseSchedule sched_;
    std::unique_ptr<Denoiser> unet_;
    std::unique_ptr<Conditioner> cond_;
    std::unique_ptr<Denoiser> refine_;
};

}  // namespace ink
