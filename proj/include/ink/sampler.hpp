#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ink/model.hpp"
#include "ink/tensor.hpp"

namespace ink {

struct GuidanceConfig {
    double w = 7.5;       // classifier-free guidance scale
    double beta = 0.3;    // image control strength
    int steps = 50;       // sampler step count
    bool blend = true;    // latent background blending
    bool composite = true;
    bool refine = true;   // feature injection from the refine branch
    bool assign = true;   // image cross-attention branch; off = text-only
    uint64_t seed = 0;
};

struct InpaintRequest {
    Tensor x_s;   // [3,res,res] source at model resolution
    Tensor mask;  // [res,res] binary, nonzero somewhere
    std::optional<Tensor> x_obj;
    std::optional<std::string> prompt;
};

struct SampleStats {
    int model_calls = 0;
    int stash_calls = 0;
};

// Called once per step after the blend stage with the current latent, and a
// final time at t_identity after the loop.
using StepObserver = std::function<void(int k, int t, const Tensor& z)>;

// eps_uncond + w·(eps_cond − eps_uncond); w of exactly 0 or 1 returns the
// matching branch unchanged.
Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double w);

// z_s_t ⊙ (1−m*) + z_t ⊙ m* as a per-cell select over a binary latent mask.
Tensor blend_step(const Tensor& z_t, const Tensor& z_s_t, const Tensor& m_star);

// The visited (t, t_prev) pairs in execution order: strictly descending t
// ending with t_prev = t_identity.
std::vector<std::pair<int, int>> sampler_timesteps(int T, int steps);

// Full deterministic sampling loop at model resolution: init from seed, blend,
// assemble, two guidance branches per step (stash injection on the conditional
// one), combine, deterministic update, decode, composite.
Tensor sample(const Model& model, const InpaintRequest& req, const GuidanceConfig& cfg,
              SampleStats* stats = nullptr, const StepObserver& observer = {});

// Observer that writes one NPY tensor per step into dir plus an index.json
// describing the step order.
StepObserver latent_dump_observer(const std::string& dir);

// Raw little-endian float64 NPY writer used by the latent dump.
void write_npy(const std::string& path, const Tensor& t);

}  // namespace ink
