#pragma once

#include <optional>
#include <vector>

#include "ink/model.hpp"
#include "ink/tape.hpp"
#include "ink/tensor.hpp"

namespace ink {

// Decoder self-attention features captured from a RefineNet forward, in
// injection-site order.
struct FeatureStash {
    std::vector<Tensor> features;
};

// Pads a noised subject latent [c,h,w] to the denoiser's [2c+1,h,w] input
// with a zero mask channel and zero source channels.
Tensor subject_bundle(const Tensor& z_obj_t);

// Noises the subject latent at `timestep`, runs the refine denoiser over the
// subject's detail tokens (no text branch), and returns the node ids of its
// decoder self-attention features. Everything stays on the caller's tape so
// gradients can flow back from an injection site into the refine branch.
std::vector<int> refine_stash_nodes(Tape& t, const Model& model, const Tensor& x_obj,
                                    int timestep, const Tensor& subj_noise);

// Value-level variant for inference.
FeatureStash stash_features(const Model& model, const Tensor& x_obj, int timestep,
                            const Tensor& subj_noise);

// One conditional noise prediction. With the gate on and a subject present,
// the stash is recomputed at `timestep` and injected into the main denoiser;
// otherwise this is a plain forward over the same weights. `image_branch`
// false drops the image cross-attention branch entirely (text-only variant).
Tensor run_with_refine(const Model& model, const Tensor& z_tilde, int timestep,
                       const ConditionBundle& cond, double beta,
                       const std::optional<Tensor>& x_obj, const Tensor& subj_noise,
                       bool refine_gate, bool image_branch = true);

}  // namespace ink
