#include "ink/refiner.hpp"

#include "ink/codec.hpp"
#include "ink/common.hpp"
#include "ink/schedule.hpp"

namespace ink {

Tensor subject_bundle(const Tensor& z_obj_t) {
    if (z_obj_t.rank() != 3)
        throw DataError("subject_bundle: latent must be [c,h,w], got " + z_obj_t.shape_str());
    const int c = z_obj_t.shape[0], h = z_obj_t.shape[1], w = z_obj_t.shape[2];
    Tensor out = Tensor::zeros({2 * c + 1, h, w});
    std::copy(z_obj_t.data.begin(), z_obj_t.data.end(), out.data.begin());
    return out;
}

std::vector<int> refine_stash_nodes(Tape& t, const Model& model, const Tensor& x_obj,
                                    int timestep, const Tensor& subj_noise) {
    if (!model.refine())
        throw DataError("refine_stash_nodes: model was built without a refine branch");
    const Tensor z_obj = encode(x_obj, model.config().f);
    const Tensor z_t = add_noise(z_obj, timestep, subj_noise, model.schedule());
    const int bundle = t.input(subject_bundle(z_t));
    CondNodes cn;
    cn.image = model.conditioner().encode_detail(t, x_obj);
    const Denoiser::Forward fwd =
        model.refine()->forward(t, bundle, timestep, cn, 1.0, nullptr);
    return fwd.stash;
}

FeatureStash stash_features(const Model& model, const Tensor& x_obj, int timestep,
                            const Tensor& subj_noise) {
    Tape t(false);
    const std::vector<int> nodes = refine_stash_nodes(t, model, x_obj, timestep, subj_noise);
    FeatureStash out;
    out.features.reserve(nodes.size());
    for (int node : nodes) out.features.push_back(t.val(node));
    return out;
}

Tensor run_with_refine(const Model& model, const Tensor& z_tilde, int timestep,
                       const ConditionBundle& cond, double beta,
                       const std::optional<Tensor>& x_obj, const Tensor& subj_noise,
                       bool refine_gate, bool image_branch) {
    Tape t(false);
    std::vector<int> stash;
    const std::vector<int>* inject = nullptr;
    if (refine_gate && x_obj.has_value()) {
        stash = refine_stash_nodes(t, model, *x_obj, timestep, subj_noise);
        inject = &stash;
    }
    const int z = t.input(z_tilde);
    CondNodes cn;
    cn.text = t.input(cond.text);
    if (image_branch) cn.image = t.input(cond.image_tokens);
    const Denoiser::Forward fwd = model.unet().forward(t, z, timestep, cn, beta, inject);
    return t.val(fwd.out);
}

}  // namespace ink
