#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ink/params.hpp"
#include "ink/tape.hpp"
#include "ink/tensor.hpp"

namespace ink {

struct CondConfig {
    int res = 32;            // expected subject-image resolution (pixels)
    int patch = 8;           // patch embedder size
    int cond_dim = 32;       // token width d
    int text_len = 16;       // text sequence length
    int image_tokens = 16;   // projected image token count N
    int detail_hidden = 64;  // detail MLP hidden width
    int vocab = 4096;
    uint64_t embed_seed = 9001;  // seed for all frozen encoder weights

    bool operator==(const CondConfig&) const = default;
};

// All conditioning signals of one request. Null text is the embedding of the
// empty prompt; null image tokens are an all-zero sequence.
struct ConditionBundle {
    Tensor text;          // [text_len, cond_dim]
    Tensor image_tokens;  // [N, cond_dim]
    bool text_null = true;
    bool image_null = true;
};

// Produces text embeddings, projected subject tokens (via a frozen projector),
// and detail patch tokens (via the trainable MLP). Frozen weights are drawn
// from embed_seed alone so conditioning is reproducible from a manifest.
class Conditioner {
public:
    Conditioner(const CondConfig& cfg, ParamStore& params, Rng& init_rng);

    std::vector<int> tokenize(const std::string& prompt) const;
    Tensor embed_text(const std::string& prompt) const;

    // Frozen pre-MLP patch features, [P, cond_dim] with P = (res/patch)².
    Tensor patch_features(const Tensor& x_obj) const;

    // Frozen projection to exactly N image tokens, [N, cond_dim].
    Tensor project_image(const Tensor& x_obj) const;

    // Detail tokens through the trainable MLP, built on the caller's tape.
    int encode_detail(Tape& t, const Tensor& x_obj) const;
    // Convenience value-level variant for inference.
    Tensor encode_detail_value(const Tensor& x_obj) const;

    ConditionBundle null_bundle() const;
    ConditionBundle bundle(const std::optional<std::string>& prompt,
                           const std::optional<Tensor>& x_obj) const;

    int patch_token_count() const;
    const CondConfig& config() const { return cfg_; }

private:
    CondConfig cfg_;
    ParamStore* params_;
};

}  // namespace ink
