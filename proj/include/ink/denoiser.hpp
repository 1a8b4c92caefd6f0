#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ink/params.hpp"
#include "ink/tape.hpp"
#include "ink/tensor.hpp"

namespace ink {

struct UNetConfig {
    int c = 48;        // latent channels (input bundle has 2c+1, output has c)
    int h = 8;         // latent height
    int w = 8;         // latent width
    int c0 = 24;       // channels at full latent resolution
    int c1 = 32;       // channels at half resolution
    int cond_dim = 32; // conditioning token width
    int temb_dim = 32; // sinusoidal timestep embedding width
};

// Tape node ids of the conditioning token matrices for one forward pass.
// An absent branch contributes nothing at the cross-attention sites.
struct CondNodes {
    std::optional<int> text;
    std::optional<int> image;
};

// Encoder-decoder noise predictor over [2c+1,h,w] bundles. Two resolutions,
// two residual blocks plus one self-attention and one cross-attention block
// per resolution on each path. Decoder self-attention sites accept injected
// key/value tokens and report their post-norm input tokens for stashing.
class Denoiser {
public:
    struct Forward {
        int out = -1;            // predicted noise node, [c,h,w]
        std::vector<int> stash;  // decoder self-attention input tokens, decoder order
    };

    Denoiser(const UNetConfig& cfg, std::string prefix, ParamStore& params, Rng& init_rng);

    // `inject`, when present, holds one token-matrix node per decoder
    // self-attention site (same order as Forward::stash).
    Forward forward(Tape& t, int z_tilde, int timestep, const CondNodes& cond, double beta,
                    const std::vector<int>* inject) const;

    Tensor timestep_embedding(int timestep) const;  // [1, temb_dim]

    int decoder_sa_count() const { return 2; }
    // Token widths at the decoder self-attention sites, decoder order.
    std::vector<int> stash_widths() const { return {cfg_.c1, cfg_.c0}; }
    const UNetConfig& config() const { return cfg_; }
    const std::string& prefix() const { return prefix_; }

private:
    struct Ctx;  // per-forward state (tape, temb node, conditioning)

    void register_params(Rng& rng);
    void register_res_block(const std::string& name, int cin, int cout, Rng& rng);
    void register_attn(const std::string& name, int tokens, int width, Rng& rng);

    int res_block(Ctx& cx, int x, const std::string& name, int cin, int cout) const;
    int self_attn(Ctx& cx, int x, const std::string& name, int hh, int ww,
                  std::optional<int> inject_node, std::vector<int>* stash) const;
    int cross_attn(Ctx& cx, int x, const std::string& name, int hh, int ww) const;

    UNetConfig cfg_;
    std::string prefix_;
    ParamStore* params_;
};

}  // namespace ink
