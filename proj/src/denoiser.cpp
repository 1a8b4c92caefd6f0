#include "ink/denoiser.hpp"

#include <cmath>

#include "ink/common.hpp"

namespace ink {

struct Denoiser::Ctx {
    Tape* t;
    int silu_temb;  // [1, temb_dim]
    const CondNodes* cond;
    double beta;
};

Denoiser::Denoiser(const UNetConfig& cfg, std::string prefix, ParamStore& params, Rng& init_rng)
    : cfg_(cfg), prefix_(std::move(prefix)), params_(&params) {
    if (cfg.h % 2 != 0 || cfg.w % 2 != 0)
        throw DataError("Denoiser: latent dimensions must be even");
    register_params(init_rng);
}

namespace {

Tensor conv_init(int cout, int cin, int k, Rng& rng) {
    return Tensor::randn({cout, cin, k, k}, rng, 1.0 / std::sqrt(static_cast<double>(cin) * k * k));
}

Tensor mat_init(int rows, int cols, Rng& rng) {
    return Tensor::randn({rows, cols}, rng, 1.0 / std::sqrt(static_cast<double>(rows)));
}

}  // namespace

void Denoiser::register_res_block(const std::string& name, int cin, int cout, Rng& rng) {
    ParamStore& ps = *params_;
    ps.add(name + ".ln1.g", Tensor::full({cin}, 1.0));
    ps.add(name + ".ln1.b", Tensor::zeros({cin}));
    ps.add(name + ".conv1.w", conv_init(cout, cin, 3, rng));
    ps.add(name + ".conv1.b", Tensor::zeros({cout}));
    ps.add(name + ".temb.w", mat_init(cfg_.temb_dim, cout, rng));
    ps.add(name + ".temb.b", Tensor::zeros({cout}));
    ps.add(name + ".ln2.g", Tensor::full({cout}, 1.0));
    ps.add(name + ".ln2.b", Tensor::zeros({cout}));
    ps.add(name + ".conv2.w", conv_init(cout, cout, 3, rng));
    ps.add(name + ".conv2.b", Tensor::zeros({cout}));
    if (cin != cout) {
        ps.add(name + ".skip.w", conv_init(cout, cin, 1, rng));
        ps.add(name + ".skip.b", Tensor::zeros({cout}));
    }
}

void Denoiser::register_attn(const std::string& name, int tokens, int width, Rng& rng) {
    ParamStore& ps = *params_;
    bool cross = name.find("cross_attn") != std::string::npos;
    ps.add(name + ".pos", Tensor::randn({tokens, width}, rng, 0.1));
    ps.add(name + ".norm.g", Tensor::full({width}, 1.0));
    ps.add(name + ".norm.b", Tensor::zeros({width}));
    if (cross) {
        ps.add(name + ".W_q", mat_init(width, width, rng));
        ps.add(name + ".W_k", mat_init(cfg_.cond_dim, width, rng));
        ps.add(name + ".W_v", mat_init(cfg_.cond_dim, width, rng));
        ps.add(name + ".W_k_img", mat_init(cfg_.cond_dim, width, rng));
        ps.add(name + ".W_v_img", mat_init(cfg_.cond_dim, width, rng));
    } else {
        ps.add(name + ".W_qs", mat_init(width, width, rng));
        ps.add(name + ".W_ks", mat_init(width, width, rng));
        ps.add(name + ".W_vs", mat_init(width, width, rng));
    }
    ps.add(name + ".W_out", mat_init(width, width, rng));
}

void Denoiser::register_params(Rng& rng) {
    ParamStore& ps = *params_;
    const int c = cfg_.c, c0 = cfg_.c0, c1 = cfg_.c1;
    int n0 = cfg_.h * cfg_.w;
    int n1 = (cfg_.h / 2) * (cfg_.w / 2);

    ps.add(prefix_ + "conv_in.w", conv_init(c0, 2 * c + 1, 3, rng));
    ps.add(prefix_ + "conv_in.b", Tensor::zeros({c0}));

    register_res_block(prefix_ + "enc.res0.block0", c0, c0, rng);
    register_res_block(prefix_ + "enc.res0.block1", c0, c0, rng);
    register_attn(prefix_ + "enc.res0.self_attn", n0, c0, rng);
    register_attn(prefix_ + "enc.res0.cross_attn", n0, c0, rng);

    ps.add(prefix_ + "down.w", conv_init(c1, c0, 3, rng));
    ps.add(prefix_ + "down.b", Tensor::zeros({c1}));

    register_res_block(prefix_ + "enc.res1.block0", c1, c1, rng);
    register_res_block(prefix_ + "enc.res1.block1", c1, c1, rng);
    register_attn(prefix_ + "enc.res1.self_attn", n1, c1, rng);
    register_attn(prefix_ + "enc.res1.cross_attn", n1, c1, rng);

    register_res_block(prefix_ + "dec.res1.block0", c1, c1, rng);
    register_res_block(prefix_ + "dec.res1.block1", c1, c1, rng);
    register_attn(prefix_ + "dec.res1.self_attn", n1, c1, rng);
    register_attn(prefix_ + "dec.res1.cross_attn", n1, c1, rng);

    ps.add(prefix_ + "up.w", conv_init(c0, c1, 3, rng));
    ps.add(prefix_ + "up.b", Tensor::zeros({c0}));

    register_res_block(prefix_ + "dec.res0.block0", 2 * c0, c0, rng);
    register_res_block(prefix_ + "dec.res0.block1", c0, c0, rng);
    register_attn(prefix_ + "dec.res0.self_attn", n0, c0, rng);
    register_attn(prefix_ + "dec.res0.cross_attn", n0, c0, rng);

    ps.add(prefix_ + "out.w", conv_init(c, c0, 3, rng));
    ps.add(prefix_ + "out.b", Tensor::zeros({c}));
}

Tensor Denoiser::timestep_embedding(int timestep) const {
    int half = cfg_.temb_dim / 2;
    Tensor out({1, cfg_.temb_dim});
    for (int k = 0; k < half; ++k) {
        double freq = std::exp(-std::log(10000.0) * k / half);
        out.at(0, k) = std::sin(timestep * freq);
        out.at(0, half + k) = std::cos(timestep * freq);
    }
    return out;
}

int Denoiser::res_block(Ctx& cx, int x, const std::string& name, int cin, int cout) const {
    Tape& t = *cx.t;
    ParamStore& ps = *params_;
    int hh = t.val(x).dim(1), ww = t.val(x).dim(2);

    int tok = t.chw_to_tokens(x);
    int n1 = t.layer_norm_rows(tok, t.param(ps.get(name + ".ln1.g")),
                               t.param(ps.get(name + ".ln1.b")));
    int a = t.tokens_to_chw(t.silu(n1), hh, ww);
    int h = t.conv2d(a, t.param(ps.get(name + ".conv1.w")), t.param(ps.get(name + ".conv1.b")), 1,
                     1);
    int tproj = t.add_rowvec(t.matmul(cx.silu_temb, t.param(ps.get(name + ".temb.w"))),
                             t.param(ps.get(name + ".temb.b")));
    h = t.add_chan_vec(h, tproj);

    int tok2 = t.chw_to_tokens(h);
    int n2 = t.layer_norm_rows(tok2, t.param(ps.get(name + ".ln2.g")),
                               t.param(ps.get(name + ".ln2.b")));
    int b = t.tokens_to_chw(t.silu(n2), hh, ww);
    int h2 = t.conv2d(b, t.param(ps.get(name + ".conv2.w")), t.param(ps.get(name + ".conv2.b")), 1,
                      1);

    int skip = x;
    if (cin != cout)
        skip = t.conv2d(x, t.param(ps.get(name + ".skip.w")), t.param(ps.get(name + ".skip.b")), 1,
                        0);
    return t.add(skip, h2);
}

int Denoiser::self_attn(Ctx& cx, int x, const std::string& name, int hh, int ww,
                        std::optional<int> inject_node, std::vector<int>* stash) const {
    Tape& t = *cx.t;
    ParamStore& ps = *params_;
    int u = t.add(t.chw_to_tokens(x), t.param(ps.get(name + ".pos")));
    int hn = t.layer_norm_rows(u, t.param(ps.get(name + ".norm.g")),
                               t.param(ps.get(name + ".norm.b")));
    if (stash) stash->push_back(hn);
    int att = injected_self_attention(t, hn, inject_node, t.param(ps.get(name + ".W_qs")),
                                      t.param(ps.get(name + ".W_ks")),
                                      t.param(ps.get(name + ".W_vs")));
    int out = t.add(u, t.matmul(att, t.param(ps.get(name + ".W_out"))));
    return t.tokens_to_chw(out, hh, ww);
}

int Denoiser::cross_attn(Ctx& cx, int x, const std::string& name, int hh, int ww) const {
    Tape& t = *cx.t;
    ParamStore& ps = *params_;
    int u = t.add(t.chw_to_tokens(x), t.param(ps.get(name + ".pos")));
    int hn = t.layer_norm_rows(u, t.param(ps.get(name + ".norm.g")),
                               t.param(ps.get(name + ".norm.b")));
    int fused = decoupled_cross_attention(
        t, hn, cx.cond->text, cx.cond->image, t.param(ps.get(name + ".W_q")),
        t.param(ps.get(name + ".W_k")), t.param(ps.get(name + ".W_v")),
        t.param(ps.get(name + ".W_k_img")), t.param(ps.get(name + ".W_v_img")), cx.beta);
    int out = t.add(u, t.matmul(fused, t.param(ps.get(name + ".W_out"))));
    return t.tokens_to_chw(out, hh, ww);
}

Denoiser::Forward Denoiser::forward(Tape& t, int z_tilde, int timestep, const CondNodes& cond,
                                    double beta, const std::vector<int>* inject) const {
    const Tensor& in = t.val(z_tilde);
    if (in.rank() != 3 || in.dim(0) != 2 * cfg_.c + 1 || in.dim(1) != cfg_.h ||
        in.dim(2) != cfg_.w)
        throw DataError(prefix_ + "forward: want [" + std::to_string(2 * cfg_.c + 1) + "," +
                        std::to_string(cfg_.h) + "," + std::to_string(cfg_.w) + "] input, got " +
                        in.shape_str());
    if (inject && static_cast<int>(inject->size()) != decoder_sa_count())
        throw DataError(prefix_ + "forward: expected " + std::to_string(decoder_sa_count()) +
                        " injected token buffers, got " + std::to_string(inject->size()));
    if (cond.text && t.val(*cond.text).dim(1) != cfg_.cond_dim)
        throw DataError(prefix_ + "forward: text token width mismatch");
    if (cond.image && t.val(*cond.image).dim(1) != cfg_.cond_dim)
        throw DataError(prefix_ + "forward: image token width mismatch");
    if (timestep < 0)
        throw DataError(prefix_ + "forward: invalid timestep " + std::to_string(timestep));

    ParamStore& ps = *params_;
    Ctx cx;
    cx.t = &t;
    cx.silu_temb = t.silu(t.input(timestep_embedding(timestep)));
    cx.cond = &cond;
    cx.beta = beta;

    const int hh = cfg_.h, ww = cfg_.w;
    const int h2 = hh / 2, w2 = ww / 2;

    int x = t.conv2d(z_tilde, t.param(ps.get(prefix_ + "conv_in.w")),
                     t.param(ps.get(prefix_ + "conv_in.b")), 1, 1);

    x = res_block(cx, x, prefix_ + "enc.res0.block0", cfg_.c0, cfg_.c0);
    x = res_block(cx, x, prefix_ + "enc.res0.block1", cfg_.c0, cfg_.c0);
    x = self_attn(cx, x, prefix_ + "enc.res0.self_attn", hh, ww, std::nullopt, nullptr);
    x = cross_attn(cx, x, prefix_ + "enc.res0.cross_attn", hh, ww);
    int skip0 = x;

    x = t.conv2d(x, t.param(ps.get(prefix_ + "down.w")), t.param(ps.get(prefix_ + "down.b")), 2,
                 1);

    x = res_block(cx, x, prefix_ + "enc.res1.block0", cfg_.c1, cfg_.c1);
    x = res_block(cx, x, prefix_ + "enc.res1.block1", cfg_.c1, cfg_.c1);
    x = self_attn(cx, x, prefix_ + "enc.res1.self_attn", h2, w2, std::nullopt, nullptr);
    x = cross_attn(cx, x, prefix_ + "enc.res1.cross_attn", h2, w2);

    Forward fwd;
    x = res_block(cx, x, prefix_ + "dec.res1.block0", cfg_.c1, cfg_.c1);
    x = res_block(cx, x, prefix_ + "dec.res1.block1", cfg_.c1, cfg_.c1);
    x = self_attn(cx, x, prefix_ + "dec.res1.self_attn", h2, w2,
                  inject ? std::optional<int>((*inject)[0]) : std::nullopt, &fwd.stash);
    x = cross_attn(cx, x, prefix_ + "dec.res1.cross_attn", h2, w2);

    x = t.conv2d(t.upsample_nearest2(x), t.param(ps.get(prefix_ + "up.w")),
                 t.param(ps.get(prefix_ + "up.b")), 1, 1);
    x = t.concat_channels(x, skip0);

    x = res_block(cx, x, prefix_ + "dec.res0.block0", 2 * cfg_.c0, cfg_.c0);
    x = res_block(cx, x, prefix_ + "dec.res0.block1", cfg_.c0, cfg_.c0);
    x = self_attn(cx, x, prefix_ + "dec.res0.self_attn", hh, ww,
                  inject ? std::optional<int>((*inject)[1]) : std::nullopt, &fwd.stash);
    x = cross_attn(cx, x, prefix_ + "dec.res0.cross_attn", hh, ww);

    fwd.out = t.conv2d(t.silu(x), t.param(ps.get(prefix_ + "out.w")),
                       t.param(ps.get(prefix_ + "out.b")), 1, 1);
    return fwd;
}

}  // namespace ink
