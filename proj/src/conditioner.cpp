#include "ink/conditioner.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "ink/common.hpp"

namespace ink {

namespace {

void check_resolution(const Tensor& x_obj, int res, const char* who) {
    if (x_obj.rank() != 3 || x_obj.dim(0) != 3 || x_obj.dim(1) != res || x_obj.dim(2) != res)
        throw DataError(std::string(who) + ": want a [3," + std::to_string(res) + "," +
                        std::to_string(res) + "] image, got " + x_obj.shape_str());
}

}  // namespace

Conditioner::Conditioner(const CondConfig& cfg, ParamStore& params, Rng& init_rng)
    : cfg_(cfg), params_(&params) {
    if (cfg.res % cfg.patch != 0)
        throw DataError("Conditioner: resolution not divisible by patch size");
    int pdim = 3 * cfg.patch * cfg.patch;
    int d = cfg.cond_dim;

    Rng frozen(cfg.embed_seed);
    params.add("cond.text_embed", Tensor::randn({cfg.vocab, d}, frozen, 0.5)).trainable = false;
    params.add("cond.patch.w", Tensor::randn({pdim, d}, frozen, 1.0 / std::sqrt(pdim))).trainable =
        false;
    params.add("cond.patch.b", Tensor::zeros({d})).trainable = false;
    params
        .add("cond.proj.w",
             Tensor::randn({d, cfg.image_tokens * d}, frozen, 1.0 / std::sqrt(d)))
        .trainable = false;
    params.add("cond.proj.b", Tensor::zeros({cfg.image_tokens * d})).trainable = false;

    params.add("cond.detail_mlp.w1",
               Tensor::randn({d, cfg.detail_hidden}, init_rng, 1.0 / std::sqrt(d)));
    params.add("cond.detail_mlp.b1", Tensor::zeros({cfg.detail_hidden}));
    params.add("cond.detail_mlp.w2", Tensor::randn({cfg.detail_hidden, d}, init_rng,
                                                   1.0 / std::sqrt(cfg.detail_hidden)));
    params.add("cond.detail_mlp.b2", Tensor::zeros({d}));
}

std::vector<int> Conditioner::tokenize(const std::string& prompt) const {
    std::string lowered = prompt;
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::istringstream in(lowered);
    std::vector<int> ids;
    std::string word;
    while (in >> word && static_cast<int>(ids.size()) < cfg_.text_len)
        ids.push_back(1 + static_cast<int>(fnv1a(word) % static_cast<uint64_t>(cfg_.vocab - 1)));
    ids.resize(static_cast<size_t>(cfg_.text_len), 0);
    return ids;
}

Tensor Conditioner::embed_text(const std::string& prompt) const {
    const Tensor& table = params_->get("cond.text_embed").value;
    std::vector<int> ids = tokenize(prompt);
    Tensor out({cfg_.text_len, cfg_.cond_dim});
    for (int r = 0; r < cfg_.text_len; ++r)
        for (int c = 0; c < cfg_.cond_dim; ++c) out.at(r, c) = table.at(ids[static_cast<size_t>(r)], c);
    return out;
}

int Conditioner::patch_token_count() const {
    int g = cfg_.res / cfg_.patch;
    return g * g;
}

Tensor Conditioner::patch_features(const Tensor& x_obj) const {
    check_resolution(x_obj, cfg_.res, "patch_features");
    int p = cfg_.patch;
    int grid = cfg_.res / p;
    int pdim = 3 * p * p;
    const Tensor& w = params_->get("cond.patch.w").value;
    const Tensor& b = params_->get("cond.patch.b").value;
    Tensor out({grid * grid, cfg_.cond_dim});
    std::vector<double> patch(static_cast<size_t>(pdim));
    for (int py = 0; py < grid; ++py)
        for (int px = 0; px < grid; ++px) {
            int idx = 0;
            for (int c = 0; c < 3; ++c)
                for (int dy = 0; dy < p; ++dy)
                    for (int dx = 0; dx < p; ++dx)
                        patch[static_cast<size_t>(idx++)] = x_obj.at(c, py * p + dy, px * p + dx);
            int row = py * grid + px;
            for (int o = 0; o < cfg_.cond_dim; ++o) {
                double acc = b[o];
                for (int k = 0; k < pdim; ++k) acc += patch[static_cast<size_t>(k)] * w.at(k, o);
                out.at(row, o) = acc;
            }
        }
    return out;
}

Tensor Conditioner::project_image(const Tensor& x_obj) const {
    check_resolution(x_obj, cfg_.res, "project_image");
    Tensor feats = patch_features(x_obj);
    int d = cfg_.cond_dim;
    Tensor pooled({d});
    for (int r = 0; r < feats.dim(0); ++r)
        for (int c = 0; c < d; ++c) pooled[c] += feats.at(r, c);
    for (int c = 0; c < d; ++c) pooled[c] /= feats.dim(0);

    const Tensor& w = params_->get("cond.proj.w").value;
    const Tensor& b = params_->get("cond.proj.b").value;
    Tensor out({cfg_.image_tokens, d});
    for (int o = 0; o < cfg_.image_tokens * d; ++o) {
        double acc = b[o];
        for (int k = 0; k < d; ++k) acc += pooled[k] * w.at(k, o);
        out.data[static_cast<size_t>(o)] = acc;
    }
    return out;
}

int Conditioner::encode_detail(Tape& t, const Tensor& x_obj) const {
    int x = t.input(patch_features(x_obj));
    int w1 = t.param(params_->get("cond.detail_mlp.w1"));
    int b1 = t.param(params_->get("cond.detail_mlp.b1"));
    int w2 = t.param(params_->get("cond.detail_mlp.w2"));
    int b2 = t.param(params_->get("cond.detail_mlp.b2"));
    int h = t.silu(t.add_rowvec(t.matmul(x, w1), b1));
    return t.add_rowvec(t.matmul(h, w2), b2);
}

Tensor Conditioner::encode_detail_value(const Tensor& x_obj) const {
    Tape t(false);
    return t.val(encode_detail(t, x_obj));
}

ConditionBundle Conditioner::null_bundle() const {
    ConditionBundle b;
    b.text = embed_text("");
    b.image_tokens = Tensor::zeros({cfg_.image_tokens, cfg_.cond_dim});
    b.text_null = true;
    b.image_null = true;
    return b;
}

ConditionBundle Conditioner::bundle(const std::optional<std::string>& prompt,
                                    const std::optional<Tensor>& x_obj) const {
    ConditionBundle b = null_bundle();
    if (prompt) {
        b.text = embed_text(*prompt);
        b.text_null = false;
    }
    if (x_obj) {
        b.image_tokens = project_image(*x_obj);
        b.image_null = false;
    }
    return b;
}

}  // namespace ink
