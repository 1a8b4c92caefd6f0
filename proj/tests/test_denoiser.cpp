#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <optional>
#include <vector>

#include "ink/common.hpp"
#include "ink/denoiser.hpp"
#include "ink/params.hpp"
#include "ink/rng.hpp"
#include "ink/tape.hpp"
#include "ink/tensor.hpp"

using namespace ink;

namespace {

UNetConfig small_config() {
    UNetConfig cfg;
    cfg.c = 12;
    cfg.h = 8;
    cfg.w = 8;
    cfg.c0 = 16;
    cfg.c1 = 24;
    cfg.cond_dim = 16;
    cfg.temb_dim = 16;
    return cfg;
}

struct Net {
    ParamStore ps;
    Denoiser den;
    Net(const UNetConfig& cfg, uint64_t seed = 5) : den(make(cfg, ps, seed)) {}

private:
    static Denoiser make(const UNetConfig& cfg, ParamStore& ps, uint64_t seed) {
        Rng rng(seed);
        return Denoiser(cfg, "unet.", ps, rng);
    }
};

Tensor forward_value(Net& net, const Tensor& z_tilde, int timestep,
                     const std::optional<Tensor>& text, const std::optional<Tensor>& image,
                     double beta) {
    Tape t(false);
    CondNodes cn;
    if (text) cn.text = t.input(*text);
    if (image) cn.image = t.input(*image);
    Denoiser::Forward fwd = net.den.forward(t, t.input(z_tilde), timestep, cn, beta, nullptr);
    return t.val(fwd.out);
}

}  // namespace

TEST_CASE("predict_noise: 16x16 input with c=48 gives a 48x16x16 output") {
    UNetConfig cfg;
    cfg.c = 48;
    cfg.h = 16;
    cfg.w = 16;
    cfg.c0 = 16;
    cfg.c1 = 24;
    cfg.cond_dim = 16;
    cfg.temb_dim = 16;
    Net net(cfg);
    Rng rng(3);
    Tensor z = Tensor::randn({2 * 48 + 1, 16, 16}, rng, 0.5);
    Tensor text = Tensor::randn({4, 16}, rng, 0.5);
    Tensor out = forward_value(net, z, 10, text, std::nullopt, 0.3);
    CHECK(out.shape == std::vector<int>{48, 16, 16});
    CHECK(out.all_finite());
}

TEST_CASE("predict_noise: deterministic for fixed weights and inputs") {
    Net net(small_config());
    Rng rng(4);
    Tensor z = Tensor::randn({25, 8, 8}, rng, 0.5);
    Tensor text = Tensor::randn({5, 16}, rng, 0.5);
    Tensor image = Tensor::randn({6, 16}, rng, 0.5);
    Tensor a = forward_value(net, z, 77, text, image, 0.4);
    Tensor b = forward_value(net, z, 77, text, image, 0.4);
    CHECK(a.max_abs_diff(b) == 0.0);
}

TEST_CASE("predict_noise: beta=0 without injection matches the image-branch-free network") {
    Net net(small_config());
    Rng rng(6);
    Tensor z = Tensor::randn({25, 8, 8}, rng, 0.5);
    Tensor text = Tensor::randn({5, 16}, rng, 0.5);
    Tensor image = Tensor::randn({6, 16}, rng, 0.5);
    Tensor with_zero_beta = forward_value(net, z, 3, text, image, 0.0);
    Tensor without_branch = forward_value(net, z, 3, text, std::nullopt, 0.0);
    CHECK(with_zero_beta.max_abs_diff(without_branch) == 0.0);
}

TEST_CASE("predict_noise: null conditions and beta=0 stay finite") {
    Net net(small_config());
    Rng rng(8);
    Tensor z = Tensor::randn({25, 8, 8}, rng, 1.0);
    Tensor null_text = Tensor::zeros({5, 16});
    Tensor null_image = Tensor::zeros({6, 16});
    Tensor out = forward_value(net, z, 999, null_text, null_image, 0.0);
    CHECK(out.all_finite());
}

TEST_CASE("predict_noise: input validation") {
    Net net(small_config());
    Rng rng(9);
    Tensor text = Tensor::randn({5, 16}, rng, 0.5);

    Tape t(false);
    CondNodes cn;
    cn.text = t.input(text);
    int bad_c = t.input(Tensor::zeros({24, 8, 8}));
    CHECK_THROWS_AS(net.den.forward(t, bad_c, 0, cn, 0.3, nullptr), DataError);

    int ok = t.input(Tensor::zeros({25, 8, 8}));
    CHECK_THROWS_AS(net.den.forward(t, ok, -2, cn, 0.3, nullptr), DataError);

    std::vector<int> short_inject = {t.input(Tensor::zeros({4, 24}))};
    CHECK_THROWS_AS(net.den.forward(t, ok, 0, cn, 0.3, &short_inject), DataError);

    CondNodes wrong_width;
    wrong_width.text = t.input(Tensor::zeros({5, 8}));
    CHECK_THROWS_AS(net.den.forward(t, ok, 0, wrong_width, 0.3, nullptr), DataError);
}

TEST_CASE("injection changes values but never shapes") {
    Net net(small_config());
    Rng rng(10);
    Tensor z = Tensor::randn({25, 8, 8}, rng, 0.5);
    Tensor text = Tensor::randn({5, 16}, rng, 0.5);

    Tape t(false);
    CondNodes cn;
    cn.text = t.input(text);
    int zi = t.input(z);
    Denoiser::Forward plain = net.den.forward(t, zi, 12, cn, 0.3, nullptr);

    std::vector<int> inject = {t.input(Tensor::randn({5, 24}, rng, 0.5)),
                               t.input(Tensor::randn({7, 16}, rng, 0.5))};
    Denoiser::Forward injected = net.den.forward(t, zi, 12, cn, 0.3, &inject);

    CHECK(t.val(plain.out).shape == t.val(injected.out).shape);
    CHECK(t.val(plain.out).max_abs_diff(t.val(injected.out)) > 0.0);
    REQUIRE(plain.stash.size() == 2);
    REQUIRE(injected.stash.size() == 2);
    for (size_t i = 0; i < plain.stash.size(); ++i)
        CHECK(t.val(plain.stash[i]).shape == t.val(injected.stash[i]).shape);
}

TEST_CASE("stash: two decoder sites with the configured widths") {
    Net net(small_config());
    Rng rng(11);
    Tensor z = Tensor::randn({25, 8, 8}, rng, 0.5);
    Tape t(false);
    CondNodes cn;
    cn.text = t.input(Tensor::randn({5, 16}, rng, 0.5));
    Denoiser::Forward fwd = net.den.forward(t, t.input(z), 7, cn, 0.3, nullptr);
    std::vector<int> widths = net.den.stash_widths();
    REQUIRE(fwd.stash.size() == widths.size());
    CHECK(t.val(fwd.stash[0]).shape == std::vector<int>{16, widths[0]});
    CHECK(t.val(fwd.stash[1]).shape == std::vector<int>{64, widths[1]});
    for (int node : fwd.stash) CHECK(t.val(node).all_finite());
}

TEST_CASE("decoupled attention: output is affine in beta with slope Z'") {
    ParamStore ps;
    Rng rng(12);
    ps.add("Wq", Tensor::randn({16, 16}, rng, 0.4));
    ps.add("Wk", Tensor::randn({16, 16}, rng, 0.4));
    ps.add("Wv", Tensor::randn({16, 16}, rng, 0.4));
    ps.add("Wki", Tensor::randn({16, 16}, rng, 0.4));
    ps.add("Wvi", Tensor::randn({16, 16}, rng, 0.4));
    Tensor q = Tensor::randn({6, 16}, rng, 0.7);
    Tensor text = Tensor::randn({4, 16}, rng, 0.7);
    Tensor image = Tensor::randn({5, 16}, rng, 0.7);

    auto run = [&](std::optional<bool> with_text, double beta) {
        Tape t(false);
        int wq = t.param(ps.get("Wq")), wk = t.param(ps.get("Wk")), wv = t.param(ps.get("Wv"));
        int wki = t.param(ps.get("Wki")), wvi = t.param(ps.get("Wvi"));
        std::optional<int> tn, in;
        if (with_text && *with_text) tn = t.input(text);
        in = t.input(image);
        return t.val(decoupled_cross_attention(t, t.input(q), tn, in, wq, wk, wv, wki, wvi, beta));
    };

    Tensor at0 = run(true, 0.0);
    Tensor at_half = run(true, 0.5);
    Tensor at1 = run(true, 1.0);
    Tensor z_img = run(false, 1.0);

    for (size_t i = 0; i < at0.data.size(); ++i) {
        double mid = 0.5 * (at0.data[i] + at1.data[i]);
        CHECK(std::abs(at_half.data[i] - mid) < 1e-10);
        double slope = at1.data[i] - at0.data[i];
        CHECK(std::abs(slope - z_img.data[i]) < 1e-10);
    }
}

TEST_CASE("injected attention: duplicate token acts as a doubled key") {
    const int n = 3, d = 4;
    ParamStore ps;
    Rng rng(14);
    ps.add("Wq", Tensor::randn({d, d}, rng, 0.6));
    ps.add("Wk", Tensor::randn({d, d}, rng, 0.6));
    ps.add("Wv", Tensor::randn({d, d}, rng, 0.6));
    Tensor ctx = Tensor::randn({n, d}, rng, 0.9);
    Tensor obj({1, d});
    for (int c = 0; c < d; ++c) obj.at(0, c) = ctx.at(1, c);

    Tape t(false);
    Tensor got = t.val(injected_self_attention(t, t.input(ctx), t.input(obj),
                                               t.param(ps.get("Wq")), t.param(ps.get("Wk")),
                                               t.param(ps.get("Wv"))));

    auto proj = [&](const Tensor& rows, const char* w, int r, int c) {
        double acc = 0.0;
        for (int k = 0; k < d; ++k) acc += rows.at(r, k) * ps.get(w).value.at(k, c);
        return acc;
    };
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (int i = 0; i < n; ++i) {
        std::vector<double> logits(static_cast<size_t>(n));
        for (int j = 0; j < n; ++j) {
            double dot = 0.0;
            for (int c = 0; c < d; ++c) dot += proj(ctx, "Wq", i, c) * proj(ctx, "Wk", j, c);
            logits[static_cast<size_t>(j)] = dot * scale;
        }
        // Key 1 appears twice, so its softmax weight doubles.
        double denom = 0.0;
        std::vector<double> weight(static_cast<size_t>(n));
        for (int j = 0; j < n; ++j) {
            double mult = j == 1 ? 2.0 : 1.0;
            weight[static_cast<size_t>(j)] = mult * std::exp(logits[static_cast<size_t>(j)]);
            denom += weight[static_cast<size_t>(j)];
        }
        for (int c = 0; c < d; ++c) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j)
                acc += weight[static_cast<size_t>(j)] / denom * proj(ctx, "Wv", j, c);
            CHECK(std::abs(got.at(i, c) - acc) < 1e-12);
        }
    }
}

TEST_CASE("attention softmax rows sum to one") {
    Tape t(false);
    Rng rng(13);
    Tensor logits = Tensor::randn({8, 8}, rng, 12.0);
    logits.at(0, 0) = 30.0;
    logits.at(1, 1) = -30.0;
    Tensor sm = t.val(t.softmax_rows(t.input(logits)));
    for (int r = 0; r < 8; ++r) {
        double sum = 0.0;
        for (int c = 0; c < 8; ++c) sum += sm.at(r, c);
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
}
