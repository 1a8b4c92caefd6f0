#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>

#include "ink/params.hpp"
#include "ink/rng.hpp"
#include "ink/tape.hpp"
#include "ink/tensor.hpp"

using namespace ink;

namespace {

double rel_err(double a, double b) {
    double scale = std::max({1e-8, std::abs(a), std::abs(b)});
    return std::abs(a - b) / scale;
}

using GraphFn = std::function<int(Tape&, ParamStore&)>;

double eval_loss(ParamStore& ps, const GraphFn& f) {
    Tape t(false);
    int loss = f(t, ps);
    return t.val(loss)[0];
}

// Central-difference check of every trainable element against the tape's
// analytic gradient; returns the worst relative error seen.
double max_fd_rel_err(ParamStore& ps, const GraphFn& f, double h = 1e-6) {
    ps.zero_grads();
    Tape t;
    int loss = f(t, ps);
    t.backward(loss);
    double worst = 0.0;
    for (Param* p : ps.all()) {
        if (!p->trainable) continue;
        for (size_t i = 0; i < p->value.data.size(); ++i) {
            double keep = p->value.data[i];
            p->value.data[i] = keep + h;
            double up = eval_loss(ps, f);
            p->value.data[i] = keep - h;
            double dn = eval_loss(ps, f);
            p->value.data[i] = keep;
            double fd = (up - dn) / (2.0 * h);
            worst = std::max(worst, rel_err(fd, p->grad.data[i]));
        }
    }
    return worst;
}

ParamStore make_store(std::vector<std::pair<std::string, std::vector<int>>> specs, uint64_t seed,
                      double stddev = 0.8) {
    ParamStore ps;
    Rng rng(seed);
    for (auto& [name, shape] : specs) ps.add(name, Tensor::randn(shape, rng, stddev));
    return ps;
}

}  // namespace

TEST_CASE("forward values: elementwise ops") {
    Tape t;
    int a = t.input(Tensor::from({2}, {1.0, -2.0}));
    int b = t.input(Tensor::from({2}, {3.0, 5.0}));
    CHECK(t.val(t.add(a, b))[0] == 4.0);
    CHECK(t.val(t.sub(a, b))[1] == -7.0);
    CHECK(t.val(t.mul(a, b))[1] == -10.0);
    CHECK(t.val(t.scale(a, -2.0))[0] == -2.0);

    int s = t.silu(t.input(Tensor::from({3}, {0.0, 1.0, -1.0})));
    CHECK(t.val(s)[0] == 0.0);
    CHECK(t.val(s)[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
    CHECK(t.val(s)[2] == doctest::Approx(-1.0 / (1.0 + std::exp(1.0))));
}

TEST_CASE("forward values: matmul against hand computation") {
    Tape t;
    int a = t.input(Tensor::from({2, 2}, {1.0, 2.0, 3.0, 4.0}));
    int b = t.input(Tensor::from({2, 2}, {5.0, 6.0, 7.0, 8.0}));
    const Tensor& c = t.val(t.matmul(a, b));
    CHECK(c.at(0, 0) == 19.0);
    CHECK(c.at(0, 1) == 22.0);
    CHECK(c.at(1, 0) == 43.0);
    CHECK(c.at(1, 1) == 50.0);

    const Tensor& d = t.val(t.matmul_nt(a, b));
    CHECK(d.at(0, 0) == 1.0 * 5.0 + 2.0 * 6.0);
    CHECK(d.at(1, 1) == 3.0 * 7.0 + 4.0 * 8.0);
}

TEST_CASE("forward values: softmax rows") {
    Tape t;
    int x = t.input(Tensor::from({2, 2}, {0.0, std::log(3.0), 100.0, 100.0}));
    const Tensor& y = t.val(t.softmax_rows(x));
    CHECK(y.at(0, 0) == doctest::Approx(0.25));
    CHECK(y.at(0, 1) == doctest::Approx(0.75));
    CHECK(y.at(1, 0) == doctest::Approx(0.5));
    CHECK(y.at(0, 0) + y.at(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("forward values: layer norm matches scalar computation") {
    Tape t;
    ParamStore ps;
    ps.add("g", Tensor::from({2}, {2.0, 0.5}));
    ps.add("b", Tensor::from({2}, {1.0, -1.0}));
    int x = t.input(Tensor::from({1, 2}, {1.0, 3.0}));
    const Tensor& y = t.val(t.layer_norm_rows(x, t.param(ps.get("g")), t.param(ps.get("b"))));
    double mu = 2.0, var = 1.0, eps = 1e-5;
    double xhat0 = (1.0 - mu) / std::sqrt(var + eps);
    CHECK(y.at(0, 0) == doctest::Approx(2.0 * xhat0 + 1.0));
    CHECK(y.at(0, 1) == doctest::Approx(0.5 * (-xhat0) - 1.0));
}

TEST_CASE("forward values: conv2d identity and sum kernels") {
    Tape t;
    int x = t.input(Tensor::from({1, 2, 2}, {1.0, 2.0, 3.0, 4.0}));

    int w_id = t.input(Tensor::from({1, 1, 1, 1}, {1.0}));
    int b0 = t.input(Tensor::zeros({1}));
    const Tensor& y = t.val(t.conv2d(x, w_id, b0, 1, 0));
    CHECK(y.same_shape(t.val(x)));
    CHECK(y.max_abs_diff(t.val(x)) == 0.0);

    int w_sum = t.input(Tensor::full({1, 1, 3, 3}, 1.0));
    int b1 = t.input(Tensor::from({1}, {0.5}));
    const Tensor& z = t.val(t.conv2d(x, w_sum, b1, 1, 1));
    // Zero padding: each output is the sum of in-bounds neighbors plus bias.
    CHECK(z.at(0, 0, 0) == 1.0 + 2.0 + 3.0 + 4.0 + 0.5);
    CHECK(z.at(0, 1, 1) == 10.5);

    int w_stride = t.input(Tensor::from({1, 1, 1, 1}, {2.0}));
    const Tensor& s = t.val(t.conv2d(x, w_stride, b0, 2, 0));
    CHECK(s.dim(1) == 1);
    CHECK(s.at(0, 0, 0) == 2.0);
}

TEST_CASE("forward values: upsample and token reshapes") {
    Tape t;
    int x = t.input(Tensor::from({1, 1, 2}, {3.0, 5.0}));
    const Tensor& u = t.val(t.upsample_nearest2(x));
    REQUIRE(u.shape == std::vector<int>{1, 2, 4});
    CHECK(u.at(0, 0, 0) == 3.0);
    CHECK(u.at(0, 1, 1) == 3.0);
    CHECK(u.at(0, 0, 2) == 5.0);

    int c = t.input(Tensor::from({2, 1, 2}, {1.0, 2.0, 3.0, 4.0}));
    int tok = t.chw_to_tokens(c);
    REQUIRE(t.val(tok).shape == std::vector<int>{2, 2});
    CHECK(t.val(tok).at(0, 0) == 1.0);
    CHECK(t.val(tok).at(0, 1) == 3.0);
    CHECK(t.val(tok).at(1, 0) == 2.0);
    int back = t.tokens_to_chw(tok, 1, 2);
    CHECK(t.val(back).max_abs_diff(t.val(c)) == 0.0);
}

TEST_CASE("forward values: concat and broadcast adds") {
    Tape t;
    int a = t.input(Tensor::from({1, 2}, {1.0, 2.0}));
    int b = t.input(Tensor::from({2, 2}, {3.0, 4.0, 5.0, 6.0}));
    const Tensor& cr = t.val(t.concat_rows(a, b));
    REQUIRE(cr.shape == std::vector<int>{3, 2});
    CHECK(cr.at(2, 1) == 6.0);

    int ca = t.input(Tensor::from({1, 2, 2}, {1.0, 2.0, 3.0, 4.0}));
    int cb = t.input(Tensor::full({2, 2, 2}, 9.0));
    const Tensor& cc = t.val(t.concat_channels(ca, cb));
    REQUIRE(cc.shape == std::vector<int>{3, 2, 2});
    CHECK(cc.at(0, 1, 1) == 4.0);
    CHECK(cc.at(2, 0, 0) == 9.0);

    int rv = t.add_rowvec(b, t.input(Tensor::from({2}, {10.0, 20.0})));
    CHECK(t.val(rv).at(1, 1) == 26.0);

    int cv = t.add_chan_vec(cb, t.input(Tensor::from({2}, {1.0, -1.0})));
    CHECK(t.val(cv).at(0, 0, 0) == 10.0);
    CHECK(t.val(cv).at(1, 1, 1) == 8.0);
}

TEST_CASE("forward values: reductions") {
    Tape t;
    int x = t.input(Tensor::from({3}, {1.0, 2.0, -2.0}));
    int ss = t.sumsq(x);
    CHECK(t.val(ss)[0] == 9.0);
    CHECK(t.val(t.sqrt_scalar(ss))[0] == 3.0);
    int a = t.input(Tensor::from({1}, {2.0}));
    int b = t.input(Tensor::from({1}, {4.0}));
    CHECK(t.val(t.mean_scalars({a, b}))[0] == 3.0);
}

TEST_CASE("gradients: elementwise and reshape ops") {
    auto ps = make_store({{"a", {2, 3}}, {"b", {2, 3}}}, 101);
    CHECK(max_fd_rel_err(ps, [](Tape& t, ParamStore& s) {
              int a = t.param(s.get("a"));
              int b = t.param(s.get("b"));
              int y = t.add(t.mul(a, b), t.sub(t.scale(a, 0.7), b));
              return t.sumsq(t.silu(y));
          }) < 1e-6);
}

TEST_CASE("gradients: matmul variants") {
    auto ps = make_store({{"a", {3, 4}}, {"b", {4, 2}}, {"c", {5, 4}}}, 102);
    CHECK(max_fd_rel_err(ps, [](Tape& t, ParamStore& s) {
              int a = t.param(s.get("a"));
              int b = t.param(s.get("b"));
              int c = t.param(s.get("c"));
              int y = t.matmul(a, b);           // [3,2]
              int z = t.matmul_nt(a, c);        // [3,5]
              return t.add(t.sumsq(y), t.sumsq(z));
          }) < 1e-6);
}

TEST_CASE("gradients: softmax and layer norm") {
    auto ps = make_store({{"x", {3, 5}}, {"g", {5}}, {"b", {5}}}, 103, 0.5);
    CHECK(max_fd_rel_err(ps, [](Tape& t, ParamStore& s) {
              int x = t.param(s.get("x"));
              int g = t.param(s.get("g"));
              int b = t.param(s.get("b"));
              int y = t.layer_norm_rows(x, g, b);
              return t.sumsq(t.softmax_rows(y));
          }) < 1e-5);
}

TEST_CASE("gradients: conv2d stride and padding") {
    auto ps = make_store({{"x", {2, 4, 4}}, {"w1", {3, 2, 3, 3}}, {"b1", {3}},
                          {"w2", {2, 3, 3, 3}}, {"b2", {2}}},
                         104, 0.5);
    CHECK(max_fd_rel_err(ps, [](Tape& t, ParamStore& s) {
              int x = t.param(s.get("x"));
              int h = t.conv2d(x, t.param(s.get("w1")), t.param(s.get("b1")), 1, 1);
              int d = t.conv2d(t.silu(h), t.param(s.get("w2")), t.param(s.get("b2")), 2, 1);
              return t.sumsq(d);
          }) < 1e-6);
}

TEST_CASE("gradients: upsample, concat, broadcasts, tokens") {
    auto ps = make_store({{"x", {2, 2, 2}}, {"y", {1, 4, 4}}, {"rv", {3}}, {"cv", {3}}}, 105);
    CHECK(max_fd_rel_err(ps, [](Tape& t, ParamStore& s) {
              int x = t.param(s.get("x"));
              int up = t.upsample_nearest2(x);                       // [2,4,4]
              int cat = t.concat_channels(up, t.param(s.get("y")));  // [3,4,4]
              int cv = t.add_chan_vec(cat, t.param(s.get("cv")));
              int tok = t.chw_to_tokens(cv);                         // [16,3]
              int rv = t.add_rowvec(tok, t.param(s.get("rv")));
              int back = t.tokens_to_chw(rv, 4, 4);
              return t.sumsq(back);
          }) < 1e-6);
}

TEST_CASE("gradients: concat_rows and scalar reductions") {
    auto ps = make_store({{"a", {2, 3}}, {"b", {1, 3}}}, 106);
    CHECK(max_fd_rel_err(ps, [](Tape& t, ParamStore& s) {
              int a = t.param(s.get("a"));
              int b = t.param(s.get("b"));
              int cat = t.concat_rows(a, b);
              int l1 = t.sqrt_scalar(t.sumsq(cat));
              int l2 = t.sumsq(t.mul(a, a));
              return t.mean_scalars({l1, l2, l1});
          }) < 1e-6);
}

TEST_CASE("gradients: decoupled cross-attention over all five projections") {
    auto ps = make_store({{"q", {4, 6}}, {"txt", {3, 5}}, {"img", {2, 5}},
                          {"Wq", {6, 8}}, {"Wk", {5, 8}}, {"Wv", {5, 8}},
                          {"Wk_img", {5, 8}}, {"Wv_img", {5, 8}}},
                         107, 0.4);
    // A larger step keeps roundoff out of the quotient on elements whose true
    // gradient is tiny (saturated softmax rows).
    for (double beta : {0.3, 1.0}) {
        CHECK(max_fd_rel_err(ps,
                             [beta](Tape& t, ParamStore& s) {
                                 int out = decoupled_cross_attention(
                                     t, t.param(s.get("q")), t.param(s.get("txt")),
                                     t.param(s.get("img")), t.param(s.get("Wq")),
                                     t.param(s.get("Wk")), t.param(s.get("Wv")),
                                     t.param(s.get("Wk_img")), t.param(s.get("Wv_img")), beta);
                                 return t.sumsq(out);
                             },
                             1e-4) < 1e-4);
    }
}

TEST_CASE("gradients: injected self-attention with and without extra tokens") {
    auto ps = make_store({{"ctx", {4, 5}}, {"obj", {3, 5}}, {"Wq", {5, 6}}, {"Wk", {5, 6}},
                          {"Wv", {5, 6}}},
                         108, 0.4);
    CHECK(max_fd_rel_err(ps,
                         [](Tape& t, ParamStore& s) {
                             int out = injected_self_attention(
                                 t, t.param(s.get("ctx")), t.param(s.get("obj")),
                                 t.param(s.get("Wq")), t.param(s.get("Wk")), t.param(s.get("Wv")));
                             return t.sumsq(out);
                         },
                         1e-4) < 1e-4);
    CHECK(max_fd_rel_err(ps,
                         [](Tape& t, ParamStore& s) {
                             int out = injected_self_attention(
                                 t, t.param(s.get("ctx")), std::nullopt, t.param(s.get("Wq")),
                                 t.param(s.get("Wk")), t.param(s.get("Wv")));
                             return t.sumsq(out);
                         },
                         1e-4) < 1e-4);
}

TEST_CASE("decoupled cross-attention: beta 0 equals the text-only branch exactly") {
    auto ps = make_store({{"q", {4, 6}}, {"txt", {3, 5}}, {"img", {2, 5}},
                          {"Wq", {6, 8}}, {"Wk", {5, 8}}, {"Wv", {5, 8}},
                          {"Wk_img", {5, 8}}, {"Wv_img", {5, 8}}},
                         109, 0.4);
    Tape t;
    int q = t.param(ps.get("q"));
    int txt = t.param(ps.get("txt"));
    int img = t.param(ps.get("img"));
    int Wq = t.param(ps.get("Wq"));
    int Wk = t.param(ps.get("Wk"));
    int Wv = t.param(ps.get("Wv"));
    int Wki = t.param(ps.get("Wk_img"));
    int Wvi = t.param(ps.get("Wv_img"));
    int zero_beta = decoupled_cross_attention(t, q, txt, img, Wq, Wk, Wv, Wki, Wvi, 0.0);
    int text_only = decoupled_cross_attention(t, q, txt, std::nullopt, Wq, Wk, Wv, Wki, Wvi, 0.0);
    const Tensor& a = t.val(zero_beta);
    const Tensor& b = t.val(text_only);
    REQUIRE(a.same_shape(b));
    for (size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("decoupled cross-attention: single-token case matches closed form") {
    // With one query and one token per branch the softmax weights are exactly 1,
    // so the output row is token*Wv + beta * token'*Wv_img.
    auto ps = make_store({{"q", {1, 6}}, {"txt", {1, 5}}, {"img", {1, 5}},
                          {"Wq", {6, 8}}, {"Wk", {5, 8}}, {"Wv", {5, 8}},
                          {"Wk_img", {5, 8}}, {"Wv_img", {5, 8}}},
                         110, 0.4);
    double beta = 0.37;
    Tape t;
    int out = decoupled_cross_attention(
        t, t.param(ps.get("q")), t.param(ps.get("txt")), t.param(ps.get("img")),
        t.param(ps.get("Wq")), t.param(ps.get("Wk")), t.param(ps.get("Wv")),
        t.param(ps.get("Wk_img")), t.param(ps.get("Wv_img")), beta);
    const Tensor& y = t.val(out);
    REQUIRE(y.shape == std::vector<int>{1, 8});
    const Tensor& txt = ps.get("txt").value;
    const Tensor& img = ps.get("img").value;
    const Tensor& Wv = ps.get("Wv").value;
    const Tensor& Wvi = ps.get("Wv_img").value;
    for (int c = 0; c < 8; ++c) {
        double want = 0.0;
        for (int k = 0; k < 5; ++k)
            want += txt.at(0, k) * Wv.at(k, c) + beta * img.at(0, k) * Wvi.at(k, c);
        CHECK(y.at(0, c) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("injected self-attention without extra tokens equals plain composition") {
    auto ps = make_store({{"ctx", {4, 5}}, {"Wq", {5, 6}}, {"Wk", {5, 6}}, {"Wv", {5, 6}}}, 111,
                         0.4);
    Tape t;
    int ctx = t.param(ps.get("ctx"));
    int Wq = t.param(ps.get("Wq"));
    int Wk = t.param(ps.get("Wk"));
    int Wv = t.param(ps.get("Wv"));
    int inj = injected_self_attention(t, ctx, std::nullopt, Wq, Wk, Wv);

    int Q = t.matmul(ctx, Wq);
    int K = t.matmul(ctx, Wk);
    int V = t.matmul(ctx, Wv);
    int A = t.softmax_rows(t.scale(t.matmul_nt(Q, K), 1.0 / std::sqrt(6.0)));
    int plain = t.matmul(A, V);
    CHECK(t.val(inj).max_abs_diff(t.val(plain)) == 0.0);
}

TEST_CASE("injected self-attention widens the key set, not the query set") {
    auto ps = make_store({{"ctx", {4, 5}}, {"obj", {3, 5}}, {"Wq", {5, 6}}, {"Wk", {5, 6}},
                          {"Wv", {5, 6}}},
                         112, 0.4);
    Tape t;
    int out = injected_self_attention(t, t.param(ps.get("ctx")), t.param(ps.get("obj")),
                                      t.param(ps.get("Wq")), t.param(ps.get("Wk")),
                                      t.param(ps.get("Wv")));
    CHECK(t.val(out).shape == std::vector<int>{4, 6});
}

TEST_CASE("frozen parameters receive exactly zero gradient") {
    auto ps = make_store({{"train.w", {3, 3}}, {"frozen.w", {3, 3}}}, 113);
    ps.set_trainable([](const std::string& n) { return n.rfind("train.", 0) == 0; });
    ps.zero_grads();
    Tape t;
    int a = t.param(ps.get("train.w"));
    int b = t.param(ps.get("frozen.w"));
    int loss = t.sumsq(t.matmul(a, b));
    t.backward(loss);
    CHECK(l2_norm(ps.get("frozen.w").grad) == 0.0);
    CHECK(l2_norm(ps.get("train.w").grad) > 0.0);
}

TEST_CASE("grad-disabled tape leaves all gradients untouched") {
    auto ps = make_store({{"w", {2, 2}}}, 114);
    ps.zero_grads();
    Tape t(false);
    int w = t.param(ps.get("w"));
    int loss = t.sumsq(w);
    t.backward(loss);
    CHECK(l2_norm(ps.get("w").grad) == 0.0);
}

TEST_CASE("gradients accumulate across backward calls on separate tapes") {
    auto ps = make_store({{"w", {2}}}, 115);
    ps.zero_grads();
    for (int rep = 0; rep < 2; ++rep) {
        Tape t;
        int w = t.param(ps.get("w"));
        t.backward(t.sumsq(w));
    }
    const Tensor& g = ps.get("w").grad;
    const Tensor& v = ps.get("w").value;
    CHECK(g.data[0] == doctest::Approx(4.0 * v.data[0]));
    CHECK(g.data[1] == doctest::Approx(4.0 * v.data[1]));
}

TEST_CASE("shared parameter used twice accumulates both paths") {
    auto ps = make_store({{"w", {2, 2}}}, 116);
    CHECK(max_fd_rel_err(ps, [](Tape& t, ParamStore& s) {
              int w1 = t.param(s.get("w"));
              int w2 = t.param(s.get("w"));
              return t.sumsq(t.matmul(w1, w2));
          }) < 1e-6);
}
