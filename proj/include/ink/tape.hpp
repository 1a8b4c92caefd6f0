#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "ink/params.hpp"
#include "ink/tensor.hpp"

namespace ink {

// Reverse-mode autodiff over a linear tape. Each op appends one entry whose
// backward closure scatters into the gradients of its inputs. Creation order is
// a topological order, so backward() is a single reverse sweep.
//
// Gradients only accumulate into entries that need them: an entry needs a
// gradient iff any of its inputs does, and a parameter leaf needs one iff the
// parameter is trainable (and the tape has gradients enabled). Frozen
// parameters therefore end a backward pass with an exactly zero gradient
// buffer, by construction.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    int input(Tensor v);                 // constant leaf
    int param(Param& p);                 // parameter leaf
    const Tensor& val(int i) const { return entries_[static_cast<size_t>(i)].val; }
    const Tensor& grad(int i) const { return entries_[static_cast<size_t>(i)].grad; }
    bool needs_grad(int i) const { return entries_[static_cast<size_t>(i)].needs; }
    size_t size() const { return entries_.size(); }

    // --- elementwise / shape ---
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int scale(int a, double s);
    int silu(int a);
    int concat_rows(int a, int b);       // [n,d] + [m,d] -> [n+m,d]
    int concat_channels(int a, int b);   // [c1,h,w] + [c2,h,w] -> [c1+c2,h,w]
    int chw_to_tokens(int x);            // [c,h,w] -> [h*w,c]
    int tokens_to_chw(int x, int h, int w);  // [h*w,c] -> [c,h,w]
    int add_rowvec(int x, int v);        // [n,d] + [d] broadcast over rows
    int add_chan_vec(int x, int v);      // [c,h,w] + [c] broadcast over h,w

    // --- matrix ---
    int matmul(int a, int b);            // [n,k] x [k,m] -> [n,m]
    int matmul_nt(int a, int b);         // [n,k] x [m,k]^T -> [n,m]
    int softmax_rows(int a);
    int layer_norm_rows(int x, int g, int b);  // per-row normalization, affine

    // --- conv / spatial ---
    int conv2d(int x, int w, int b, int stride, int pad);  // x [cin,h,w], w [cout,cin,kh,kw]
    int upsample_nearest2(int x);

    // --- reductions ---
    int sumsq(int a);                    // scalar [1]
    int sqrt_scalar(int a);
    int mean_scalars(const std::vector<int>& xs);

    // Seeds d(entry)/d(entry)=1 at a scalar entry and sweeps the tape backwards.
    // Accumulates into Param::grad for trainable parameter leaves.
    void backward(int loss);

private:
    struct Entry {
        Tensor val;
        Tensor grad;  // allocated iff needs
        bool needs = false;
        std::function<void(Tape&)> back;  // empty for leaves / no-grad entries
    };

    int push(Tensor val, bool needs, std::function<void(Tape&)> back);
    Tensor& grad_mut(int i) { return entries_[static_cast<size_t>(i)].grad; }

    std::vector<Entry> entries_;
    std::vector<std::pair<int, Param*>> param_leaves_;
    bool grad_enabled_;
};

// Attention primitives shared by the denoiser's blocks and exposed for direct
// testing. Both return the pre-output-projection token matrix.
//
// decoupled_cross_attention: out = Z + beta*Z' where Z attends queries over the
// text tokens via (Wk, Wv) and Z' over the image tokens via (Wk_img, Wv_img),
// both branches sharing the query projection Wq. Softmax scale is 1/sqrt(d)
// with d = columns of Wq. Either token source may be absent; a missing branch
// contributes nothing.
int decoupled_cross_attention(Tape& t, int queries, std::optional<int> text_tokens,
                              std::optional<int> image_tokens, int Wq, int Wk, int Wv, int Wk_img,
                              int Wv_img, double beta);

// injected_self_attention: queries come from ctx only; keys/values from
// [ctx; obj] when obj is present, so with obj absent this is plain
// self-attention with the same weights.
int injected_self_attention(Tape& t, int ctx, std::optional<int> obj, int Wq, int Wk, int Wv);

}  // namespace ink
