#include "ink/tape.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <stdexcept>

namespace ink {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

namespace {

ECMap as_mat(const Tensor& t, int rows, int cols) { return ECMap(t.data.data(), rows, cols); }
EMap as_mat(Tensor& t, int rows, int cols) { return EMap(t.data.data(), rows, cols); }

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

constexpr double kLnEps = 1e-5;

}  // namespace

int Tape::push(Tensor val, bool needs, std::function<void(Tape&)> back) {
    Entry e;
    e.val = std::move(val);
    e.needs = needs;
    if (needs) {
        e.grad = Tensor::zeros(e.val.shape);
        e.back = std::move(back);
    }
    entries_.push_back(std::move(e));
    return static_cast<int>(entries_.size()) - 1;
}

int Tape::input(Tensor v) { return push(std::move(v), false, nullptr); }

int Tape::param(Param& p) {
    bool needs = grad_enabled_ && p.trainable;
    int id = push(p.value, needs, nullptr);
    if (needs) param_leaves_.emplace_back(id, &p);
    return id;
}

void Tape::backward(int loss) {
    require(entries_[static_cast<size_t>(loss)].val.numel() == 1, "backward: loss must be scalar");
    if (!entries_[static_cast<size_t>(loss)].needs) return;  // nothing trainable upstream
    grad_mut(loss).data[0] = 1.0;
    for (int i = loss; i >= 0; --i) {
        Entry& e = entries_[static_cast<size_t>(i)];
        if (e.needs && e.back) e.back(*this);
    }
    for (auto& [id, p] : param_leaves_) {
        const Tensor& g = grad(id);
        if (p->grad.shape != p->value.shape) p->zero_grad();
        for (size_t k = 0; k < g.data.size(); ++k) p->grad.data[k] += g.data[k];
    }
}

// ---------------------------------------------------------------- elementwise

int Tape::add(int a, int b) {
    require(val(a).same_shape(val(b)), "add: shape mismatch");
    Tensor out = val(a) + val(b);
    bool needs = needs_grad(a) || needs_grad(b);
    return push(std::move(out), needs, [a, b, id = size()](Tape& t) {
        const Tensor& g = t.grad(static_cast<int>(id));
        if (t.needs_grad(a))
            for (size_t i = 0; i < g.data.size(); ++i) t.grad_mut(a).data[i] += g.data[i];
        if (t.needs_grad(b))
            for (size_t i = 0; i < g.data.size(); ++i) t.grad_mut(b).data[i] += g.data[i];
    });
}

int Tape::sub(int a, int b) {
    require(val(a).same_shape(val(b)), "sub: shape mismatch");
    Tensor out = val(a) - val(b);
    bool needs = needs_grad(a) || needs_grad(b);
    return push(std::move(out), needs, [a, b, id = size()](Tape& t) {
        const Tensor& g = t.grad(static_cast<int>(id));
        if (t.needs_grad(a))
            for (size_t i = 0; i < g.data.size(); ++i) t.grad_mut(a).data[i] += g.data[i];
        if (t.needs_grad(b))
            for (size_t i = 0; i < g.data.size(); ++i) t.grad_mut(b).data[i] -= g.data[i];
    });
}

int Tape::mul(int a, int b) {
    require(val(a).same_shape(val(b)), "mul: shape mismatch");
    Tensor out = val(a);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= val(b).data[i];
    bool needs = needs_grad(a) || needs_grad(b);
    return push(std::move(out), needs, [a, b, id = size()](Tape& t) {
        const Tensor& g = t.grad(static_cast<int>(id));
        if (t.needs_grad(a))
            for (size_t i = 0; i < g.data.size(); ++i)
                t.grad_mut(a).data[i] += g.data[i] * t.val(b).data[i];
        if (t.needs_grad(b))
            for (size_t i = 0; i < g.data.size(); ++i)
                t.grad_mut(b).data[i] += g.data[i] * t.val(a).data[i];
    });
}

int Tape::scale(int a, double s) {
    Tensor out = s * val(a);
    return push(std::move(out), needs_grad(a), [a, s, id = size()](Tape& t) {
        const Tensor& g = t.grad(static_cast<int>(id));
        if (t.needs_grad(a))
            for (size_t i = 0; i < g.data.size(); ++i) t.grad_mut(a).data[i] += s * g.data[i];
    });
}

int Tape::silu(int a) {
    Tensor out = val(a);
    for (auto& v : out.data) v = v / (1.0 + std::exp(-v));
    return push(std::move(out), needs_grad(a), [a, id = size()](Tape& t) {
        if (!t.needs_grad(a)) return;
        const Tensor& g = t.grad(static_cast<int>(id));
        const Tensor& x = t.val(a);
        for (size_t i = 0; i < g.data.size(); ++i) {
            double s = 1.0 / (1.0 + std::exp(-x.data[i]));
            t.grad_mut(a).data[i] += g.data[i] * (s + x.data[i] * s * (1.0 - s));
        }
    });
}

int Tape::concat_rows(int a, int b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(1), "concat_rows: bad shapes");
    Tensor out({A.dim(0) + B.dim(0), A.dim(1)});
    std::copy(A.data.begin(), A.data.end(), out.data.begin());
    std::copy(B.data.begin(), B.data.end(), out.data.begin() + A.numel());
    bool needs = needs_grad(a) || needs_grad(b);
    int64_t na = A.numel();
    return push(std::move(out), needs, [a, b, na, id = size()](Tape& t) {
        const Tensor& g = t.grad(static_cast<int>(id));
        if (t.needs_grad(a))
            for (int64_t i = 0; i < na; ++i) t.grad_mut(a).data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)];
        if (t.needs_grad(b))
            for (size_t i = static_cast<size_t>(na); i < g.data.size(); ++i)
                t.grad_mut(b).data[i - static_cast<size_t>(na)] += g.data[i];
    });
}

int Tape::concat_channels(int a, int b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    require(A.rank() == 3 && B.rank() == 3 && A.dim(1) == B.dim(1) && A.dim(2) == B.dim(2),
            "concat_channels: bad shapes");
    Tensor out({A.dim(0) + B.dim(0), A.dim(1), A.dim(2)});
    std::copy(A.data.begin(), A.data.end(), out.data.begin());
    std::copy(B.data.begin(), B.data.end(), out.data.begin() + A.numel());
    bool needs = needs_grad(a) || needs_grad(b);
    int64_t na = A.numel();
    return push(std::move(out), needs, [a, b, na, id = size()](Tape& t) {
        const Tensor& g = t.grad(static_cast<int>(id));
        if (t.needs_grad(a))
            for (int64_t i = 0; i < na; ++i) t.grad_mut(a).data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)];
        if (t.needs_grad(b))
            for (size_t i = static_cast<size_t>(na); i < g.data.size(); ++i)
                t.grad_mut(b).data[i - static_cast<size_t>(na)] += g.data[i];
    });
}

int Tape::chw_to_tokens(int x) {
    const Tensor& X = val(x);
    require(X.rank() == 3, "chw_to_tokens: want [c,h,w]");
    int c = X.dim(0), h = X.dim(1), w = X.dim(2);
    Tensor out({h * w, c});
    for (int ci = 0; ci < c; ++ci)
        for (int p = 0; p < h * w; ++p) out.at(p, ci) = X.data[static_cast<size_t>(ci) * h * w + p];
    return push(std::move(out), needs_grad(x), [x, c, h, w, id = size()](Tape& t) {
        if (!t.needs_grad(x)) return;
        const Tensor& g = t.grad(static_cast<int>(id));
        Tensor& gx = t.grad_mut(x);
        for (int ci = 0; ci < c; ++ci)
            for (int p = 0; p < h * w; ++p)
                gx.data[static_cast<size_t>(ci) * h * w + p] += g.at(p, ci);
    });
}

int Tape::tokens_to_chw(int x, int h, int w) {
    const Tensor& X = val(x);
    require(X.rank() == 2 && X.dim(0) == h * w, "tokens_to_chw: bad shape");
    int c = X.dim(1);
    Tensor out({c, h, w});
    for (int ci = 0; ci < c; ++ci)
        for (int p = 0; p < h * w; ++p) out.data[static_cast<size_t>(ci) * h * w + p] = X.at(p, ci);
    return push(std::move(out), needs_grad(x), [x, c, h, w, id = size()](Tape& t) {
        if (!t.needs_grad(x)) return;
        const Tensor& g = t.grad(static_cast<int>(id));
        Tensor& gx = t.grad_mut(x);
        for (int ci = 0; ci < c; ++ci)
            for (int p = 0; p < h * w; ++p)
                gx.at(p, ci) += g.data[static_cast<size_t>(ci) * h * w + p];
    });
}

int Tape::add_rowvec(int x, int v) {
    const Tensor& X = val(x);
    const Tensor& V = val(v);
    require(X.rank() == 2 && V.numel() == X.dim(1), "add_rowvec: bad shapes");
    Tensor out = X;
    int n = X.dim(0), d = X.dim(1);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) out.at(r, c) += V.data[static_cast<size_t>(c)];
    bool needs = needs_grad(x) || needs_grad(v);
    return push(std::move(out), needs, [x, v, n, d, id = size()](Tape& t) {
        const Tensor& g = t.grad(static_cast<int>(id));
        if (t.needs_grad(x))
            for (size_t i = 0; i < g.data.size(); ++i) t.grad_mut(x).data[i] += g.data[i];
        if (t.needs_grad(v))
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < d; ++c) t.grad_mut(v).data[static_cast<size_t>(c)] += g.at(r, c);
    });
}

int Tape::add_chan_vec(int x, int v) {
    const Tensor& X = val(x);
    const Tensor& V = val(v);
    require(X.rank() == 3 && V.numel() == X.dim(0), "add_chan_vec: bad shapes");
    Tensor out = X;
    int c = X.dim(0);
    int hw = X.dim(1) * X.dim(2);
    for (int ci = 0; ci < c; ++ci)
        for (int p = 0; p < hw; ++p) out.data[static_cast<size_t>(ci) * hw + p] += V.data[static_cast<size_t>(ci)];
    bool needs = needs_grad(x) || needs_grad(v);
    return push(std::move(out), needs, [x, v, c, hw, id = size()](Tape& t) {
        const Tensor& g = t.grad(static_cast<int>(id));
        if (t.needs_grad(x))
            for (size_t i = 0; i < g.data.size(); ++i) t.grad_mut(x).data[i] += g.data[i];
        if (t.needs_grad(v))
            for (int ci = 0; ci < c; ++ci)
                for (int p = 0; p < hw; ++p)
                    t.grad_mut(v).data[static_cast<size_t>(ci)] += g.data[static_cast<size_t>(ci) * hw + p];
    });
}

// -------------------------------------------------------------------- matrix

int Tape::matmul(int a, int b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(0), "matmul: shape mismatch");
    int n = A.dim(0), k = A.dim(1), m = B.dim(1);
    Tensor out({n, m});
    as_mat(out, n, m).noalias() = as_mat(A, n, k) * as_mat(B, k, m);
    bool needs = needs_grad(a) || needs_grad(b);
    return push(std::move(out), needs, [a, b, n, k, m, id = size()](Tape& t) {
        ECMap G(t.grad(static_cast<int>(id)).data.data(), n, m);
        if (t.needs_grad(a)) {
            EMap GA(t.grad_mut(a).data.data(), n, k);
            GA.noalias() += G * as_mat(t.val(b), k, m).transpose();
        }
        if (t.needs_grad(b)) {
            EMap GB(t.grad_mut(b).data.data(), k, m);
            GB.noalias() += as_mat(t.val(a), n, k).transpose() * G;
        }
    });
}

int Tape::matmul_nt(int a, int b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(1), "matmul_nt: shape mismatch");
    int n = A.dim(0), k = A.dim(1), m = B.dim(0);
    Tensor out({n, m});
    as_mat(out, n, m).noalias() = as_mat(A, n, k) * as_mat(B, m, k).transpose();
    bool needs = needs_grad(a) || needs_grad(b);
    return push(std::move(out), needs, [a, b, n, k, m, id = size()](Tape& t) {
        ECMap G(t.grad(static_cast<int>(id)).data.data(), n, m);
        if (t.needs_grad(a)) {
            EMap GA(t.grad_mut(a).data.data(), n, k);
            GA.noalias() += G * as_mat(t.val(b), m, k);
        }
        if (t.needs_grad(b)) {
            EMap GB(t.grad_mut(b).data.data(), m, k);
            GB.noalias() += G.transpose() * as_mat(t.val(a), n, k);
        }
    });
}

int Tape::softmax_rows(int a) {
    const Tensor& A = val(a);
    require(A.rank() == 2, "softmax_rows: want matrix");
    int n = A.dim(0), m = A.dim(1);
    Tensor out = A;
    for (int r = 0; r < n; ++r) {
        double mx = out.at(r, 0);
        for (int c = 1; c < m; ++c) mx = std::max(mx, out.at(r, c));
        double sum = 0.0;
        for (int c = 0; c < m; ++c) {
            double e = std::exp(out.at(r, c) - mx);
            out.at(r, c) = e;
            sum += e;
        }
        for (int c = 0; c < m; ++c) out.at(r, c) /= sum;
    }
    return push(std::move(out), needs_grad(a), [a, n, m, id = size()](Tape& t) {
        if (!t.needs_grad(a)) return;
        const Tensor& g = t.grad(static_cast<int>(id));
        const Tensor& y = t.val(static_cast<int>(id));
        Tensor& gx = t.grad_mut(a);
        for (int r = 0; r < n; ++r) {
            double s = 0.0;
            for (int c = 0; c < m; ++c) s += g.at(r, c) * y.at(r, c);
            for (int c = 0; c < m; ++c) gx.at(r, c) += y.at(r, c) * (g.at(r, c) - s);
        }
    });
}

int Tape::layer_norm_rows(int x, int gp, int bp) {
    const Tensor& X = val(x);
    const Tensor& G = val(gp);
    const Tensor& B = val(bp);
    require(X.rank() == 2 && G.numel() == X.dim(1) && B.numel() == X.dim(1),
            "layer_norm_rows: bad shapes");
    int n = X.dim(0), d = X.dim(1);
    Tensor out({n, d});
    auto xhat = std::make_shared<Tensor>(Tensor::zeros({n, d}));
    auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
    for (int r = 0; r < n; ++r) {
        double mu = 0.0;
        for (int c = 0; c < d; ++c) mu += X.at(r, c);
        mu /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) {
            double dv = X.at(r, c) - mu;
            var += dv * dv;
        }
        var /= d;
        double is = 1.0 / std::sqrt(var + kLnEps);
        (*inv_sigma)[static_cast<size_t>(r)] = is;
        for (int c = 0; c < d; ++c) {
            double xh = (X.at(r, c) - mu) * is;
            xhat->at(r, c) = xh;
            out.at(r, c) = G.data[static_cast<size_t>(c)] * xh + B.data[static_cast<size_t>(c)];
        }
    }
    bool needs = needs_grad(x) || needs_grad(gp) || needs_grad(bp);
    return push(std::move(out), needs, [x, gp, bp, n, d, xhat, inv_sigma, id = size()](Tape& t) {
        const Tensor& g = t.grad(static_cast<int>(id));
        const Tensor& G = t.val(gp);
        for (int r = 0; r < n; ++r) {
            if (t.needs_grad(x)) {
                double m1 = 0.0, m2 = 0.0;
                for (int c = 0; c < d; ++c) {
                    double dxh = g.at(r, c) * G.data[static_cast<size_t>(c)];
                    m1 += dxh;
                    m2 += dxh * xhat->at(r, c);
                }
                m1 /= d;
                m2 /= d;
                double is = (*inv_sigma)[static_cast<size_t>(r)];
                for (int c = 0; c < d; ++c) {
                    double dxh = g.at(r, c) * G.data[static_cast<size_t>(c)];
                    t.grad_mut(x).at(r, c) += is * (dxh - m1 - xhat->at(r, c) * m2);
                }
            }
            if (t.needs_grad(gp))
                for (int c = 0; c < d; ++c)
                    t.grad_mut(gp).data[static_cast<size_t>(c)] += g.at(r, c) * xhat->at(r, c);
            if (t.needs_grad(bp))
                for (int c = 0; c < d; ++c) t.grad_mut(bp).data[static_cast<size_t>(c)] += g.at(r, c);
        }
    });
}

// ------------------------------------------------------------- conv / spatial

namespace {

struct ConvDims {
    int cin, h, w, cout, kh, kw, ho, wo, stride, pad;
};

void im2col(const Tensor& x, const ConvDims& d, Tensor& col) {
    // col: [cin*kh*kw, ho*wo]
    for (int ci = 0; ci < d.cin; ++ci)
        for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx) {
                int row = (ci * d.kh + ky) * d.kw + kx;
                double* dst = &col.data[static_cast<size_t>(row) * d.ho * d.wo];
                for (int oy = 0; oy < d.ho; ++oy) {
                    int iy = oy * d.stride + ky - d.pad;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        int ix = ox * d.stride + kx - d.pad;
                        dst[oy * d.wo + ox] =
                            (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w) ? x.at(ci, iy, ix) : 0.0;
                    }
                }
            }
}

void col2im_add(const Tensor& col, const ConvDims& d, Tensor& gx) {
    for (int ci = 0; ci < d.cin; ++ci)
        for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx) {
                int row = (ci * d.kh + ky) * d.kw + kx;
                const double* src = &col.data[static_cast<size_t>(row) * d.ho * d.wo];
                for (int oy = 0; oy < d.ho; ++oy) {
                    int iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        int ix = ox * d.stride + kx - d.pad;
                        if (ix < 0 || ix >= d.w) continue;
                        gx.at(ci, iy, ix) += src[oy * d.wo + ox];
                    }
                }
            }
}

}  // namespace

int Tape::conv2d(int x, int w, int b, int stride, int pad) {
    const Tensor& X = val(x);
    const Tensor& W = val(w);
    const Tensor& B = val(b);
    require(X.rank() == 3 && W.rank() == 4, "conv2d: want x [c,h,w], w [cout,cin,kh,kw]");
    ConvDims d;
    d.cin = X.dim(0);
    d.h = X.dim(1);
    d.w = X.dim(2);
    d.cout = W.dim(0);
    d.kh = W.dim(2);
    d.kw = W.dim(3);
    d.stride = stride;
    d.pad = pad;
    require(W.dim(1) == d.cin, "conv2d: channel mismatch");
    require(B.numel() == d.cout, "conv2d: bias size mismatch");
    d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
    int kdim = d.cin * d.kh * d.kw;
    int odim = d.ho * d.wo;

    auto col = std::make_shared<Tensor>(Tensor::zeros({kdim, odim}));
    im2col(X, d, *col);
    Tensor out({d.cout, d.ho, d.wo});
    as_mat(out, d.cout, odim).noalias() = as_mat(W, d.cout, kdim) * as_mat(*col, kdim, odim);
    for (int co = 0; co < d.cout; ++co) {
        double bias = B.data[static_cast<size_t>(co)];
        for (int p = 0; p < odim; ++p) out.data[static_cast<size_t>(co) * odim + p] += bias;
    }
    bool needs = needs_grad(x) || needs_grad(w) || needs_grad(b);
    return push(std::move(out), needs, [x, w, b, d, kdim, odim, col, id = size()](Tape& t) {
        ECMap G(t.grad(static_cast<int>(id)).data.data(), d.cout, odim);
        if (t.needs_grad(w)) {
            EMap GW(t.grad_mut(w).data.data(), d.cout, kdim);
            GW.noalias() += G * as_mat(*col, kdim, odim).transpose();
        }
        if (t.needs_grad(b)) {
            Tensor& gb = t.grad_mut(b);
            for (int co = 0; co < d.cout; ++co) gb.data[static_cast<size_t>(co)] += G.row(co).sum();
        }
        if (t.needs_grad(x)) {
            Tensor gcol({kdim, odim});
            as_mat(gcol, kdim, odim).noalias() =
                as_mat(t.val(w), d.cout, kdim).transpose() * G;
            col2im_add(gcol, d, t.grad_mut(x));
        }
    });
}

int Tape::upsample_nearest2(int x) {
    const Tensor& X = val(x);
    require(X.rank() == 3, "upsample_nearest2: want [c,h,w]");
    int c = X.dim(0), h = X.dim(1), w = X.dim(2);
    Tensor out({c, 2 * h, 2 * w});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                double v = X.at(ci, y, xx);
                out.at(ci, 2 * y, 2 * xx) = v;
                out.at(ci, 2 * y, 2 * xx + 1) = v;
                out.at(ci, 2 * y + 1, 2 * xx) = v;
                out.at(ci, 2 * y + 1, 2 * xx + 1) = v;
            }
    return push(std::move(out), needs_grad(x), [x, c, h, w, id = size()](Tape& t) {
        if (!t.needs_grad(x)) return;
        const Tensor& g = t.grad(static_cast<int>(id));
        Tensor& gx = t.grad_mut(x);
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    gx.at(ci, y, xx) += g.at(ci, 2 * y, 2 * xx) + g.at(ci, 2 * y, 2 * xx + 1) +
                                        g.at(ci, 2 * y + 1, 2 * xx) + g.at(ci, 2 * y + 1, 2 * xx + 1);
    });
}

// ---------------------------------------------------------------- reductions

int Tape::sumsq(int a) {
    const Tensor& A = val(a);
    double acc = 0.0;
    for (double v : A.data) acc += v * v;
    Tensor out = Tensor::from({1}, {acc});
    return push(std::move(out), needs_grad(a), [a, id = size()](Tape& t) {
        if (!t.needs_grad(a)) return;
        double g = t.grad(static_cast<int>(id)).data[0];
        const Tensor& x = t.val(a);
        for (size_t i = 0; i < x.data.size(); ++i) t.grad_mut(a).data[i] += 2.0 * g * x.data[i];
    });
}

int Tape::sqrt_scalar(int a) {
    require(val(a).numel() == 1, "sqrt_scalar: want scalar");
    double y = std::sqrt(val(a).data[0]);
    Tensor out = Tensor::from({1}, {y});
    return push(std::move(out), needs_grad(a), [a, y, id = size()](Tape& t) {
        if (!t.needs_grad(a)) return;
        double g = t.grad(static_cast<int>(id)).data[0];
        t.grad_mut(a).data[0] += g * 0.5 / std::max(y, 1e-12);
    });
}

int Tape::mean_scalars(const std::vector<int>& xs) {
    require(!xs.empty(), "mean_scalars: empty");
    double acc = 0.0;
    bool needs = false;
    for (int x : xs) {
        require(val(x).numel() == 1, "mean_scalars: want scalars");
        acc += val(x).data[0];
        needs = needs || needs_grad(x);
    }
    double inv = 1.0 / static_cast<double>(xs.size());
    Tensor out = Tensor::from({1}, {acc * inv});
    return push(std::move(out), needs, [xs, inv, id = size()](Tape& t) {
        double g = t.grad(static_cast<int>(id)).data[0] * inv;
        for (int x : xs)
            if (t.needs_grad(x)) t.grad_mut(x).data[0] += g;
    });
}

// -------------------------------------------------------- attention primitives

namespace {

int attention_branch(Tape& t, int q_proj, int tokens, int Wk, int Wv, double scale) {
    int K = t.matmul(tokens, Wk);
    int V = t.matmul(tokens, Wv);
    int logits = t.scale(t.matmul_nt(q_proj, K), scale);
    int A = t.softmax_rows(logits);
    return t.matmul(A, V);
}

}  // namespace

int decoupled_cross_attention(Tape& t, int queries, std::optional<int> text_tokens,
                              std::optional<int> image_tokens, int Wq, int Wk, int Wv, int Wk_img,
                              int Wv_img, double beta) {
    if (!std::isfinite(beta)) throw std::invalid_argument("decoupled_cross_attention: beta not finite");
    int Q = t.matmul(queries, Wq);
    double scale = 1.0 / std::sqrt(static_cast<double>(t.val(Wq).dim(1)));
    std::optional<int> z, zp;
    if (text_tokens) z = attention_branch(t, Q, *text_tokens, Wk, Wv, scale);
    if (image_tokens) zp = t.scale(attention_branch(t, Q, *image_tokens, Wk_img, Wv_img, scale), beta);
    if (z && zp) return t.add(*z, *zp);
    if (z) return *z;
    if (zp) return *zp;
    throw std::invalid_argument("decoupled_cross_attention: need at least one token source");
}

int injected_self_attention(Tape& t, int ctx, std::optional<int> obj, int Wq, int Wk, int Wv) {
    int kv_src = obj ? t.concat_rows(ctx, *obj) : ctx;
    int Q = t.matmul(ctx, Wq);
    int K = t.matmul(kv_src, Wk);
    int V = t.matmul(kv_src, Wv);
    double scale = 1.0 / std::sqrt(static_cast<double>(t.val(Wq).dim(1)));
    int A = t.softmax_rows(t.scale(t.matmul_nt(Q, K), scale));
    return t.matmul(A, V);
}

}  // namespace ink
