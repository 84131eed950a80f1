#include "ddnet/ops.hpp"

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ddnet {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void require_4d(const Tensor& t, const char* who) {
    require(t.rank() == 4, std::string(who) + ": expected NCHW tensor, got " +
                               shape_str(t.shape()));
}

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts)
        if (t->requires_grad()) return true;
    return false;
}

// Marks the output as grad-carrying and hands the closure to the tape.
void record(Tensor& out, std::function<void()> step) {
    out.set_requires_grad(true);
    GradTape::active().record(std::move(step));
}

// Range of output columns oj whose source jj = oj*stride - pad + kjd lands
// inside [0, W); [lo, hi).
void col_range(int W, int stride, int pad, int kjd, int out_w, int* lo,
               int* hi) {
    int l = pad - kjd;  // need oj*stride >= l
    *lo = l <= 0 ? 0 : (l + stride - 1) / stride;
    int h = W - 1 + pad - kjd;  // need oj*stride <= h
    *hi = h < 0 ? 0 : std::min(out_w, h / stride + 1);
    *lo = std::min(*lo, *hi);
}

// Unpacks one image [C,H,W] into columns [C*kh*kw, out_h*out_w] with
// zero padding; the gemm over these columns is the whole convolution.
void im2col(const double* im, int C, int H, int W, int kh, int kw, int stride,
            int pad, int dilation, int out_h, int out_w, double* cols) {
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                double* row = cols + ((static_cast<std::size_t>(c) * kh + ki) * kw + kj) *
                                         static_cast<std::size_t>(out_h) * out_w;
                const int kjd = kj * dilation;
                int lo, hi;
                col_range(W, stride, pad, kjd, out_w, &lo, &hi);
                for (int oi = 0; oi < out_h; ++oi) {
                    int ii = oi * stride - pad + ki * dilation;
                    if (ii < 0 || ii >= H) {
                        std::fill(row, row + out_w, 0.0);
                        row += out_w;
                        continue;
                    }
                    const double* src = im + (static_cast<std::size_t>(c) * H + ii) * W;
                    std::fill(row, row + lo, 0.0);
                    if (stride == 1) {
                        std::copy(src + lo - pad + kjd, src + hi - pad + kjd,
                                  row + lo);
                    } else {
                        for (int oj = lo; oj < hi; ++oj)
                            row[oj] = src[oj * stride - pad + kjd];
                    }
                    std::fill(row + hi, row + out_w, 0.0);
                    row += out_w;
                }
            }
        }
    }
}

// Scatter-add of columns back into one image; adjoint of im2col.
void col2im_add(const double* cols, int C, int H, int W, int kh, int kw,
                int stride, int pad, int dilation, int out_h, int out_w,
                double* im) {
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const double* row =
                    cols + ((static_cast<std::size_t>(c) * kh + ki) * kw + kj) *
                               static_cast<std::size_t>(out_h) * out_w;
                const int kjd = kj * dilation;
                int lo, hi;
                col_range(W, stride, pad, kjd, out_w, &lo, &hi);
                for (int oi = 0; oi < out_h; ++oi) {
                    int ii = oi * stride - pad + ki * dilation;
                    if (ii < 0 || ii >= H) {
                        row += out_w;
                        continue;
                    }
                    double* dst = im + (static_cast<std::size_t>(c) * H + ii) * W;
                    if (stride == 1) {
                        double* d = dst - pad + kjd;
                        for (int oj = lo; oj < hi; ++oj) d[oj] += row[oj];
                    } else {
                        for (int oj = lo; oj < hi; ++oj)
                            dst[oj * stride - pad + kjd] += row[oj];
                    }
                    row += out_w;
                }
            }
        }
    }
}

// Reused scratch for the column matrices; conv2d and its backward closures
// run on the same thread as the forward pass.
std::vector<double>& scratch(int which, std::size_t n) {
    thread_local std::vector<double> bufs[3];
    if (bufs[which].size() < n) bufs[which].resize(n);
    return bufs[which];
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding, int dilation) {
    require_4d(input, "conv2d");
    require(weight.rank() == 4, "conv2d: weight must be [K,C,kh,kw]");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int K = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    require(weight.dim(1) == C, "conv2d: input has " + std::to_string(C) +
                                    " channels but weight expects " +
                                    std::to_string(weight.dim(1)));
    require(bias.rank() == 1 && bias.dim(0) == K, "conv2d: bias must be [K]");
    require(stride >= 1 && dilation >= 1 && padding >= 0,
            "conv2d: bad stride/padding/dilation");
    const int eff_kh = dilation * (kh - 1) + 1;
    const int eff_kw = dilation * (kw - 1) + 1;
    require(H + 2 * padding >= eff_kh && W + 2 * padding >= eff_kw,
            "conv2d: kernel does not fit input");
    const int out_h = (H + 2 * padding - eff_kh) / stride + 1;
    const int out_w = (W + 2 * padding - eff_kw) / stride + 1;

    const std::size_t col_rows = static_cast<std::size_t>(C) * kh * kw;
    const std::size_t col_cols = static_cast<std::size_t>(out_h) * out_w;
    std::vector<double>& cols = scratch(0, col_rows * col_cols);

    Tensor out({N, K, out_h, out_w});
    for (int n = 0; n < N; ++n) {
        const double* im = input.data().data() +
                           static_cast<std::size_t>(n) * C * H * W;
        double* o = out.data().data() + static_cast<std::size_t>(n) * K * col_cols;
        im2col(im, C, H, W, kh, kw, stride, padding, dilation, out_h, out_w,
               cols.data());
        for (int k = 0; k < K; ++k)
            std::fill(o + static_cast<std::size_t>(k) * col_cols,
                      o + static_cast<std::size_t>(k + 1) * col_cols,
                      bias.data()[static_cast<std::size_t>(k)]);
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, K,
                    static_cast<int>(col_cols), static_cast<int>(col_rows), 1.0,
                    weight.data().data(), static_cast<int>(col_rows),
                    cols.data(), static_cast<int>(col_cols), 1.0, o,
                    static_cast<int>(col_cols));
    }
    check_finite(out, "conv2d");

    if (any_requires_grad({&input, &weight, &bias})) {
        auto in_i = input.impl(), w_i = weight.impl(), b_i = bias.impl(),
             out_i = out.impl();
        record(out, [=]() {
            const std::size_t cr = static_cast<std::size_t>(C) * kh * kw;
            const std::size_t cc = static_cast<std::size_t>(out_h) * out_w;
            std::vector<double>& cols_b = scratch(1, cr * cc);
            std::vector<double>& dcols = scratch(2, cr * cc);
            if (in_i->requires_grad) in_i->ensure_grad();
            if (w_i->requires_grad) w_i->ensure_grad();
            if (b_i->requires_grad) b_i->ensure_grad();
            for (int n = 0; n < N; ++n) {
                const double* go = out_i->grad.data() +
                                   static_cast<std::size_t>(n) * K * cc;
                if (b_i->requires_grad) {
                    for (int k = 0; k < K; ++k) {
                        double s = 0.0;
                        const double* g = go + static_cast<std::size_t>(k) * cc;
                        for (std::size_t i = 0; i < cc; ++i) s += g[i];
                        b_i->grad[static_cast<std::size_t>(k)] += s;
                    }
                }
                if (w_i->requires_grad || in_i->requires_grad) {
                    im2col(in_i->data.data() + static_cast<std::size_t>(n) * C * H * W,
                           C, H, W, kh, kw, stride, padding, dilation, out_h,
                           out_w, cols_b.data());
                }
                if (w_i->requires_grad) {
                    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, K,
                                static_cast<int>(cr), static_cast<int>(cc), 1.0,
                                go, static_cast<int>(cc), cols_b.data(),
                                static_cast<int>(cc), 1.0, w_i->grad.data(),
                                static_cast<int>(cr));
                }
                if (in_i->requires_grad) {
                    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans,
                                static_cast<int>(cr), static_cast<int>(cc), K,
                                1.0, w_i->data.data(), static_cast<int>(cr), go,
                                static_cast<int>(cc), 0.0, dcols.data(),
                                static_cast<int>(cc));
                    col2im_add(dcols.data(), C, H, W, kh, kw, stride, padding,
                               dilation, out_h, out_w,
                               in_i->grad.data() +
                                   static_cast<std::size_t>(n) * C * H * W);
                }
            }
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
        out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    if (x.requires_grad()) {
        auto xi = x.impl(), oi = out.impl();
        record(out, [=]() {
            xi->ensure_grad();
            for (std::size_t i = 0; i < xi->data.size(); ++i)
                if (xi->data[i] > 0.0) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
        out.data()[i] = 1.0 / (1.0 + std::exp(-x.data()[i]));
    if (x.requires_grad()) {
        auto xi = x.impl(), oi = out.impl();
        record(out, [=]() {
            xi->ensure_grad();
            for (std::size_t i = 0; i < xi->data.size(); ++i) {
                double s = oi->data[i];
                xi->grad[i] += oi->grad[i] * s * (1.0 - s);
            }
        });
    }
    return out;
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride) {
    require_4d(x, "max_pool2d");
    require(kernel >= 1 && stride >= 1, "max_pool2d: bad kernel/stride");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    require(H >= kernel && W >= kernel, "max_pool2d: kernel does not fit");
    const int out_h = (H - kernel) / stride + 1;
    const int out_w = (W - kernel) / stride + 1;
    Tensor out({N, C, out_h, out_w});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
    std::size_t oidx = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* plane =
                x.data().data() + (static_cast<std::size_t>(n) * C + c) * H * W;
            for (int oi = 0; oi < out_h; ++oi)
                for (int oj = 0; oj < out_w; ++oj) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_at = 0;
                    for (int ki = 0; ki < kernel; ++ki)
                        for (int kj = 0; kj < kernel; ++kj) {
                            std::size_t at =
                                static_cast<std::size_t>(oi * stride + ki) * W +
                                (oj * stride + kj);
                            if (plane[at] > best) {  // ties keep first, row-major
                                best = plane[at];
                                best_at = at;
                            }
                        }
                    out.data()[oidx] = best;
                    (*argmax)[oidx] =
                        (static_cast<std::size_t>(n) * C + c) * H * W + best_at;
                    ++oidx;
                }
        }
    if (x.requires_grad()) {
        auto xi = x.impl(), oi_ = out.impl();
        record(out, [=]() {
            xi->ensure_grad();
            for (std::size_t i = 0; i < oi_->data.size(); ++i)
                xi->grad[(*argmax)[i]] += oi_->grad[i];
        });
    }
    return out;
}

Tensor global_avg_pool(const Tensor& x) {
    require_4d(x, "global_avg_pool");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    Tensor out({N, C, 1, 1});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* p =
                x.data().data() + (static_cast<std::size_t>(n) * C + c) * hw;
            double s = 0.0;
            for (std::size_t i = 0; i < hw; ++i) s += p[i];
            out.data()[static_cast<std::size_t>(n) * C + c] = s / static_cast<double>(hw);
        }
    if (x.requires_grad()) {
        auto xi = x.impl(), oi = out.impl();
        record(out, [=]() {
            xi->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    double g = oi->grad[static_cast<std::size_t>(n) * C + c] /
                               static_cast<double>(hw);
                    double* gp = xi->grad.data() +
                                 (static_cast<std::size_t>(n) * C + c) * hw;
                    for (std::size_t i = 0; i < hw; ++i) gp[i] += g;
                }
        });
    }
    return out;
}

Tensor global_max_pool(const Tensor& x) {
    require_4d(x, "global_max_pool");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    Tensor out({N, C, 1, 1});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * hw;
            const double* p = x.data().data() + base;
            double best = p[0];
            std::size_t at = 0;
            for (std::size_t i = 1; i < hw; ++i)
                if (p[i] > best) {
                    best = p[i];
                    at = i;
                }
            out.data()[static_cast<std::size_t>(n) * C + c] = best;
            (*argmax)[static_cast<std::size_t>(n) * C + c] = base + at;
        }
    if (x.requires_grad()) {
        auto xi = x.impl(), oi = out.impl();
        record(out, [=]() {
            xi->ensure_grad();
            for (std::size_t i = 0; i < oi->data.size(); ++i)
                xi->grad[(*argmax)[i]] += oi->grad[i];
        });
    }
    return out;
}

Tensor channel_mean(const Tensor& x) {
    require_4d(x, "channel_mean");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    Tensor out({N, 1, H, W});
    for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < hw; ++i) {
            double s = 0.0;
            for (int c = 0; c < C; ++c)
                s += x.data()[(static_cast<std::size_t>(n) * C + c) * hw + i];
            out.data()[static_cast<std::size_t>(n) * hw + i] = s / C;
        }
    if (x.requires_grad()) {
        auto xi = x.impl(), oi = out.impl();
        record(out, [=]() {
            xi->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (std::size_t i = 0; i < hw; ++i) {
                    double g = oi->grad[static_cast<std::size_t>(n) * hw + i] / C;
                    for (int c = 0; c < C; ++c)
                        xi->grad[(static_cast<std::size_t>(n) * C + c) * hw + i] += g;
                }
        });
    }
    return out;
}

Tensor channel_max(const Tensor& x) {
    require_4d(x, "channel_max");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    Tensor out({N, 1, H, W});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
    for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < hw; ++i) {
            std::size_t at = (static_cast<std::size_t>(n) * C) * hw + i;
            double best = x.data()[at];
            for (int c = 1; c < C; ++c) {
                std::size_t j = (static_cast<std::size_t>(n) * C + c) * hw + i;
                if (x.data()[j] > best) {
                    best = x.data()[j];
                    at = j;
                }
            }
            out.data()[static_cast<std::size_t>(n) * hw + i] = best;
            (*argmax)[static_cast<std::size_t>(n) * hw + i] = at;
        }
    if (x.requires_grad()) {
        auto xi = x.impl(), oi = out.impl();
        record(out, [=]() {
            xi->ensure_grad();
            for (std::size_t i = 0; i < oi->data.size(); ++i)
                xi->grad[(*argmax)[i]] += oi->grad[i];
        });
    }
    return out;
}

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
    require_4d(x, "bilinear_resize");
    require(out_h >= 1 && out_w >= 1, "bilinear_resize: bad output size");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (out_h == H && out_w == W) return x;
    Tensor out({N, C, out_h, out_w});
    // Half-pixel source mapping with edge clamp.
    const double sy = static_cast<double>(H) / out_h;
    const double sx = static_cast<double>(W) / out_w;
    struct Tap {
        int i0, i1;
        double w1;
    };
    std::vector<Tap> rows(static_cast<std::size_t>(out_h)), cols(static_cast<std::size_t>(out_w));
    auto make_tap = [](double src, int limit) {
        src = std::max(0.0, std::min(src, static_cast<double>(limit - 1)));
        int lo = static_cast<int>(std::floor(src));
        if (lo > limit - 2) lo = std::max(0, limit - 2);
        double w = src - lo;
        int hi = std::min(lo + 1, limit - 1);
        return Tap{lo, hi, w};
    };
    for (int i = 0; i < out_h; ++i) rows[static_cast<std::size_t>(i)] = make_tap((i + 0.5) * sy - 0.5, H);
    for (int j = 0; j < out_w; ++j) cols[static_cast<std::size_t>(j)] = make_tap((j + 0.5) * sx - 0.5, W);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* p =
                x.data().data() + (static_cast<std::size_t>(n) * C + c) * H * W;
            double* o = out.data().data() +
                        (static_cast<std::size_t>(n) * C + c) * out_h * out_w;
            for (int i = 0; i < out_h; ++i) {
                const Tap& r = rows[static_cast<std::size_t>(i)];
                for (int j = 0; j < out_w; ++j) {
                    const Tap& q = cols[static_cast<std::size_t>(j)];
                    double top = p[r.i0 * W + q.i0] * (1 - q.w1) +
                                 p[r.i0 * W + q.i1] * q.w1;
                    double bot = p[r.i1 * W + q.i0] * (1 - q.w1) +
                                 p[r.i1 * W + q.i1] * q.w1;
                    *o++ = top * (1 - r.w1) + bot * r.w1;
                }
            }
        }
    if (x.requires_grad()) {
        auto xi = x.impl(), oi = out.impl();
        auto rs = std::make_shared<std::vector<Tap>>(rows);
        auto cs = std::make_shared<std::vector<Tap>>(cols);
        record(out, [=]() {
            xi->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    double* gp = xi->grad.data() +
                                 (static_cast<std::size_t>(n) * C + c) * H * W;
                    const double* go =
                        oi->grad.data() +
                        (static_cast<std::size_t>(n) * C + c) * out_h * out_w;
                    for (int i = 0; i < out_h; ++i) {
                        const Tap& r = (*rs)[static_cast<std::size_t>(i)];
                        for (int j = 0; j < out_w; ++j) {
                            const Tap& q = (*cs)[static_cast<std::size_t>(j)];
                            double g = *go++;
                            gp[r.i0 * W + q.i0] += g * (1 - r.w1) * (1 - q.w1);
                            gp[r.i0 * W + q.i1] += g * (1 - r.w1) * q.w1;
                            gp[r.i1 * W + q.i0] += g * r.w1 * (1 - q.w1);
                            gp[r.i1 * W + q.i1] += g * r.w1 * q.w1;
                        }
                    }
                }
        });
    }
    return out;
}

namespace {

struct BroadcastPlan {
    std::vector<int> out_shape;
    std::vector<std::size_t> sa, sb;  // per-dim strides, 0 where broadcast
};

BroadcastPlan plan_broadcast(const Tensor& a, const Tensor& b, const char* who) {
    require(a.rank() == b.rank(),
            std::string(who) + ": rank mismatch " + shape_str(a.shape()) +
                " vs " + shape_str(b.shape()));
    int r = a.rank();
    BroadcastPlan p;
    p.out_shape.resize(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        int da = a.dim(i), db = b.dim(i);
        require(da == db || da == 1 || db == 1,
                std::string(who) + ": incompatible shapes " +
                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        p.out_shape[static_cast<std::size_t>(i)] = std::max(da, db);
    }
    auto strides = [r](const std::vector<int>& shape, const std::vector<int>& out) {
        std::vector<std::size_t> s(static_cast<std::size_t>(r));
        std::size_t acc = 1;
        for (int i = r - 1; i >= 0; --i) {
            s[static_cast<std::size_t>(i)] = (shape[static_cast<std::size_t>(i)] == 1 &&
                                              out[static_cast<std::size_t>(i)] != 1)
                                                 ? 0
                                                 : acc;
            acc *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
        }
        return s;
    };
    p.sa = strides(a.shape(), p.out_shape);
    p.sb = strides(b.shape(), p.out_shape);
    return p;
}

template <typename Fwd, typename Bwd>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, const char* who,
                        Fwd fwd, Bwd make_backward) {
    BroadcastPlan p = plan_broadcast(a, b, who);
    Tensor out(p.out_shape);
    const int r = static_cast<int>(p.out_shape.size());
    std::vector<int> idx(static_cast<std::size_t>(r), 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t o = 0; o < out.numel(); ++o) {
        out.data()[o] = fwd(a.data()[ia], b.data()[ib]);
        for (int d = r - 1; d >= 0; --d) {
            auto du = static_cast<std::size_t>(d);
            if (++idx[du] < p.out_shape[du]) {
                ia += p.sa[du];
                ib += p.sb[du];
                break;
            }
            idx[du] = 0;
            ia -= p.sa[du] * static_cast<std::size_t>(p.out_shape[du] - 1);
            ib -= p.sb[du] * static_cast<std::size_t>(p.out_shape[du] - 1);
        }
    }
    if (any_requires_grad({&a, &b})) {
        record(out, make_backward(p, out.impl()));
    }
    return out;
}

// Walks the broadcast index space once, feeding (offset_a, offset_b, out_pos).
template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F f) {
    const int r = static_cast<int>(p.out_shape.size());
    std::vector<int> idx(static_cast<std::size_t>(r), 0);
    std::size_t ia = 0, ib = 0, n = 1;
    for (int d : p.out_shape) n *= static_cast<std::size_t>(d);
    for (std::size_t o = 0; o < n; ++o) {
        f(ia, ib, o);
        for (int d = r - 1; d >= 0; --d) {
            auto du = static_cast<std::size_t>(d);
            if (++idx[du] < p.out_shape[du]) {
                ia += p.sa[du];
                ib += p.sb[du];
                break;
            }
            idx[du] = 0;
            ia -= p.sa[du] * static_cast<std::size_t>(p.out_shape[du] - 1);
            ib -= p.sb[du] * static_cast<std::size_t>(p.out_shape[du] - 1);
        }
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    auto ai = a.impl(), bi = b.impl();
    return broadcast_binary(
        a, b, "add", [](double x, double y) { return x + y; },
        [=](const BroadcastPlan& p, std::shared_ptr<TensorImpl> oi) {
            return [=]() {
                if (ai->requires_grad) ai->ensure_grad();
                if (bi->requires_grad) bi->ensure_grad();
                for_each_broadcast(p, [&](std::size_t ia, std::size_t ib,
                                          std::size_t o) {
                    if (ai->requires_grad) ai->grad[ia] += oi->grad[o];
                    if (bi->requires_grad) bi->grad[ib] += oi->grad[o];
                });
            };
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    auto ai = a.impl(), bi = b.impl();
    return broadcast_binary(
        a, b, "mul", [](double x, double y) { return x * y; },
        [=](const BroadcastPlan& p, std::shared_ptr<TensorImpl> oi) {
            return [=]() {
                if (ai->requires_grad) ai->ensure_grad();
                if (bi->requires_grad) bi->ensure_grad();
                for_each_broadcast(p, [&](std::size_t ia, std::size_t ib,
                                          std::size_t o) {
                    if (ai->requires_grad) ai->grad[ia] += oi->grad[o] * bi->data[ib];
                    if (bi->requires_grad) bi->grad[ib] += oi->grad[o] * ai->data[ia];
                });
            };
        });
}

Tensor scale(const Tensor& a, double s) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * s;
    if (a.requires_grad()) {
        auto ai = a.impl(), oi = out.impl();
        record(out, [=]() {
            ai->ensure_grad();
            for (std::size_t i = 0; i < ai->data.size(); ++i)
                ai->grad[i] += oi->grad[i] * s;
        });
    }
    return out;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
    require(!xs.empty(), "concat_channels: empty input list");
    for (const Tensor& t : xs) require_4d(t, "concat_channels");
    const int N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
    int C_total = 0;
    for (const Tensor& t : xs) {
        require(t.dim(0) == N && t.dim(2) == H && t.dim(3) == W,
                "concat_channels: mismatched N/H/W");
        C_total += t.dim(1);
    }
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    Tensor out({N, C_total, H, W});
    bool rg = false;
    for (int n = 0; n < N; ++n) {
        std::size_t dst = (static_cast<std::size_t>(n) * C_total) * hw;
        for (const Tensor& t : xs) {
            std::size_t chunk = static_cast<std::size_t>(t.dim(1)) * hw;
            std::copy_n(t.data().data() + static_cast<std::size_t>(n) * chunk, chunk,
                        out.data().data() + dst);
            dst += chunk;
            rg = rg || t.requires_grad();
        }
    }
    if (rg) {
        std::vector<std::shared_ptr<TensorImpl>> impls;
        for (const Tensor& t : xs) impls.push_back(t.impl());
        auto oi = out.impl();
        record(out, [=]() {
            for (int n = 0; n < N; ++n) {
                std::size_t src = (static_cast<std::size_t>(n) * C_total) * hw;
                for (const auto& ti : impls) {
                    std::size_t chunk = static_cast<std::size_t>(ti->shape[1]) * hw;
                    if (ti->requires_grad) {
                        ti->ensure_grad();
                        double* g = ti->grad.data() + static_cast<std::size_t>(n) * chunk;
                        const double* go = oi->grad.data() + src;
                        for (std::size_t i = 0; i < chunk; ++i) g[i] += go[i];
                    }
                    src += chunk;
                }
            }
        });
    }
    return out;
}

Tensor softmax_channels(const Tensor& x) {
    require_4d(x, "softmax_channels");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    Tensor out(x.shape());
    for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < hw; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < C; ++c)
                mx = std::max(mx, x.data()[(static_cast<std::size_t>(n) * C + c) * hw + i]);
            double z = 0.0;
            for (int c = 0; c < C; ++c) {
                std::size_t at = (static_cast<std::size_t>(n) * C + c) * hw + i;
                out.data()[at] = std::exp(x.data()[at] - mx);
                z += out.data()[at];
            }
            for (int c = 0; c < C; ++c)
                out.data()[(static_cast<std::size_t>(n) * C + c) * hw + i] /= z;
        }
    if (x.requires_grad()) {
        auto xi = x.impl(), oi = out.impl();
        record(out, [=]() {
            xi->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (std::size_t i = 0; i < hw; ++i) {
                    double dot = 0.0;
                    for (int c = 0; c < C; ++c) {
                        std::size_t at = (static_cast<std::size_t>(n) * C + c) * hw + i;
                        dot += oi->grad[at] * oi->data[at];
                    }
                    for (int c = 0; c < C; ++c) {
                        std::size_t at = (static_cast<std::size_t>(n) * C + c) * hw + i;
                        xi->grad[at] += oi->data[at] * (oi->grad[at] - dot);
                    }
                }
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    Tensor out({1});
    double s = 0.0;
    for (double v : x.data()) s += v;
    out.data()[0] = s;
    if (x.requires_grad()) {
        auto xi = x.impl(), oi = out.impl();
        record(out, [=]() {
            xi->ensure_grad();
            for (std::size_t i = 0; i < xi->data.size(); ++i)
                xi->grad[i] += oi->grad[0];
        });
    }
    return out;
}

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& targets) {
    require_4d(logits, "cross_entropy_loss");
    const int N = logits.dim(0), C = logits.dim(1), H = logits.dim(2),
              W = logits.dim(3);
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    const std::size_t npix = static_cast<std::size_t>(N) * hw;
    require(targets.size() == npix,
            "cross_entropy_loss: expected " + std::to_string(npix) +
                " targets, got " + std::to_string(targets.size()));
    for (int t : targets)
        require(t >= 0 && t < C, "cross_entropy_loss: label " +
                                     std::to_string(t) + " outside [0," +
                                     std::to_string(C) + ")");
    // Fused log-softmax; keeps probabilities for the softmax-minus-onehot
    // backward rule.
    auto probs = std::make_shared<std::vector<double>>(logits.numel());
    Tensor out({1});
    double loss = 0.0;
    for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < hw; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < C; ++c)
                mx = std::max(mx,
                              logits.data()[(static_cast<std::size_t>(n) * C + c) * hw + i]);
            double z = 0.0;
            for (int c = 0; c < C; ++c) {
                std::size_t at = (static_cast<std::size_t>(n) * C + c) * hw + i;
                (*probs)[at] = std::exp(logits.data()[at] - mx);
                z += (*probs)[at];
            }
            int t = targets[static_cast<std::size_t>(n) * hw + i];
            std::size_t tat = (static_cast<std::size_t>(n) * C + t) * hw + i;
            loss -= logits.data()[tat] - mx - std::log(z);
            for (int c = 0; c < C; ++c)
                (*probs)[(static_cast<std::size_t>(n) * C + c) * hw + i] /= z;
        }
    out.data()[0] = loss / static_cast<double>(npix);
    check_finite(out, "cross_entropy_loss");
    if (logits.requires_grad()) {
        auto li = logits.impl(), oi = out.impl();
        auto tgt = std::make_shared<std::vector<int>>(targets);
        record(out, [=]() {
            li->ensure_grad();
            double g = oi->grad[0] / static_cast<double>(npix);
            for (int n = 0; n < N; ++n)
                for (std::size_t i = 0; i < hw; ++i) {
                    int t = (*tgt)[static_cast<std::size_t>(n) * hw + i];
                    for (int c = 0; c < C; ++c) {
                        std::size_t at = (static_cast<std::size_t>(n) * C + c) * hw + i;
                        li->grad[at] += g * ((*probs)[at] - (c == t ? 1.0 : 0.0));
                    }
                }
        });
    }
    return out;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double eps) {
    if (eps < 1e-6 || eps > 1e-3)
        throw std::invalid_argument("grad_check: eps outside [1e-6, 1e-3]");
    tape_clear();
    x.set_requires_grad(true);
    x.zero_grad();
    Tensor y = f(x);
    if (y.numel() != 1)
        throw std::invalid_argument("grad_check: f must return a scalar");
    backward(y);
    std::vector<double> analytic = x.grad();
    tape_clear();

    double worst = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double saved = x.data()[i];
        x.data()[i] = saved + eps;
        double fp = f(x).item();
        tape_clear();
        x.data()[i] = saved - eps;
        double fm = f(x).item();
        tape_clear();
        x.data()[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("grad_check: non-finite value while probing");
        double numeric = (fp - fm) / (2.0 * eps);
        double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

Sgd::Sgd(std::vector<Tensor> params, double lr, double momentum,
         double weight_decay)
    : params_(std::move(params)),
      lr_(lr),
      momentum_(momentum),
      weight_decay_(weight_decay) {
    velocity_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i)
        velocity_[i].assign(params_[i].numel(), 0.0);
}

void Sgd::step() {
    for (std::size_t p = 0; p < params_.size(); ++p) {
        Tensor& t = params_[p];
        if (t.grad().size() != t.numel())
            throw std::logic_error("Sgd::step: parameter has no gradient");
        std::vector<double>& v = velocity_[p];
        for (std::size_t i = 0; i < t.numel(); ++i) {
            v[i] = momentum_ * v[i] + t.grad()[i] + weight_decay_ * t.data()[i];
            t.data()[i] -= lr_ * v[i];
        }
        t.zero_grad();
    }
}

}  // namespace ddnet
