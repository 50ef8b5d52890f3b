#include <cmath>

#include "tensor_internal.hpp"

namespace strack {

template <typename T>
void gemm_rowmajor(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate);
template <typename T>
void gemm_at_b(const T* a, const T* b, T* c, int64_t k, int64_t m, int64_t n, bool accumulate);
template <typename T>
void gemm_a_bt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate);

namespace {

struct ConvDims {
    int cin, h, w, cout, k, stride, pad, ho, wo;
    int64_t cols_k, cols_p;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    if (x.ndim() != 3 || w.ndim() != 4 || b.ndim() != 1)
        throw ShapeError("conv2d: need x C×H×W, w Co×Ci×k×k, b Co; got " + shape_str(x.shape()) +
                         ", " + shape_str(w.shape()) + ", " + shape_str(b.shape()));
    ConvDims d;
    d.cin = x.dim(0);
    d.h = x.dim(1);
    d.w = x.dim(2);
    d.cout = w.dim(0);
    d.k = w.dim(2);
    if (w.dim(1) != d.cin)
        throw ShapeError("conv2d: weight expects " + std::to_string(w.dim(1)) +
                         " input channels, input has " + std::to_string(d.cin));
    if (w.dim(3) != d.k) throw ShapeError("conv2d: kernel must be square");
    if (d.k % 2 == 0) throw ShapeError("conv2d: kernel size must be odd");
    if (b.dim(0) != d.cout) throw ShapeError("conv2d: bias size mismatch");
    if (pad < 0) throw ShapeError("conv2d: negative padding");
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    d.stride = stride;
    d.pad = pad;
    d.ho = (d.h + 2 * pad - d.k) / stride + 1;
    d.wo = (d.w + 2 * pad - d.k) / stride + 1;
    if (d.ho < 1 || d.wo < 1)
        throw ShapeError("conv2d: empty output for input " + shape_str(x.shape()) + " with k=" +
                         std::to_string(d.k) + " stride=" + std::to_string(stride));
    d.cols_k = int64_t(d.cin) * d.k * d.k;
    d.cols_p = int64_t(d.ho) * d.wo;
    return d;
}

template <typename T>
void im2col(const T* x, const ConvDims& d, T* cols) {
    parallel_for(d.cols_k, 64, [&](int64_t r0, int64_t r1) {
        for (int64_t r = r0; r < r1; ++r) {
            int c = int(r / (d.k * d.k));
            int ki = int((r / d.k) % d.k);
            int kj = int(r % d.k);
            const T* xc = x + int64_t(c) * d.h * d.w;
            T* row = cols + r * d.cols_p;
            for (int oy = 0; oy < d.ho; ++oy) {
                int iy = oy * d.stride + ki - d.pad;
                if (iy < 0 || iy >= d.h) {
                    std::fill(row + int64_t(oy) * d.wo, row + int64_t(oy + 1) * d.wo, T(0));
                    continue;
                }
                for (int ox = 0; ox < d.wo; ++ox) {
                    int ix = ox * d.stride + kj - d.pad;
                    row[int64_t(oy) * d.wo + ox] =
                        (ix >= 0 && ix < d.w) ? xc[int64_t(iy) * d.w + ix] : T(0);
                }
            }
        }
    });
}

template <typename T>
void col2im_accum(const T* cols, const ConvDims& d, T* gx) {
    for (int64_t r = 0; r < d.cols_k; ++r) {
        int c = int(r / (d.k * d.k));
        int ki = int((r / d.k) % d.k);
        int kj = int(r % d.k);
        T* xc = gx + int64_t(c) * d.h * d.w;
        const T* row = cols + r * d.cols_p;
        for (int oy = 0; oy < d.ho; ++oy) {
            int iy = oy * d.stride + ki - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            for (int ox = 0; ox < d.wo; ++ox) {
                int ix = ox * d.stride + kj - d.pad;
                if (ix >= 0 && ix < d.w) xc[int64_t(iy) * d.w + ix] += row[int64_t(oy) * d.wo + ox];
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
    if (x.dtype() != w.dtype() || x.dtype() != b.dtype()) throw ShapeError("conv2d: dtype mismatch");
    ConvDims d = conv_dims(x, w, b, stride, padding);
    auto px = x.node, pw = w.node, pb = b.node;
    ParentVer ver({px, pw, pb});
    Tensor out = make_op(
        "conv2d", {d.cout, d.ho, d.wo}, x.dtype(), {px, pw, pb}, [px, pw, pb, ver, d](Node& self) {
            ver.check({px, pw, pb}, "conv2d");
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* go = self.grad<T>();
                if (pb->requires_grad) {
                    T* gb = pb->grad<T>();
                    for (int co = 0; co < d.cout; ++co) {
                        T acc = 0;
                        const T* g = go + int64_t(co) * d.cols_p;
                        for (int64_t i = 0; i < d.cols_p; ++i) acc += g[i];
                        gb[co] += acc;
                    }
                }
                // im2col is recomputed here rather than kept alive on the tape.
                if (pw->requires_grad || px->requires_grad) {
                    std::vector<T> cols(d.cols_k * d.cols_p);
                    if (pw->requires_grad) {
                        im2col<T>(px->data<T>(), d, cols.data());
                        gemm_a_bt<T>(go, cols.data(), pw->grad<T>(), d.cout, d.cols_p, d.cols_k,
                                     true);
                    }
                    if (px->requires_grad) {
                        gemm_at_b<T>(pw->data<T>(), go, cols.data(), d.cout, d.cols_k, d.cols_p,
                                     false);
                        col2im_accum<T>(cols.data(), d, px->grad<T>());
                    }
                }
            });
        });
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        std::vector<T> cols(d.cols_k * d.cols_p);
        im2col<T>(px->data<T>(), d, cols.data());
        T* po = out.node->data<T>();
        gemm_rowmajor<T>(pw->data<T>(), cols.data(), po, d.cout, d.cols_k, d.cols_p, false);
        const T* pv = pb->data<T>();
        for (int co = 0; co < d.cout; ++co) {
            T* row = po + int64_t(co) * d.cols_p;
            for (int64_t i = 0; i < d.cols_p; ++i) row[i] += pv[co];
        }
    });
    return out;
}

Tensor avg_pool2d(const Tensor& x) {
    if (x.ndim() != 3) throw ShapeError("avg_pool2d: need C×H×W");
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    int Ho = H / 2, Wo = W / 2;
    if (Ho < 1 || Wo < 1) throw ShapeError("avg_pool2d: input too small " + shape_str(x.shape()));
    auto px = x.node;
    ParentVer ver({px});
    Tensor out = make_op("avg_pool2d", {C, Ho, Wo}, x.dtype(), {px},
                         [px, ver, C, H, W, Ho, Wo](Node& self) {
                             ver.check({px}, "avg_pool2d");
                             dispatch(self.dtype, [&](auto tag) {
                                 using T = decltype(tag);
                                 const T* go = self.grad<T>();
                                 T* gx = px->grad<T>();
                                 for (int c = 0; c < C; ++c)
                                     for (int y = 0; y < Ho; ++y)
                                         for (int x2 = 0; x2 < Wo; ++x2) {
                                             T g = go[(int64_t(c) * Ho + y) * Wo + x2] / T(4);
                                             for (int dy = 0; dy < 2; ++dy)
                                                 for (int dx = 0; dx < 2; ++dx)
                                                     gx[(int64_t(c) * H + 2 * y + dy) * W + 2 * x2 +
                                                        dx] += g;
                                         }
                             });
                         });
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pi = px->data<T>();
        T* po = out.node->data<T>();
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < Ho; ++y)
                for (int x2 = 0; x2 < Wo; ++x2) {
                    T acc = 0;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            acc += pi[(int64_t(c) * H + 2 * y + dy) * W + 2 * x2 + dx];
                    po[(int64_t(c) * Ho + y) * Wo + x2] = acc / T(4);
                }
    });
    return out;
}

Tensor pad_reflect(const Tensor& x, int left, int right, int top, int bottom) {
    if (x.ndim() != 3) throw ShapeError("pad_reflect: need C×H×W");
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (left >= W || right >= W || top >= H || bottom >= H)
        throw ShapeError("pad_reflect: padding must be smaller than the spatial extent");
    if (left < 0 || right < 0 || top < 0 || bottom < 0) throw ShapeError("pad_reflect: negative pad");
    int Ho = H + top + bottom, Wo = W + left + right;
    auto reflect = [](int i, int n) {
        if (i < 0) return -i;
        if (i >= n) return 2 * n - 2 - i;
        return i;
    };
    auto px = x.node;
    ParentVer ver({px});
    Tensor out = make_op("pad_reflect", {C, Ho, Wo}, x.dtype(), {px},
                         [px, ver, C, H, W, Ho, Wo, left, top, reflect](Node& self) {
                             ver.check({px}, "pad_reflect");
                             dispatch(self.dtype, [&](auto tag) {
                                 using T = decltype(tag);
                                 const T* go = self.grad<T>();
                                 T* gx = px->grad<T>();
                                 for (int c = 0; c < C; ++c)
                                     for (int y = 0; y < Ho; ++y) {
                                         int sy = reflect(y - top, H);
                                         for (int x2 = 0; x2 < Wo; ++x2) {
                                             int sx = reflect(x2 - left, W);
                                             gx[(int64_t(c) * H + sy) * W + sx] +=
                                                 go[(int64_t(c) * Ho + y) * Wo + x2];
                                         }
                                     }
                             });
                         });
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pi = px->data<T>();
        T* po = out.node->data<T>();
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < Ho; ++y) {
                int sy = reflect(y - top, H);
                for (int x2 = 0; x2 < Wo; ++x2) {
                    int sx = reflect(x2 - left, W);
                    po[(int64_t(c) * Ho + y) * Wo + x2] = pi[(int64_t(c) * H + sy) * W + sx];
                }
            }
    });
    return out;
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.ndim() != 3) throw ShapeError("instance_norm: need C×H×W");
    int C = x.dim(0);
    int64_t hw = int64_t(x.dim(1)) * x.dim(2);
    if (gamma.ndim() != 1 || gamma.dim(0) != C || beta.ndim() != 1 || beta.dim(0) != C)
        throw ShapeError("instance_norm: gamma/beta must be per-channel vectors");
    auto px = x.node, pg = gamma.node, pb = beta.node;
    ParentVer ver({px, pg, pb});
    Tensor out = make_op(
        "instance_norm", x.shape(), x.dtype(), {px, pg, pb}, [px, pg, pb, ver, C, hw, eps](Node& self) {
            ver.check({px, pg, pb}, "instance_norm");
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* go = self.grad<T>();
                const T* vx = px->data<T>();
                const T* vg = pg->data<T>();
                for (int c = 0; c < C; ++c) {
                    const T* xc = vx + c * hw;
                    const T* gc = go + c * hw;
                    double mean = 0;
                    for (int64_t i = 0; i < hw; ++i) mean += double(xc[i]);
                    mean /= double(hw);
                    double var = 0;
                    for (int64_t i = 0; i < hw; ++i) {
                        double dv = double(xc[i]) - mean;
                        var += dv * dv;
                    }
                    var /= double(hw);
                    double istd = 1.0 / std::sqrt(var + eps);
                    double sum_g = 0, sum_gx = 0;
                    for (int64_t i = 0; i < hw; ++i) {
                        double xh = (double(xc[i]) - mean) * istd;
                        sum_g += double(gc[i]);
                        sum_gx += double(gc[i]) * xh;
                    }
                    if (pg->requires_grad) pg->grad<T>()[c] += T(sum_gx);
                    if (pb->requires_grad) pb->grad<T>()[c] += T(sum_g);
                    if (px->requires_grad) {
                        T* gxc = px->grad<T>() + c * hw;
                        double g = double(vg[c]);
                        for (int64_t i = 0; i < hw; ++i) {
                            double xh = (double(xc[i]) - mean) * istd;
                            gxc[i] += T(g * istd *
                                        (double(gc[i]) - sum_g / double(hw) - xh * sum_gx / double(hw)));
                        }
                    }
                }
            });
        });
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* vx = px->data<T>();
        const T* vg = pg->data<T>();
        const T* vb = pb->data<T>();
        T* po = out.node->data<T>();
        for (int c = 0; c < C; ++c) {
            const T* xc = vx + c * hw;
            T* oc = po + c * hw;
            double mean = 0;
            for (int64_t i = 0; i < hw; ++i) mean += double(xc[i]);
            mean /= double(hw);
            double var = 0;
            for (int64_t i = 0; i < hw; ++i) {
                double dv = double(xc[i]) - mean;
                var += dv * dv;
            }
            var /= double(hw);
            double istd = 1.0 / std::sqrt(var + eps);
            for (int64_t i = 0; i < hw; ++i)
                oc[i] = T((double(xc[i]) - mean) * istd * double(vg[c]) + double(vb[c]));
        }
    });
    return out;
}

Tensor gru_cell(const Tensor& h, const Tensor& x, const GruParams& p) {
    if (h.ndim() != 3 || x.ndim() != 3 || h.dim(1) != x.dim(1) || h.dim(2) != x.dim(2))
        throw ShapeError("gru_cell: h and x must share spatial dims, got " + shape_str(h.shape()) +
                         " and " + shape_str(x.shape()));
    int k = p.wz.dim(2);
    int pad = k / 2;
    Tensor hx = concat_channels({h, x});
    Tensor z = sigmoid(conv2d(hx, p.wz, p.bz, 1, pad));
    Tensor r = sigmoid(conv2d(hx, p.wr, p.br, 1, pad));
    Tensor rh = mul(r, h);
    Tensor cand = tanh_op(conv2d(concat_channels({rh, x}), p.wq, p.bq, 1, pad));
    // h' = (1 - z)·h + z·cand
    Tensor one_minus_z = add_scalar(mul_scalar(z, -1.0), 1.0);
    return add(mul(one_minus_z, h), mul(z, cand));
}

}  // namespace strack
