#include <cmath>

#include "tensor_internal.hpp"

namespace strack {

Tensor bilinear_sample(const Tensor& grid, const Tensor& coords) {
    if (grid.ndim() != 3 || coords.ndim() != 3 || coords.dim(0) != 2)
        throw ShapeError("bilinear_sample: need grid C×H×W and coords 2×H'×W', got " +
                         shape_str(grid.shape()) + " and " + shape_str(coords.shape()));
    if (grid.dtype() != coords.dtype()) throw ShapeError("bilinear_sample: dtype mismatch");
    int C = grid.dim(0), H = grid.dim(1), W = grid.dim(2);
    int Ho = coords.dim(1), Wo = coords.dim(2);
    int64_t ohw = int64_t(Ho) * Wo;
    int64_t ghw = int64_t(H) * W;
    auto pg = grid.node, pc = coords.node;
    ParentVer ver({pg, pc});
    Tensor out = make_op(
        "bilinear_sample", {C, Ho, Wo}, grid.dtype(), {pg, pc},
        [pg, pc, ver, C, H, W, ohw, ghw](Node& self) {
            ver.check({pg, pc}, "bilinear_sample");
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* go = self.grad<T>();
                const T* crd = pc->data<T>();
                const T* g = pg->data<T>();
                T* ggrid = pg->requires_grad ? pg->grad<T>() : nullptr;
                T* gcrd = pc->requires_grad ? pc->grad<T>() : nullptr;
                for (int64_t i = 0; i < ohw; ++i) {
                    double x = double(crd[i]);
                    double y = double(crd[ohw + i]);
                    int x0 = int(std::floor(x)), y0 = int(std::floor(y));
                    double fx = x - x0, fy = y - y0;
                    double wx[2] = {1.0 - fx, fx};
                    double wy[2] = {1.0 - fy, fy};
                    double dgx = 0, dgy = 0;
                    for (int c = 0; c < C; ++c) {
                        double gout = double(go[c * ohw + i]);
                        if (gout == 0) continue;
                        double vy[2][2];
                        for (int jy = 0; jy < 2; ++jy)
                            for (int jx = 0; jx < 2; ++jx) {
                                int yy = y0 + jy, xx = x0 + jx;
                                bool in = (xx >= 0 && xx < W && yy >= 0 && yy < H);
                                double v = in ? double(g[c * ghw + int64_t(yy) * W + xx]) : 0.0;
                                vy[jy][jx] = v;
                                if (ggrid && in)
                                    ggrid[c * ghw + int64_t(yy) * W + xx] +=
                                        T(gout * wx[jx] * wy[jy]);
                            }
                        if (gcrd) {
                            dgx += gout * (wy[0] * (vy[0][1] - vy[0][0]) +
                                           wy[1] * (vy[1][1] - vy[1][0]));
                            dgy += gout * (wx[0] * (vy[1][0] - vy[0][0]) +
                                           wx[1] * (vy[1][1] - vy[0][1]));
                        }
                    }
                    if (gcrd) {
                        gcrd[i] += T(dgx);
                        gcrd[ohw + i] += T(dgy);
                    }
                }
            });
        });
    dispatch(grid.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* g = pg->data<T>();
        const T* crd = pc->data<T>();
        T* po = out.node->data<T>();
        for (int64_t i = 0; i < ohw; ++i) {
            double x = double(crd[i]);
            double y = double(crd[ohw + i]);
            int x0 = int(std::floor(x)), y0 = int(std::floor(y));
            double fx = x - x0, fy = y - y0;
            double wx[2] = {1.0 - fx, fx};
            double wy[2] = {1.0 - fy, fy};
            for (int c = 0; c < C; ++c) {
                double acc = 0;
                for (int jy = 0; jy < 2; ++jy)
                    for (int jx = 0; jx < 2; ++jx) {
                        int yy = y0 + jy, xx = x0 + jx;
                        if (xx >= 0 && xx < W && yy >= 0 && yy < H)
                            acc += wx[jx] * wy[jy] * double(g[c * ghw + int64_t(yy) * W + xx]);
                    }
                po[c * ohw + i] = T(acc);
            }
        }
    });
    return out;
}

Tensor crop_spatial(const Tensor& x, int h, int w) {
    if (x.ndim() != 3) throw ShapeError("crop_spatial: need C×H×W");
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (h > H || w > W || h < 1 || w < 1)
        throw ShapeError("crop_spatial: window " + std::to_string(h) + "x" + std::to_string(w) +
                         " does not fit " + shape_str(x.shape()));
    if (h == H && w == W) return reshape(x, x.shape());
    auto px = x.node;
    ParentVer ver({px});
    Tensor out = make_op("crop_spatial", {C, h, w}, x.dtype(), {px},
                         [px, ver, C, H, W, h, w](Node& self) {
                             ver.check({px}, "crop_spatial");
                             dispatch(self.dtype, [&](auto tag) {
                                 using T = decltype(tag);
                                 const T* go = self.grad<T>();
                                 T* gx = px->grad<T>();
                                 for (int c = 0; c < C; ++c)
                                     for (int y = 0; y < h; ++y)
                                         for (int x2 = 0; x2 < w; ++x2)
                                             gx[(int64_t(c) * H + y) * W + x2] +=
                                                 go[(int64_t(c) * h + y) * w + x2];
                             });
                         });
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pi = px->data<T>();
        T* po = out.node->data<T>();
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < h; ++y)
                for (int x2 = 0; x2 < w; ++x2)
                    po[(int64_t(c) * h + y) * w + x2] = pi[(int64_t(c) * H + y) * W + x2];
    });
    return out;
}

Tensor upsample_bilinear(const Tensor& x, int factor) {
    if (x.ndim() != 3) throw ShapeError("upsample_bilinear: need C×H×W");
    if (factor < 1) throw ShapeError("upsample_bilinear: factor must be >= 1");
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    int Ho = H * factor, Wo = W * factor;
    int64_t ihw = int64_t(H) * W, ohw = int64_t(Ho) * Wo;
    // Edge-replicated source coordinates, pixel centers at integers.
    auto src = [factor](int o) { return (o + 0.5) / factor - 0.5; };
    auto cell = [](double s, int n, int& i0, double& f) {
        if (s < 0) s = 0;
        if (s > n - 1) s = n - 1;
        i0 = int(std::floor(s));
        if (i0 > n - 2) i0 = std::max(0, n - 2);
        f = s - i0;
    };
    auto px = x.node;
    ParentVer ver({px});
    Tensor out = make_op("upsample_bilinear", {C, Ho, Wo}, x.dtype(), {px},
                         [px, ver, C, H, W, Ho, Wo, ihw, ohw, src, cell](Node& self) {
                             ver.check({px}, "upsample_bilinear");
                             dispatch(self.dtype, [&](auto tag) {
                                 using T = decltype(tag);
                                 const T* go = self.grad<T>();
                                 T* gx = px->grad<T>();
                                 for (int oy = 0; oy < Ho; ++oy) {
                                     int y0;
                                     double fy;
                                     cell(src(oy), H, y0, fy);
                                     for (int ox = 0; ox < Wo; ++ox) {
                                         int x0;
                                         double fx;
                                         cell(src(ox), W, x0, fx);
                                         for (int c = 0; c < C; ++c) {
                                             double g = double(go[c * ohw + int64_t(oy) * Wo + ox]);
                                             gx[c * ihw + int64_t(y0) * W + x0] +=
                                                 T(g * (1 - fx) * (1 - fy));
                                             if (x0 + 1 < W)
                                                 gx[c * ihw + int64_t(y0) * W + x0 + 1] +=
                                                     T(g * fx * (1 - fy));
                                             if (y0 + 1 < H)
                                                 gx[c * ihw + int64_t(y0 + 1) * W + x0] +=
                                                     T(g * (1 - fx) * fy);
                                             if (x0 + 1 < W && y0 + 1 < H)
                                                 gx[c * ihw + int64_t(y0 + 1) * W + x0 + 1] +=
                                                     T(g * fx * fy);
                                         }
                                     }
                                 }
                             });
                         });
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pi = px->data<T>();
        T* po = out.node->data<T>();
        for (int oy = 0; oy < Ho; ++oy) {
            int y0;
            double fy;
            cell(src(oy), H, y0, fy);
            int y1 = std::min(y0 + 1, H - 1);
            for (int ox = 0; ox < Wo; ++ox) {
                int x0;
                double fx;
                cell(src(ox), W, x0, fx);
                int x1 = std::min(x0 + 1, W - 1);
                for (int c = 0; c < C; ++c) {
                    const T* xc = pi + c * ihw;
                    double v = (1 - fx) * (1 - fy) * double(xc[int64_t(y0) * W + x0]) +
                               fx * (1 - fy) * double(xc[int64_t(y0) * W + x1]) +
                               (1 - fx) * fy * double(xc[int64_t(y1) * W + x0]) +
                               fx * fy * double(xc[int64_t(y1) * W + x1]);
                    po[c * ohw + int64_t(oy) * Wo + ox] = T(v);
                }
            }
        }
    });
    return out;
}

}  // namespace strack
