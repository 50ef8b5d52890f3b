#include "strack/splatting.hpp"

#include <cmath>

#include "tensor_internal.hpp"

namespace strack {

const char* splat_mode_name(SplatMode m) {
    switch (m) {
        case SplatMode::Summation: return "summation";
        case SplatMode::Average: return "average";
        case SplatMode::Linear: return "linear";
        case SplatMode::Softmax: return "softmax";
    }
    return "?";
}

SplatMode splat_mode_from_name(const std::string& name) {
    if (name == "summation") return SplatMode::Summation;
    if (name == "average") return SplatMode::Average;
    if (name == "linear") return SplatMode::Linear;
    if (name == "softmax") return SplatMode::Softmax;
    throw ConfigError("unknown splat mode '" + name +
                      "' (valid: summation, average, linear, softmax)");
}

namespace {

struct SplatDims {
    int C, H, W;
    int64_t hw;
};

// Per-source mass factor for the mode.
template <typename T>
double mass_of(SplatMode mode, const T* vis, int64_t s, double alpha) {
    switch (mode) {
        case SplatMode::Summation:
        case SplatMode::Average: return 1.0;
        case SplatMode::Linear: return double(vis[s]);
        case SplatMode::Softmax: return std::exp(alpha * double(vis[s]));
    }
    return 1.0;
}

// Scatter pass shared by forward and backward. visit(s, t, w, dwx_wy, wx_dwy)
// runs for every in-bounds (source, target) pair; the derivative factors use
// the left-limit convention at kernel kinks. At an exactly-integer target
// coordinate the cell approached from below is used, which makes the
// analytic flow gradient equal the left-sided difference quotient there
// (forward masses are identical either way).
template <typename T, class Visit>
void for_each_contribution(const T* flow, const SplatDims& d, Visit visit) {
    auto left_cell = [](double t) {
        double fl = std::floor(t);
        int i0 = int(fl);
        if (t == fl) --i0;
        return i0;
    };
    for (int y1 = 0; y1 < d.H; ++y1)
        for (int x1 = 0; x1 < d.W; ++x1) {
            int64_t s = int64_t(y1) * d.W + x1;
            double tx = x1 + double(flow[s]);
            double ty = y1 + double(flow[d.hw + s]);
            if (!(std::isfinite(tx) && std::isfinite(ty))) continue;
            int x0 = left_cell(tx), y0 = left_cell(ty);
            for (int jy = 0; jy < 2; ++jy)
                for (int jx = 0; jx < 2; ++jx) {
                    int xt = x0 + jx, yt = y0 + jy;
                    if (xt < 0 || xt >= d.W || yt < 0 || yt >= d.H) continue;
                    double dx = tx - xt, dy = ty - yt;  // both in [-1, 1] in-cell
                    double wx = 1.0 - std::abs(dx), wy = 1.0 - std::abs(dy);
                    double dwx = dx <= 0.0 ? 1.0 : -1.0;
                    double dwy = dy <= 0.0 ? 1.0 : -1.0;
                    visit(s, int64_t(yt) * d.W + xt, wx * wy, dwx * wy, wx * dwy);
                }
        }
}

template <typename T>
void splat_forward(const T* src, const T* flow, const T* vis, SplatMode mode, double alpha,
                   double eps_hole, const SplatDims& d, T* value, T* weight, T* hole,
                   std::vector<double>& B) {
    std::vector<double> A(size_t(d.C) * d.hw, 0.0);
    B.assign(d.hw, 0.0);
    for_each_contribution<T>(flow, d, [&](int64_t s, int64_t t, double w, double, double) {
        double m = mass_of(mode, vis, s, alpha);
        double wm = w * m;
        for (int c = 0; c < d.C; ++c) A[c * d.hw + t] += wm * double(src[c * d.hw + s]);
        B[t] += wm;
    });
    bool normalized = mode != SplatMode::Summation;
    for (int64_t t = 0; t < d.hw; ++t) {
        bool is_hole = B[t] < eps_hole;
        weight[t] = T(B[t]);
        hole[t] = T(is_hole ? 1 : 0);
        for (int c = 0; c < d.C; ++c) {
            double a = A[c * d.hw + t];
            if (!normalized)
                value[c * d.hw + t] = T(a);
            else
                value[c * d.hw + t] = T(is_hole ? 0.0 : a / B[t]);
        }
    }
}

template <typename T>
void splat_backward(Node& self, const NodePtr& psrc, const NodePtr& pflow, const NodePtr& pvis,
                    SplatMode mode, double alpha, double eps_hole, const SplatDims& d,
                    const std::vector<double>& B) {
    const T* go = self.grad<T>();
    const T* val = self.data<T>();
    const T* src = psrc->data<T>();
    const T* flow = pflow->data<T>();
    const T* vis = pvis ? pvis->data<T>() : nullptr;
    T* gsrc = psrc->requires_grad ? psrc->grad<T>() : nullptr;
    T* gflow = pflow->requires_grad ? pflow->grad<T>() : nullptr;
    T* gvis = (pvis && pvis->requires_grad) ? pvis->grad<T>() : nullptr;

    bool normalized = mode != SplatMode::Summation;
    // go_n[c][t]: dL/dA[c][t]; P[t]: dL/dB[t] (division quotient rule)
    std::vector<double> go_n(size_t(d.C) * d.hw, 0.0);
    std::vector<double> P(d.hw, 0.0);
    for (int64_t t = 0; t < d.hw; ++t) {
        bool is_hole = B[t] < eps_hole;
        if (normalized && is_hole) continue;  // hole fill is a constant
        double inv = normalized ? 1.0 / B[t] : 1.0;
        double p = 0.0;
        for (int c = 0; c < d.C; ++c) {
            double g = double(go[c * d.hw + t]) * inv;
            go_n[c * d.hw + t] = g;
            if (normalized) p -= g * double(val[c * d.hw + t]);
        }
        P[t] = p;
    }

    for_each_contribution<T>(flow, d, [&](int64_t s, int64_t t, double w, double dwx_wy,
                                          double wx_dwy) {
        double m = mass_of(mode, vis, s, alpha);
        double s_dot = 0.0;
        for (int c = 0; c < d.C; ++c) {
            double g = go_n[c * d.hw + t];
            if (gsrc) gsrc[c * d.hw + s] += T(w * m * g);
            s_dot += double(src[c * d.hw + s]) * g;
        }
        double through = s_dot + P[t];
        if (gvis) {
            double dm = mode == SplatMode::Softmax ? alpha * m : 1.0;
            if (mode == SplatMode::Linear || mode == SplatMode::Softmax)
                gvis[s] += T(w * dm * through);
        }
        if (gflow) {
            gflow[s] += T(dwx_wy * m * through);
            gflow[d.hw + s] += T(wx_dwy * m * through);
        }
    });
}

}  // namespace

SplatResult splat(const Tensor& src, const Tensor& flow, const Tensor& vis, SplatMode mode,
                  double alpha, double eps_hole) {
    if (src.ndim() != 3 || flow.ndim() != 3 || flow.dim(0) != 2 || flow.dim(1) != src.dim(1) ||
        flow.dim(2) != src.dim(2))
        throw ShapeError("splat: need src C×H×W and flow 2×H×W, got " + shape_str(src.shape()) +
                         " and " + shape_str(flow.shape()));
    bool needs_vis = mode == SplatMode::Linear || mode == SplatMode::Softmax;
    if (needs_vis) {
        if (!vis.defined() || vis.ndim() != 3 || vis.dim(0) != 1 || vis.dim(1) != src.dim(1) ||
            vis.dim(2) != src.dim(2))
            throw ShapeError("splat: vis must be 1×H×W matching src");
        if (vis.dtype() != src.dtype()) throw ShapeError("splat: vis dtype mismatch");
    }
    if (flow.dtype() != src.dtype()) throw ShapeError("splat: flow dtype mismatch");

    SplatDims d{src.dim(0), src.dim(1), src.dim(2), int64_t(src.dim(1)) * src.dim(2)};
    auto psrc = src.node, pflow = flow.node;
    NodePtr pvis = needs_vis ? vis.node : nullptr;

    SplatResult res;
    res.weight = Tensor::zeros({1, d.H, d.W}, src.dtype());
    res.hole_mask = Tensor::zeros({1, d.H, d.W}, src.dtype());

    // The denominator is recorded for backward; scatter geometry is
    // recomputed there from the saved flow values.
    auto B = std::make_shared<std::vector<double>>();

    std::vector<NodePtr> parents = {psrc, pflow};
    if (pvis) parents.push_back(pvis);
    ParentVer ver(parents);
    res.value = make_op("splat", {d.C, d.H, d.W}, src.dtype(), parents,
                        [psrc, pflow, pvis, parents, ver, mode, alpha, eps_hole, d, B](Node& self) {
                            ver.check(parents, "splat");
                            dispatch(self.dtype, [&](auto tag) {
                                using T = decltype(tag);
                                splat_backward<T>(self, psrc, pflow, pvis, mode, alpha, eps_hole,
                                                  d, *B);
                            });
                        });

    dispatch(src.dtype(), [&](auto tag) {
        using T = decltype(tag);
        splat_forward<T>(psrc->data<T>(), pflow->data<T>(), pvis ? pvis->data<T>() : nullptr, mode,
                         alpha, eps_hole, d, res.value.node->data<T>(),
                         res.weight.node->data<T>(), res.hole_mask.node->data<T>(), *B);
    });
    return res;
}

SplatResult summation_splat(const Tensor& src, const Tensor& flow, double eps_hole) {
    return splat(src, flow, Tensor(), SplatMode::Summation, kDefaultSoftmaxAlpha, eps_hole);
}

SplatResult visibility_splat(const Tensor& src, const Tensor& flow, const Tensor& vis,
                             double eps_hole) {
    return splat(src, flow, vis, SplatMode::Linear, kDefaultSoftmaxAlpha, eps_hole);
}

}  // namespace strack
