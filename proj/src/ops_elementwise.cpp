#include <cmath>

#include "tensor_internal.hpp"

namespace strack {

namespace {

template <typename T, class FwdF>
void ew_loop(const Node& a, const Node& b, Node& out, FwdF f) {
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.data<T>();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto pa = a.node, pb = b.node;
    ParentVer ver({pa, pb});
    Tensor out = make_op("add", a.shape(), a.dtype(), {pa, pb}, [pa, pb, ver](Node& self) {
        ver.check({pa, pb}, "add");
        dispatch(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            const T* go = self.grad<T>();
            int64_t n = self.numel();
            if (pa->requires_grad) {
                T* ga = pa->grad<T>();
                for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
            }
            if (pb->requires_grad) {
                T* gb = pb->grad<T>();
                for (int64_t i = 0; i < n; ++i) gb[i] += go[i];
            }
        });
    });
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        ew_loop<T>(*pa, *pb, *out.node, [](T x, T y) { return x + y; });
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto pa = a.node, pb = b.node;
    ParentVer ver({pa, pb});
    Tensor out = make_op("sub", a.shape(), a.dtype(), {pa, pb}, [pa, pb, ver](Node& self) {
        ver.check({pa, pb}, "sub");
        dispatch(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            const T* go = self.grad<T>();
            int64_t n = self.numel();
            if (pa->requires_grad) {
                T* ga = pa->grad<T>();
                for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
            }
            if (pb->requires_grad) {
                T* gb = pb->grad<T>();
                for (int64_t i = 0; i < n; ++i) gb[i] -= go[i];
            }
        });
    });
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        ew_loop<T>(*pa, *pb, *out.node, [](T x, T y) { return x - y; });
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto pa = a.node, pb = b.node;
    ParentVer ver({pa, pb});
    Tensor out = make_op("mul", a.shape(), a.dtype(), {pa, pb}, [pa, pb, ver](Node& self) {
        ver.check({pa, pb}, "mul");
        dispatch(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            const T* go = self.grad<T>();
            int64_t n = self.numel();
            if (pa->requires_grad) {
                T* ga = pa->grad<T>();
                const T* vb = pb->data<T>();
                for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * vb[i];
            }
            if (pb->requires_grad) {
                T* gb = pb->grad<T>();
                const T* va = pa->data<T>();
                for (int64_t i = 0; i < n; ++i) gb[i] += go[i] * va[i];
            }
        });
    });
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        ew_loop<T>(*pa, *pb, *out.node, [](T x, T y) { return x * y; });
    });
    return out;
}

Tensor add_scalar(const Tensor& a, double s) {
    auto pa = a.node;
    ParentVer ver({pa});
    Tensor out = make_op("add_scalar", a.shape(), a.dtype(), {pa}, [pa, ver](Node& self) {
        ver.check({pa}, "add_scalar");
        dispatch(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            const T* go = self.grad<T>();
            T* ga = pa->grad<T>();
            for (int64_t i = 0; i < self.numel(); ++i) ga[i] += go[i];
        });
    });
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pi = pa->data<T>();
        T* po = out.node->data<T>();
        for (int64_t i = 0; i < a.numel(); ++i) po[i] = pi[i] + T(s);
    });
    return out;
}

Tensor mul_scalar(const Tensor& a, double s) {
    auto pa = a.node;
    ParentVer ver({pa});
    Tensor out = make_op("mul_scalar", a.shape(), a.dtype(), {pa}, [pa, s, ver](Node& self) {
        ver.check({pa}, "mul_scalar");
        dispatch(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            const T* go = self.grad<T>();
            T* ga = pa->grad<T>();
            for (int64_t i = 0; i < self.numel(); ++i) ga[i] += go[i] * T(s);
        });
    });
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pi = pa->data<T>();
        T* po = out.node->data<T>();
        for (int64_t i = 0; i < a.numel(); ++i) po[i] = pi[i] * T(s);
    });
    return out;
}

namespace {

// Unary op with gradient expressed from the forward output y.
template <class FwdF, class BwdF>
Tensor unary_from_output(const char* name, const Tensor& x, FwdF fwd, BwdF dy_from_y) {
    auto px = x.node;
    ParentVer ver({px});
    Tensor out = make_op(name, x.shape(), x.dtype(), {px}, [px, ver, dy_from_y, name](Node& self) {
        ver.check({px}, name);
        dispatch(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            const T* go = self.grad<T>();
            const T* y = self.data<T>();
            T* gx = px->grad<T>();
            for (int64_t i = 0; i < self.numel(); ++i) gx[i] += go[i] * T(dy_from_y(double(y[i])));
        });
    });
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pi = px->data<T>();
        T* po = out.node->data<T>();
        for (int64_t i = 0; i < x.numel(); ++i) po[i] = T(fwd(double(pi[i])));
    });
    return out;
}

}  // namespace

Tensor relu(const Tensor& x) {
    auto px = x.node;
    ParentVer ver({px});
    Tensor out = make_op("relu", x.shape(), x.dtype(), {px}, [px, ver](Node& self) {
        ver.check({px}, "relu");
        dispatch(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            const T* go = self.grad<T>();
            const T* vx = px->data<T>();
            T* gx = px->grad<T>();
            for (int64_t i = 0; i < self.numel(); ++i)
                if (vx[i] > T(0)) gx[i] += go[i];
        });
    });
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pi = px->data<T>();
        T* po = out.node->data<T>();
        for (int64_t i = 0; i < x.numel(); ++i) po[i] = pi[i] > T(0) ? pi[i] : T(0);
    });
    return out;
}

Tensor sigmoid(const Tensor& x) {
    return unary_from_output(
        "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double y) { return y * (1.0 - y); });
}

Tensor tanh_op(const Tensor& x) {
    return unary_from_output(
        "tanh", x, [](double v) { return std::tanh(v); }, [](double y) { return 1.0 - y * y; });
}

Tensor exp_op(const Tensor& x) {
    return unary_from_output(
        "exp", x, [](double v) { return std::exp(v); }, [](double y) { return y; });
}

Tensor abs_op(const Tensor& x) {
    auto px = x.node;
    ParentVer ver({px});
    Tensor out = make_op("abs", x.shape(), x.dtype(), {px}, [px, ver](Node& self) {
        ver.check({px}, "abs");
        dispatch(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            const T* go = self.grad<T>();
            const T* vx = px->data<T>();
            T* gx = px->grad<T>();
            // subgradient 0 at x == 0
            for (int64_t i = 0; i < self.numel(); ++i)
                gx[i] += go[i] * T(vx[i] > T(0) ? 1 : (vx[i] < T(0) ? -1 : 0));
        });
    });
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pi = px->data<T>();
        T* po = out.node->data<T>();
        for (int64_t i = 0; i < x.numel(); ++i) po[i] = std::abs(pi[i]);
    });
    return out;
}

Tensor mul_channelwise(const Tensor& a, const Tensor& m) {
    if (a.ndim() != 3 || m.ndim() != 3 || m.dim(0) != 1 || m.dim(1) != a.dim(1) ||
        m.dim(2) != a.dim(2))
        throw ShapeError("mul_channelwise: need C×H×W and 1×H×W, got " + shape_str(a.shape()) +
                         " and " + shape_str(m.shape()));
    if (a.dtype() != m.dtype()) throw ShapeError("mul_channelwise: dtype mismatch");
    int C = a.dim(0);
    int64_t hw = int64_t(a.dim(1)) * a.dim(2);
    auto pa = a.node, pm = m.node;
    ParentVer ver({pa, pm});
    Tensor out = make_op("mul_channelwise", a.shape(), a.dtype(), {pa, pm},
                         [pa, pm, ver, C, hw](Node& self) {
                             ver.check({pa, pm}, "mul_channelwise");
                             dispatch(self.dtype, [&](auto tag) {
                                 using T = decltype(tag);
                                 const T* go = self.grad<T>();
                                 const T* va = pa->data<T>();
                                 const T* vm = pm->data<T>();
                                 if (pa->requires_grad) {
                                     T* ga = pa->grad<T>();
                                     for (int c = 0; c < C; ++c)
                                         for (int64_t i = 0; i < hw; ++i)
                                             ga[c * hw + i] += go[c * hw + i] * vm[i];
                                 }
                                 if (pm->requires_grad) {
                                     T* gm = pm->grad<T>();
                                     for (int c = 0; c < C; ++c)
                                         for (int64_t i = 0; i < hw; ++i)
                                             gm[i] += go[c * hw + i] * va[c * hw + i];
                                 }
                             });
                         });
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* va = pa->data<T>();
        const T* vm = pm->data<T>();
        T* po = out.node->data<T>();
        for (int c = 0; c < C; ++c)
            for (int64_t i = 0; i < hw; ++i) po[c * hw + i] = va[c * hw + i] * vm[i];
    });
    return out;
}

// ---- shape ops ----

Tensor reshape(const Tensor& x, std::vector<int> shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    if (n != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    auto px = x.node;
    ParentVer ver({px});
    Tensor out = make_op("reshape", std::move(shape), x.dtype(), {px}, [px, ver](Node& self) {
        ver.check({px}, "reshape");
        dispatch(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            const T* go = self.grad<T>();
            T* gx = px->grad<T>();
            for (int64_t i = 0; i < self.numel(); ++i) gx[i] += go[i];
        });
    });
    if (x.dtype() == Dtype::F32)
        out.node->f32 = px->f32;
    else
        out.node->f64 = px->f64;
    return out;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("concat_channels: empty input list");
    int H = xs[0].dim(1), W = xs[0].dim(2);
    Dtype dt = xs[0].dtype();
    int C = 0;
    std::vector<NodePtr> parents;
    for (const auto& t : xs) {
        if (t.ndim() != 3 || t.dim(1) != H || t.dim(2) != W || t.dtype() != dt)
            throw ShapeError("concat_channels: incompatible input " + shape_str(t.shape()));
        C += t.dim(0);
        parents.push_back(t.node);
    }
    int64_t hw = int64_t(H) * W;
    ParentVer ver(parents);
    Tensor out =
        make_op("concat_channels", {C, H, W}, dt, parents, [parents, ver, hw](Node& self) {
            ver.check(parents, "concat_channels");
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* go = self.grad<T>();
                int64_t off = 0;
                for (auto& p : parents) {
                    int64_t pn = p->numel();
                    if (p->requires_grad) {
                        T* g = p->grad<T>();
                        for (int64_t i = 0; i < pn; ++i) g[i] += go[off + i];
                    }
                    off += pn;
                }
            });
        });
    dispatch(dt, [&](auto tag) {
        using T = decltype(tag);
        T* po = out.node->data<T>();
        int64_t off = 0;
        for (const auto& t : xs) {
            const T* pi = t.data<T>();
            std::copy(pi, pi + t.numel(), po + off);
            off += t.numel();
        }
    });
    (void)hw;
    return out;
}

Tensor slice_channels(const Tensor& x, int c0, int c1) {
    if (x.ndim() != 3) throw ShapeError("slice_channels: need C×H×W");
    if (c0 < 0 || c1 > x.dim(0) || c0 >= c1)
        throw ShapeError("slice_channels: bad range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for " + shape_str(x.shape()));
    int H = x.dim(1), W = x.dim(2);
    int64_t hw = int64_t(H) * W;
    auto px = x.node;
    ParentVer ver({px});
    Tensor out = make_op("slice_channels", {c1 - c0, H, W}, x.dtype(), {px},
                         [px, ver, c0, hw](Node& self) {
                             ver.check({px}, "slice_channels");
                             dispatch(self.dtype, [&](auto tag) {
                                 using T = decltype(tag);
                                 const T* go = self.grad<T>();
                                 T* gx = px->grad<T>();
                                 for (int64_t i = 0; i < self.numel(); ++i)
                                     gx[c0 * hw + i] += go[i];
                             });
                         });
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pi = px->data<T>();
        T* po = out.node->data<T>();
        std::copy(pi + c0 * hw, pi + c1 * hw, po);
    });
    return out;
}

// ---- reductions ----

Tensor sum_all(const Tensor& x) {
    auto px = x.node;
    ParentVer ver({px});
    Tensor out = make_op("sum", {}, x.dtype(), {px}, [px, ver](Node& self) {
        ver.check({px}, "sum");
        dispatch(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            T g = self.grad<T>()[0];
            T* gx = px->grad<T>();
            for (int64_t i = 0; i < px->numel(); ++i) gx[i] += g;
        });
    });
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pi = px->data<T>();
        T acc = 0;
        for (int64_t i = 0; i < x.numel(); ++i) acc += pi[i];
        out.node->data<T>()[0] = acc;
    });
    return out;
}

Tensor mean_all(const Tensor& x) { return mul_scalar(sum_all(x), 1.0 / double(x.numel())); }

Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets, double eps) {
    check_same_shape(logits, targets, "bce_with_logits");
    auto pl = logits.node, pt = targets.node;
    int64_t n = logits.numel();
    ParentVer ver({pl, pt});
    Tensor out = make_op("bce_with_logits", {}, logits.dtype(), {pl, pt},
                         [pl, pt, ver, eps, n](Node& self) {
                             ver.check({pl, pt}, "bce_with_logits");
                             dispatch(self.dtype, [&](auto tag) {
                                 using T = decltype(tag);
                                 T g = self.grad<T>()[0];
                                 const T* l = pl->data<T>();
                                 const T* t = pt->data<T>();
                                 if (pl->requires_grad) {
                                     T* gl = pl->grad<T>();
                                     for (int64_t i = 0; i < n; ++i) {
                                         double p = 1.0 / (1.0 + std::exp(-double(l[i])));
                                         double dp = 0.0;
                                         if (p > eps) dp += -double(t[i]) / std::max(p, eps);
                                         if (1.0 - p > eps)
                                             dp += (1.0 - double(t[i])) / std::max(1.0 - p, eps);
                                         gl[i] += g * T(dp * p * (1.0 - p) / double(n));
                                     }
                                 }
                             });
                         });
    dispatch(logits.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* l = pl->data<T>();
        const T* t = pt->data<T>();
        double acc = 0;
        for (int64_t i = 0; i < n; ++i) {
            double p = 1.0 / (1.0 + std::exp(-double(l[i])));
            double a = std::max(p, eps), b = std::max(1.0 - p, eps);
            acc += -double(t[i]) * std::log(a) - (1.0 - double(t[i])) * std::log(b);
        }
        out.node->data<T>()[0] = T(acc / double(n));
    });
    return out;
}

}  // namespace strack
