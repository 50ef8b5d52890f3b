#include <Eigen/Dense>
#include <cmath>

#include "tensor_internal.hpp"

namespace strack {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using MapC = Eigen::Map<const MatRM<T>>;
template <typename T>
using StrideMap = Eigen::Map<MatRM<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename T>
using StrideMapC = Eigen::Map<const MatRM<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

constexpr int64_t kGemmGrain = 64;  // min columns per thread chunk

}  // namespace

// C[m×n] = A[m×k] · B[k×n], column blocks across threads. Exposed to the
// conv kernels as well.
template <typename T>
void gemm_rowmajor(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
    parallel_for(n, kGemmGrain, [&](int64_t j0, int64_t j1) {
        MapC<T> A(a, m, k);
        StrideMapC<T> B(b + j0, k, j1 - j0, Eigen::OuterStride<>(n));
        StrideMap<T> C(c + j0, m, j1 - j0, Eigen::OuterStride<>(n));
        if (accumulate)
            C.noalias() += A * B;
        else
            C.noalias() = A * B;
    });
}
template void gemm_rowmajor<float>(const float*, const float*, float*, int64_t, int64_t, int64_t, bool);
template void gemm_rowmajor<double>(const double*, const double*, double*, int64_t, int64_t, int64_t, bool);

// C[m×n] = A[k×m]ᵀ · B[k×n]
template <typename T>
void gemm_at_b(const T* a, const T* b, T* c, int64_t k, int64_t m, int64_t n, bool accumulate) {
    parallel_for(n, kGemmGrain, [&](int64_t j0, int64_t j1) {
        MapC<T> A(a, k, m);
        StrideMapC<T> B(b + j0, k, j1 - j0, Eigen::OuterStride<>(n));
        StrideMap<T> C(c + j0, m, j1 - j0, Eigen::OuterStride<>(n));
        if (accumulate)
            C.noalias() += A.transpose() * B;
        else
            C.noalias() = A.transpose() * B;
    });
}
template void gemm_at_b<float>(const float*, const float*, float*, int64_t, int64_t, int64_t, bool);
template void gemm_at_b<double>(const double*, const double*, double*, int64_t, int64_t, int64_t, bool);

// C[m×n] = A[m×k] · B[n×k]ᵀ
template <typename T>
void gemm_a_bt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
    parallel_for(n, kGemmGrain, [&](int64_t j0, int64_t j1) {
        MapC<T> A(a, m, k);
        MapC<T> Bfull(b, n, k);
        StrideMap<T> C(c + j0, m, j1 - j0, Eigen::OuterStride<>(n));
        if (accumulate)
            C.noalias() += A * Bfull.middleRows(j0, j1 - j0).transpose();
        else
            C.noalias() = A * Bfull.middleRows(j0, j1 - j0).transpose();
    });
}
template void gemm_a_bt<float>(const float*, const float*, float*, int64_t, int64_t, int64_t, bool);
template void gemm_a_bt<double>(const double*, const double*, double*, int64_t, int64_t, int64_t, bool);

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw ShapeError("matmul: need 2-D operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    if (a.dtype() != b.dtype()) throw ShapeError("matmul: dtype mismatch");
    int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto pa = a.node, pb = b.node;
    ParentVer ver({pa, pb});
    Tensor out = make_op("matmul", {int(m), int(n)}, a.dtype(), {pa, pb},
                         [pa, pb, ver, m, k, n](Node& self) {
                             ver.check({pa, pb}, "matmul");
                             dispatch(self.dtype, [&](auto tag) {
                                 using T = decltype(tag);
                                 const T* go = self.grad<T>();
                                 // dA = dC·Bᵀ, dB = Aᵀ·dC
                                 if (pa->requires_grad)
                                     gemm_a_bt<T>(go, pb->data<T>(), pa->grad<T>(), m, n, k, true);
                                 if (pb->requires_grad)
                                     gemm_at_b<T>(pa->data<T>(), go, pb->grad<T>(), m, k, n, true);
                             });
                         });
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        gemm_rowmajor<T>(pa->data<T>(), pb->data<T>(), out.node->data<T>(), m, k, n, false);
    });
    return out;
}

Tensor transpose2d(const Tensor& a) {
    if (a.ndim() != 2) throw ShapeError("transpose2d: need 2-D, got " + shape_str(a.shape()));
    int m = a.dim(0), n = a.dim(1);
    auto pa = a.node;
    ParentVer ver({pa});
    Tensor out = make_op("transpose2d", {n, m}, a.dtype(), {pa}, [pa, ver, m, n](Node& self) {
        ver.check({pa}, "transpose2d");
        dispatch(self.dtype, [&](auto tag) {
            using T = decltype(tag);
            const T* go = self.grad<T>();
            T* ga = pa->grad<T>();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) ga[j * n + i] += go[i * m + j];
        });
    });
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pi = pa->data<T>();
        T* po = out.node->data<T>();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) po[j * m + i] = pi[i * n + j];
    });
    return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    if (x.ndim() != 2 || b.ndim() != 1 || b.dim(0) != x.dim(1))
        throw ShapeError("add_rowvec: need [n×m] and [m], got " + shape_str(x.shape()) + " and " +
                         shape_str(b.shape()));
    if (x.dtype() != b.dtype()) throw ShapeError("add_rowvec: dtype mismatch");
    int n = x.dim(0), m = x.dim(1);
    auto px = x.node, pb = b.node;
    ParentVer ver({px, pb});
    Tensor out = make_op("add_rowvec", x.shape(), x.dtype(), {px, pb},
                         [px, pb, ver, n, m](Node& self) {
                             ver.check({px, pb}, "add_rowvec");
                             dispatch(self.dtype, [&](auto tag) {
                                 using T = decltype(tag);
                                 const T* go = self.grad<T>();
                                 if (px->requires_grad) {
                                     T* gx = px->grad<T>();
                                     for (int64_t i = 0; i < int64_t(n) * m; ++i) gx[i] += go[i];
                                 }
                                 if (pb->requires_grad) {
                                     T* gb = pb->grad<T>();
                                     for (int i = 0; i < n; ++i)
                                         for (int j = 0; j < m; ++j) gb[j] += go[i * m + j];
                                 }
                             });
                         });
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pi = px->data<T>();
        const T* pv = pb->data<T>();
        T* po = out.node->data<T>();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) po[i * m + j] = pi[i * m + j] + pv[j];
    });
    return out;
}

Tensor softmax_lastdim(const Tensor& x) {
    if (x.ndim() < 1) throw ShapeError("softmax_lastdim: need at least 1-D");
    int n = x.dim(-1);
    int64_t rows = x.numel() / n;
    auto px = x.node;
    // Totality contract: reject non-finite inputs up front.
    bool finite = true;
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pi = px->data<T>();
        for (int64_t i = 0; i < x.numel(); ++i)
            if (!std::isfinite(double(pi[i]))) finite = false;
    });
    if (!finite) throw DomainError("softmax_lastdim: non-finite input");
    ParentVer ver({px});
    Tensor out = make_op("softmax_lastdim", x.shape(), x.dtype(), {px},
                         [px, ver, rows, n](Node& self) {
                             ver.check({px}, "softmax_lastdim");
                             dispatch(self.dtype, [&](auto tag) {
                                 using T = decltype(tag);
                                 const T* go = self.grad<T>();
                                 const T* y = self.data<T>();
                                 T* gx = px->grad<T>();
                                 for (int64_t r = 0; r < rows; ++r) {
                                     const T* yr = y + r * n;
                                     const T* gr = go + r * n;
                                     T dot = 0;
                                     for (int j = 0; j < n; ++j) dot += gr[j] * yr[j];
                                     T* gxr = gx + r * n;
                                     for (int j = 0; j < n; ++j) gxr[j] += yr[j] * (gr[j] - dot);
                                 }
                             });
                         });
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pi = px->data<T>();
        T* po = out.node->data<T>();
        for (int64_t r = 0; r < rows; ++r) {
            const T* xr = pi + r * n;
            T* yr = po + r * n;
            T mx = xr[0];
            for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
            T sum = 0;
            for (int j = 0; j < n; ++j) {
                yr[j] = std::exp(xr[j] - mx);
                sum += yr[j];
            }
            for (int j = 0; j < n; ++j) yr[j] /= sum;
        }
    });
    return out;
}

}  // namespace strack
