#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "strack/common.hpp"

namespace strack {

enum class Dtype : uint8_t { F32 = 0, F64 = 1 };

inline std::size_t dtype_size(Dtype dt) { return dt == Dtype::F32 ? 4 : 8; }
inline const char* dtype_name(Dtype dt) { return dt == Dtype::F32 ? "f32" : "f64"; }

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Dense row-major tensor handle. Cheap to copy (shared node). Values are
// immutable once a tensor has been consumed by an op; mutation afterwards is
// detected at backward() time via version counters.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : node(std::move(n)) {}

    static Tensor zeros(std::vector<int> shape, Dtype dt = Dtype::F32);
    static Tensor ones(std::vector<int> shape, Dtype dt = Dtype::F32);
    static Tensor full(std::vector<int> shape, double v, Dtype dt = Dtype::F32);
    static Tensor from_data(std::vector<int> shape, const std::vector<double>& vals,
                            Dtype dt = Dtype::F32);
    static Tensor randn(std::mt19937& rng, std::vector<int> shape, double mean, double stddev,
                        Dtype dt = Dtype::F32);
    static Tensor uniform(std::mt19937& rng, std::vector<int> shape, double lo, double hi,
                          Dtype dt = Dtype::F32);

    bool defined() const { return node != nullptr; }
    const std::vector<int>& shape() const;
    int ndim() const;
    int dim(int i) const;  // negative indices count from the end
    int64_t numel() const;
    Dtype dtype() const;

    bool tracked() const;
    Tensor& set_tracked(bool v);  // leaves only
    Tensor detach() const;        // value copy, untracked leaf
    Tensor clone() const;         // deep copy, keeps tracked flag, new leaf
    Tensor astype(Dtype dt) const;

    template <typename T>
    const T* data() const;
    template <typename T>
    T* mutable_data();  // bumps the version counter

    double value_at(int64_t flat) const;
    void set_value_at(int64_t flat, double v);
    double item() const;  // numel()==1

    bool has_grad() const;
    Tensor grad() const;  // zeros when no gradient was accumulated
    void zero_grad();

    NodePtr node;
};

// Reverse-mode pass from a scalar loss. Accumulates into the .grad of every
// tracked leaf reachable from `loss`. Calling backward twice on the same
// graph is a contract error; build a fresh graph (or zero_grad + recompute).
void backward(const Tensor& loss);

// Scoped "no tape" mode: ops produce plain values with no parents, so
// streaming inference runs in constant memory.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;

private:
    bool prev_;
};
bool grad_enabled();

// Live bytes held by tensor storage (data + grad buffers); used by the
// streaming memory-footprint probes.
int64_t live_tensor_bytes();

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor exp_op(const Tensor& x);
Tensor abs_op(const Tensor& x);
// a * m with m broadcast across channels; a is C×H×W, m is 1×H×W.
Tensor mul_channelwise(const Tensor& a, const Tensor& m);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [m×k]·[k×n]
Tensor transpose2d(const Tensor& a);
Tensor add_rowvec(const Tensor& x, const Tensor& b);  // [n×m] + [m]
Tensor softmax_lastdim(const Tensor& x);

// ---- shape ----
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor concat_channels(const std::vector<Tensor>& xs);  // C_i×H×W along C
Tensor slice_channels(const Tensor& x, int c0, int c1);

// ---- spatial ----
// Cross-correlation conv; x: C_in×H×W, w: C_out×C_in×k×k, b: C_out.
// Output size floors: H' = (H + 2p - k)/stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding);
// grid: C×H×W, coords: 2×H'×W' (x,y in pixels, centers at integers).
// Out-of-bounds samples read a zero exterior. Differentiable in both args.
Tensor bilinear_sample(const Tensor& grid, const Tensor& coords);
Tensor avg_pool2d(const Tensor& x);  // 2×2, stride 2, floor
Tensor upsample_bilinear(const Tensor& x, int factor);  // edge-replicated
Tensor crop_spatial(const Tensor& x, int h, int w);  // top-left h×w window
Tensor pad_reflect(const Tensor& x, int left, int right, int top, int bottom);
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     double eps = 1e-5);

// ---- reductions / losses ----
Tensor sum_all(const Tensor& x);   // scalar (shape {})
Tensor mean_all(const Tensor& x);  // scalar
// mean BCE on logits; targets in [0,1], untracked. Probabilities are clamped
// to [eps, 1-eps] before the log.
Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets, double eps = 1e-6);

// ---- recurrent ----
// Convolutional GRU: z = σ(Wz*(h⊕x)), r = σ(Wr*(h⊕x)),
// h~ = tanh(Wq*((r⊙h)⊕x)), h' = (1−z)⊙h + z⊙h~. Convs are k×k, stride 1,
// pad k/2 (shape preserving).
struct GruParams {
    Tensor wz, bz;
    Tensor wr, br;
    Tensor wq, bq;
};
Tensor gru_cell(const Tensor& h, const Tensor& x, const GruParams& p);

}  // namespace strack
