#pragma once

// Shared between the op implementation files; not installed.

#include <atomic>
#include <cstring>
#include <sstream>

#include "strack/tensor.hpp"

namespace strack {

struct Node {
    std::vector<int> shape;
    Dtype dtype = Dtype::F32;
    std::vector<float> f32;
    std::vector<double> f64;
    std::vector<float> g32;
    std::vector<double> g64;
    bool requires_grad = false;
    bool grad_alloc = false;
    uint32_t version = 0;
    bool backward_done = false;

    // Edges to the inputs plus the function that pushes this node's grad
    // into theirs. Empty for leaves and for no-grad values.
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;
    std::string op_name;

    Node() = default;
    ~Node();

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }

    template <typename T>
    T* data();
    template <typename T>
    const T* data() const;
    template <typename T>
    T* grad();  // allocates zeros on first use

    void alloc(int64_t n);
    void ensure_grad();
};

template <>
inline float* Node::data<float>() { return f32.data(); }
template <>
inline double* Node::data<double>() { return f64.data(); }
template <>
inline const float* Node::data<float>() const { return f32.data(); }
template <>
inline const double* Node::data<double>() const { return f64.data(); }
template <>
inline float* Node::grad<float>() {
    ensure_grad();
    return g32.data();
}
template <>
inline double* Node::grad<double>() {
    ensure_grad();
    return g64.data();
}

// Storage accounting for the streaming footprint probes.
extern std::atomic<int64_t> g_live_bytes;

NodePtr make_leaf(std::vector<int> shape, Dtype dt);

// Builds an op output node. If grad mode is off or no parent is tracked the
// edges are dropped and the node is a plain value. The backward closure must
// be written against the captured parent pointers; parent versions are
// recorded here and re-checked when backward() runs.
Tensor make_op(const char* name, std::vector<int> shape, Dtype dt,
               std::vector<NodePtr> parents, std::function<void(Node&)> bw);

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    if (a.dtype() != b.dtype())
        throw ShapeError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                         dtype_name(b.dtype()));
}

// Runs f with a value of the scalar type matching dt (float or double).
template <class F>
decltype(auto) dispatch(Dtype dt, F&& f) {
    if (dt == Dtype::F32) return f(float{});
    return f(double{});
}

// Version snapshot helper for backward closures.
struct ParentVer {
    std::vector<uint32_t> v;
    explicit ParentVer(const std::vector<NodePtr>& ps) {
        v.reserve(ps.size());
        for (auto& p : ps) v.push_back(p->version);
    }
    void check(const std::vector<NodePtr>& ps, const char* op) const {
        for (size_t i = 0; i < ps.size(); ++i)
            if (ps[i]->version != v[i])
                throw ContractError(std::string(op) +
                                    ": input tensor was modified after being used as an operand");
    }
};

}  // namespace strack
