#include "strack/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "tensor_internal.hpp"

namespace strack {

std::atomic<int64_t> g_live_bytes{0};

int64_t live_tensor_bytes() { return g_live_bytes.load(); }

namespace {
thread_local bool t_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }
bool grad_enabled() { return t_grad_enabled; }

Node::~Node() {
    g_live_bytes -= int64_t(f32.capacity()) * 4 + int64_t(f64.capacity()) * 8 +
                    int64_t(g32.capacity()) * 4 + int64_t(g64.capacity()) * 8;
}

void Node::alloc(int64_t n) {
    if (dtype == Dtype::F32) {
        f32.assign(n, 0.0f);
        g_live_bytes += int64_t(f32.capacity()) * 4;
    } else {
        f64.assign(n, 0.0);
        g_live_bytes += int64_t(f64.capacity()) * 8;
    }
}

void Node::ensure_grad() {
    if (grad_alloc) return;
    grad_alloc = true;
    if (dtype == Dtype::F32) {
        g32.assign(numel(), 0.0f);
        g_live_bytes += int64_t(g32.capacity()) * 4;
    } else {
        g64.assign(numel(), 0.0);
        g_live_bytes += int64_t(g64.capacity()) * 8;
    }
}

NodePtr make_leaf(std::vector<int> shape, Dtype dt) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->dtype = dt;
    for (int d : n->shape)
        if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(n->shape));
    n->alloc(n->numel());
    return n;
}

Tensor make_op(const char* name, std::vector<int> shape, Dtype dt, std::vector<NodePtr> parents,
               std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->dtype = dt;
    n->alloc(n->numel());
    n->op_name = name;
    bool track = false;
    if (t_grad_enabled)
        for (auto& p : parents)
            if (p && p->requires_grad) track = true;
    if (track) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(bw);
    }
    return Tensor(n);
}

// ---- Tensor surface ----

const std::vector<int>& Tensor::shape() const { return node->shape; }
int Tensor::ndim() const { return int(node->shape.size()); }
int Tensor::dim(int i) const {
    int n = ndim();
    if (i < 0) i += n;
    if (i < 0 || i >= n) throw ShapeError("dim index out of range");
    return node->shape[i];
}
int64_t Tensor::numel() const { return node->numel(); }
Dtype Tensor::dtype() const { return node->dtype; }
bool Tensor::tracked() const { return node->requires_grad; }

Tensor& Tensor::set_tracked(bool v) {
    if (!node->parents.empty())
        throw ContractError("set_tracked: only leaf tensors may change tracking");
    node->requires_grad = v;
    return *this;
}

template <typename T>
const T* Tensor::data() const {
    return node->data<T>();
}
template const float* Tensor::data<float>() const;
template const double* Tensor::data<double>() const;

template <typename T>
T* Tensor::mutable_data() {
    node->version++;
    return node->data<T>();
}
template float* Tensor::mutable_data<float>();
template double* Tensor::mutable_data<double>();

double Tensor::value_at(int64_t flat) const {
    return node->dtype == Dtype::F32 ? double(node->f32[flat]) : node->f64[flat];
}
void Tensor::set_value_at(int64_t flat, double v) {
    node->version++;
    if (node->dtype == Dtype::F32)
        node->f32[flat] = float(v);
    else
        node->f64[flat] = v;
}
double Tensor::item() const {
    if (numel() != 1) throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
    return value_at(0);
}

bool Tensor::has_grad() const { return node->grad_alloc; }

Tensor Tensor::grad() const {
    Tensor g = Tensor::zeros(node->shape, node->dtype);
    if (node->grad_alloc) {
        if (node->dtype == Dtype::F32)
            std::copy(node->g32.begin(), node->g32.end(), g.node->f32.begin());
        else
            std::copy(node->g64.begin(), node->g64.end(), g.node->f64.begin());
    }
    return g;
}

void Tensor::zero_grad() {
    if (!node->grad_alloc) return;
    std::fill(node->g32.begin(), node->g32.end(), 0.0f);
    std::fill(node->g64.begin(), node->g64.end(), 0.0);
}

Tensor Tensor::detach() const {
    Tensor t(make_leaf(node->shape, node->dtype));
    t.node->f32 = node->f32;
    t.node->f64 = node->f64;
    return t;
}

Tensor Tensor::clone() const {
    Tensor t = detach();
    t.node->requires_grad = node->requires_grad;
    return t;
}

Tensor Tensor::astype(Dtype dt) const {
    if (dt == node->dtype) return detach();
    Tensor t(make_leaf(node->shape, dt));
    int64_t n = numel();
    if (dt == Dtype::F64)
        for (int64_t i = 0; i < n; ++i) t.node->f64[i] = double(node->f32[i]);
    else
        for (int64_t i = 0; i < n; ++i) t.node->f32[i] = float(node->f64[i]);
    return t;
}

// ---- factories ----

Tensor Tensor::zeros(std::vector<int> shape, Dtype dt) { return Tensor(make_leaf(std::move(shape), dt)); }

Tensor Tensor::full(std::vector<int> shape, double v, Dtype dt) {
    Tensor t = zeros(std::move(shape), dt);
    int64_t n = t.numel();
    if (dt == Dtype::F32)
        std::fill_n(t.node->f32.begin(), n, float(v));
    else
        std::fill_n(t.node->f64.begin(), n, v);
    return t;
}

Tensor Tensor::ones(std::vector<int> shape, Dtype dt) { return full(std::move(shape), 1.0, dt); }

Tensor Tensor::from_data(std::vector<int> shape, const std::vector<double>& vals, Dtype dt) {
    Tensor t = zeros(std::move(shape), dt);
    if (int64_t(vals.size()) != t.numel())
        throw ShapeError("from_data: " + std::to_string(vals.size()) + " values for shape " +
                         shape_str(t.shape()));
    for (int64_t i = 0; i < t.numel(); ++i) {
        if (dt == Dtype::F32)
            t.node->f32[i] = float(vals[i]);
        else
            t.node->f64[i] = vals[i];
    }
    return t;
}

Tensor Tensor::randn(std::mt19937& rng, std::vector<int> shape, double mean, double stddev, Dtype dt) {
    Tensor t = zeros(std::move(shape), dt);
    std::normal_distribution<double> d(mean, stddev);
    for (int64_t i = 0; i < t.numel(); ++i) {
        double v = d(rng);
        if (dt == Dtype::F32)
            t.node->f32[i] = float(v);
        else
            t.node->f64[i] = v;
    }
    return t;
}

Tensor Tensor::uniform(std::mt19937& rng, std::vector<int> shape, double lo, double hi, Dtype dt) {
    Tensor t = zeros(std::move(shape), dt);
    std::uniform_real_distribution<double> d(lo, hi);
    for (int64_t i = 0; i < t.numel(); ++i) {
        double v = d(rng);
        if (dt == Dtype::F32)
            t.node->f32[i] = float(v);
        else
            t.node->f64[i] = v;
    }
    return t;
}

// ---- backward ----

void backward(const Tensor& loss) {
    if (!loss.defined()) throw ContractError("backward: undefined tensor");
    if (loss.numel() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    Node* root = loss.node.get();
    if (!root->requires_grad) return;  // nothing tracked anywhere below

    // Iterative post-order topological sort.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    struct Frame {
        Node* n;
        size_t next_child;
    };
    std::vector<Frame> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_child < f.n->parents.size()) {
            Node* c = f.n->parents[f.next_child++].get();
            if (c->requires_grad && !seen.count(c) && !c->parents.empty()) {
                seen.insert(c);
                stack.push_back({c, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    for (Node* n : order)
        if (n->backward_done)
            throw ContractError("backward: graph already consumed (op '" + n->op_name +
                                "'); rebuild the graph or reset gradients first");

    // Seed d(loss)/d(loss) = 1.
    if (root->dtype == Dtype::F32)
        root->grad<float>()[0] = 1.0f;
    else
        root->grad<double>()[0] = 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
        n->backward_done = true;
    }
}

}  // namespace strack
