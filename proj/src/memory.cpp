#include "strack/memory.hpp"

#include <cmath>

#include "tensor_internal.hpp"

namespace strack {

Tensor flatten_spatial(const Tensor& fmap) {
    if (fmap.ndim() != 3) throw ShapeError("flatten_spatial: need C×h×w");
    int C = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2);
    return transpose2d(reshape(fmap, {C, h * w}));
}

Tensor unflatten_spatial(const Tensor& mat, int h, int w) {
    if (mat.ndim() != 2 || mat.dim(0) != h * w)
        throw ShapeError("unflatten_spatial: rows " + std::to_string(mat.dim(0)) +
                         " do not match " + std::to_string(h) + "x" + std::to_string(w));
    return reshape(transpose2d(mat), {mat.dim(1), h, w});
}

MemoryBank::MemoryBank(int capacity) : capacity_(capacity) {
    if (capacity < 1) throw ConfigError("MemoryBank: capacity must be >= 1");
}

void MemoryBank::write(const Tensor& key, const Tensor& value) {
    if (key.ndim() != 2 || value.ndim() != 2 || key.dim(0) != value.dim(0))
        throw ShapeError("MemoryBank::write: key " + shape_str(key.shape()) + " / value " +
                         shape_str(value.shape()) + " must be row-aligned matrices");
    if (rows_ < 0) {
        rows_ = key.dim(0);
        dk_ = key.dim(1);
        dv_ = value.dim(1);
    } else if (key.dim(0) != rows_ || key.dim(1) != dk_ || value.dim(1) != dv_) {
        throw ShapeError("MemoryBank::write: geometry mismatch with stored entries");
    }
    keys_.push_back(key);
    values_.push_back(value);
    while (int(keys_.size()) > capacity_) {
        keys_.pop_front();
        values_.pop_front();
    }
}

void MemoryBank::detach_entries() {
    for (auto& k : keys_) k = k.detach();
    for (auto& v : values_) v = v.detach();
}

void MemoryBank::clear() {
    keys_.clear();
    values_.clear();
    rows_ = -1;
}

Tensor project_query(const Tensor& fmap, const QueryProjector& proj) {
    Tensor flat = flatten_spatial(fmap);  // (h·w)×D
    if (proj.identity) return flat;
    if (proj.w.ndim() != 2 || proj.w.dim(1) != fmap.dim(0))
        throw ShapeError("project_query: projector expects D=" + std::to_string(proj.w.dim(1)) +
                         ", feature has D=" + std::to_string(fmap.dim(0)));
    return add_rowvec(matmul(flat, transpose2d(proj.w)), proj.b);
}

namespace {

Tensor concat_rows(const std::deque<Tensor>& mats) {
    if (mats.size() == 1) return mats.front();
    std::vector<Tensor> as3d;
    as3d.reserve(mats.size());
    int p = mats.front().dim(0), d = mats.front().dim(1);
    for (const auto& m : mats) as3d.push_back(reshape(m, {1, p, d}));
    return reshape(concat_channels(as3d), {int(mats.size()) * p, d});
}

}  // namespace

Tensor read(const MemoryBank& bank, const Tensor& q, int h, int w) {
    if (bank.empty())
        throw ContractError("memory read: bank is empty (the first frame must seed it)");
    Tensor k = concat_rows(bank.keys());
    Tensor v = concat_rows(bank.values());
    if (q.ndim() != 2 || q.dim(1) != k.dim(1))
        throw ShapeError("memory read: query width " + shape_str(q.shape()) +
                         " does not match keys " + shape_str(k.shape()));
    double scale = 1.0 / std::sqrt(double(k.dim(1)));
    Tensor att = softmax_lastdim(mul_scalar(matmul(q, transpose2d(k)), scale));
    return unflatten_spatial(matmul(att, v), h, w);
}

Tensor fuse(const Tensor& fmap, const Tensor& readout, const Tensor& conv_w,
            const Tensor& conv_b) {
    if (fmap.dim(1) != readout.dim(1) || fmap.dim(2) != readout.dim(2))
        throw ShapeError("fuse: geometry mismatch " + shape_str(fmap.shape()) + " vs " +
                         shape_str(readout.shape()));
    int k = conv_w.dim(2);
    Tensor mixed = conv2d(concat_channels({fmap, readout}), conv_w, conv_b, 1, k / 2);
    return add(fmap, mixed);
}

SensoryMemory sensory_update(const SensoryMemory& prev, const Tensor& motion,
                             const GruParams& params) {
    return SensoryMemory{gru_cell(prev.state, motion, params)};
}

}  // namespace strack
