#pragma once

#include <deque>

#include "strack/tensor.hpp"

namespace strack {

// Flattens a C×h×w map to the (h·w)×C row-per-pixel layout used by the
// attention read, and back.
Tensor flatten_spatial(const Tensor& fmap);
Tensor unflatten_spatial(const Tensor& mat, int h, int w);

// Bounded FIFO of paired key/value feature matrices, one pair per frame.
// Keys are (h·w)×D_k, values (h·w)×D_v; all entries share one geometry.
class MemoryBank {
public:
    explicit MemoryBank(int capacity);

    int capacity() const { return capacity_; }
    int size() const { return int(keys_.size()); }
    bool empty() const { return keys_.empty(); }

    // Appends as newest; evicts the oldest pair beyond capacity.
    void write(const Tensor& key, const Tensor& value);

    const std::deque<Tensor>& keys() const { return keys_; }
    const std::deque<Tensor>& values() const { return values_; }

    // Cuts entries loose from any autodiff graph (BPTT window boundaries).
    void detach_entries();
    void clear();

private:
    int capacity_;
    std::deque<Tensor> keys_, values_;
    int rows_ = -1, dk_ = -1, dv_ = -1;
};

struct QueryProjector {
    Tensor w;  // D_k×D
    Tensor b;  // D_k
    bool identity = false;
};

// Per-pixel linear projection of a D×h×w feature map to (h·w)×D_k query
// rows. With the projector ablated this is a plain flatten (D_k = D).
Tensor project_query(const Tensor& fmap, const QueryProjector& proj);

// Scaled dot-product attention over the union of all stored rows:
// softmax(q·kᵀ/√D_k)·v, returned at D_v×h×w. The bank must be non-empty.
Tensor read(const MemoryBank& bank, const Tensor& q, int h, int w);

// F + Conv(F ⊕ F'): single-conv residual repair of splatting holes.
Tensor fuse(const Tensor& fmap, const Tensor& readout, const Tensor& conv_w,
            const Tensor& conv_b);

struct SensoryMemory {
    Tensor state;  // D_s×h×w
};

// s_t = GRU(s_{t-1}, motion); the dedicated second GRU of the model.
SensoryMemory sensory_update(const SensoryMemory& prev, const Tensor& motion,
                             const GruParams& params);

}  // namespace strack
