#pragma once

#include "strack/tensor.hpp"

namespace strack {

// RGB frame, 3×H×W with values in [0,1].
struct Frame {
    Tensor data;
    int height() const { return data.dim(1); }
    int width() const { return data.dim(2); }
};

// Per-pixel displacement from the reference frame, 2×h×w (Δx, Δy) in pixels
// at that resolution.
struct FlowField {
    Tensor data;
    int height() const { return data.dim(1); }
    int width() const { return data.dim(2); }
};

// Visibility stored as logits, 1×h×w; probabilities via sigmoid.
struct VisibilityMap {
    Tensor logits;
    Tensor prob() const { return sigmoid(logits); }
};

}  // namespace strack
