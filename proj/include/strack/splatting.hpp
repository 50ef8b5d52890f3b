#pragma once

#include "strack/tensor.hpp"

namespace strack {

// Forward warping of a C×H×W map by a 2×H×W flow field. Each source pixel
// scatters to the four integer neighbors of (x,y)+flow with bilinear weights
// b(Δ) = max(0,1-|Δx|)·max(0,1-|Δy|); contributions outside the grid drop.
//
// Modes differ in the per-source mass and the normalization:
//   Summation: raw weighted sum, no normalization
//   Average:   sum / scattered unit mass
//   Linear:    sum of vis·src / scattered vis (visibility-guided)
//   Softmax:   sum of e^{α·vis}·src / scattered e^{α·vis}
enum class SplatMode { Summation, Average, Linear, Softmax };

const char* splat_mode_name(SplatMode m);
SplatMode splat_mode_from_name(const std::string& name);

struct SplatResult {
    Tensor value;      // C×H×W; differentiable w.r.t. src, flow, vis
    Tensor weight;     // 1×H×W accumulated mass (plain value)
    Tensor hole_mask;  // 1×H×W, 1 where weight < eps_hole (plain value)
};

inline constexpr double kDefaultEpsHole = 1e-4;
inline constexpr double kDefaultSoftmaxAlpha = 10.0;

SplatResult splat(const Tensor& src, const Tensor& flow, const Tensor& vis, SplatMode mode,
                  double alpha = kDefaultSoftmaxAlpha, double eps_hole = kDefaultEpsHole);

SplatResult summation_splat(const Tensor& src, const Tensor& flow,
                            double eps_hole = kDefaultEpsHole);

// Linear mode; holes are filled with zero and flagged in hole_mask.
SplatResult visibility_splat(const Tensor& src, const Tensor& flow, const Tensor& vis,
                             double eps_hole = kDefaultEpsHole);

}  // namespace strack
