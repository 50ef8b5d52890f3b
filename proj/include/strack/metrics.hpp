#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "strack/tensor.hpp"

namespace strack {

// End-point error split by ground-truth visibility, plus occlusion accuracy.
// Region means over an empty region are reported absent, not zero.
struct FlowMetrics {
    double epe_all = 0.0;
    std::optional<double> epe_vis;
    std::optional<double> epe_occ;
    std::optional<double> oa;
};

// pred_vis_prob may be undefined (flow-only evaluation); gt_vis holds {0,1}.
FlowMetrics flow_metrics(const Tensor& pred_flow, const Tensor& pred_vis_prob,
                         const Tensor& gt_flow, const Tensor& gt_vis);

struct TapMetrics {
    double aj = 0.0;
    double delta_avg = 0.0;
    double oa = 0.0;
};

// One tracked query point: positions and occlusion flags per frame
// (frame 0 is the query frame and is excluded from scoring).
struct QueryTrack {
    std::vector<std::pair<double, double>> pos;
    std::vector<bool> occluded;
};

inline const std::vector<double> kTapThresholds = {1, 2, 4, 8, 16};

TapMetrics tap_metrics(const std::vector<QueryTrack>& pred, const std::vector<QueryTrack>& gt,
                       const std::vector<double>& thresholds = kTapThresholds);

// Reads per-query tracks out of dense flow/visibility stacks by bilinear
// sampling at the (fractional) query positions. Queries must lie inside the
// first frame.
std::vector<QueryTrack> dense_to_queries(const std::vector<Tensor>& flow_stack,
                                         const std::vector<Tensor>& vis_prob_stack,
                                         const std::vector<std::pair<double, double>>& queries);

}  // namespace strack
