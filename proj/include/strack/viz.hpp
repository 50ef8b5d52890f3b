#pragma once

#include "strack/tensor.hpp"

namespace strack {

// Renders a 2×H×W flow field with the conventional optical-flow color wheel
// to a 3×H×W image in [0,1]. max_flow <= 0 normalizes by the per-image
// maximum magnitude. Zero flow renders the neutral (white) center.
Tensor flow_to_color(const Tensor& flow, double max_flow = 0.0);

// Overlays white diagonal stripes where visibility <= 0.5.
Tensor overlay_occlusion(const Tensor& rgb, const Tensor& vis_prob);

}  // namespace strack
