#include "strack/viz.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace strack {

namespace {

// Classic 55-entry wheel: ramps through RY, YG, GC, CB, BM, MR.
std::vector<std::array<double, 3>> make_color_wheel() {
    const int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
    std::vector<std::array<double, 3>> wheel;
    auto ramp = [&](int n, int from, int to, bool up) {
        for (int i = 0; i < n; ++i) {
            std::array<double, 3> c{0, 0, 0};
            double f = double(i) / n;
            c[from] = up ? 1.0 : 1.0 - f;
            c[to] = up ? f : 1.0;
            wheel.push_back(c);
        }
    };
    ramp(RY, 0, 1, true);   // red -> yellow
    ramp(YG, 0, 1, false);  // yellow -> green
    ramp(GC, 1, 2, true);   // green -> cyan
    ramp(CB, 1, 2, false);  // cyan -> blue
    ramp(BM, 2, 0, true);   // blue -> magenta
    ramp(MR, 2, 0, false);  // magenta -> red
    return wheel;
}

}  // namespace

Tensor flow_to_color(const Tensor& flow, double max_flow) {
    if (flow.ndim() != 3 || flow.dim(0) != 2) throw ShapeError("flow_to_color: need 2×H×W");
    static const auto wheel = make_color_wheel();
    int ncols = int(wheel.size());
    int H = flow.dim(1), W = flow.dim(2);
    int64_t hw = int64_t(H) * W;

    double rad_max = max_flow;
    if (rad_max <= 0) {
        for (int64_t i = 0; i < hw; ++i) {
            double u = flow.value_at(i), v = flow.value_at(hw + i);
            rad_max = std::max(rad_max, std::sqrt(u * u + v * v));
        }
    }
    double scale = 1.0 / std::max(rad_max, 1e-9);

    Tensor img = Tensor::zeros({3, H, W}, Dtype::F32);
    for (int64_t i = 0; i < hw; ++i) {
        double u = flow.value_at(i) * scale;
        double v = flow.value_at(hw + i) * scale;
        double rad = std::min(1.0, std::sqrt(u * u + v * v));
        double a = std::atan2(-v, -u) / M_PI;  // [-1, 1]
        double fk = (a + 1.0) / 2.0 * (ncols - 1);
        int k0 = int(std::floor(fk)) % ncols;
        int k1 = (k0 + 1) % ncols;
        double f = fk - std::floor(fk);
        for (int c = 0; c < 3; ++c) {
            double col = (1 - f) * wheel[k0][c] + f * wheel[k1][c];
            col = 1.0 - rad * (1.0 - col);  // desaturate toward white at the center
            img.set_value_at(c * hw + i, col);
        }
    }
    return img;
}

Tensor overlay_occlusion(const Tensor& rgb, const Tensor& vis_prob) {
    if (rgb.ndim() != 3 || rgb.dim(0) != 3) throw ShapeError("overlay_occlusion: need 3×H×W");
    if (vis_prob.dim(1) != rgb.dim(1) || vis_prob.dim(2) != rgb.dim(2))
        throw ShapeError("overlay_occlusion: geometry mismatch");
    int H = rgb.dim(1), W = rgb.dim(2);
    int64_t hw = int64_t(H) * W;
    Tensor out = rgb.detach();
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            int64_t i = int64_t(y) * W + x;
            if (vis_prob.value_at(i) > 0.5) continue;
            if ((x + y) / 3 % 2 == 0) continue;  // stripe pattern
            for (int c = 0; c < 3; ++c)
                out.set_value_at(c * hw + i, 0.35 * out.value_at(c * hw + i) + 0.65);
        }
    return out;
}

}  // namespace strack
