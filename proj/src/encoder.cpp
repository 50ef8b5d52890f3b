#include "strack/encoder.hpp"

#include <cmath>

namespace strack {

namespace {

ConvLayer make_conv(std::mt19937& rng, int cout, int cin, int k, Dtype dt, double gain = 2.0) {
    double std = std::sqrt(gain / double(cin * k * k));
    return ConvLayer{Tensor::randn(rng, {cout, cin, k, k}, 0.0, std, dt),
                     Tensor::zeros({cout}, dt)};
}

NormLayer make_norm(int ch, Dtype dt) {
    return NormLayer{Tensor::ones({ch}, dt), Tensor::zeros({ch}, dt)};
}

ResBlock make_block(std::mt19937& rng, int cin, int cout, int stride, Dtype dt) {
    ResBlock b;
    b.stride = stride;
    b.conv1 = make_conv(rng, cout, cin, 3, dt);
    b.conv2 = make_conv(rng, cout, cout, 3, dt);
    b.n1 = make_norm(cout, dt);
    b.n2 = make_norm(cout, dt);
    b.has_down = stride != 1 || cin != cout;
    if (b.has_down) {
        b.down = make_conv(rng, cout, cin, 1, dt, 1.0);
        b.dn = make_norm(cout, dt);
    }
    return b;
}

Tensor apply_norm(const Tensor& x, const NormLayer& n, bool enabled) {
    return enabled ? instance_norm(x, n.gamma, n.beta) : x;
}

Tensor run_block(const Tensor& x, const ResBlock& b, bool norm) {
    Tensor y = relu(apply_norm(conv2d(x, b.conv1.w, b.conv1.b, b.stride, 1), b.n1, norm));
    y = relu(apply_norm(conv2d(y, b.conv2.w, b.conv2.b, 1, 1), b.n2, norm));
    Tensor skip = x;
    if (b.has_down) skip = apply_norm(conv2d(x, b.down.w, b.down.b, b.stride, 0), b.dn, norm);
    return relu(add(y, skip));
}

}  // namespace

EncoderParams make_encoder(std::mt19937& rng, const EncoderConfig& cfg, Dtype dt) {
    EncoderParams p;
    p.cfg = cfg;
    p.stem = make_conv(rng, cfg.stem_ch, 3, 7, dt);
    p.stem_norm = make_norm(cfg.stem_ch, dt);
    p.b1a = make_block(rng, cfg.stem_ch, cfg.stage1_ch, 1, dt);
    p.b1b = make_block(rng, cfg.stage1_ch, cfg.stage1_ch, 1, dt);
    p.trans = make_block(rng, cfg.stage1_ch, cfg.stage2_ch, 2, dt);
    p.b2a = make_block(rng, cfg.stage2_ch, cfg.stage2_ch, 1, dt);
    p.b2b = make_block(rng, cfg.stage2_ch, cfg.stage2_ch, 1, dt);
    p.proj = make_conv(rng, cfg.out_ch, cfg.stage2_ch, 1, dt, 1.0);
    return p;
}

Tensor encode_frame(const Frame& frame, const EncoderParams& p) {
    if (frame.data.ndim() != 3 || frame.data.dim(0) != 3)
        throw ShapeError("encode_frame: frame must be 3×H×W");
    Tensor x = frame.data;
    int H = frame.height(), W = frame.width();
    int padH = (4 - H % 4) % 4, padW = (4 - W % 4) % 4;
    if (padH || padW) x = pad_reflect(x, 0, padW, 0, padH);
    bool norm = p.cfg.norm;
    x = relu(apply_norm(conv2d(x, p.stem.w, p.stem.b, 2, 3), p.stem_norm, norm));
    x = run_block(x, p.b1a, norm);
    x = run_block(x, p.b1b, norm);
    x = run_block(x, p.trans, norm);
    x = run_block(x, p.b2a, norm);
    x = run_block(x, p.b2b, norm);
    x = conv2d(x, p.proj.w, p.proj.b, 1, 0);
    if (p.cfg.final_relu) x = relu(x);
    return x;
}

namespace {

void collect_block(ResBlock& b, const std::string& prefix, bool norm,
                   std::vector<std::pair<std::string, Tensor>>& out) {
    out.emplace_back(prefix + ".conv1.w", b.conv1.w);
    out.emplace_back(prefix + ".conv1.b", b.conv1.b);
    out.emplace_back(prefix + ".conv2.w", b.conv2.w);
    out.emplace_back(prefix + ".conv2.b", b.conv2.b);
    if (norm) {
        out.emplace_back(prefix + ".n1.gamma", b.n1.gamma);
        out.emplace_back(prefix + ".n1.beta", b.n1.beta);
        out.emplace_back(prefix + ".n2.gamma", b.n2.gamma);
        out.emplace_back(prefix + ".n2.beta", b.n2.beta);
    }
    if (b.has_down) {
        out.emplace_back(prefix + ".down.w", b.down.w);
        out.emplace_back(prefix + ".down.b", b.down.b);
        if (norm) {
            out.emplace_back(prefix + ".dn.gamma", b.dn.gamma);
            out.emplace_back(prefix + ".dn.beta", b.dn.beta);
        }
    }
}

}  // namespace

void collect_params(EncoderParams& p, const std::string& prefix,
                    std::vector<std::pair<std::string, Tensor>>& out) {
    out.emplace_back(prefix + ".stem.w", p.stem.w);
    out.emplace_back(prefix + ".stem.b", p.stem.b);
    if (p.cfg.norm) {
        out.emplace_back(prefix + ".stem_norm.gamma", p.stem_norm.gamma);
        out.emplace_back(prefix + ".stem_norm.beta", p.stem_norm.beta);
    }
    collect_block(p.b1a, prefix + ".b1a", p.cfg.norm, out);
    collect_block(p.b1b, prefix + ".b1b", p.cfg.norm, out);
    collect_block(p.trans, prefix + ".trans", p.cfg.norm, out);
    collect_block(p.b2a, prefix + ".b2a", p.cfg.norm, out);
    collect_block(p.b2b, prefix + ".b2b", p.cfg.norm, out);
    out.emplace_back(prefix + ".proj.w", p.proj.w);
    out.emplace_back(prefix + ".proj.b", p.proj.b);
}

}  // namespace strack
