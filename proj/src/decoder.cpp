#include "strack/decoder.hpp"

#include <cmath>

#include "strack/memory.hpp"
#include "tensor_internal.hpp"

namespace strack {

namespace {

DecoderConv make_dconv(std::mt19937& rng, int cout, int cin, int k, Dtype dt, double gain = 2.0) {
    double std = std::sqrt(gain / double(cin * k * k));
    return DecoderConv{Tensor::randn(rng, {cout, cin, k, k}, 0.0, std, dt),
                       Tensor::zeros({cout}, dt), k / 2};
}

Tensor apply(const Tensor& x, const DecoderConv& c) { return conv2d(x, c.w, c.b, 1, c.pad); }

}  // namespace

Tensor make_coord_grid(int h, int w, Dtype dt) {
    Tensor g = Tensor::zeros({2, h, w}, dt);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            g.set_value_at(int64_t(y) * w + x, x);
            g.set_value_at(int64_t(h) * w + int64_t(y) * w + x, y);
        }
    return g;
}

DecoderParams make_decoder(std::mt19937& rng, const DecoderConfig& cfg, int d_context,
                           int d_sensory, Dtype dt) {
    DecoderParams p;
    p.cfg = cfg;
    int corr_ch = cfg.num_levels * (2 * cfg.radius + 1) * (2 * cfg.radius + 1);
    int c1 = cfg.d_motion;
    int c2 = std::max(4, (3 * cfg.d_motion) / 4);
    int f1 = std::max(4, cfg.d_motion / 2);
    int f2 = std::max(4, cfg.d_motion / 4);
    p.menc.corr1 = make_dconv(rng, c1, corr_ch, 1, dt);
    p.menc.corr2 = make_dconv(rng, c2, c1, 3, dt);
    p.menc.fv1 = make_dconv(rng, f1, 3, 7, dt);
    p.menc.fv2 = make_dconv(rng, f2, f1, 3, dt);
    p.menc.mix = make_dconv(rng, cfg.d_motion, c2 + f2, 3, dt);

    int xin = d_context + cfg.d_motion + d_sensory;
    int hx = cfg.d_hidden + xin;
    auto gate = [&](double gain) {
        return make_dconv(rng, cfg.d_hidden, hx, 3, dt, gain);
    };
    p.upd.gru.wz = gate(1.0).w;
    p.upd.gru.bz = Tensor::zeros({cfg.d_hidden}, dt);
    p.upd.gru.wr = gate(1.0).w;
    p.upd.gru.br = Tensor::zeros({cfg.d_hidden}, dt);
    p.upd.gru.wq = gate(1.0).w;
    p.upd.gru.bq = Tensor::zeros({cfg.d_hidden}, dt);

    p.upd.flow1 = make_dconv(rng, cfg.d_hidden, cfg.d_hidden, 3, dt);
    p.upd.flow2 = make_dconv(rng, 2, cfg.d_hidden, 3, dt, 2e-4);
    p.upd.vis1 = make_dconv(rng, std::max(4, cfg.d_hidden / 2), cfg.d_hidden, 3, dt);
    p.upd.vis2 = make_dconv(rng, 1, std::max(4, cfg.d_hidden / 2), 3, dt, 2e-4);
    return p;
}

CorrelationPyramid build_correlation(const Tensor& fmap_cur, const Tensor& fmap_ref,
                                     int num_levels) {
    if (fmap_cur.shape() != fmap_ref.shape())
        throw ShapeError("build_correlation: geometry mismatch " + shape_str(fmap_cur.shape()) +
                         " vs " + shape_str(fmap_ref.shape()));
    int D = fmap_ref.dim(0), h = fmap_ref.dim(1), w = fmap_ref.dim(2);
    CorrelationPyramid pyr;
    pyr.h = h;
    pyr.w = w;
    Tensor ref_rows = flatten_spatial(fmap_ref);  // (hw)×D
    Tensor cur_rows = flatten_spatial(fmap_cur);
    Tensor vol = mul_scalar(matmul(ref_rows, transpose2d(cur_rows)), 1.0 / std::sqrt(double(D)));
    Tensor level = reshape(vol, {h * w, h, w});
    pyr.levels.push_back(level);
    for (int l = 1; l < num_levels; ++l) {
        level = avg_pool2d(level);
        pyr.levels.push_back(level);
    }
    return pyr;
}

namespace {

// Gathers one pyramid level: out[(dy,dx), p] = bilinear(level[p], s·(p+flow_p) + (dx,dy)).
// Each volume row is sampled at its own center, so this is a dedicated kernel
// rather than a bilinear_sample call. Differentiable in the level and,
// when the flow is tracked, in the flow (the production decode loop passes a
// detached flow, so the coordinate path is cut there by default).
Tensor corr_gather(const Tensor& level, const Tensor& flow, double scale, int radius) {
    int P = level.dim(0), hl = level.dim(1), wl = level.dim(2);
    int h = flow.dim(1), w = flow.dim(2);
    int side = 2 * radius + 1;
    int64_t lhw = int64_t(hl) * wl;
    int64_t hw = int64_t(h) * w;
    auto plevel = level.node, pflow = flow.node;
    ParentVer ver({plevel, pflow});

    auto center = [scale, w](const double* fl, int64_t hw_, int64_t p, double& x, double& y) {
        x = (double(p % w) + fl[p]) * scale;
        y = (double(p / w) + fl[hw_ + p]) * scale;
    };

    Tensor out = make_op(
        "corr_gather", {side * side, h, w}, level.dtype(), {plevel, pflow},
        [plevel, pflow, ver, center, scale, radius, side, P, hl, wl, lhw, hw](Node& self) {
            ver.check({plevel, pflow}, "corr_gather");
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* go = self.grad<T>();
                const T* lv = plevel->data<T>();
                std::vector<double> fl(2 * hw);
                for (int64_t i = 0; i < 2 * hw; ++i) fl[i] = double(pflow->data<T>()[i]);
                T* gl = plevel->requires_grad ? plevel->grad<T>() : nullptr;
                T* gf = pflow->requires_grad ? pflow->grad<T>() : nullptr;
                for (int64_t p = 0; p < P; ++p) {
                    double cx, cy;
                    center(fl.data(), hw, p, cx, cy);
                    double dpx = 0, dpy = 0;
                    for (int dy = -radius; dy <= radius; ++dy)
                        for (int dx = -radius; dx <= radius; ++dx) {
                            double x = cx + dx, y = cy + dy;
                            int x0 = int(std::floor(x)), y0 = int(std::floor(y));
                            double fx = x - x0, fy = y - y0;
                            int ch = (dy + radius) * side + (dx + radius);
                            double g = double(go[int64_t(ch) * hw + p]);
                            if (g == 0) continue;
                            double v[2][2] = {{0, 0}, {0, 0}};
                            for (int jy = 0; jy < 2; ++jy)
                                for (int jx = 0; jx < 2; ++jx) {
                                    int xx = x0 + jx, yy = y0 + jy;
                                    if (xx < 0 || xx >= wl || yy < 0 || yy >= hl) continue;
                                    v[jy][jx] = double(lv[p * lhw + int64_t(yy) * wl + xx]);
                                    if (gl) {
                                        double wgt = (jx ? fx : 1 - fx) * (jy ? fy : 1 - fy);
                                        gl[p * lhw + int64_t(yy) * wl + xx] += T(g * wgt);
                                    }
                                }
                            if (gf) {
                                dpx += g * ((1 - fy) * (v[0][1] - v[0][0]) +
                                            fy * (v[1][1] - v[1][0]));
                                dpy += g * ((1 - fx) * (v[1][0] - v[0][0]) +
                                            fx * (v[1][1] - v[0][1]));
                            }
                        }
                    if (gf) {
                        gf[p] += T(dpx * scale);
                        gf[hw + p] += T(dpy * scale);
                    }
                }
            });
        });
    dispatch(level.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* lv = plevel->data<T>();
        std::vector<double> fl(2 * hw);
        for (int64_t i = 0; i < 2 * hw; ++i) fl[i] = double(pflow->data<T>()[i]);
        T* po = out.node->data<T>();
        for (int64_t p = 0; p < P; ++p) {
            double cx, cy;
            center(fl.data(), hw, p, cx, cy);
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    double x = cx + dx, y = cy + dy;
                    int x0 = int(std::floor(x)), y0 = int(std::floor(y));
                    double fx = x - x0, fy = y - y0;
                    double acc = 0;
                    for (int jy = 0; jy < 2; ++jy)
                        for (int jx = 0; jx < 2; ++jx) {
                            int xx = x0 + jx, yy = y0 + jy;
                            if (xx < 0 || xx >= wl || yy < 0 || yy >= hl) continue;
                            acc += (jx ? fx : 1 - fx) * (jy ? fy : 1 - fy) *
                                   double(lv[p * lhw + int64_t(yy) * wl + xx]);
                        }
                    int ch = (dy + radius) * side + (dx + radius);
                    po[int64_t(ch) * hw + p] = T(acc);
                }
        }
    });
    return out;
}

}  // namespace

Tensor lookup(const CorrelationPyramid& pyr, const Tensor& flow, int radius) {
    if (pyr.levels.empty()) throw ContractError("lookup: empty pyramid");
    int h = pyr.h, w = pyr.w;
    if (flow.ndim() != 3 || flow.dim(0) != 2 || flow.dim(1) != h || flow.dim(2) != w)
        throw ShapeError("lookup: flow " + shape_str(flow.shape()) + " does not match volume " +
                         std::to_string(h) + "x" + std::to_string(w));
    std::vector<Tensor> feats;
    for (size_t l = 0; l < pyr.levels.size(); ++l)
        feats.push_back(corr_gather(pyr.levels[l], flow, 1.0 / double(1 << l), radius));
    return feats.size() == 1 ? feats[0] : concat_channels(feats);
}

Tensor encode_motion(const Tensor& flow, const Tensor& vis_prob, const Tensor& corr_feats,
                     const MotionEncoderParams& p) {
    Tensor c = relu(apply(corr_feats, p.corr1));
    c = relu(apply(c, p.corr2));
    Tensor fv = relu(apply(concat_channels({flow, vis_prob}), p.fv1));
    fv = relu(apply(fv, p.fv2));
    return relu(apply(concat_channels({c, fv}), p.mix));
}

GruUpdateOut gru_update(const Tensor& hidden, const Tensor& f_c, const Tensor& f_m,
                        const Tensor& s_prev, const UpdateParams& p) {
    Tensor x = concat_channels({f_c, f_m, s_prev});
    Tensor h = gru_cell(hidden, x, p.gru);
    Tensor df = apply(relu(apply(h, p.flow1)), p.flow2);
    Tensor dv = apply(relu(apply(h, p.vis1)), p.vis2);
    return GruUpdateOut{df, dv, h};
}

DecodeResult decode(const Tensor& f_hat, const Tensor& f_ref, const Tensor& f_c,
                    const Tensor& s_prev, const Tensor& init_flow, const Tensor& init_vis_logits,
                    const Tensor& init_hidden, int iterations, const DecoderParams& p) {
    if (iterations < 0) throw ContractError("decode: iterations must be >= 0");
    DecodeResult res;
    res.flow = init_flow;
    res.vis_logits = init_vis_logits;
    res.hidden = init_hidden;
    if (iterations == 0) return res;

    CorrelationPyramid pyr = build_correlation(f_hat, f_ref, p.cfg.num_levels);
    for (int i = 0; i < iterations; ++i) {
        Tensor flow_d = p.cfg.detach_estimates ? res.flow.detach() : res.flow;
        Tensor vis_d = p.cfg.detach_estimates ? res.vis_logits.detach() : res.vis_logits;
        Tensor corr_feats = lookup(pyr, flow_d, p.cfg.radius);
        Tensor f_m = encode_motion(flow_d, sigmoid(vis_d), corr_feats, p.menc);
        GruUpdateOut upd = gru_update(res.hidden, f_c, f_m, s_prev, p.upd);
        res.hidden = upd.hidden;
        res.flow = add(flow_d, upd.dflow);
        res.vis_logits = add(vis_d, upd.dvis);
        res.motion_final = f_m;
        res.per_iter_flows.push_back(res.flow);
    }
    return res;
}

std::pair<Tensor, Tensor> upsample4x(const Tensor& flow_q, const Tensor& vis_logits_q) {
    Tensor flow = mul_scalar(upsample_bilinear(flow_q, 4), 4.0);
    Tensor vis = upsample_bilinear(vis_logits_q, 4);
    return {flow, vis};
}

void collect_params(DecoderParams& p, const std::string& prefix,
                    std::vector<std::pair<std::string, Tensor>>& out) {
    auto conv = [&](const std::string& name, DecoderConv& c) {
        out.emplace_back(prefix + "." + name + ".w", c.w);
        out.emplace_back(prefix + "." + name + ".b", c.b);
    };
    conv("menc.corr1", p.menc.corr1);
    conv("menc.corr2", p.menc.corr2);
    conv("menc.fv1", p.menc.fv1);
    conv("menc.fv2", p.menc.fv2);
    conv("menc.mix", p.menc.mix);
    out.emplace_back(prefix + ".gru.wz", p.upd.gru.wz);
    out.emplace_back(prefix + ".gru.bz", p.upd.gru.bz);
    out.emplace_back(prefix + ".gru.wr", p.upd.gru.wr);
    out.emplace_back(prefix + ".gru.br", p.upd.gru.br);
    out.emplace_back(prefix + ".gru.wq", p.upd.gru.wq);
    out.emplace_back(prefix + ".gru.bq", p.upd.gru.bq);
    conv("flow1", p.upd.flow1);
    conv("flow2", p.upd.flow2);
    conv("vis1", p.upd.vis1);
    conv("vis2", p.upd.vis2);
}

}  // namespace strack
