#include "strack/tracker.hpp"

#include <cmath>

namespace strack {

std::vector<std::pair<std::string, Tensor>> Model::named_params() {
    std::vector<std::pair<std::string, Tensor>> out;
    collect_params(feat_enc, "fenc", out);
    collect_params(ctx_enc, "cenc", out);
    if (cfg.memory_bank) {
        if (cfg.query_projector) {
            out.emplace_back("qproj.w", qproj.w);
            out.emplace_back("qproj.b", qproj.b);
        }
        out.emplace_back("fuse.w", fuse_w);
        out.emplace_back("fuse.b", fuse_b);
    }
    collect_params(dec, "dec", out);
    if (cfg.sensory) {
        out.emplace_back("sgru.wz", sensory_gru.wz);
        out.emplace_back("sgru.bz", sensory_gru.bz);
        out.emplace_back("sgru.wr", sensory_gru.wr);
        out.emplace_back("sgru.br", sensory_gru.br);
        out.emplace_back("sgru.wq", sensory_gru.wq);
        out.emplace_back("sgru.bq", sensory_gru.bq);
    }
    return out;
}

void Model::set_tracked(bool v) {
    for (auto& [name, t] : named_params()) t.set_tracked(v);
}

void Model::zero_grads() {
    for (auto& [name, t] : named_params()) t.zero_grad();
}

Model make_model(std::mt19937& rng, const ModelConfig& cfg, Dtype dt) {
    Model m;
    m.cfg = cfg;
    EncoderConfig fe;
    fe.stem_ch = cfg.enc_stem;
    fe.stage1_ch = cfg.enc_stage1;
    fe.stage2_ch = cfg.enc_stage2;
    fe.out_ch = cfg.dim;
    fe.norm = true;
    m.feat_enc = make_encoder(rng, fe, dt);

    EncoderConfig ce = fe;
    ce.out_ch = cfg.d_context;
    ce.norm = false;
    ce.final_relu = true;
    m.ctx_enc = make_encoder(rng, ce, dt);

    m.qproj.identity = !cfg.query_projector;
    {
        double std = std::sqrt(1.0 / double(cfg.dim));
        m.qproj.w = Tensor::randn(rng, {cfg.d_key, cfg.dim}, 0.0, std, dt);
        m.qproj.b = Tensor::zeros({cfg.d_key}, dt);
    }
    {
        int k = cfg.fuse_ksize;
        double std = std::sqrt(2.0 / double(2 * cfg.dim * k * k));
        m.fuse_w = Tensor::randn(rng, {cfg.dim, 2 * cfg.dim, k, k}, 0.0, std, dt);
        m.fuse_b = Tensor::zeros({cfg.dim}, dt);
    }
    m.dec = make_decoder(rng, cfg.decoder, cfg.d_context, cfg.d_sensory, dt);
    {
        int hs = cfg.d_sensory, xs = cfg.decoder.d_motion;
        double std = std::sqrt(1.0 / double((hs + xs) * 9));
        auto gate_w = [&] { return Tensor::randn(rng, {hs, hs + xs, 3, 3}, 0.0, std, dt); };
        m.sensory_gru.wz = gate_w();
        m.sensory_gru.bz = Tensor::zeros({hs}, dt);
        m.sensory_gru.wr = gate_w();
        m.sensory_gru.br = Tensor::zeros({hs}, dt);
        m.sensory_gru.wq = gate_w();
        m.sensory_gru.bq = Tensor::zeros({hs}, dt);
    }
    return m;
}

void TrackerState::detach_all() {
    f1 = f1.detach();
    f_c = f_c.detach();
    bank.detach_entries();
    sensory.state = sensory.state.detach();
    hidden = hidden.detach();
    prev_flow_init = prev_flow_init.detach();
    prev_flow_final = prev_flow_final.detach();
    prev_vis_logits = prev_vis_logits.detach();
}

namespace {

Dtype model_dtype(const Model& m) { return m.fuse_w.dtype(); }

TrackOutput identity_output(int H, int W, int h, int w, double vis_logit, Dtype dt) {
    TrackOutput out;
    out.flow = FlowField{Tensor::zeros({2, H, W}, dt)};
    out.vis = VisibilityMap{Tensor::full({1, H, W}, vis_logit, dt)};
    out.flow_q = Tensor::zeros({2, h, w}, dt);
    out.vis_logits_q = Tensor::full({1, h, w}, vis_logit, dt);
    return out;
}

}  // namespace

std::pair<TrackerState, TrackOutput> init(const Frame& first, const Model& m) {
    Dtype dt = model_dtype(m);
    TrackerState st;
    st.full_h = first.height();
    st.full_w = first.width();
    st.f1 = encode_frame(first, m.feat_enc);
    st.f_c = encode_frame(first, m.ctx_enc);
    int h = st.f1.dim(1), w = st.f1.dim(2);
    st.sensory = SensoryMemory{Tensor::zeros({m.cfg.d_sensory, h, w}, dt)};
    st.hidden = Tensor::zeros({m.cfg.decoder.d_hidden, h, w}, dt);
    st.prev_flow_init = Tensor::zeros({2, h, w}, dt);
    st.prev_flow_final = Tensor::zeros({2, h, w}, dt);
    st.prev_vis_logits = Tensor::full({1, h, w}, m.cfg.init_vis_logit, dt);
    st.bank = MemoryBank(m.cfg.mem_len);
    if (m.cfg.memory_bank && m.cfg.seed_bank) {
        Tensor q1 = project_query(st.f1, m.qproj);
        st.bank.write(q1, flatten_spatial(st.f1));
    }
    st.t = 1;
    TrackOutput out = identity_output(st.full_h, st.full_w, h, w, m.cfg.init_vis_logit, dt);
    return {std::move(st), std::move(out)};
}

TrackOutput step(TrackerState& state, const Frame& frame, const Model& m, int iterations) {
    if (state.t < 1) throw ContractError("step: tracker not initialized");
    if (frame.height() != state.full_h || frame.width() != state.full_w)
        throw ShapeError("step: frame " + std::to_string(frame.height()) + "x" +
                         std::to_string(frame.width()) + " does not match stream " +
                         std::to_string(state.full_h) + "x" + std::to_string(state.full_w));
    Dtype dt = model_dtype(m);
    int h = state.f1.dim(1), w = state.f1.dim(2);

    Tensor f_t = encode_frame(frame, m.feat_enc);
    Tensor q, f_hat;
    if (m.cfg.memory_bank) {
        q = project_query(f_t, m.qproj);
        if (!state.bank.empty()) {
            Tensor readout = read(state.bank, q, h, w);
            f_hat = fuse(f_t, readout, m.fuse_w, m.fuse_b);
        } else {
            f_hat = f_t;
        }
    } else {
        f_hat = f_t;
    }

    // Warm start: one-step extrapolation of the previous frame's trajectory,
    // carried hidden state, carried visibility logits.
    Tensor init_flow;
    if (m.cfg.warm_flow) {
        init_flow = add(state.prev_flow_init,
                        mul_scalar(sub(state.prev_flow_final, state.prev_flow_init), 2.0));
    } else {
        init_flow = state.prev_flow_final;
    }
    Tensor init_hidden =
        m.cfg.warm_hidden ? state.hidden : Tensor::zeros({m.cfg.decoder.d_hidden, h, w}, dt);
    Tensor init_vis = m.cfg.warm_vis ? state.prev_vis_logits
                                     : Tensor::full({1, h, w}, m.cfg.init_vis_logit, dt);
    Tensor s_in = m.cfg.sensory ? state.sensory.state
                                : Tensor::zeros({m.cfg.d_sensory, h, w}, dt);

    DecodeResult dr =
        decode(f_hat, state.f1, state.f_c, s_in, init_flow, init_vis, init_hidden, iterations, m.dec);

    if (m.cfg.sensory && dr.motion_final.defined())
        state.sensory = sensory_update(state.sensory, dr.motion_final, m.sensory_gru);

    if (m.cfg.memory_bank) {
        Tensor value = splat(state.f1, dr.flow, sigmoid(dr.vis_logits), m.cfg.splat_mode,
                             m.cfg.splat_alpha, m.cfg.eps_hole)
                           .value;
        state.bank.write(q, flatten_spatial(value));
    }

    auto [flow_full, vis_full] = upsample4x(dr.flow, dr.vis_logits);
    if (flow_full.dim(1) != state.full_h || flow_full.dim(2) != state.full_w) {
        flow_full = crop_spatial(flow_full, state.full_h, state.full_w);
        vis_full = crop_spatial(vis_full, state.full_h, state.full_w);
    }

    TrackOutput out;
    out.flow = FlowField{flow_full};
    out.vis = VisibilityMap{vis_full};
    out.flow_q = dr.flow;
    out.vis_logits_q = dr.vis_logits;
    out.iter_flows_q = dr.per_iter_flows;

    state.prev_flow_init = init_flow;
    state.prev_flow_final = dr.flow;
    state.prev_vis_logits = dr.vis_logits;
    state.hidden = dr.hidden;
    state.t += 1;
    return out;
}

std::vector<TrackOutput> track_sequence(const std::vector<Frame>& frames, const Model& m,
                                        int iterations) {
    if (frames.empty()) throw ContractError("track_sequence: no frames");
    NoGradGuard ng;
    std::vector<TrackOutput> outs;
    outs.reserve(frames.size());
    auto [state, first] = init(frames[0], m);
    outs.push_back(std::move(first));
    for (size_t i = 1; i < frames.size(); ++i) outs.push_back(step(state, frames[i], m, iterations));
    return outs;
}

}  // namespace strack
