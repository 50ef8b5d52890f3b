#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "strack/tensor.hpp"

namespace strack {

// All-pairs correlation volume, pooled over the current-frame dimensions.
// Rows are indexed by reference-frame pixels: level0[p, q] = <F1(p), F_t(q)>/sqrt(D),
// so a lookup around p+flow(p) scans current-frame locations for the track
// anchored at reference pixel p.
struct CorrelationPyramid {
    std::vector<Tensor> levels;  // (h·w) × h_l × w_l
    int h = 0, w = 0;
};

struct DecoderConfig {
    int num_levels = 4;
    int radius = 3;
    int d_motion = 128;  // motion feature channels
    int d_hidden = 96;   // GRU state channels
    // Detach flow/visibility estimates at the top of each iteration, so
    // gradients reach them only through the per-iteration deltas (the
    // convention of the iterative-refinement flow literature). Turning this
    // off makes decode fully differentiable, including the lookup
    // coordinates; the end-to-end finite-difference check runs that way.
    bool detach_estimates = true;
};

struct DecoderConv {
    Tensor w, b;
    int pad = 0;
};

struct MotionEncoderParams {
    DecoderConv corr1, corr2;  // 1×1 then 3×3 over correlation features
    DecoderConv fv1, fv2;      // 7×7 then 3×3 over flow ⊕ visibility
    DecoderConv mix;           // 3×3 to d_motion channels
};

struct UpdateParams {
    GruParams gru;             // state d_hidden, input f_c ⊕ f_m ⊕ s
    DecoderConv flow1, flow2;  // Δflow head
    DecoderConv vis1, vis2;    // Δvisibility-logit head
};

struct DecoderParams {
    DecoderConfig cfg;
    MotionEncoderParams menc;
    UpdateParams upd;
};

struct DecodeResult {
    Tensor flow;          // 2×h×w, quarter resolution
    Tensor vis_logits;    // 1×h×w
    Tensor hidden;        // d_hidden×h×w
    Tensor motion_final;  // d_motion×h×w; undefined when N == 0
    std::vector<Tensor> per_iter_flows;
};

DecoderParams make_decoder(std::mt19937& rng, const DecoderConfig& cfg, int d_context,
                           int d_sensory, Dtype dt = Dtype::F32);

CorrelationPyramid build_correlation(const Tensor& fmap_cur, const Tensor& fmap_ref,
                                     int num_levels);

// Samples every pyramid level on a (2r+1)² window centred at (x,y)+flow
// (scaled per level); channels stack offsets within levels, levels outermost.
// The flow enters as plain coordinates (no gradient through the lookup).
Tensor lookup(const CorrelationPyramid& pyr, const Tensor& flow, int radius);

Tensor encode_motion(const Tensor& flow, const Tensor& vis_prob, const Tensor& corr_feats,
                     const MotionEncoderParams& p);

struct GruUpdateOut {
    Tensor dflow, dvis, hidden;
};
GruUpdateOut gru_update(const Tensor& hidden, const Tensor& f_c, const Tensor& f_m,
                        const Tensor& s_prev, const UpdateParams& p);

// N refinement iterations. The flow/visibility estimates are detached at the
// top of each iteration; gradients reach parameters through the per-iteration
// deltas and the hidden-state chain.
DecodeResult decode(const Tensor& f_hat, const Tensor& f_ref, const Tensor& f_c,
                    const Tensor& s_prev, const Tensor& init_flow, const Tensor& init_vis_logits,
                    const Tensor& init_hidden, int iterations, const DecoderParams& p);

// Bilinear 4× upsampling; flow magnitudes rescale with resolution, visibility
// logits do not.
std::pair<Tensor, Tensor> upsample4x(const Tensor& flow_q, const Tensor& vis_logits_q);

// Constant (x,y) coordinate grid with pixel centers at integers.
Tensor make_coord_grid(int h, int w, Dtype dt);

void collect_params(DecoderParams& p, const std::string& prefix,
                    std::vector<std::pair<std::string, Tensor>>& out);

}  // namespace strack
