#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "strack/decoder.hpp"
#include "strack/encoder.hpp"
#include "strack/memory.hpp"
#include "strack/splatting.hpp"
#include "strack/types.hpp"

namespace strack {

// Full model configuration: architecture widths, memory settings, and the
// ablation toggles (each toggle yields a runnable model).
struct ModelConfig {
    int dim = 64;        // feature channels D (key/value width follows)
    int d_context = 64;  // context channels
    int d_key = 64;      // projected query width
    int d_sensory = 64;  // sensory memory channels
    int enc_stem = 32, enc_stage1 = 48, enc_stage2 = 64;
    DecoderConfig decoder;
    int fuse_ksize = 3;
    int mem_len = 3;       // memory bank capacity L
    int iters_train = 12;  // refinement steps while training
    int iters_eval = 16;   // refinement steps at inference
    SplatMode splat_mode = SplatMode::Linear;
    double splat_alpha = kDefaultSoftmaxAlpha;
    double eps_hole = kDefaultEpsHole;
    double init_vis_logit = 10.0;  // "visible in its own frame"

    // ablation toggles
    bool memory_bank = true;
    bool sensory = true;
    bool query_projector = true;
    bool warm_hidden = true;
    bool warm_flow = true;
    bool warm_vis = true;
    bool seed_bank = true;  // write (q(F1), F1) at t=1
};

struct Model {
    ModelConfig cfg;
    EncoderParams feat_enc;
    EncoderParams ctx_enc;
    QueryProjector qproj;
    Tensor fuse_w, fuse_b;
    DecoderParams dec;
    GruParams sensory_gru;

    std::vector<std::pair<std::string, Tensor>> named_params();
    void set_tracked(bool v);
    void zero_grads();
};

Model make_model(std::mt19937& rng, const ModelConfig& cfg, Dtype dt = Dtype::F32);

// Everything carried between frames of one stream. Memory stays bounded:
// the bank holds at most L entries and every other field has fixed shape.
struct TrackerState {
    Tensor f1;   // reference features, cached at t=1
    Tensor f_c;  // reference context, cached at t=1
    MemoryBank bank{1};
    SensoryMemory sensory;
    Tensor hidden;
    Tensor prev_flow_init;   // f^0 of the previous frame (quarter res)
    Tensor prev_flow_final;  // f^N of the previous frame
    Tensor prev_vis_logits;  // v^N of the previous frame
    int t = 0;               // 1-based frame index of the last processed frame
    int full_h = 0, full_w = 0;

    // Cuts all carried tensors from their graphs (BPTT window boundary).
    void detach_all();
};

struct TrackOutput {
    FlowField flow;      // full resolution, reference -> current
    VisibilityMap vis;   // full resolution
    Tensor flow_q;       // quarter resolution (memory update / loss)
    Tensor vis_logits_q;
    std::vector<Tensor> iter_flows_q;  // per-iteration flows for the loss
};

// Encodes the reference frame, zero-initializes the recurrent state, seeds
// the memory bank, and reports the identity track (zero flow, visible).
std::pair<TrackerState, TrackOutput> init(const Frame& first, const Model& m);

// One streaming step: encode, read/fuse, warm-start, decode, update sensory
// memory, splat the reference features forward and write them to the bank.
TrackOutput step(TrackerState& state, const Frame& frame, const Model& m, int iterations);

// Runs init + steps over a whole clip with no gradient tape. Output i
// depends only on frames[0..i].
std::vector<TrackOutput> track_sequence(const std::vector<Frame>& frames, const Model& m,
                                        int iterations);

}  // namespace strack
