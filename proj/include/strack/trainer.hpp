#pragma once

#include <optional>
#include <string>
#include <vector>

#include "strack/metrics.hpp"
#include "strack/synth.hpp"
#include "strack/tracker.hpp"

namespace strack {

struct TrainConfig {
    ModelConfig model;
    int video_len = 24;  // frames used per sequence (prefix)
    double lr = 2e-3;
    int steps = 1000;
    int batch_size = 1;
    double gamma = 0.8;       // per-iteration loss discount
    double vis_weight = 1.0;  // visibility BCE weight
    double clip_norm = 1.0;
    int bptt_window = 4;  // frames per truncated-backprop window
    int log_every = 25;
    uint32_t seed = 0;
    double warmup_frac = 0.05;  // one-cycle ramp fraction
    // Stop after this many optimizer steps in this run (0 = run to `steps`).
    // The one-cycle schedule always spans `steps`, so an interrupted run plus
    // a resumed run reproduce an uninterrupted one exactly.
    int stop_after_steps = 0;
};

// Per-frame inputs of the supervised loss, at quarter resolution.
struct FrameLossInput {
    std::vector<Tensor> iter_flows;  // f^1..f^N
    Tensor vis_logits;               // final v
    Tensor gt_flow_q;                // downsampled ground truth (px / 4)
    Tensor gt_vis_q;                 // averaged ground-truth visibility
};

// Σ_frames [ Σ_i γ^{N-i}·mean|f^i − gt|₁ + λ·BCE(v, gt_vis) ] / num_frames
Tensor sequence_loss(const std::vector<FrameLossInput>& frames, double gamma, double vis_weight);

// 4× average-pooled ground truth; flow values divide by 4.
std::pair<Tensor, Tensor> downsample_gt(const Tensor& gt_flow, const Tensor& gt_vis);

// Adam with global-norm clipping. Moments are part of the checkpoint so a
// resumed run reproduces the original bitwise.
struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t t = 0;
    std::vector<Tensor> m, v;

    void init(const std::vector<std::pair<std::string, Tensor>>& params);
    void step(std::vector<std::pair<std::string, Tensor>>& params, double lr, double clip_norm);
};

struct TrainLogEntry {
    int step;
    double loss;
    double epe;  // mean final-iteration EPE at full-resolution pixel units
};

struct TrainResult {
    Model model;
    std::vector<TrainLogEntry> log;
    int steps_completed = 0;
};

// Supervised training over a corpus of synthetic sequences. Deterministic
// given seed and thread configuration. When out_dir is non-empty, writes
// checkpoint.ckpt and loss_log.csv there (and a diagnostic checkpoint before
// aborting on a non-finite loss). resume_from restarts an interrupted run
// bit-exactly.
TrainResult train(const TrainConfig& config, const std::vector<SequenceRecord>& corpus,
                  const std::string& out_dir = "", const std::string& resume_from = "");

// ---- checkpoint container ----
// magic "SPOTCKPT", u32 version, u32 entry count,
// entries = (u16 name length, name bytes, tensor in "SPT0" format).
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& entries);
std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

// Model + config (de)serialization helpers built on the container.
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

// Reconstructs a model (architecture from the embedded config snapshot,
// parameters by name) from a checkpoint file.
Model load_model(const std::string& path);
void save_model(const std::string& path, Model& model, const TrainConfig& cfg, int64_t step);

// ---- evaluation and the ablation grid ----

struct EvalSummary {
    double epe_all = 0;
    std::optional<double> epe_vis, epe_occ, oa;
};

// CVO-style protocol: dense flow scored on the final frame of each clip,
// averaged over the corpus.
EvalSummary evaluate_last_frame(const Model& model, const std::vector<SequenceRecord>& corpus,
                                int iterations);

struct AblationRow {
    std::string name;
    ModelConfig model;
};

struct AblationResult {
    std::string name;
    EvalSummary eval;
};

// Trains each row from scratch (same seed and budget) and scores it on the
// held-out set.
std::vector<AblationResult> run_ablation_grid(const TrainConfig& base,
                                              const std::vector<AblationRow>& rows,
                                              const std::vector<SequenceRecord>& train_set,
                                              const std::vector<SequenceRecord>& test_set);

}  // namespace strack
