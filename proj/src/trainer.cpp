#include "strack/trainer.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "strack/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace strack {

Tensor sequence_loss(const std::vector<FrameLossInput>& frames, double gamma, double vis_weight) {
    if (frames.empty()) throw ContractError("sequence_loss: no frames");
    if (gamma <= 0.0 || gamma > 1.0) throw ConfigError("sequence_loss: gamma must be in (0,1]");
    Tensor total;
    for (const auto& f : frames) {
        int n = int(f.iter_flows.size());
        Tensor frame_loss;
        for (int i = 0; i < n; ++i) {
            double w = std::pow(gamma, double(n - 1 - i));
            Tensor l1 = mul_scalar(mean_all(abs_op(sub(f.iter_flows[i], f.gt_flow_q))), w);
            frame_loss = frame_loss.defined() ? add(frame_loss, l1) : l1;
        }
        Tensor bce = mul_scalar(bce_with_logits_mean(f.vis_logits, f.gt_vis_q), vis_weight);
        frame_loss = frame_loss.defined() ? add(frame_loss, bce) : bce;
        total = total.defined() ? add(total, frame_loss) : frame_loss;
    }
    return mul_scalar(total, 1.0 / double(frames.size()));
}

std::pair<Tensor, Tensor> downsample_gt(const Tensor& gt_flow, const Tensor& gt_vis) {
    if (gt_flow.dim(1) % 4 != 0 || gt_flow.dim(2) % 4 != 0)
        throw ShapeError("downsample_gt: dimensions must be divisible by 4");
    Tensor flow_q = mul_scalar(avg_pool2d(avg_pool2d(gt_flow)), 0.25);
    Tensor vis_q = avg_pool2d(avg_pool2d(gt_vis));
    return {flow_q, vis_q};
}

void AdamState::init(const std::vector<std::pair<std::string, Tensor>>& params) {
    t = 0;
    m.clear();
    v.clear();
    for (auto& [name, p] : params) {
        m.push_back(Tensor::zeros(p.shape(), p.dtype()));
        v.push_back(Tensor::zeros(p.shape(), p.dtype()));
    }
}

void AdamState::step(std::vector<std::pair<std::string, Tensor>>& params, double lr,
                     double clip_norm) {
    if (m.size() != params.size()) throw ContractError("AdamState: parameter count mismatch");
    double sq = 0.0;
    for (auto& [name, p] : params) {
        Tensor g = p.grad();
        for (int64_t i = 0; i < g.numel(); ++i) {
            double x = g.value_at(i);
            sq += x * x;
        }
    }
    double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw DomainError("AdamState: non-finite gradient norm");
    double scale = (clip_norm > 0 && norm > clip_norm) ? clip_norm / norm : 1.0;
    ++t;
    double bc1 = 1.0 - std::pow(beta1, double(t));
    double bc2 = 1.0 - std::pow(beta2, double(t));
    for (size_t k = 0; k < params.size(); ++k) {
        Tensor& p = params[k].second;
        Tensor g = p.grad();
        float* mp = m[k].mutable_data<float>();
        float* vp = v[k].mutable_data<float>();
        float* pp = p.mutable_data<float>();
        for (int64_t i = 0; i < p.numel(); ++i) {
            double gi = g.value_at(i) * scale;
            double mi = beta1 * mp[i] + (1.0 - beta1) * gi;
            double vi = beta2 * vp[i] + (1.0 - beta2) * gi * gi;
            mp[i] = float(mi);
            vp[i] = float(vi);
            double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps);
            pp[i] = float(double(pp[i]) - update);
        }
    }
}

// ---- config (de)serialization ----

namespace {

json model_cfg_json(const ModelConfig& c) {
    return json{{"dim", c.dim},
                {"d_context", c.d_context},
                {"d_key", c.d_key},
                {"d_sensory", c.d_sensory},
                {"enc_stem", c.enc_stem},
                {"enc_stage1", c.enc_stage1},
                {"enc_stage2", c.enc_stage2},
                {"num_levels", c.decoder.num_levels},
                {"radius", c.decoder.radius},
                {"d_motion", c.decoder.d_motion},
                {"d_hidden", c.decoder.d_hidden},
                {"fuse_ksize", c.fuse_ksize},
                {"mem_len", c.mem_len},
                {"iters_train", c.iters_train},
                {"iters_eval", c.iters_eval},
                {"splat_mode", splat_mode_name(c.splat_mode)},
                {"splat_alpha", c.splat_alpha},
                {"init_vis_logit", c.init_vis_logit},
                {"memory_bank", c.memory_bank},
                {"sensory", c.sensory},
                {"query_projector", c.query_projector},
                {"warm_hidden", c.warm_hidden},
                {"warm_flow", c.warm_flow},
                {"warm_vis", c.warm_vis},
                {"seed_bank", c.seed_bank}};
}

ModelConfig model_cfg_from(const json& j) {
    ModelConfig c;
    c.dim = j.at("dim");
    c.d_context = j.at("d_context");
    c.d_key = j.at("d_key");
    c.d_sensory = j.at("d_sensory");
    c.enc_stem = j.at("enc_stem");
    c.enc_stage1 = j.at("enc_stage1");
    c.enc_stage2 = j.at("enc_stage2");
    c.decoder.num_levels = j.at("num_levels");
    c.decoder.radius = j.at("radius");
    c.decoder.d_motion = j.at("d_motion");
    c.decoder.d_hidden = j.at("d_hidden");
    c.fuse_ksize = j.at("fuse_ksize");
    c.mem_len = j.at("mem_len");
    c.iters_train = j.at("iters_train");
    c.iters_eval = j.at("iters_eval");
    c.splat_mode = splat_mode_from_name(j.at("splat_mode"));
    c.splat_alpha = j.at("splat_alpha");
    c.init_vis_logit = j.at("init_vis_logit");
    c.memory_bank = j.at("memory_bank");
    c.sensory = j.at("sensory");
    c.query_projector = j.at("query_projector");
    c.warm_hidden = j.at("warm_hidden");
    c.warm_flow = j.at("warm_flow");
    c.warm_vis = j.at("warm_vis");
    c.seed_bank = j.at("seed_bank");
    return c;
}

json train_cfg_json(const TrainConfig& c) {
    return json{{"model", model_cfg_json(c.model)},
                {"video_len", c.video_len},
                {"lr", c.lr},
                {"steps", c.steps},
                {"batch_size", c.batch_size},
                {"gamma", c.gamma},
                {"vis_weight", c.vis_weight},
                {"clip_norm", c.clip_norm},
                {"bptt_window", c.bptt_window},
                {"log_every", c.log_every},
                {"seed", c.seed},
                {"warmup_frac", c.warmup_frac}};
}

TrainConfig train_cfg_from(const json& j) {
    TrainConfig c;
    c.model = model_cfg_from(j.at("model"));
    c.video_len = j.at("video_len");
    c.lr = j.at("lr");
    c.steps = j.at("steps");
    c.batch_size = j.at("batch_size");
    c.gamma = j.at("gamma");
    c.vis_weight = j.at("vis_weight");
    c.clip_norm = j.at("clip_norm");
    c.bptt_window = j.at("bptt_window");
    c.log_every = j.at("log_every");
    c.seed = j.at("seed");
    c.warmup_frac = j.at("warmup_frac");
    return c;
}

Tensor string_to_tensor(const std::string& s) {
    Tensor t = Tensor::zeros({std::max(1, int(s.size()))}, Dtype::F32);
    float* p = t.mutable_data<float>();
    for (size_t i = 0; i < s.size(); ++i) p[i] = float(uint8_t(s[i]));
    return t;
}

std::string tensor_to_string(const Tensor& t) {
    std::string s;
    s.reserve(t.numel());
    for (int64_t i = 0; i < t.numel(); ++i) {
        int c = int(t.value_at(i));
        if (c != 0) s.push_back(char(uint8_t(c)));
    }
    return s;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return model_cfg_json(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
    try {
        return model_cfg_from(json::parse(text));
    } catch (const json::exception& e) {
        throw ParseError(std::string("model config: ") + e.what());
    }
}

std::string train_config_to_json(const TrainConfig& cfg) { return train_cfg_json(cfg).dump(); }

TrainConfig train_config_from_json(const std::string& text) {
    try {
        return train_cfg_from(json::parse(text));
    } catch (const json::exception& e) {
        throw ParseError(std::string("train config: ") + e.what());
    }
}

// ---- checkpoint container ----

namespace {
constexpr char kCkptMagic[8] = {'S', 'P', 'O', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& entries) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_checkpoint: cannot open " + path);
    f.write(kCkptMagic, 8);
    uint32_t version = kCkptVersion, count = uint32_t(entries.size());
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&count), 4);
    for (auto& [name, t] : entries) {
        if (name.size() > 0xffff) throw ContractError("save_checkpoint: name too long");
        uint16_t len = uint16_t(name.size());
        f.write(reinterpret_cast<const char*>(&len), 2);
        f.write(name.data(), len);
        write_tensor(f, t);
    }
    if (!f) throw IoError("save_checkpoint: short write to " + path);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw ParseError("load_checkpoint: bad magic in " + path);
    uint32_t version = 0, count = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&count), 4);
    if (!f || version != kCkptVersion)
        throw ParseError("load_checkpoint: unsupported version in " + path);
    std::vector<std::pair<std::string, Tensor>> entries;
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t len = 0;
        f.read(reinterpret_cast<char*>(&len), 2);
        if (!f) throw ParseError("load_checkpoint: truncated name length in " + path);
        std::string name(len, '\0');
        f.read(name.data(), len);
        if (!f) throw ParseError("load_checkpoint: truncated name in " + path);
        entries.emplace_back(std::move(name), read_tensor(f));
    }
    return entries;
}

namespace {

std::vector<std::pair<std::string, Tensor>> model_entries(Model& model, const TrainConfig& cfg,
                                                          int64_t step, const AdamState* opt,
                                                          const std::string& rng_state) {
    std::vector<std::pair<std::string, Tensor>> out;
    auto params = model.named_params();
    for (auto& [name, t] : params) out.emplace_back(name, t);
    if (opt) {
        for (size_t k = 0; k < params.size(); ++k) {
            out.emplace_back("opt.m." + params[k].first, opt->m[k]);
            out.emplace_back("opt.v." + params[k].first, opt->v[k]);
        }
        out.emplace_back("opt.t", Tensor::full({1}, double(opt->t), Dtype::F64));
    }
    out.emplace_back("__step__", Tensor::full({1}, double(step), Dtype::F64));
    out.emplace_back("__config__", string_to_tensor(train_config_to_json(cfg)));
    if (!rng_state.empty()) out.emplace_back("__rng__", string_to_tensor(rng_state));
    return out;
}

struct CheckpointView {
    std::vector<std::pair<std::string, Tensor>> entries;
    const Tensor* find(const std::string& name) const {
        for (auto& [n, t] : entries)
            if (n == name) return &t;
        return nullptr;
    }
};

void copy_into(Tensor& dst, const Tensor& src, const std::string& name) {
    if (dst.shape() != src.shape() || dst.dtype() != src.dtype())
        throw ParseError("checkpoint: shape mismatch for '" + name + "'");
    if (dst.dtype() == Dtype::F32)
        std::memcpy(dst.mutable_data<float>(), src.data<float>(), dst.numel() * 4);
    else
        std::memcpy(dst.mutable_data<double>(), src.data<double>(), dst.numel() * 8);
}

}  // namespace

void save_model(const std::string& path, Model& model, const TrainConfig& cfg, int64_t step) {
    save_checkpoint(path, model_entries(model, cfg, step, nullptr, ""));
}

Model load_model(const std::string& path) {
    CheckpointView view{load_checkpoint(path)};
    const Tensor* cfg_t = view.find("__config__");
    if (!cfg_t) throw ParseError("load_model: checkpoint has no config snapshot");
    TrainConfig cfg = train_config_from_json(tensor_to_string(*cfg_t));
    std::mt19937 rng(cfg.seed);
    Model model = make_model(rng, cfg.model);
    for (auto& [name, t] : model.named_params()) {
        const Tensor* src = view.find(name);
        if (!src) throw ParseError("load_model: missing parameter '" + name + "'");
        copy_into(t, *src, name);
    }
    return model;
}

// ---- training ----

namespace {

double one_cycle_lr(double lr_max, int step, int total, double warmup_frac) {
    double s = total <= 1 ? 1.0 : double(step - 1) / double(total - 1);
    if (s < warmup_frac && warmup_frac > 0)
        return lr_max * (0.1 + 0.9 * s / warmup_frac);
    double d = warmup_frac >= 1.0 ? 1.0 : (s - warmup_frac) / (1.0 - warmup_frac);
    return lr_max * (1.0 - 0.95 * d);
}

std::string rng_to_string(const std::mt19937& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void rng_from_string(std::mt19937& rng, const std::string& s) {
    std::istringstream is(s);
    is >> rng;
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::vector<SequenceRecord>& corpus,
                  const std::string& out_dir, const std::string& resume_from) {
    if (corpus.empty()) throw ConfigError("train: empty corpus");
    if (config.batch_size < 1 || config.steps < 0 || config.bptt_window < 1)
        throw ConfigError("train: bad optimization settings");
    for (const auto& rec : corpus)
        if (int(rec.frames.size()) < 2) throw ConfigError("train: sequences need at least 2 frames");

    std::mt19937 rng(config.seed);
    Model model = make_model(rng, config.model);
    auto params = model.named_params();
    AdamState opt;
    opt.init(params);
    int start_step = 0;

    if (!resume_from.empty()) {
        CheckpointView view{load_checkpoint(resume_from)};
        for (size_t k = 0; k < params.size(); ++k) {
            const Tensor* p = view.find(params[k].first);
            const Tensor* ms = view.find("opt.m." + params[k].first);
            const Tensor* vs = view.find("opt.v." + params[k].first);
            if (!p || !ms || !vs)
                throw ParseError("train: resume checkpoint misses '" + params[k].first + "'");
            copy_into(params[k].second, *p, params[k].first);
            copy_into(opt.m[k], *ms, params[k].first);
            copy_into(opt.v[k], *vs, params[k].first);
        }
        if (const Tensor* t = view.find("opt.t")) opt.t = int64_t(t->value_at(0));
        if (const Tensor* s = view.find("__step__")) start_step = int(s->value_at(0));
        if (const Tensor* r = view.find("__rng__")) rng_from_string(rng, tensor_to_string(*r));
    }

    model.set_tracked(true);
    std::ofstream log_file;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        log_file.open(fs::path(out_dir) / "loss_log.csv", resume_from.empty()
                                                              ? std::ios::trunc
                                                              : std::ios::app);
        if (resume_from.empty()) log_file << "step,loss,epe\n";
    }

    TrainResult result;
    auto snapshot = [&](const std::string& name, int step) {
        if (out_dir.empty()) return std::string();
        std::string path = (fs::path(out_dir) / name).string();
        save_checkpoint(path, model_entries(model, config, step, &opt, rng_to_string(rng)));
        return path;
    };

    std::uniform_int_distribution<size_t> pick(0, corpus.size() - 1);
    int end_step = config.steps;
    if (config.stop_after_steps > 0)
        end_step = std::min(end_step, start_step + config.stop_after_steps);
    for (int step_i = start_step + 1; step_i <= end_step; ++step_i) {
        double loss_acc = 0;
        double epe_acc = 0;
        int epe_frames = 0;
        model.zero_grads();

        try {
            for (int b = 0; b < config.batch_size; ++b) {
                const SequenceRecord& rec = corpus[pick(rng)];
                int T = std::min<int>(int(rec.frames.size()), config.video_len);
                auto [state, out0] = init(rec.frames[0], model);
                std::vector<FrameLossInput> window;
                int frames_total = T - 1;
                auto flush = [&]() {
                    if (window.empty()) return;
                    Tensor loss = mul_scalar(sequence_loss(window, config.gamma, config.vis_weight),
                                             double(window.size()) / double(frames_total) /
                                                 double(config.batch_size));
                    loss_acc += loss.item();
                    backward(loss);
                    window.clear();
                    state.detach_all();
                };
                for (int t = 1; t < T; ++t) {
                    TrackOutput out = step(state, rec.frames[t], model, config.model.iters_train);
                    auto [gt_q, gt_vis_q] = downsample_gt(rec.gt_flow[t].data, rec.gt_vis[t]);
                    {
                        // final-iteration EPE at full-resolution pixel units
                        Tensor f = out.flow_q.detach();
                        int64_t hw = int64_t(f.dim(1)) * f.dim(2);
                        double s = 0;
                        for (int64_t i = 0; i < hw; ++i) {
                            double du = f.value_at(i) - gt_q.value_at(i);
                            double dv = f.value_at(hw + i) - gt_q.value_at(hw + i);
                            s += std::sqrt(du * du + dv * dv);
                        }
                        epe_acc += 4.0 * s / double(hw);
                        ++epe_frames;
                    }
                    window.push_back(
                        FrameLossInput{out.iter_flows_q, out.vis_logits_q, gt_q, gt_vis_q});
                    if (int(window.size()) >= config.bptt_window) flush();
                }
                flush();
            }

            if (!std::isfinite(loss_acc))
                throw DomainError("non-finite loss");
            double lr_now = one_cycle_lr(config.lr, step_i, config.steps, config.warmup_frac);
            opt.step(params, lr_now, config.clip_norm);
        } catch (const DomainError& e) {
            // Parameters are still those of the last finite step; keep them.
            snapshot("diverged.ckpt", step_i - 1);
            throw DomainError("train: diverged at step " + std::to_string(step_i) + " (" +
                              e.what() + ")" +
                              (out_dir.empty() ? "" : "; diagnostic checkpoint written"));
        }

        if (step_i % config.log_every == 0 || step_i == config.steps) {
            TrainLogEntry e{step_i, loss_acc, epe_frames ? epe_acc / epe_frames : 0.0};
            result.log.push_back(e);
            if (log_file) {
                log_file << e.step << "," << e.loss << "," << e.epe << "\n";
                log_file.flush();
            }
        }
        result.steps_completed = step_i;
    }

    snapshot("checkpoint.ckpt", result.steps_completed);
    result.model = std::move(model);
    return result;
}

// ---- evaluation / ablation ----

EvalSummary evaluate_last_frame(const Model& model, const std::vector<SequenceRecord>& corpus,
                                int iterations) {
    if (corpus.empty()) throw ConfigError("evaluate: empty corpus");
    EvalSummary sum;
    double vis_acc = 0, occ_acc = 0, oa_acc = 0;
    int n_vis = 0, n_occ = 0, n_oa = 0;
    for (const auto& rec : corpus) {
        auto outs = track_sequence(rec.frames, model, iterations);
        size_t last = outs.size() - 1;
        FlowMetrics m = flow_metrics(outs[last].flow.data, outs[last].vis.prob(),
                                     rec.gt_flow[last].data, rec.gt_vis[last]);
        sum.epe_all += m.epe_all;
        if (m.epe_vis) {
            vis_acc += *m.epe_vis;
            ++n_vis;
        }
        if (m.epe_occ) {
            occ_acc += *m.epe_occ;
            ++n_occ;
        }
        if (m.oa) {
            oa_acc += *m.oa;
            ++n_oa;
        }
    }
    sum.epe_all /= double(corpus.size());
    if (n_vis) sum.epe_vis = vis_acc / n_vis;
    if (n_occ) sum.epe_occ = occ_acc / n_occ;
    if (n_oa) sum.oa = oa_acc / n_oa;
    return sum;
}

std::vector<AblationResult> run_ablation_grid(const TrainConfig& base,
                                              const std::vector<AblationRow>& rows,
                                              const std::vector<SequenceRecord>& train_set,
                                              const std::vector<SequenceRecord>& test_set) {
    std::vector<AblationResult> results;
    for (const auto& row : rows) {
        TrainConfig cfg = base;
        cfg.model = row.model;
        TrainResult tr = train(cfg, train_set);
        results.push_back(
            AblationResult{row.name, evaluate_last_frame(tr.model, test_set, row.model.iters_eval)});
    }
    return results;
}

}  // namespace strack
