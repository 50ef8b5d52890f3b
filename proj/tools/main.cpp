// Command-line front end: dataset generation, training, streaming tracking,
// evaluation, and flow visualization.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "strack/metrics.hpp"
#include "strack/synth.hpp"
#include "strack/trainer.hpp"
#include "strack/viz.hpp"

namespace fs = std::filesystem;
using namespace strack;
using nlohmann::json;

namespace {

void write_manifest(const std::string& out_dir, const std::string& command, const json& config,
                    uint32_t seed) {
    fs::create_directories(out_dir);
    json m{{"command", command},
           {"config", config},
           {"seed", seed},
           {"version", kVersionString},
           {"output_dir", out_dir}};
    std::ofstream f(fs::path(out_dir) / "run_manifest.json");
    if (!f) throw IoError("cannot write manifest in " + out_dir);
    f << m.dump(2) << "\n";
}

std::string seq_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "seq_%03d", i);
    return buf;
}

std::vector<SequenceRecord> load_corpus(const std::string& dir) {
    if (!fs::is_directory(dir)) throw ConfigError("corpus directory not found: " + dir);
    std::vector<std::string> names;
    for (auto& e : fs::directory_iterator(dir))
        if (e.is_directory() && fs::exists(e.path() / "config.json")) names.push_back(e.path().string());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw ConfigError("no sequences found under " + dir);
    std::vector<SequenceRecord> corpus;
    for (auto& n : names) corpus.push_back(load_sequence(n));
    return corpus;
}

std::vector<Frame> load_frames_only(const std::string& dir) {
    fs::path frames_dir = fs::path(dir) / "frames";
    if (!fs::is_directory(frames_dir)) throw ConfigError("no frames/ directory under " + dir);
    std::vector<std::string> names;
    for (auto& e : fs::directory_iterator(frames_dir))
        if (e.path().extension() == ".ppm") names.push_back(e.path().string());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw ConfigError("no .ppm frames under " + dir);
    std::vector<Frame> frames;
    for (auto& n : names) frames.push_back(Frame{read_ppm(n)});
    return frames;
}

void apply_ablations(ModelConfig& cfg, const std::string& csv) {
    static const std::string valid =
        "memory_bank, sensory, query_projector, warm_hidden, warm_flow, warm_vis, seed_bank";
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        if (item == "memory_bank")
            cfg.memory_bank = false;
        else if (item == "sensory")
            cfg.sensory = false;
        else if (item == "query_projector")
            cfg.query_projector = false;
        else if (item == "warm_hidden")
            cfg.warm_hidden = false;
        else if (item == "warm_flow")
            cfg.warm_flow = false;
        else if (item == "warm_vis")
            cfg.warm_vis = false;
        else if (item == "seed_bank")
            cfg.seed_bank = false;
        else
            throw ConfigError("unknown ablation '" + item + "' (valid: " + valid + ")");
    }
}

// ---- gen ----

int run_gen(const std::string& out, int num, SceneConfig base, uint32_t seed) {
    base.validate();
    json cfg{{"num", num},       {"height", base.height},   {"width", base.width},
             {"frames", base.frames}, {"num_objects", base.num_objects}, {"seed", seed}};
    write_manifest(out, "gen", cfg, seed);
    for (int i = 0; i < num; ++i) {
        SceneConfig sc = base;
        sc.seed = seed + uint32_t(i);
        SequenceRecord rec = generate(sc);
        std::string dir = (fs::path(out) / seq_name(i)).string();
        save_sequence(rec, dir);
        std::cout << seq_name(i) << " seed=" << sc.seed << "\n";
    }
    return 0;
}

// ---- train ----

int run_train(const TrainConfig& cfg, const std::string& data, const std::string& out,
              const std::string& resume) {
    write_manifest(out, "train", json::parse(train_config_to_json(cfg)), cfg.seed);
    auto corpus = load_corpus(data);
    TrainResult res = train(cfg, corpus, out, resume);
    std::cout << "trained " << res.steps_completed << " steps";
    if (!res.log.empty())
        std::cout << ", final loss " << res.log.back().loss << ", epe " << res.log.back().epe;
    std::cout << "\ncheckpoint: " << (fs::path(out) / "checkpoint.ckpt").string() << "\n";
    return 0;
}

// ---- track ----

int run_track(const std::string& ckpt, const std::string& seq, const std::string& out, int iters,
              uint32_t seed) {
    Model model = load_model(ckpt);
    if (iters <= 0) iters = model.cfg.iters_eval;
    write_manifest(out, "track",
                   json{{"ckpt", ckpt}, {"seq", seq}, {"iters", iters}}, seed);
    auto frames = load_frames_only(seq);
    fs::create_directories(fs::path(out) / "flow");
    fs::create_directories(fs::path(out) / "vis");
    NoGradGuard ng;
    auto emit = [&](int t, const TrackOutput& o) {
        char name[16];
        std::snprintf(name, sizeof(name), "%05d", t);
        write_flo((fs::path(out) / "flow" / (std::string(name) + ".flo")).string(), o.flow.data);
        write_pgm((fs::path(out) / "vis" / (std::string(name) + ".pgm")).string(), o.vis.prob());
    };
    auto [state, first] = init(frames[0], model);
    emit(0, first);
    for (size_t t = 1; t < frames.size(); ++t) emit(int(t), step(state, frames[t], model, iters));
    std::cout << "tracked " << frames.size() << " frames -> " << out << "\n";
    return 0;
}

// ---- eval ----

struct SeqPaths {
    std::string pred, gt, name;
};

std::vector<SeqPaths> matched_sequences(const std::string& pred, const std::string& gt) {
    auto is_seq = [](const std::string& d) { return fs::is_directory(fs::path(d) / "flow"); };
    if (is_seq(pred) && is_seq(gt)) return {{pred, gt, "seq"}};
    std::vector<SeqPaths> out;
    if (!fs::is_directory(gt)) throw ConfigError("gt directory not found: " + gt);
    std::vector<std::string> names;
    for (auto& e : fs::directory_iterator(gt))
        if (e.is_directory() && is_seq(e.path().string())) names.push_back(e.path().filename());
    std::sort(names.begin(), names.end());
    for (auto& n : names) {
        std::string p = (fs::path(pred) / n).string();
        if (is_seq(p)) out.push_back({p, (fs::path(gt) / n).string(), n});
    }
    if (out.empty()) throw ConfigError("no matching prediction/ground-truth sequence pairs");
    return out;
}

int count_flo(const std::string& dir) {
    int n = 0;
    for (auto& e : fs::directory_iterator(fs::path(dir) / "flow"))
        if (e.path().extension() == ".flo") ++n;
    return n;
}

int run_eval(const std::string& pred, const std::string& gt, const std::string& queries_file) {
    auto pairs = matched_sequences(pred, gt);
    double agg_all = 0, agg_vis = 0, agg_occ = 0, agg_oa = 0, agg_last = 0;
    int n_vis = 0, n_occ = 0, n_oa = 0;
    double aj_acc = 0, delta_acc = 0, oat_acc = 0;
    int tap_n = 0;

    std::vector<std::pair<double, double>> queries;
    if (!queries_file.empty()) {
        std::ifstream qf(queries_file);
        if (!qf) throw ConfigError("cannot open queries file " + queries_file);
        double x, y;
        while (qf >> x >> y) queries.push_back({x, y});
        if (queries.empty()) throw ConfigError("queries file has no points");
    }

    for (auto& sp : pairs) {
        int tp = count_flo(sp.pred), tg = count_flo(sp.gt);
        if (tp != tg)
            throw ConfigError("frame count mismatch for " + sp.name + ": " + std::to_string(tp) +
                              " predictions vs " + std::to_string(tg) + " ground-truth");
        double s_all = 0, s_vis = 0, s_occ = 0, s_oa = 0, last_all = 0;
        int f_vis = 0, f_occ = 0, f_oa = 0, scored = 0;
        std::vector<Tensor> pf_stack, pv_stack, gf_stack, gv_stack;
        for (int t = 0; t < tg; ++t) {
            char name[16];
            std::snprintf(name, sizeof(name), "%05d", t);
            Tensor pf = read_flo((fs::path(sp.pred) / "flow" / (std::string(name) + ".flo")).string());
            Tensor gf = read_flo((fs::path(sp.gt) / "flow" / (std::string(name) + ".flo")).string());
            Tensor gv = read_pgm((fs::path(sp.gt) / "vis" / (std::string(name) + ".pgm")).string());
            Tensor pv;
            fs::path pvp = fs::path(sp.pred) / "vis" / (std::string(name) + ".pgm");
            if (fs::exists(pvp)) pv = read_pgm(pvp.string());
            if (!queries.empty()) {
                pf_stack.push_back(pf);
                pv_stack.push_back(pv.defined() ? pv : Tensor::ones({1, pf.dim(1), pf.dim(2)}));
                gf_stack.push_back(gf);
                gv_stack.push_back(gv);
            }
            if (t == 0) continue;  // the reference frame scores trivially
            FlowMetrics m = flow_metrics(pf, pv, gf, gv);
            ++scored;
            s_all += m.epe_all;
            if (m.epe_vis) {
                s_vis += *m.epe_vis;
                ++f_vis;
            }
            if (m.epe_occ) {
                s_occ += *m.epe_occ;
                ++f_occ;
            }
            if (m.oa) {
                s_oa += *m.oa;
                ++f_oa;
            }
            if (t == tg - 1) last_all = m.epe_all;
        }
        if (!scored) throw ConfigError("sequence " + sp.name + " has a single frame");
        std::cout << sp.name << ": epe_all=" << s_all / scored;
        if (f_vis) std::cout << " epe_vis=" << s_vis / f_vis;
        if (f_occ) std::cout << " epe_occ=" << s_occ / f_occ;
        if (f_oa) std::cout << " oa=" << s_oa / f_oa;
        std::cout << " epe_last=" << last_all << "\n";
        agg_all += s_all / scored;
        agg_last += last_all;
        if (f_vis) {
            agg_vis += s_vis / f_vis;
            ++n_vis;
        }
        if (f_occ) {
            agg_occ += s_occ / f_occ;
            ++n_occ;
        }
        if (f_oa) {
            agg_oa += s_oa / f_oa;
            ++n_oa;
        }

        if (!queries.empty()) {
            auto pred_tracks = dense_to_queries(pf_stack, pv_stack, queries);
            auto gt_tracks = dense_to_queries(gf_stack, gv_stack, queries);
            TapMetrics tm = tap_metrics(pred_tracks, gt_tracks);
            aj_acc += tm.aj;
            delta_acc += tm.delta_avg;
            oat_acc += tm.oa;
            ++tap_n;
        }
    }

    int n = int(pairs.size());
    std::cout << "aggregate over " << n << " sequence(s)\n";
    std::printf("epe,all,%.6f\n", agg_all / n);
    if (n_vis) std::printf("epe,vis,%.6f\n", agg_vis / n_vis);
    if (n_occ) std::printf("epe,occ,%.6f\n", agg_occ / n_occ);
    if (n_oa) std::printf("oa,all,%.6f\n", agg_oa / n_oa);
    std::printf("epe_last,all,%.6f\n", agg_last / n);
    if (tap_n) {
        std::printf("aj,all,%.6f\n", aj_acc / tap_n);
        std::printf("delta_avg,all,%.6f\n", delta_acc / tap_n);
        std::printf("oa_tap,all,%.6f\n", oat_acc / tap_n);
    }
    return 0;
}

// ---- viz ----

int run_viz(const std::string& flow_path, const std::string& vis_path, const std::string& out,
            double max_flow) {
    Tensor flow = read_flo(flow_path);
    Tensor img = flow_to_color(flow, max_flow);
    if (!vis_path.empty()) img = overlay_occlusion(img, read_pgm(vis_path));
    write_ppm(out, img);
    std::cout << "wrote " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"streaming dense point tracker"};
    app.require_subcommand(1);
    app.fallthrough(true);  // --seed/--threads may follow the subcommand

    uint32_t seed = 0;
    int threads = 1;
    app.add_option("--seed", seed, "global random seed")->capture_default_str();
    app.add_option("--threads", threads, "worker thread cap")->capture_default_str();

    // gen
    auto* gen = app.add_subcommand("gen", "generate synthetic sequences with ground truth");
    std::string gen_out;
    int gen_num = 4;
    SceneConfig sc;
    int gen_size = 0;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--num", gen_num, "number of sequences")->capture_default_str();
    gen->add_option("--size", gen_size, "square canvas size (sets height and width)");
    gen->add_option("--height", sc.height)->capture_default_str();
    gen->add_option("--width", sc.width)->capture_default_str();
    gen->add_option("--frames", sc.frames)->capture_default_str();
    gen->add_option("--objects", sc.num_objects)->capture_default_str();
    gen->add_option("--min-size", sc.min_size)->capture_default_str();
    gen->add_option("--max-size", sc.max_size)->capture_default_str();
    gen->add_option("--min-speed", sc.min_speed)->capture_default_str();
    gen->add_option("--max-speed", sc.max_speed)->capture_default_str();
    gen->add_flag("--rotation,!--no-rotation", sc.rotation, "spin objects")->capture_default_str();
    gen->add_option("--max-spin", sc.max_spin)->capture_default_str();

    // train
    auto* tr = app.add_subcommand("train", "train on a generated corpus");
    TrainConfig tc;
    std::string tr_data, tr_out, tr_resume, tr_ablate, tr_splat = "linear";
    tr->add_option("--data", tr_data, "corpus directory")->required();
    tr->add_option("--out", tr_out, "run output directory")->required();
    tr->add_option("--steps", tc.steps)->capture_default_str();
    tr->add_option("--lr", tc.lr)->capture_default_str();
    tr->add_option("--iters-N", tc.model.iters_train, "refinement iterations while training")
        ->capture_default_str();
    tr->add_option("--eval-iters", tc.model.iters_eval)->capture_default_str();
    tr->add_option("--mem-len", tc.model.mem_len, "memory bank length L")->capture_default_str();
    tr->add_option("--video-len", tc.video_len)->capture_default_str();
    tr->add_option("--bptt", tc.bptt_window)->capture_default_str();
    tr->add_option("--batch", tc.batch_size)->capture_default_str();
    tr->add_option("--gamma", tc.gamma)->capture_default_str();
    tr->add_option("--vis-weight", tc.vis_weight)->capture_default_str();
    tr->add_option("--clip", tc.clip_norm)->capture_default_str();
    tr->add_option("--log-every", tc.log_every)->capture_default_str();
    tr->add_option("--dim", tc.model.dim)->capture_default_str();
    tr->add_option("--d-context", tc.model.d_context)->capture_default_str();
    tr->add_option("--d-key", tc.model.d_key)->capture_default_str();
    tr->add_option("--d-sensory", tc.model.d_sensory)->capture_default_str();
    tr->add_option("--d-motion", tc.model.decoder.d_motion)->capture_default_str();
    tr->add_option("--d-hidden", tc.model.decoder.d_hidden)->capture_default_str();
    tr->add_option("--enc-stem", tc.model.enc_stem)->capture_default_str();
    tr->add_option("--enc-stage1", tc.model.enc_stage1)->capture_default_str();
    tr->add_option("--enc-stage2", tc.model.enc_stage2)->capture_default_str();
    tr->add_option("--corr-levels", tc.model.decoder.num_levels)->capture_default_str();
    tr->add_option("--corr-radius", tc.model.decoder.radius)->capture_default_str();
    tr->add_option("--splat-mode", tr_splat, "summation|average|linear|softmax")
        ->capture_default_str();
    tr->add_option("--ablate", tr_ablate, "comma list of toggles to disable");
    tr->add_option("--resume", tr_resume, "checkpoint to resume from");

    // track
    auto* tk = app.add_subcommand("track", "stream a sequence through a trained model");
    std::string tk_ckpt, tk_seq, tk_out;
    int tk_iters = 0;
    tk->add_option("--ckpt", tk_ckpt, "checkpoint file")->required();
    tk->add_option("--seq", tk_seq, "sequence directory (frames/*.ppm)")->required();
    tk->add_option("--out", tk_out, "output directory")->required();
    tk->add_option("--iters-N", tk_iters, "refinement iterations (default: checkpoint setting)");

    // eval
    auto* ev = app.add_subcommand("eval", "score predictions against ground truth");
    std::string ev_pred, ev_gt, ev_queries;
    ev->add_option("--pred", ev_pred, "prediction directory")->required();
    ev->add_option("--gt", ev_gt, "ground-truth directory")->required();
    ev->add_option("--queries", ev_queries, "text file of 'x y' first-frame points");

    // viz
    auto* vz = app.add_subcommand("viz", "render a .flo file with the flow color wheel");
    std::string vz_flow, vz_vis, vz_out;
    double vz_max = 0.0;
    vz->add_option("--flow", vz_flow, ".flo input")->required();
    vz->add_option("--vis", vz_vis, "optional .pgm visibility for the striped overlay");
    vz->add_option("--out", vz_out, "output .ppm")->required();
    vz->add_option("--max-flow", vz_max, "normalization magnitude (default: per-image max)");

    try {
        app.parse(argc, argv);
        set_thread_count(threads);
        if (gen->parsed()) {
            if (gen_size > 0) sc.height = sc.width = gen_size;
            sc.seed = seed;
            return run_gen(gen_out, gen_num, sc, seed);
        }
        if (tr->parsed()) {
            tc.seed = seed;
            tc.model.splat_mode = splat_mode_from_name(tr_splat);
            apply_ablations(tc.model, tr_ablate);
            return run_train(tc, tr_data, tr_out, tr_resume);
        }
        if (tk->parsed()) return run_track(tk_ckpt, tk_seq, tk_out, tk_iters, seed);
        if (ev->parsed()) return run_eval(ev_pred, ev_gt, ev_queries);
        if (vz->parsed()) return run_viz(vz_flow, vz_vis, vz_out, vz_max);
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
