#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "strack/synth.hpp"
#include "testing_util.hpp"

using namespace strack;
using namespace strack::testing;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code;
    std::string output;
};

RunResult run_cli(const std::string& args) {
    static int counter = 0;
    fs::path log = fs::temp_directory_path() / ("strack_cli_out_" + std::to_string(::getpid()) +
                                                "_" + std::to_string(counter++));
    std::string cmd = std::string(CLI_BINARY) + " " + args + " > " + log.string() + " 2>&1";
    int status = std::system(cmd.c_str());
    int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream f(log);
    std::string output((std::istreambuf_iterator<char>(f)), {});
    fs::remove(log);
    return {code, output};
}

std::string file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), {});
}

const fs::path g_root = fs::temp_directory_path() / ("strack_cli_" + std::to_string(::getpid()));

// Tiny corpus + checkpoint shared by the ordered test cases below.
std::string tiny_flags() {
    return "--dim 8 --d-context 6 --d-key 8 --d-sensory 4 --d-motion 8 --d-hidden 6 "
           "--enc-stem 4 --enc-stage1 4 --enc-stage2 8 --corr-levels 2 --corr-radius 1";
}

}  // namespace

TEST_CASE("gen: determinism, manifest, per-sequence seeds, usage errors") {
    fs::remove_all(g_root);
    fs::create_directories(g_root);
    auto a = run_cli("gen --out " + (g_root / "data_a").string() +
                     " --num 2 --size 48 --frames 5 --objects 2 --seed 7");
    CHECK(a.code == 0);
    CHECK(a.output.find("seq_000 seed=7") != std::string::npos);
    CHECK(a.output.find("seq_001 seed=8") != std::string::npos);
    CHECK(fs::exists(g_root / "data_a" / "run_manifest.json"));

    auto b = run_cli("gen --out " + (g_root / "data_b").string() +
                     " --num 2 --size 48 --frames 5 --objects 2 --seed 7");
    CHECK(b.code == 0);
    for (const char* rel : {"seq_000/frames/00003.ppm", "seq_000/flow/00004.flo",
                            "seq_001/vis/00002.pgm", "seq_000/config.json"})
        CHECK(file_bytes(g_root / "data_a" / rel) == file_bytes(g_root / "data_b" / rel));

    CHECK(run_cli("gen --out " + (g_root / "bad").string() + " --frames 0").code == 2);
    CHECK(run_cli("gen").code == 2);          // missing required --out
    CHECK(run_cli("bogus-subcommand").code == 2);
}

TEST_CASE("train: smoke run, artifacts, ablation validation") {
    auto r = run_cli("train --data " + (g_root / "data_a").string() + " --out " +
                     (g_root / "run").string() + " --steps 4 --log-every 2 --video-len 4 " +
                     tiny_flags() + " --iters-N 2 --seed 3");
    CHECK(r.code == 0);
    fs::path ckpt = g_root / "run" / "checkpoint.ckpt";
    REQUIRE(fs::exists(ckpt));
    CHECK(file_bytes(ckpt).substr(0, 8) == "SPOTCKPT");
    CHECK(fs::exists(g_root / "run" / "loss_log.csv"));
    CHECK(fs::exists(g_root / "run" / "run_manifest.json"));

    auto bad = run_cli("train --data " + (g_root / "data_a").string() + " --out " +
                       (g_root / "run_bad").string() + " --steps 1 --ablate bogus_toggle");
    CHECK(bad.code == 2);
    CHECK(bad.output.find("memory_bank") != std::string::npos);  // lists valid toggles

    auto ablated = run_cli("train --data " + (g_root / "data_a").string() + " --out " +
                           (g_root / "run_ab").string() + " --steps 2 --video-len 3 " +
                           tiny_flags() + " --iters-N 2 --ablate memory_bank,sensory");
    CHECK(ablated.code == 0);
}

TEST_CASE("track: streaming outputs, single frame identity, causality") {
    fs::path ckpt = g_root / "run" / "checkpoint.ckpt";
    REQUIRE(fs::exists(ckpt));

    auto r = run_cli("track --ckpt " + ckpt.string() + " --seq " +
                     (g_root / "data_a" / "seq_000").string() + " --out " +
                     (g_root / "pred_full").string() + " --iters-N 2");
    CHECK(r.code == 0);
    for (int t = 0; t < 5; ++t) {
        char name[16];
        std::snprintf(name, sizeof(name), "%05d", t);
        CHECK(fs::exists(g_root / "pred_full" / "flow" / (std::string(name) + ".flo")));
        CHECK(fs::exists(g_root / "pred_full" / "vis" / (std::string(name) + ".pgm")));
    }
    // streaming: write times never decrease with the frame index
    for (int t = 1; t < 5; ++t) {
        char a[16], b[16];
        std::snprintf(a, sizeof(a), "%05d.flo", t - 1);
        std::snprintf(b, sizeof(b), "%05d.flo", t);
        CHECK(fs::last_write_time(g_root / "pred_full" / "flow" / a) <=
              fs::last_write_time(g_root / "pred_full" / "flow" / b));
    }

    // prefix sequence: common outputs byte-identical to the full run
    fs::path prefix_seq = g_root / "prefix_seq" / "frames";
    fs::create_directories(prefix_seq);
    for (int t = 0; t < 3; ++t) {
        char name[16];
        std::snprintf(name, sizeof(name), "%05d.ppm", t);
        fs::copy_file(g_root / "data_a" / "seq_000" / "frames" / name, prefix_seq / name);
    }
    auto p = run_cli("track --ckpt " + ckpt.string() + " --seq " +
                     (g_root / "prefix_seq").string() + " --out " +
                     (g_root / "pred_prefix").string() + " --iters-N 2");
    CHECK(p.code == 0);
    for (int t = 0; t < 3; ++t) {
        char name[16];
        std::snprintf(name, sizeof(name), "%05d", t);
        CHECK(file_bytes(g_root / "pred_prefix" / "flow" / (std::string(name) + ".flo")) ==
              file_bytes(g_root / "pred_full" / "flow" / (std::string(name) + ".flo")));
        CHECK(file_bytes(g_root / "pred_prefix" / "vis" / (std::string(name) + ".pgm")) ==
              file_bytes(g_root / "pred_full" / "vis" / (std::string(name) + ".pgm")));
    }

    // a single-frame input produces the identity flow
    fs::path single = g_root / "single_seq" / "frames";
    fs::create_directories(single);
    fs::copy_file(g_root / "data_a" / "seq_000" / "frames" / "00000.ppm", single / "00000.ppm");
    auto s = run_cli("track --ckpt " + ckpt.string() + " --seq " + (g_root / "single_seq").string() +
                     " --out " + (g_root / "pred_single").string());
    CHECK(s.code == 0);
    Tensor flow = read_flo((g_root / "pred_single" / "flow" / "00000.flo").string());
    for (int64_t i = 0; i < flow.numel(); ++i) CHECK(flow.value_at(i) == 0.0);
}

TEST_CASE("eval: perfect prediction, machine lines, constant-offset fixture") {
    fs::path gt = g_root / "data_a" / "seq_000";
    auto perfect = run_cli("eval --pred " + gt.string() + " --gt " + gt.string());
    CHECK(perfect.code == 0);
    CHECK(perfect.output.find("epe,all,0.000000") != std::string::npos);
    CHECK(perfect.output.find("oa,all,1.000000") != std::string::npos);

    // machine-readable lines parse as metric,split,value
    std::istringstream lines(perfect.output);
    std::string line;
    int machine = 0;
    while (std::getline(lines, line)) {
        auto c1 = line.find(',');
        auto c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) continue;
        ++machine;
        CHECK_NOTHROW((void)std::stod(line.substr(c2 + 1)));
    }
    CHECK(machine >= 4);

    // shift every flow vector by (3,4): epe becomes exactly 5
    fs::path off = g_root / "pred_offset";
    fs::create_directories(off / "flow");
    for (int t = 0; t < 5; ++t) {
        char name[16];
        std::snprintf(name, sizeof(name), "%05d.flo", t);
        Tensor f = read_flo((gt / "flow" / name).string());
        int64_t hw = f.numel() / 2;
        for (int64_t i = 0; i < hw; ++i) {
            f.set_value_at(i, f.value_at(i) + 3.0);
            f.set_value_at(hw + i, f.value_at(hw + i) + 4.0);
        }
        write_flo((off / "flow" / name).string(), f);
    }
    auto shifted = run_cli("eval --pred " + off.string() + " --gt " + gt.string());
    CHECK(shifted.code == 0);
    CHECK(shifted.output.find("epe,all,5.000000") != std::string::npos);

    // query-point metrics come out when a points file is given
    fs::path qfile = g_root / "queries.txt";
    std::ofstream(qfile) << "10 12\n24 30\n";
    auto tap = run_cli("eval --pred " + gt.string() + " --gt " + gt.string() + " --queries " +
                       qfile.string());
    CHECK(tap.code == 0);
    CHECK(tap.output.find("aj,all,1.000000") != std::string::npos);
    CHECK(tap.output.find("delta_avg,all,1.000000") != std::string::npos);

    CHECK(run_cli("eval --pred /nonexistent --gt " + gt.string()).code == 2);
}

TEST_CASE("viz: neutral zero flow, deterministic bytes, occlusion overlay") {
    fs::path zflo = g_root / "zero.flo";
    write_flo(zflo.string(), Tensor::zeros({2, 16, 16}, Dtype::F32));
    auto r1 = run_cli("viz --flow " + zflo.string() + " --out " + (g_root / "z1.ppm").string());
    CHECK(r1.code == 0);
    Tensor img = read_ppm((g_root / "z1.ppm").string());
    // uniform: every pixel equals the first
    for (int c = 0; c < 3; ++c)
        for (int64_t i = 0; i < 256; ++i)
            CHECK(img.value_at(c * 256 + i) == img.value_at(c * 256));

    auto r2 = run_cli("viz --flow " + zflo.string() + " --out " + (g_root / "z2.ppm").string());
    CHECK(r2.code == 0);
    CHECK(file_bytes(g_root / "z1.ppm") == file_bytes(g_root / "z2.ppm"));

    // saturated single-direction flow is far from the neutral center color
    Tensor right = Tensor::zeros({2, 8, 8}, Dtype::F32);
    for (int i = 0; i < 64; ++i) right.set_value_at(i, 10.0);
    fs::path rflo = g_root / "right.flo";
    write_flo(rflo.string(), right);
    auto r3 = run_cli("viz --flow " + rflo.string() + " --out " + (g_root / "r.ppm").string());
    CHECK(r3.code == 0);
    Tensor rimg = read_ppm((g_root / "r.ppm").string());
    double dist = 0;
    for (int c = 0; c < 3; ++c) dist += std::abs(rimg.value_at(c * 64) - img.value_at(c * 256));
    CHECK(dist > 0.5);

    // overlay runs with a visibility mask
    fs::path vis = g_root / "vis.pgm";
    write_pgm(vis.string(), Tensor::zeros({1, 16, 16}, Dtype::F32));
    auto r4 = run_cli("viz --flow " + zflo.string() + " --vis " + vis.string() + " --out " +
                      (g_root / "ov.ppm").string());
    CHECK(r4.code == 0);

    fs::remove_all(g_root);
}
