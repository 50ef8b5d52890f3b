#pragma once

#include <string>
#include <vector>

#include "strack/types.hpp"

namespace strack {

// Layered 2-D scene: textured rectangles/ellipses under constant velocity
// (optionally constant spin) over a static noise background, with exact
// long-range flow and visibility derived from the rigid motion.
struct SceneConfig {
    int height = 64;
    int width = 64;
    int frames = 24;
    int num_objects = 3;
    double min_size = 10.0;
    double max_size = 22.0;
    double min_speed = 0.5;
    double max_speed = 2.5;
    bool rotation = true;
    double max_spin = 0.15;  // rad/frame
    int noise_smooth = 2;    // texture blur passes
    uint32_t seed = 0;

    void validate() const;  // throws ConfigError
};

struct SequenceRecord {
    std::vector<Frame> frames;       // quantized to 8-bit levels
    std::vector<FlowField> gt_flow;  // full res, reference -> frame t
    std::vector<Tensor> gt_vis;      // 1×H×W of {0,1}
    SceneConfig config;
};

SequenceRecord generate(const SceneConfig& config);

// Directory layout: frames/%05d.ppm, flow/%05d.flo, vis/%05d.pgm,
// config.json. Round trips are exact (frames are already 8-bit quantized,
// flow is stored f32).
void save_sequence(const SequenceRecord& rec, const std::string& dir);
SequenceRecord load_sequence(const std::string& dir);

// Middlebury flow container: f32 magic 202021.25, i32 width, i32 height,
// interleaved f32 (u,v) row-major.
void write_flo(const std::string& path, const Tensor& flow);
Tensor read_flo(const std::string& path);

// Binary netpbm images; tensors hold [0,1] with 8-bit quantization.
void write_ppm(const std::string& path, const Tensor& rgb);
Tensor read_ppm(const std::string& path);
void write_pgm(const std::string& path, const Tensor& gray);
Tensor read_pgm(const std::string& path);

}  // namespace strack
