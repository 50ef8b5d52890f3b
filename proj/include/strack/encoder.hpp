#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "strack/types.hpp"

namespace strack {

// Residual feature extractor at total stride 4: 7×7/2 stem, two residual
// blocks, a stride-2 transition block, two more blocks, 1×1 projection.
// The feature path uses instance norm; the context path runs norm-free and
// ends in a relu.
struct EncoderConfig {
    int stem_ch = 32;
    int stage1_ch = 48;
    int stage2_ch = 64;
    int out_ch = 64;
    bool norm = true;
    bool final_relu = false;
};

struct ConvLayer {
    Tensor w, b;
};

struct NormLayer {
    Tensor gamma, beta;
};

struct ResBlock {
    ConvLayer conv1, conv2;
    NormLayer n1, n2;
    bool has_down = false;
    ConvLayer down;
    NormLayer dn;
    int stride = 1;
};

struct EncoderParams {
    EncoderConfig cfg;
    ConvLayer stem;
    NormLayer stem_norm;
    ResBlock b1a, b1b, trans, b2a, b2b;
    ConvLayer proj;
};

EncoderParams make_encoder(std::mt19937& rng, const EncoderConfig& cfg, Dtype dt = Dtype::F32);

// 3×H×W frame -> out_ch×⌈H/4⌉×⌈W/4⌉ features. Frames whose sides are not
// divisible by 4 are reflection-padded up first.
Tensor encode_frame(const Frame& frame, const EncoderParams& p);

// Named parameter registration (checkpoint / optimizer order).
void collect_params(EncoderParams& p, const std::string& prefix,
                    std::vector<std::pair<std::string, Tensor>>& out);

}  // namespace strack
