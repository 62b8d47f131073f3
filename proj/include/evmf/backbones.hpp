#pragma once

#include <array>
#include <utility>
#include <vector>

#include "evmf/nn.hpp"

namespace evmf {

// Dense feature-reuse backbone at desk scale: stem conv (3x3, stride 2),
// dense blocks of conv+ReLU layers whose outputs concatenate onto the running
// feature stack, 1x1-conv transitions with 2x2 average pooling between
// blocks. No batch norm, so batch-size-1 runs stay bit-reproducible.
struct DenseBackboneConfig {
    int stem_channels = 16;
    std::vector<std::pair<int, int>> blocks = {{2, 8}, {2, 8}};  // (layers, growth)
    double transition_compression = 0.5;
};

// Channel count of the feature map produced for a given config.
int dense_output_channels(const DenseBackboneConfig& cfg);

struct DenseBackboneParams {
    DenseBackboneConfig cfg;
    Tensor stem_w, stem_b;
    struct Layer { Tensor w, b; };
    std::vector<std::vector<Layer>> block_layers;
    std::vector<Layer> transitions;  // between blocks (blocks-1 of them)
    static DenseBackboneParams make(ParamRegistry& reg, Rng& rng, const std::string& name,
                                    int in_channels, const DenseBackboneConfig& cfg);
};

// image [B,C,H,W], H,W >= 8. Output spatial extents shrink by 2 per
// transition plus the stride-2 stem.
Tensor dense_forward(const Tensor& image, const DenseBackboneParams& p);

// Encoder/decoder backbone with skip concatenation. Per level: conv-conv
// (3x3 + ReLU) then 2x2 max pool; decoder levels nearest-upsample, concat the
// matching encoder output, conv-conv back down. Output spatial extents equal
// the input; output channels = base_channels.
struct UNetBackboneConfig {
    int depth = 2;
    int base_channels = 8;
};

struct UNetBackboneParams {
    UNetBackboneConfig cfg;
    struct Conv { Tensor w, b; };
    std::vector<std::array<Conv, 2>> enc;  // depth levels
    std::array<Conv, 2> bottleneck;
    std::vector<std::array<Conv, 2>> dec;  // depth levels, deepest first
    static UNetBackboneParams make(ParamRegistry& reg, Rng& rng, const std::string& name,
                                   int in_channels, const UNetBackboneConfig& cfg);
};

// image [B,C,H,W] with H,W divisible by 2^depth.
Tensor unet_forward(const Tensor& image, const UNetBackboneParams& p);

}  // namespace evmf
