#include "evmf/backbones.hpp"

#include <cmath>
#include <stdexcept>

namespace evmf {

int dense_output_channels(const DenseBackboneConfig& cfg) {
    int ch = cfg.stem_channels;
    for (size_t b = 0; b < cfg.blocks.size(); ++b) {
        ch += cfg.blocks[b].first * cfg.blocks[b].second;
        if (b + 1 < cfg.blocks.size())
            ch = static_cast<int>(std::floor(ch * cfg.transition_compression));
    }
    return ch;
}

DenseBackboneParams DenseBackboneParams::make(ParamRegistry& reg, Rng& rng,
                                              const std::string& name, int in_channels,
                                              const DenseBackboneConfig& cfg) {
    if (cfg.blocks.empty())
        throw std::invalid_argument("dense backbone: at least one block required");
    for (const auto& [layers, growth] : cfg.blocks)
        if (layers < 1 || growth < 1)
            throw std::invalid_argument("dense backbone: layers and growth must be >= 1");
    if (cfg.transition_compression <= 0 || cfg.transition_compression > 1)
        throw std::invalid_argument("dense backbone: compression must be in (0,1]");
    DenseBackboneParams p;
    p.cfg = cfg;
    p.stem_w = reg.add(name + ".stem.w", {cfg.stem_channels, in_channels, 3, 3},
                       Init::uniform_fan_in, rng, in_channels * 9);
    p.stem_b = reg.add(name + ".stem.b", {cfg.stem_channels}, Init::zeros, rng);
    int ch = cfg.stem_channels;
    for (size_t b = 0; b < cfg.blocks.size(); ++b) {
        const auto [layers, growth] = cfg.blocks[b];
        std::vector<Layer> block;
        for (int l = 0; l < layers; ++l) {
            const std::string ln =
                name + ".block" + std::to_string(b) + ".layer" + std::to_string(l);
            Layer lay;
            lay.w = reg.add(ln + ".w", {growth, ch, 3, 3}, Init::uniform_fan_in, rng, ch * 9);
            lay.b = reg.add(ln + ".b", {growth}, Init::zeros, rng);
            block.push_back(lay);
            ch += growth;
        }
        p.block_layers.push_back(std::move(block));
        if (b + 1 < cfg.blocks.size()) {
            const int out_ch = static_cast<int>(std::floor(ch * cfg.transition_compression));
            const std::string tn = name + ".transition" + std::to_string(b);
            Layer t;
            t.w = reg.add(tn + ".w", {out_ch, ch, 1, 1}, Init::uniform_fan_in, rng, ch);
            t.b = reg.add(tn + ".b", {out_ch}, Init::zeros, rng);
            p.transitions.push_back(t);
            ch = out_ch;
        }
    }
    return p;
}

Tensor dense_forward(const Tensor& image, const DenseBackboneParams& p) {
    if (image.rank() != 4)
        throw std::invalid_argument("dense_forward expects [B,C,H,W]");
    if (image.dim(2) < 8 || image.dim(3) < 8)
        throw std::invalid_argument("dense_forward: extents must be >= 8, got " +
                                    shape_str(image.shape()));
    // the stem halves and each transition halves again
    const int shrink = 2 << (p.cfg.blocks.size() - 1);
    if (image.dim(2) % shrink != 0 || image.dim(3) % shrink != 0)
        throw std::invalid_argument("dense_forward: extents must be divisible by " +
                                    std::to_string(shrink));
    Tensor x = relu(conv2d(image, p.stem_w, p.stem_b, 2, 1));
    for (size_t b = 0; b < p.block_layers.size(); ++b) {
        for (const auto& lay : p.block_layers[b]) {
            Tensor grown = relu(conv2d(x, lay.w, lay.b, 1, 1));
            x = concat({x, grown}, 1);
        }
        if (b < p.transitions.size()) {
            x = relu(conv2d(x, p.transitions[b].w, p.transitions[b].b, 1, 0));
            x = avg_pool2d(x, 2);
        }
    }
    return x;
}

UNetBackboneParams UNetBackboneParams::make(ParamRegistry& reg, Rng& rng,
                                            const std::string& name, int in_channels,
                                            const UNetBackboneConfig& cfg) {
    if (cfg.depth < 1) throw std::invalid_argument("unet: depth must be >= 1");
    if (cfg.base_channels < 1) throw std::invalid_argument("unet: base_channels must be >= 1");
    UNetBackboneParams p;
    p.cfg = cfg;
    auto make_conv = [&](const std::string& n, int in, int out) {
        Conv c;
        c.w = reg.add(n + ".w", {out, in, 3, 3}, Init::uniform_fan_in, rng, in * 9);
        c.b = reg.add(n + ".b", {out}, Init::zeros, rng);
        return c;
    };
    int ch = in_channels;
    for (int d = 0; d < cfg.depth; ++d) {
        const int out = cfg.base_channels << d;
        const std::string n = name + ".enc" + std::to_string(d);
        p.enc.push_back({make_conv(n + ".conv0", ch, out), make_conv(n + ".conv1", out, out)});
        ch = out;
    }
    const int bot = cfg.base_channels << cfg.depth;
    p.bottleneck = {make_conv(name + ".bottleneck.conv0", ch, bot),
                    make_conv(name + ".bottleneck.conv1", bot, bot)};
    ch = bot;
    for (int d = cfg.depth - 1; d >= 0; --d) {
        const int out = cfg.base_channels << d;
        const std::string n = name + ".dec" + std::to_string(d);
        // upsampled carries `ch`, the skip carries `out`
        p.dec.push_back({make_conv(n + ".conv0", ch + out, out), make_conv(n + ".conv1", out, out)});
        ch = out;
    }
    return p;
}

Tensor unet_forward(const Tensor& image, const UNetBackboneParams& p) {
    if (image.rank() != 4)
        throw std::invalid_argument("unet_forward expects [B,C,H,W]");
    const int div = 1 << p.cfg.depth;
    if (image.dim(2) % div != 0 || image.dim(3) % div != 0)
        throw std::invalid_argument("unet_forward: extents " + shape_str(image.shape()) +
                                    " not divisible by 2^depth = " + std::to_string(div));
    std::vector<Tensor> skips;
    Tensor x = image;
    for (const auto& level : p.enc) {
        x = relu(conv2d(x, level[0].w, level[0].b, 1, 1));
        x = relu(conv2d(x, level[1].w, level[1].b, 1, 1));
        skips.push_back(x);
        x = max_pool2d(x, 2);
    }
    x = relu(conv2d(x, p.bottleneck[0].w, p.bottleneck[0].b, 1, 1));
    x = relu(conv2d(x, p.bottleneck[1].w, p.bottleneck[1].b, 1, 1));
    for (size_t i = 0; i < p.dec.size(); ++i) {
        Tensor up = upsample_nearest2d(x, 2);
        const Tensor& skip = skips[skips.size() - 1 - i];
        if (up.dim(2) != skip.dim(2) || up.dim(3) != skip.dim(3))
            throw std::runtime_error("unet_forward: skip extents mismatch");
        x = concat({up, skip}, 1);
        x = relu(conv2d(x, p.dec[i][0].w, p.dec[i][0].b, 1, 1));
        x = relu(conv2d(x, p.dec[i][1].w, p.dec[i][1].b, 1, 1));
    }
    return x;
}

}  // namespace evmf
