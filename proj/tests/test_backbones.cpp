#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "evmf/backbones.hpp"
#include "evmf/rng.hpp"

using namespace evmf;

static Tensor rand_tensor(Shape s, Rng& rng, bool rg = false) {
    std::vector<double> v(static_cast<size_t>(shape_numel(s)));
    for (double& x : v) x = rng.uniform(-1, 1);
    return Tensor::from(std::move(s), std::move(v), rg);
}

// closed-form channel arithmetic, written independently of the library
static int channels_oracle(int stem, const std::vector<std::pair<int, int>>& blocks,
                           double comp) {
    int ch = stem;
    for (size_t i = 0; i < blocks.size(); ++i) {
        ch += blocks[i].first * blocks[i].second;
        if (i + 1 < blocks.size()) ch = static_cast<int>(ch * comp);
    }
    return ch;
}

TEST_CASE("dense default config shape and channel count") {
    Rng rng(1);
    ParamRegistry reg;
    DenseBackboneConfig cfg;  // stem 16, blocks {2x8, 2x8}, compression 0.5
    DenseBackboneParams p = DenseBackboneParams::make(reg, rng, "dense", 1, cfg);
    Tensor img = rand_tensor({1, 1, 32, 32}, rng);
    Tensor out = dense_forward(img, p);
    CHECK(out.shape() == Shape{1, 32, 8, 8});
    CHECK(dense_output_channels(cfg) == 32);
}

TEST_CASE("dense channel arithmetic matches oracle for arbitrary configs") {
    Rng rng(2);
    for (int it = 0; it < 20; ++it) {
        DenseBackboneConfig cfg;
        cfg.stem_channels = 2 + static_cast<int>(rng.next_below(14));
        const int nblocks = 1 + static_cast<int>(rng.next_below(3));
        cfg.blocks.clear();
        for (int b = 0; b < nblocks; ++b)
            cfg.blocks.push_back({1 + static_cast<int>(rng.next_below(3)),
                                  1 + static_cast<int>(rng.next_below(8))});
        cfg.transition_compression = rng.uniform(0.3, 1.0);
        CHECK(dense_output_channels(cfg) ==
              channels_oracle(cfg.stem_channels, cfg.blocks, cfg.transition_compression));
    }
}

TEST_CASE("dense channel count realized by the forward pass") {
    Rng rng(3);
    ParamRegistry reg;
    DenseBackboneConfig cfg;
    cfg.stem_channels = 5;
    cfg.blocks = {{1, 3}, {2, 2}};
    cfg.transition_compression = 0.7;
    DenseBackboneParams p = DenseBackboneParams::make(reg, rng, "dense", 3, cfg);
    Tensor img = rand_tensor({1, 3, 16, 16}, rng);
    Tensor out = dense_forward(img, p);
    CHECK(out.dim(1) == dense_output_channels(cfg));
    CHECK(out.dim(2) == 4);
}

TEST_CASE("dense zero weights give a zero feature map") {
    Rng rng(4);
    ParamRegistry reg;
    DenseBackboneParams p = DenseBackboneParams::make(reg, rng, "dense", 1,
                                                      DenseBackboneConfig{});
    for (auto& item : reg.items())
        std::fill(item.tensor.values().begin(), item.tensor.values().end(), 0.0);
    Tensor img = rand_tensor({1, 1, 32, 32}, rng);
    Tensor out = dense_forward(img, p);
    for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("dense batch axis preserved") {
    Rng rng(5);
    ParamRegistry reg;
    DenseBackboneParams p = DenseBackboneParams::make(reg, rng, "dense", 1,
                                                      DenseBackboneConfig{});
    Tensor img = rand_tensor({3, 1, 32, 32}, rng);
    CHECK(dense_forward(img, p).dim(0) == 3);
}

TEST_CASE("dense rejects too-small extents") {
    Rng rng(6);
    ParamRegistry reg;
    DenseBackboneParams p = DenseBackboneParams::make(reg, rng, "dense", 1,
                                                      DenseBackboneConfig{});
    Tensor img = rand_tensor({1, 1, 4, 4}, rng);
    CHECK_THROWS_AS(dense_forward(img, p), std::invalid_argument);
}

TEST_CASE("unet default config output shape") {
    Rng rng(7);
    ParamRegistry reg;
    UNetBackboneConfig cfg;  // depth 2, base 8
    UNetBackboneParams p = UNetBackboneParams::make(reg, rng, "unet", 1, cfg);
    Tensor img = rand_tensor({1, 1, 32, 32}, rng);
    Tensor out = unet_forward(img, p);
    CHECK(out.shape() == Shape{1, 8, 32, 32});
}

TEST_CASE("unet zero weights give a zero output") {
    Rng rng(8);
    ParamRegistry reg;
    UNetBackboneParams p = UNetBackboneParams::make(reg, rng, "unet", 1,
                                                    UNetBackboneConfig{});
    for (auto& item : reg.items())
        std::fill(item.tensor.values().begin(), item.tensor.values().end(), 0.0);
    Tensor img = rand_tensor({1, 1, 16, 16}, rng);
    Tensor out = unet_forward(img, p);
    for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("unet divisibility violation raises") {
    Rng rng(9);
    ParamRegistry reg;
    UNetBackboneConfig cfg;
    cfg.depth = 3;
    UNetBackboneParams p = UNetBackboneParams::make(reg, rng, "unet", 1, cfg);
    Tensor img = rand_tensor({1, 1, 12, 12}, rng);  // 12 not divisible by 8
    CHECK_THROWS_AS(unet_forward(img, p), std::invalid_argument);
}

TEST_CASE("unet batch axis preserved and depth-1 works") {
    Rng rng(10);
    ParamRegistry reg;
    UNetBackboneConfig cfg;
    cfg.depth = 1;
    cfg.base_channels = 3;
    UNetBackboneParams p = UNetBackboneParams::make(reg, rng, "unet", 2, cfg);
    Tensor img = rand_tensor({2, 2, 8, 8}, rng);
    Tensor out = unet_forward(img, p);
    CHECK(out.shape() == Shape{2, 3, 8, 8});
}

TEST_CASE("gradient check through each backbone at tiny config") {
    Rng rng(11);

    ParamRegistry dreg;
    DenseBackboneConfig dcfg;
    dcfg.stem_channels = 2;
    dcfg.blocks = {{1, 2}, {1, 2}};
    dcfg.transition_compression = 0.5;
    DenseBackboneParams dp = DenseBackboneParams::make(dreg, rng, "dense", 1, dcfg);
    CHECK(dreg.total_elements() < 2000);
    Tensor dimg = rand_tensor({1, 1, 8, 8}, rng, true);
    auto fd = [&]() {
        Tensor out = dense_forward(dimg, dp);
        return sum_all(mul(out, out));
    };
    std::vector<GradCheckInput> dparams;
    for (auto& p : dreg.items()) dparams.push_back({p.name, p.tensor});
    dparams.push_back({"img", dimg});
    CHECK(grad_check(fd, dparams, 1e-5) < 1e-4);

    ParamRegistry ureg;
    UNetBackboneConfig ucfg;
    ucfg.depth = 1;
    ucfg.base_channels = 2;
    UNetBackboneParams up = UNetBackboneParams::make(ureg, rng, "unet", 1, ucfg);
    CHECK(ureg.total_elements() < 2000);
    Tensor uimg = rand_tensor({1, 1, 4, 4}, rng, true);
    auto fu = [&]() {
        Tensor out = unet_forward(uimg, up);
        return sum_all(mul(out, out));
    };
    std::vector<GradCheckInput> uparams;
    for (auto& p : ureg.items()) uparams.push_back({p.name, p.tensor});
    uparams.push_back({"img", uimg});
    CHECK(grad_check(fu, uparams, 1e-5) < 1e-4);
}
