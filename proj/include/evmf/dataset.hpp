#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "evmf/classical.hpp"

namespace evmf {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Interleaved 8-bit-derived raster, values already scaled to [0,1].
struct ImageBuffer {
    int height = 0, width = 0, channels = 0;  // channels 1 or 3
    std::vector<double> hwc;
};

ImageBuffer read_image(const std::string& path);          // P5 PGM or 8-bit PNG
void write_pgm(const std::string& path, int height, int width,
               const std::vector<uint8_t>& bytes);

ImageBuffer resize_bilinear(const ImageBuffer& img, int out_h, int out_w);

// One prepared sample: the backbone input (channel-major, resized) plus the
// resized grayscale companion for the handcrafted-feature path. Grayscale is
// taken from the original raster before any resizing.
struct Sample {
    std::string path;
    int label = 0;
    int channels = 0, height = 0, width = 0;
    std::vector<double> chw;
    GrayImage gray;
    std::vector<double> f_raw;  // precomputed handcrafted features
};

struct Dataset {
    std::vector<std::string> class_names;  // lexicographic directory order
    std::vector<Sample> samples;
    int num_classes() const { return static_cast<int>(class_names.size()); }
};

// Root directory layout: one subdirectory per class holding .pgm/.png files.
// Images convert to `channels` (1 or 3) and resize to height x width; the
// handcrafted features use `fcfg`.
Dataset load_dataset(const std::string& root, int height, int width, int channels,
                     const FeatureConfig& fcfg);

// Seeded geometric-texture generator standing in for real data: class 0
// stripes, class 1 blobs, class 2 checkers, each at varying frequency/size
// plus mild noise. Writes P5 PGM files under <out>/<split>/<class>/.
struct SynthConfig {
    int size = 32;
    int train_per_class = 30;
    int test_per_class = 10;
    uint64_t seed = 7;
};

void generate_synthetic_dataset(const std::string& out_dir, const SynthConfig& cfg);

}  // namespace evmf
