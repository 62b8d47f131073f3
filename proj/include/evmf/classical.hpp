#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace evmf {

// Grayscale raster, intensities in [0,1].
struct GrayImage {
    int height = 0, width = 0;
    std::vector<double> pixels;  // row-major

    double at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
    double& at(int r, int c) { return pixels[static_cast<size_t>(r) * width + c]; }
};

enum class GlcmAngle { deg0, deg45, deg90, deg135 };

struct GlcmConfig {
    int levels = 16;
    std::vector<int> distances = {1};
    std::vector<GlcmAngle> angles = {GlcmAngle::deg0, GlcmAngle::deg45,
                                     GlcmAngle::deg90, GlcmAngle::deg135};
    bool symmetric = true;
};

enum class LbpMode { full, uniform };

struct LbpConfig {
    int points = 8;
    double radius = 1.0;
    LbpMode mode = LbpMode::uniform;
};

struct FeatureConfig {
    GlcmConfig glcm;
    LbpConfig lbp;
    // slot count of the resulting vector (4 Haralick stats per pair + bins)
    int dimension() const;
};

struct RawFeatureVector {
    std::vector<double> values;
    std::vector<std::string> layout;  // one descriptor per slot
};

struct GlcmStats {
    double contrast = 0, correlation = 0, energy = 0, homogeneity = 0;
};

// C=1 passthrough, C=3 luma 0.299R+0.587G+0.114B clamped to [0,1].
// `hwc` is H*W*C interleaved.
GrayImage to_grayscale(int height, int width, int channels, const std::vector<double>& hwc);

// Displacement conventions (row delta, col delta) per distance d:
//   0 deg -> (0, d); 45 deg -> (-d, d); 90 deg -> (-d, 0); 135 deg -> (-d, -d).
// Pixels quantize as floor(g*levels) clamped to levels-1; counts over ordered
// in-bounds pairs; symmetric adds the transpose; normalized to sum 1.
std::vector<double> compute_glcm(const GrayImage& img, int distance, GlcmAngle angle,
                                 int levels, bool symmetric);

// Requires a normalized matrix (sum 1 within 1e-9). Correlation is defined 0
// when the marginal deviations vanish (variance product < 1e-12).
GlcmStats glcm_features(const std::vector<double>& glcm, int levels);

// Circular neighborhood codes; neighbor k sits at angle 2*pi*k/P, offset
// (dr,dc) = (R*sin, R*cos) with bilinear interpolation; bit set iff
// neighbor >= center. Codes exist only for interior pixels.
struct LbpCodes {
    int height = 0, width = 0;  // interior extents
    std::vector<uint32_t> codes;
};
LbpCodes compute_lbp(const GrayImage& img, int points, double radius);

// uniform mode: codes with <= 2 circular transitions bin by popcount
// (P+1 bins) plus one catch-all; full mode: 2^P bins. Histogram sums to 1.
std::vector<double> lbp_histogram(const LbpCodes& codes, int points, LbpMode mode);

RawFeatureVector extract_raw_features(const GrayImage& img, const FeatureConfig& cfg);

// slot names alone, derivable from the config without an image
std::vector<std::string> feature_layout(const FeatureConfig& cfg);

std::string glcm_angle_name(GlcmAngle a);

// CSV with a header row of slot names followed by one row of values.
std::string feature_vector_csv(const RawFeatureVector& fv);

}  // namespace evmf
