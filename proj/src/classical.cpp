#include "evmf/classical.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace evmf {

int FeatureConfig::dimension() const {
    const int pairs = static_cast<int>(glcm.distances.size() * glcm.angles.size());
    const int bins = lbp.mode == LbpMode::uniform ? lbp.points + 2 : (1 << lbp.points);
    return 4 * pairs + bins;
}

GrayImage to_grayscale(int height, int width, int channels,
                       const std::vector<double>& hwc) {
    if (channels != 1 && channels != 3)
        throw std::invalid_argument("to_grayscale: expected 1 or 3 channels, got " +
                                    std::to_string(channels));
    if (static_cast<int64_t>(hwc.size()) !=
        static_cast<int64_t>(height) * width * channels)
        throw std::invalid_argument("to_grayscale: buffer size mismatch");
    GrayImage g;
    g.height = height;
    g.width = width;
    g.pixels.resize(static_cast<size_t>(height) * width);
    if (channels == 1) {
        g.pixels = hwc;
    } else {
        for (int i = 0; i < height * width; ++i) {
            const double v = 0.299 * hwc[static_cast<size_t>(i) * 3 + 0] +
                             0.587 * hwc[static_cast<size_t>(i) * 3 + 1] +
                             0.114 * hwc[static_cast<size_t>(i) * 3 + 2];
            g.pixels[static_cast<size_t>(i)] = std::clamp(v, 0.0, 1.0);
        }
    }
    return g;
}

static void glcm_displacement(GlcmAngle a, int d, int& dr, int& dc) {
    switch (a) {
        case GlcmAngle::deg0: dr = 0; dc = d; break;
        case GlcmAngle::deg45: dr = -d; dc = d; break;
        case GlcmAngle::deg90: dr = -d; dc = 0; break;
        case GlcmAngle::deg135: dr = -d; dc = -d; break;
    }
}

static int quantize(double g, int levels) {
    int q = static_cast<int>(std::floor(g * levels));
    return std::clamp(q, 0, levels - 1);
}

std::vector<double> compute_glcm(const GrayImage& img, int distance, GlcmAngle angle,
                                 int levels, bool symmetric) {
    if (levels < 2) throw std::invalid_argument("compute_glcm: levels must be >= 2");
    if (distance < 1) throw std::invalid_argument("compute_glcm: distance must be >= 1");
    int dr = 0, dc = 0;
    glcm_displacement(angle, distance, dr, dc);
    std::vector<double> counts(static_cast<size_t>(levels) * levels, 0.0);
    int64_t pairs = 0;
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            const int r2 = r + dr, c2 = c + dc;
            if (r2 < 0 || r2 >= img.height || c2 < 0 || c2 >= img.width) continue;
            const int i = quantize(img.at(r, c), levels);
            const int j = quantize(img.at(r2, c2), levels);
            counts[static_cast<size_t>(i) * levels + j] += 1.0;
            ++pairs;
        }
    if (pairs == 0)
        throw std::invalid_argument("compute_glcm: image too small for displacement (" +
                                    std::to_string(dr) + "," + std::to_string(dc) + ")");
    if (symmetric) {
        for (int i = 0; i < levels; ++i)
            for (int j = i + 1; j < levels; ++j) {
                const double s = counts[static_cast<size_t>(i) * levels + j] +
                                 counts[static_cast<size_t>(j) * levels + i];
                counts[static_cast<size_t>(i) * levels + j] = s;
                counts[static_cast<size_t>(j) * levels + i] = s;
            }
        for (int i = 0; i < levels; ++i)
            counts[static_cast<size_t>(i) * levels + i] *= 2.0;
        pairs *= 2;
    }
    for (double& v : counts) v /= static_cast<double>(pairs);
    return counts;
}

GlcmStats glcm_features(const std::vector<double>& glcm, int levels) {
    if (static_cast<int>(glcm.size()) != levels * levels)
        throw std::invalid_argument("glcm_features: size does not match levels");
    double sum = 0;
    for (double v : glcm) sum += v;
    if (std::fabs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("glcm_features: matrix not normalized (sum " +
                                    std::to_string(sum) + ")");
    GlcmStats st;
    double mu_i = 0, mu_j = 0;
    for (int i = 0; i < levels; ++i)
        for (int j = 0; j < levels; ++j) {
            const double p = glcm[static_cast<size_t>(i) * levels + j];
            st.contrast += static_cast<double>((i - j) * (i - j)) * p;
            st.energy += p * p;
            st.homogeneity += p / (1.0 + std::abs(i - j));
            mu_i += i * p;
            mu_j += j * p;
        }
    double var_i = 0, var_j = 0, cov = 0;
    for (int i = 0; i < levels; ++i)
        for (int j = 0; j < levels; ++j) {
            const double p = glcm[static_cast<size_t>(i) * levels + j];
            var_i += (i - mu_i) * (i - mu_i) * p;
            var_j += (j - mu_j) * (j - mu_j) * p;
            cov += (i - mu_i) * (j - mu_j) * p;
        }
    const double sig = var_i * var_j;
    st.correlation = sig < 1e-12 ? 0.0 : cov / std::sqrt(sig);
    return st;
}

LbpCodes compute_lbp(const GrayImage& img, int points, double radius) {
    if (points < 4) throw std::invalid_argument("compute_lbp: need at least 4 points");
    const int margin = static_cast<int>(std::ceil(radius));
    if (img.height < 2 * margin + 1 || img.width < 2 * margin + 1)
        throw std::invalid_argument("compute_lbp: image smaller than 2R+1 per side");
    LbpCodes out;
    out.height = img.height - 2 * margin;
    out.width = img.width - 2 * margin;
    out.codes.resize(static_cast<size_t>(out.height) * out.width);

    auto bilinear = [&](double r, double c) {
        const int r0 = static_cast<int>(std::floor(r));
        const int c0 = static_cast<int>(std::floor(c));
        const double fr = r - r0, fc = c - c0;
        const int r1 = std::min(r0 + 1, img.height - 1);
        const int c1 = std::min(c0 + 1, img.width - 1);
        return (1 - fr) * ((1 - fc) * img.at(r0, c0) + fc * img.at(r0, c1)) +
               fr * ((1 - fc) * img.at(r1, c0) + fc * img.at(r1, c1));
    };

    for (int r = margin; r < img.height - margin; ++r)
        for (int c = margin; c < img.width - margin; ++c) {
            const double center = img.at(r, c);
            uint32_t code = 0;
            for (int k = 0; k < points; ++k) {
                const double theta = 2.0 * M_PI * k / points;
                const double nr = r + radius * std::sin(theta);
                const double nc = c + radius * std::cos(theta);
                if (bilinear(nr, nc) >= center) code |= (1u << k);
            }
            out.codes[static_cast<size_t>(r - margin) * out.width + (c - margin)] = code;
        }
    return out;
}

static int circular_transitions(uint32_t code, int points) {
    int t = 0;
    for (int k = 0; k < points; ++k) {
        const uint32_t a = (code >> k) & 1u;
        const uint32_t b = (code >> ((k + 1) % points)) & 1u;
        if (a != b) ++t;
    }
    return t;
}

std::vector<double> lbp_histogram(const LbpCodes& codes, int points, LbpMode mode) {
    if (codes.codes.empty()) throw std::invalid_argument("lbp_histogram: empty code image");
    const int bins = mode == LbpMode::uniform ? points + 2 : (1 << points);
    std::vector<double> hist(static_cast<size_t>(bins), 0.0);
    for (uint32_t code : codes.codes) {
        if (code >= (1u << points))
            throw std::invalid_argument("lbp_histogram: code out of range");
        int bin;
        if (mode == LbpMode::uniform) {
            bin = circular_transitions(code, points) <= 2
                      ? static_cast<int>(std::popcount(code))
                      : points + 1;  // catch-all
        } else {
            bin = static_cast<int>(code);
        }
        hist[static_cast<size_t>(bin)] += 1.0;
    }
    const double inv = 1.0 / static_cast<double>(codes.codes.size());
    for (double& v : hist) v *= inv;
    return hist;
}

std::string glcm_angle_name(GlcmAngle a) {
    switch (a) {
        case GlcmAngle::deg0: return "0";
        case GlcmAngle::deg45: return "45";
        case GlcmAngle::deg90: return "90";
        case GlcmAngle::deg135: return "135";
    }
    return "?";
}

RawFeatureVector extract_raw_features(const GrayImage& img, const FeatureConfig& cfg) {
    RawFeatureVector fv;
    for (int d : cfg.glcm.distances)
        for (GlcmAngle a : cfg.glcm.angles) {
            const auto m = compute_glcm(img, d, a, cfg.glcm.levels, cfg.glcm.symmetric);
            const GlcmStats st = glcm_features(m, cfg.glcm.levels);
            const std::string tag = "_d" + std::to_string(d) + "_a" + glcm_angle_name(a);
            fv.values.push_back(st.contrast);
            fv.layout.push_back("glcm_contrast" + tag);
            fv.values.push_back(st.correlation);
            fv.layout.push_back("glcm_correlation" + tag);
            fv.values.push_back(st.energy);
            fv.layout.push_back("glcm_energy" + tag);
            fv.values.push_back(st.homogeneity);
            fv.layout.push_back("glcm_homogeneity" + tag);
        }
    const LbpCodes codes = compute_lbp(img, cfg.lbp.points, cfg.lbp.radius);
    const auto hist = lbp_histogram(codes, cfg.lbp.points, cfg.lbp.mode);
    for (size_t i = 0; i < hist.size(); ++i) {
        fv.values.push_back(hist[i]);
        fv.layout.push_back("lbp_bin_" + std::to_string(i));
    }
    return fv;
}

std::vector<std::string> feature_layout(const FeatureConfig& cfg) {
    std::vector<std::string> layout;
    for (int d : cfg.glcm.distances)
        for (GlcmAngle a : cfg.glcm.angles) {
            const std::string tag = "_d" + std::to_string(d) + "_a" + glcm_angle_name(a);
            layout.push_back("glcm_contrast" + tag);
            layout.push_back("glcm_correlation" + tag);
            layout.push_back("glcm_energy" + tag);
            layout.push_back("glcm_homogeneity" + tag);
        }
    const int bins = cfg.lbp.mode == LbpMode::uniform ? cfg.lbp.points + 2
                                                      : (1 << cfg.lbp.points);
    for (int i = 0; i < bins; ++i) layout.push_back("lbp_bin_" + std::to_string(i));
    return layout;
}

std::string feature_vector_csv(const RawFeatureVector& fv) {
    std::string out;
    for (size_t i = 0; i < fv.layout.size(); ++i) {
        if (i) out += ",";
        out += fv.layout[i];
    }
    out += "\n";
    char buf[32];
    for (size_t i = 0; i < fv.values.size(); ++i) {
        if (i) out += ",";
        std::snprintf(buf, sizeof buf, "%.17g", fv.values[i]);
        out += buf;
    }
    out += "\n";
    return out;
}

}  // namespace evmf
