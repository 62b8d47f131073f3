#include "evmf/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "evmf/rng.hpp"

namespace fs = std::filesystem;

namespace evmf {

// ------------------------------------------------------------------ PGM I/O

static int pgm_token(std::istream& in) {
    // skips whitespace and '#' comments
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
        } else if (!std::isspace(c)) {
            in.unget();
            break;
        }
    }
    int value;
    if (!(in >> value)) throw DataError("malformed PGM header");
    return value;
}

static ImageBuffer read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image: " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '5') throw DataError("not a P5 PGM: " + path);
    const int width = pgm_token(in);
    const int height = pgm_token(in);
    const int maxval = pgm_token(in);
    if (width <= 0 || height <= 0) throw DataError("bad PGM extents in " + path);
    if (maxval <= 0 || maxval > 255) throw DataError("only 8-bit PGM supported: " + path);
    in.get();  // single whitespace after maxval
    std::vector<char> raw(static_cast<size_t>(width) * height);
    in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw DataError("truncated PGM data in " + path);
    ImageBuffer img;
    img.height = height;
    img.width = width;
    img.channels = 1;
    img.hwc.resize(raw.size());
    for (size_t i = 0; i < raw.size(); ++i)
        img.hwc[i] = static_cast<uint8_t>(raw[i]) / static_cast<double>(maxval);
    return img;
}

void write_pgm(const std::string& path, int height, int width,
               const std::vector<uint8_t>& bytes) {
    if (static_cast<int64_t>(bytes.size()) != static_cast<int64_t>(height) * width)
        throw DataError("write_pgm: byte count mismatch");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "P5\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path);
}

// ------------------------------------------------------------------ PNG I/O

static ImageBuffer read_png(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw DataError("cannot read PNG: " + path + " (" + image.message + ")");
    // always decode as RGB; grayscale sources come back with equal channels
    image.format = PNG_FORMAT_RGB;
    std::vector<uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw DataError("PNG decode failed: " + path + " (" + msg + ")");
    }
    ImageBuffer img;
    img.height = static_cast<int>(image.height);
    img.width = static_cast<int>(image.width);
    img.channels = 3;
    img.hwc.resize(buf.size());
    for (size_t i = 0; i < buf.size(); ++i) img.hwc[i] = buf[i] / 255.0;
    return img;
}

ImageBuffer read_image(const std::string& path) {
    std::string ext = fs::path(path).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (ext == ".pgm") return read_pgm(path);
    if (ext == ".png") return read_png(path);
    throw DataError("unsupported image type: " + path);
}

// ------------------------------------------------------------------- resize

ImageBuffer resize_bilinear(const ImageBuffer& img, int out_h, int out_w) {
    if (out_h == img.height && out_w == img.width) return img;
    ImageBuffer out;
    out.height = out_h;
    out.width = out_w;
    out.channels = img.channels;
    out.hwc.resize(static_cast<size_t>(out_h) * out_w * img.channels);
    const double sy = static_cast<double>(img.height) / out_h;
    const double sx = static_cast<double>(img.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        // center-aligned sampling
        const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
        const int y0 = std::min(static_cast<int>(fy), img.height - 1);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
            const int x0 = std::min(static_cast<int>(fx), img.width - 1);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < img.channels; ++c) {
                auto px = [&](int yy, int xx) {
                    return img.hwc[(static_cast<size_t>(yy) * img.width + xx) * img.channels + c];
                };
                out.hwc[(static_cast<size_t>(y) * out_w + x) * img.channels + c] =
                    (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x1)) +
                    wy * ((1 - wx) * px(y1, x0) + wx * px(y1, x1));
            }
        }
    }
    return out;
}

// ------------------------------------------------------------------ dataset

static std::vector<double> to_channels(const ImageBuffer& img, int want) {
    if (img.channels == want) {
        // HWC -> CHW
        std::vector<double> chw(img.hwc.size());
        for (int c = 0; c < want; ++c)
            for (int i = 0; i < img.height * img.width; ++i)
                chw[static_cast<size_t>(c) * img.height * img.width + i] =
                    img.hwc[static_cast<size_t>(i) * want + c];
        return chw;
    }
    if (img.channels == 3 && want == 1) {
        GrayImage g = to_grayscale(img.height, img.width, 3, img.hwc);
        return g.pixels;
    }
    if (img.channels == 1 && want == 3) {
        std::vector<double> chw(static_cast<size_t>(3) * img.height * img.width);
        for (int c = 0; c < 3; ++c)
            std::copy(img.hwc.begin(), img.hwc.end(),
                      chw.begin() + static_cast<size_t>(c) * img.height * img.width);
        return chw;
    }
    throw DataError("unsupported channel conversion");
}

Dataset load_dataset(const std::string& root, int height, int width, int channels,
                     const FeatureConfig& fcfg) {
    if (channels != 1 && channels != 3)
        throw DataError("dataset channels must be 1 or 3");
    std::error_code ec;
    if (!fs::is_directory(root, ec)) throw DataError("not a directory: " + root);

    Dataset ds;
    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw DataError("no class subdirectories under " + root);

    for (size_t label = 0; label < class_dirs.size(); ++label) {
        ds.class_names.push_back(class_dirs[label].filename().string());
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(class_dirs[label])) {
            if (!entry.is_regular_file()) continue;
            std::string ext = entry.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(),
                           [](unsigned char c) { return std::tolower(c); });
            if (ext == ".pgm" || ext == ".png") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty())
            throw DataError("class directory has no images: " + class_dirs[label].string());
        for (const auto& f : files) {
            const ImageBuffer raw = read_image(f.string());
            Sample s;
            s.path = f.string();
            s.label = static_cast<int>(label);
            s.channels = channels;
            s.height = height;
            s.width = width;
            // grayscale first, then resize, for the handcrafted path
            GrayImage g = to_grayscale(raw.height, raw.width, raw.channels, raw.hwc);
            ImageBuffer gbuf;
            gbuf.height = raw.height;
            gbuf.width = raw.width;
            gbuf.channels = 1;
            gbuf.hwc = g.pixels;
            const ImageBuffer gres = resize_bilinear(gbuf, height, width);
            s.gray.height = height;
            s.gray.width = width;
            s.gray.pixels = gres.hwc;
            for (double& p : s.gray.pixels) p = std::clamp(p, 0.0, 1.0);
            s.f_raw = extract_raw_features(s.gray, fcfg).values;

            const ImageBuffer resized = resize_bilinear(raw, height, width);
            s.chw = to_channels(resized, channels);
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

// ---------------------------------------------------------------- synthetic

static std::vector<uint8_t> synth_image(int cls, int size, Rng& rng) {
    std::vector<double> px(static_cast<size_t>(size) * size, 0.0);
    switch (cls) {
        case 0: {  // stripes: sinusoid at random orientation and frequency
            const double freq = rng.uniform(0.5, 2.0) * 2.0 * M_PI / size *
                                (2.0 + static_cast<double>(rng.next_below(4)));
            const double theta = rng.uniform(0.0, M_PI);
            const double phase = rng.uniform(0.0, 2.0 * M_PI);
            const double cx = std::cos(theta), sx = std::sin(theta);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x)
                    px[static_cast<size_t>(y) * size + x] =
                        0.5 + 0.5 * std::sin(freq * (cx * x + sx * y) + phase);
            break;
        }
        case 1: {  // blobs: a handful of gaussian bumps
            const int n = 3 + static_cast<int>(rng.next_below(4));
            for (int b = 0; b < n; ++b) {
                const double by = rng.uniform(0, size), bx = rng.uniform(0, size);
                const double sig = rng.uniform(1.5, 4.0);
                const double amp = rng.uniform(0.5, 1.0);
                for (int y = 0; y < size; ++y)
                    for (int x = 0; x < size; ++x) {
                        const double d2 = (y - by) * (y - by) + (x - bx) * (x - bx);
                        px[static_cast<size_t>(y) * size + x] +=
                            amp * std::exp(-d2 / (2 * sig * sig));
                    }
            }
            break;
        }
        default: {  // checkers at a random cell size
            const int cell = 2 << rng.next_below(3);  // 2, 4 or 8
            const double lo = rng.uniform(0.0, 0.2), hi = rng.uniform(0.8, 1.0);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x)
                    px[static_cast<size_t>(y) * size + x] =
                        ((y / cell + x / cell) % 2) ? hi : lo;
            break;
        }
    }
    std::vector<uint8_t> bytes(px.size());
    for (size_t i = 0; i < px.size(); ++i) {
        const double noisy = px[i] + rng.uniform(-0.05, 0.05);
        bytes[i] = static_cast<uint8_t>(std::clamp(noisy, 0.0, 1.0) * 255.0 + 0.5);
    }
    return bytes;
}

void generate_synthetic_dataset(const std::string& out_dir, const SynthConfig& cfg) {
    static const char* kClassNames[3] = {"stripes", "blobs", "checkers"};
    Rng rng(cfg.seed);
    for (const std::string split : {"train", "test"}) {
        const int per_class = split == "train" ? cfg.train_per_class : cfg.test_per_class;
        for (int cls = 0; cls < 3; ++cls) {
            const fs::path dir = fs::path(out_dir) / split / kClassNames[cls];
            fs::create_directories(dir);
            for (int i = 0; i < per_class; ++i) {
                char name[32];
                std::snprintf(name, sizeof name, "img%04d.pgm", i);
                write_pgm((dir / name).string(), cfg.size, cfg.size,
                          synth_image(cls, cfg.size, rng));
            }
        }
    }
}

}  // namespace evmf
