#pragma once

// Dataset ingestion (CIFAR-10 binary layout), a synthetic fixture dataset,
// PGM mask I/O and heatmap rendering.

#include "rglab/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace rglab {

struct Dataset {
    Tensor images;            // N x 3 x 32 x 32, values in [-1, 1]
    std::vector<int> labels;  // 0..9
    std::string split;

    int count() const { return images.size() ? images.dim(0) : 0; }
};

// byte -> [0,1] -> [-1,1]
inline float pixel_to_float(std::uint8_t b) {
    return 2.0f * (static_cast<float>(b) / 255.0f) - 1.0f;
}

inline std::uint8_t float_to_pixel(float v) {
    const float x = (v + 1.0f) / 2.0f * 255.0f;
    const long r = std::lround(x);
    return static_cast<std::uint8_t>(std::clamp(r, 0l, 255l));
}

namespace detail {

constexpr std::size_t kCifarRecord = 3073;             // 1 label byte + 3072 pixels
constexpr std::size_t kCifarBatchBytes = 30730000;     // 10000 records
constexpr int kCifarBatchImages = 10000;

inline void load_cifar_batch(const std::string& path, Dataset& ds, int offset) {
    std::error_code ec;
    const auto sz = std::filesystem::file_size(path, ec);
    if (ec) throw std::runtime_error("cannot stat CIFAR-10 batch " + path);
    if (sz != kCifarBatchBytes)
        throw std::runtime_error("CIFAR-10 batch " + path + " has wrong size: expected " +
                                 std::to_string(kCifarBatchBytes) + " bytes, got " +
                                 std::to_string(sz));
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open CIFAR-10 batch " + path);
    std::vector<std::uint8_t> rec(kCifarRecord);
    for (int i = 0; i < kCifarBatchImages; ++i) {
        in.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
        if (static_cast<std::size_t>(in.gcount()) != rec.size())
            throw std::runtime_error("short read in CIFAR-10 batch " + path);
        const int label = rec[0];
        if (label > 9)
            throw std::runtime_error("CIFAR-10 batch " + path + " record " + std::to_string(i) +
                                     " has label " + std::to_string(label) + " > 9");
        ds.labels[offset + i] = label;
        float* dst = ds.images.data.data() + static_cast<std::size_t>(offset + i) * 3072;
        for (std::size_t p = 0; p < 3072; ++p) dst[p] = pixel_to_float(rec[1 + p]);
    }
}

}  // namespace detail

struct Cifar10 {
    Dataset train;
    Dataset test;
};

// Reads the published binary layout: per record 1 label byte then 1024 R,
// 1024 G, 1024 B bytes row-major.
inline Cifar10 load_cifar10(const std::string& directory) {
    Cifar10 ds;
    ds.train.images = Tensor({50000, 3, 32, 32});
    ds.train.labels.resize(50000);
    ds.train.split = "train";
    for (int b = 1; b <= 5; ++b)
        detail::load_cifar_batch(directory + "/data_batch_" + std::to_string(b) + ".bin", ds.train,
                                 (b - 1) * detail::kCifarBatchImages);
    ds.test.images = Tensor({10000, 3, 32, 32});
    ds.test.labels.resize(10000);
    ds.test.split = "test";
    detail::load_cifar_batch(directory + "/test_batch.bin", ds.test, 0);
    return ds;
}

// Class-colored blobs on uniform noise; 10 classes, round-robin labels so the
// histogram is balanced within one. Learnable by a small CNN in a few epochs.
inline Dataset synthetic_dataset(int n, std::uint64_t seed, const std::string& split = "train") {
    if (n < 10) throw std::invalid_argument("synthetic_dataset: need at least 10 images");
    Dataset ds;
    ds.images = Tensor({n, 3, 32, 32});
    ds.labels.resize(n);
    ds.split = split;
    std::mt19937 rng(static_cast<std::uint32_t>(seed * 0x9e3779b9ull + 17));
    std::uniform_real_distribution<float> noise(-0.35f, 0.35f);
    std::uniform_int_distribution<int> jitter(-2, 2);
    // one color/position per class
    const float levels[3] = {-0.8f, 0.0f, 0.8f};
    for (int i = 0; i < n; ++i) {
        const int cls = i % 10;
        ds.labels[i] = cls;
        float color[3] = {levels[cls % 3], levels[(cls / 3) % 3], cls < 5 ? 0.8f : -0.8f};
        const int cy = 8 + 12 * (cls % 2) + jitter(rng);
        const int cx = 6 + 5 * (cls / 2) + jitter(rng);
        float* img = ds.images.data.data() + static_cast<std::size_t>(i) * 3072;
        for (std::size_t p = 0; p < 3072; ++p) img[p] = noise(rng);
        for (int c = 0; c < 3; ++c)
            for (int y = cy; y < cy + 10; ++y)
                for (int x = cx; x < cx + 10; ++x) {
                    if (y < 0 || y >= 32 || x < 0 || x >= 32) continue;
                    const float v = color[c] + 0.2f * noise(rng);
                    img[(static_cast<std::size_t>(c) * 32 + y) * 32 + x] = std::clamp(v, -1.0f, 1.0f);
                }
    }
    return ds;
}

inline Dataset dataset_subset(const Dataset& ds, int n) {
    if (n >= ds.count()) return ds;
    Dataset out;
    out.images = Tensor({n, 3, 32, 32});
    std::copy_n(ds.images.data.begin(), out.images.size(), out.images.data.begin());
    out.labels.assign(ds.labels.begin(), ds.labels.begin() + n);
    out.split = ds.split;
    return out;
}

// ---------------------------------------------------------------------------
// Segmentation masks: binary PGM (P5), 32x32, values {0, 255}

struct SegmentationMask {
    int h = 32;
    int w = 32;
    std::vector<std::uint8_t> cells;  // 1 = foreground (object), 0 = background

    int foreground_count() const {
        int n = 0;
        for (auto v : cells) n += v;
        return n;
    }
};

namespace detail {

inline std::string read_pgm_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {}
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

struct PgmImage {
    int w = 0, h = 0;
    std::vector<std::uint8_t> bytes;
};

inline PgmImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open PGM file " + path);
    if (read_pgm_token(in) != "P5")
        throw std::runtime_error("PGM " + path + " is not binary P5");
    PgmImage img;
    try {
        img.w = std::stoi(read_pgm_token(in));
        img.h = std::stoi(read_pgm_token(in));
        const int maxval = std::stoi(read_pgm_token(in));
        if (maxval != 255) throw std::runtime_error("maxval " + std::to_string(maxval));
    } catch (const std::exception& e) {
        throw std::runtime_error("PGM " + path + " has a malformed header: " + e.what());
    }
    img.bytes.resize(static_cast<std::size_t>(img.w) * img.h);
    in.read(reinterpret_cast<char*>(img.bytes.data()), static_cast<std::streamsize>(img.bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.bytes.size())
        throw std::runtime_error("PGM " + path + " truncated payload");
    return img;
}

inline void write_pgm(const std::string& path, int w, int h, const std::uint8_t* bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write file " + tmp);
        out << "P5\n" << w << " " << h << "\n255\n";
        out.write(reinterpret_cast<const char*>(bytes), static_cast<std::streamsize>(w) * h);
        if (!out) throw std::runtime_error("short write on " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline SegmentationMask load_mask(const std::string& path) {
    const auto img = detail::read_pgm(path);
    if (img.w != 32 || img.h != 32)
        throw std::runtime_error("mask " + path + " must be 32x32, got " + std::to_string(img.w) +
                                 "x" + std::to_string(img.h));
    SegmentationMask m;
    m.cells.resize(img.bytes.size());
    for (std::size_t i = 0; i < img.bytes.size(); ++i) {
        if (img.bytes[i] == 255)
            m.cells[i] = 1;
        else if (img.bytes[i] == 0)
            m.cells[i] = 0;
        else
            throw std::runtime_error("mask " + path + " has value " + std::to_string(img.bytes[i]) +
                                     " outside {0,255} at pixel " + std::to_string(i));
    }
    return m;
}

inline void save_mask(const SegmentationMask& m, const std::string& path) {
    std::vector<std::uint8_t> bytes(m.cells.size());
    for (std::size_t i = 0; i < m.cells.size(); ++i) bytes[i] = m.cells[i] ? 255 : 0;
    detail::write_pgm(path, m.w, m.h, bytes.data());
}

// ---------------------------------------------------------------------------
// Heatmap rendering

// Sum a 3xHxW (or 1x3xHxW) map along the color channel.
inline Tensor channel_sum(const Tensor& map) {
    Tensor m = map;
    if (m.rank() == 4 && m.dim(0) == 1) m.shape.erase(m.shape.begin());
    if (m.rank() != 3)
        throw std::invalid_argument("channel_sum: expected CxHxW map, got " + shape_str(map.shape));
    const int c = m.dim(0), h = m.dim(1), w = m.dim(2);
    Tensor out({h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h * w; ++i)
            out.data[i] += m.data[static_cast<std::size_t>(ch) * h * w + i];
    return out;
}

// Channel-sum, cap at the [0.5, 99.5] percentiles, scale linearly to 0..255,
// write grayscale P5. A degenerate range renders all zeros.
inline void render_heatmap(const Tensor& map, const std::string& path) {
    Tensor flat = channel_sum(map);
    const float lo = percentile(flat.data, 0.5);
    const float hi = percentile(flat.data, 99.5);
    const int h = flat.dim(0), w = flat.dim(1);
    std::vector<std::uint8_t> bytes(flat.size(), 0);
    if (hi > lo) {
        for (std::size_t i = 0; i < flat.size(); ++i) {
            const float v = std::clamp(flat.data[i], lo, hi);
            bytes[i] = static_cast<std::uint8_t>(std::lround((v - lo) / (hi - lo) * 255.0f));
        }
    }
    detail::write_pgm(path, w, h, bytes.data());
}

// Diverging-color variant: symmetric around zero after capping, negative
// values in blue, positive in red, zero white. Binary PPM (P6).
inline void render_heatmap_ppm(const Tensor& map, const std::string& path) {
    Tensor flat = channel_sum(map);
    const float lo = percentile(flat.data, 0.5);
    const float hi = percentile(flat.data, 99.5);
    const float scale = std::max(std::abs(lo), std::abs(hi));
    std::vector<std::uint8_t> bytes(flat.size() * 3, 255);
    if (scale > 0.0f) {
        for (std::size_t i = 0; i < flat.size(); ++i) {
            const float v = std::clamp(flat.data[i], lo, hi) / scale;  // [-1, 1]
            const auto fade = static_cast<std::uint8_t>(std::lround(255.0f * (1.0f - std::abs(v))));
            if (v >= 0.0f) {
                bytes[3 * i] = 255;
                bytes[3 * i + 1] = fade;
                bytes[3 * i + 2] = fade;
            } else {
                bytes[3 * i] = fade;
                bytes[3 * i + 1] = fade;
                bytes[3 * i + 2] = 255;
            }
        }
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write file " + tmp);
        out << "P6\n" << flat.dim(1) << " " << flat.dim(0) << "\n255\n";
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace rglab
