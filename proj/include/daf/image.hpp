#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "daf/error.hpp"

namespace daf {

// H x W x C raster, interleaved row-major, values in [0,1]. C is 1 or 3.
struct Image {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h_, int w_, int c_, double fill = 0.0)
        : h(h_), w(w_), c(c_), data(size_t(h_) * w_ * c_, fill) {}

    double& at(int y, int x, int ch) { return data[(size_t(y) * w + x) * c + ch]; }
    double at(int y, int x, int ch) const { return data[(size_t(y) * w + x) * c + ch]; }

    bool same_dims(const Image& o) const { return h == o.h && w == o.w && c == o.c; }
};

// Binary annotation raster; 1 marks anomalous pixels.
struct Mask {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> data;

    Mask() = default;
    Mask(int h_, int w_, uint8_t fill = 0) : h(h_), w(w_), data(size_t(h_) * w_, fill) {}

    uint8_t& at(int y, int x) { return data[size_t(y) * w + x]; }
    uint8_t at(int y, int x) const { return data[size_t(y) * w + x]; }

    long area() const {
        long n = 0;
        for (uint8_t v : data) n += v;
        return n;
    }
};

// Decodes an 8-bit gray/RGB PNG or binary PPM (P6) and rescales values to
// [0,1]. target_size > 0 resizes to target_size x target_size bilinearly
// (aspect ratio not preserved); target_size == 0 keeps the native size.
Image load_image(const std::string& path, int target_size);

// Writes an 8-bit PNG (gray for c==1, RGB for c==3), round(v * 255).
void save_image(const Image& img, const std::string& path);

// Raw PNG decode/encode without resizing; used by load/save and the tests.
Image decode_png(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_png(const Image& img);

// Fixed 256-entry colormap "fire-v1": t = k/255, R = min(1,3t),
// G = clamp(3t-1), B = clamp(3t-2), each quantized with round(255 * x).
void colormap_fire(int k, uint8_t rgb[3]);

// Min-max normalizes the raster and renders it through colormap_fire. A
// constant raster normalizes to entry 0 everywhere.
Image colorize_heatmap(const std::vector<double>& raster, int h, int w);
void save_heatmap(const std::vector<double>& raster, int h, int w, const std::string& path);

// Loads a mask PNG (any nonzero pixel -> 1), resized with the "any" rule if
// target_size > 0.
Mask load_mask(const std::string& path, int target_size);
void save_mask(const Mask& m, const std::string& path);

}  // namespace daf
