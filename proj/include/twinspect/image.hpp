// image.hpp — grayscale f32 images, binary masks, PGM/PBM IO.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "twinspect/common.hpp"

namespace twinspect {

TWINSPECT_ERROR(ImageFormatError);

// Grayscale image, values nominally in [0, 1], row-major.
struct ImageF {
    int width = 0;
    int height = 0;
    std::vector<float> data;

    ImageF() = default;
    ImageF(int w, int h, float fill = 0.0f) : width(w), height(h), data(size_t(w) * h, fill) {}

    float& at(int x, int y) { return data[size_t(y) * width + x]; }
    float at(int x, int y) const { return data[size_t(y) * width + x]; }
    // Clamp-to-edge access, used by filters.
    float at_clamped(int x, int y) const {
        x = x < 0 ? 0 : (x >= width ? width - 1 : x);
        y = y < 0 ? 0 : (y >= height ? height - 1 : y);
        return at(x, y);
    }
    size_t size() const { return data.size(); }
};

// Binary mask; entries are 0 or 1.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> data;

    Mask() = default;
    Mask(int w, int h, uint8_t fill = 0) : width(w), height(h), data(size_t(w) * h, fill) {}

    uint8_t& at(int x, int y) { return data[size_t(y) * width + x]; }
    uint8_t at(int x, int y) const { return data[size_t(y) * width + x]; }
    size_t count() const {
        size_t c = 0;
        for (uint8_t v : data) c += v != 0;
        return c;
    }
    size_t size() const { return data.size(); }
};

// ---- PGM / PBM -------------------------------------------------------------
// Dataset images are 8-bit binary PGM (P5, maxval 255). Score maps use the
// 16-bit variant (maxval 65535, MSB-first samples per the Netpbm spec) so
// that quantization does not disturb metric values. Masks are packed P4 PBM.

void write_pgm(const std::string& path, const ImageF& img);
ImageF read_pgm(const std::string& path);

// 16-bit quantized score map; values mapped from [lo, hi] to [0, 65535].
void write_pgm16(const std::string& path, const ImageF& img, float lo, float hi);
ImageF read_pgm16(const std::string& path, float lo, float hi);

void write_pbm(const std::string& path, const Mask& mask);
Mask read_pbm(const std::string& path);

// Bilinear upsample aligned on cell centers (clamp-to-edge beyond the
// boundary cells). Reproduces linear ramps exactly, which pins the offset
// convention.
ImageF bilinear_upsample(const ImageF& grid, int out_w, int out_h);

}  // namespace twinspect
