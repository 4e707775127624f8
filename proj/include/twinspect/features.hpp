// features.hpp — dense patch tokens. The built-in backbone is a fixed,
// training-free 10-dim statistics descriptor per patch; externally produced
// token tensors (e.g. from a ViT) enter through the TTOK file format and are
// treated identically downstream.
#pragma once

#include <Eigen/Dense>
#include <string>

#include "twinspect/image.hpp"

namespace twinspect::feat {

TWINSPECT_ERROR(DimensionMismatch);
TWINSPECT_ERROR(FormatError);
TWINSPECT_ERROR(ChecksumMismatch);

// H_F x W_F grid of D-dimensional descriptors; row p = (gy * grid_w + gx).
struct PatchTokens {
    int grid_h = 0;
    int grid_w = 0;
    int dim = 0;
    Eigen::MatrixXf data;  // (grid_h * grid_w) x dim

    int count() const { return grid_h * grid_w; }
};

// Foreground gate on the same grid as the tokens it masks.
struct PatchMask {
    int grid_h = 0;
    int grid_w = 0;
    std::vector<uint8_t> bits;

    int count_on() const {
        int c = 0;
        for (uint8_t b : bits) c += b != 0;
        return c;
    }
};

// Built-in backbone. Descriptor (in order): patch mean, population std,
// 4-bin unsigned gradient-orientation histogram (magnitude-weighted,
// central differences), two Laplacian band energies (raw and 3x3-box
// pre-smoothed), patch min, patch max. Image dimensions must be divisible
// by `patch`.
PatchTokens extract_tokens(const ImageF& image, int patch);

constexpr int kBuiltinTokenDim = 10;

// Patch-level foreground: bit set iff the fraction of foreground pixels in
// the patch is >= threshold_frac.
PatchMask patch_mask(const Mask& mask, int patch, double threshold_frac = 0.5);

// TTOK token-tensor file: magic "TTOK", u32 version=1, u32 grid_h, u32
// grid_w, u32 dim, row-major little-endian f32 payload, u64 FNV-1a checksum
// of the payload bytes.
void save_tokens(const std::string& path, const PatchTokens& tokens);
PatchTokens load_tokens(const std::string& path);

}  // namespace twinspect::feat
