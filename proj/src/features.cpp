#include "twinspect/features.hpp"

#include <cmath>
#include <fstream>

namespace twinspect::feat {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

PatchTokens extract_tokens(const ImageF& image, int patch) {
    if (patch <= 0 || image.width % patch != 0 || image.height % patch != 0)
        throw DimensionMismatch("image dimensions must be divisible by patch size");
    const int gw = image.width / patch;
    const int gh = image.height / patch;
    const int w = image.width, h = image.height;

    // Full-image filter responses; patches then reduce over them.
    std::vector<float> gx(size_t(w) * h), gy(size_t(w) * h), lap1(size_t(w) * h),
        lap2(size_t(w) * h), box(size_t(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            gx[size_t(y) * w + x] = 0.5f * (image.at_clamped(x + 1, y) - image.at_clamped(x - 1, y));
            gy[size_t(y) * w + x] = 0.5f * (image.at_clamped(x, y + 1) - image.at_clamped(x, y - 1));
            lap1[size_t(y) * w + x] = image.at_clamped(x + 1, y) + image.at_clamped(x - 1, y) +
                                      image.at_clamped(x, y + 1) + image.at_clamped(x, y - 1) -
                                      4.0f * image.at(x, y);
            float s = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) s += image.at_clamped(x + dx, y + dy);
            box[size_t(y) * w + x] = s / 9.0f;
        }
    auto box_clamped = [&](int x, int y) {
        x = std::clamp(x, 0, w - 1);
        y = std::clamp(y, 0, h - 1);
        return box[size_t(y) * w + x];
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            lap2[size_t(y) * w + x] = box_clamped(x + 1, y) + box_clamped(x - 1, y) +
                                      box_clamped(x, y + 1) + box_clamped(x, y - 1) -
                                      4.0f * box[size_t(y) * w + x];

    PatchTokens out;
    out.grid_h = gh;
    out.grid_w = gw;
    out.dim = kBuiltinTokenDim;
    out.data.resize(gh * gw, kBuiltinTokenDim);
    const double inv_n = 1.0 / (double(patch) * patch);

    for (int py = 0; py < gh; ++py)
        for (int px = 0; px < gw; ++px) {
            double sum = 0, sum2 = 0, e1 = 0, e2 = 0;
            double hist[4] = {0, 0, 0, 0};
            float lo = 1e30f, hi = -1e30f;
            for (int y = py * patch; y < (py + 1) * patch; ++y)
                for (int x = px * patch; x < (px + 1) * patch; ++x) {
                    const float v = image.at(x, y);
                    sum += v;
                    sum2 += double(v) * v;
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                    const double dx = gx[size_t(y) * w + x];
                    const double dy = gy[size_t(y) * w + x];
                    const double mag = std::sqrt(dx * dx + dy * dy);
                    if (mag > 0) {
                        double ang = std::atan2(dy, dx);
                        if (ang < 0) ang += kPi;            // fold to [0, pi)
                        if (ang >= kPi) ang -= kPi;
                        int bin = std::min(3, int(ang / (kPi / 4.0)));
                        hist[bin] += mag;
                    }
                    e1 += std::abs(double(lap1[size_t(y) * w + x]));
                    e2 += std::abs(double(lap2[size_t(y) * w + x]));
                }
            const double mean = sum * inv_n;
            const double var = std::max(0.0, sum2 * inv_n - mean * mean);
            const int row = py * gw + px;
            out.data(row, 0) = float(mean);
            out.data(row, 1) = float(std::sqrt(var));
            for (int b = 0; b < 4; ++b) out.data(row, 2 + b) = float(hist[b] * inv_n);
            out.data(row, 6) = float(e1 * inv_n);
            out.data(row, 7) = float(e2 * inv_n);
            out.data(row, 8) = lo;
            out.data(row, 9) = hi;
        }
    return out;
}

PatchMask patch_mask(const Mask& mask, int patch, double threshold_frac) {
    if (patch <= 0 || mask.width % patch != 0 || mask.height % patch != 0)
        throw DimensionMismatch("mask dimensions must be divisible by patch size");
    if (!(threshold_frac > 0.0 && threshold_frac <= 1.0))
        throw DimensionMismatch("threshold_frac must lie in (0, 1]");
    PatchMask out;
    out.grid_w = mask.width / patch;
    out.grid_h = mask.height / patch;
    out.bits.assign(size_t(out.grid_w) * out.grid_h, 0);
    const double denom = double(patch) * patch;
    for (int py = 0; py < out.grid_h; ++py)
        for (int px = 0; px < out.grid_w; ++px) {
            int on = 0;
            for (int y = py * patch; y < (py + 1) * patch; ++y)
                for (int x = px * patch; x < (px + 1) * patch; ++x) on += mask.at(x, y) != 0;
            out.bits[size_t(py) * out.grid_w + px] = (on / denom >= threshold_frac) ? 1 : 0;
        }
    return out;
}

void save_tokens(const std::string& path, const PatchTokens& tokens) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for write: " + path);
    os.write("TTOK", 4);
    write_le_u32(os, 1);
    write_le_u32(os, uint32_t(tokens.grid_h));
    write_le_u32(os, uint32_t(tokens.grid_w));
    write_le_u32(os, uint32_t(tokens.dim));
    uint64_t hash = kFnvOffset;
    for (int r = 0; r < tokens.count(); ++r)
        for (int c = 0; c < tokens.dim; ++c) {
            const float v = tokens.data(r, c);
            uint32_t u;
            std::memcpy(&u, &v, 4);
            unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                                  static_cast<unsigned char>(u >> 16),
                                  static_cast<unsigned char>(u >> 24)};
            hash = fnv1a(b, 4, hash);
            os.write(reinterpret_cast<const char*>(b), 4);
        }
    write_le_u64(os, hash);
    if (!os) throw FormatError("write failed: " + path);
}

PatchTokens load_tokens(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4)) throw FormatError("truncated at offset 0: " + path);
    if (std::memcmp(magic, "TTOK", 4) != 0) throw FormatError("bad magic at offset 0: " + path);
    uint32_t version, gh, gw, dim;
    if (!read_le_u32(is, version)) throw FormatError("truncated at offset 4: " + path);
    if (version != 1) throw FormatError("unsupported version at offset 4: " + path);
    if (!read_le_u32(is, gh)) throw FormatError("truncated at offset 8: " + path);
    if (!read_le_u32(is, gw)) throw FormatError("truncated at offset 12: " + path);
    if (!read_le_u32(is, dim)) throw FormatError("truncated at offset 16: " + path);
    if (gh == 0 || gw == 0 || dim == 0 || uint64_t(gh) * gw * dim > (1ull << 30))
        throw FormatError("implausible dimensions at offset 8: " + path);

    PatchTokens out;
    out.grid_h = int(gh);
    out.grid_w = int(gw);
    out.dim = int(dim);
    out.data.resize(out.count(), out.dim);
    uint64_t hash = kFnvOffset;
    uint64_t offset = 20;
    for (int r = 0; r < out.count(); ++r)
        for (int c = 0; c < out.dim; ++c) {
            unsigned char b[4];
            if (!is.read(reinterpret_cast<char*>(b), 4))
                throw FormatError("truncated payload at offset " + std::to_string(offset) + ": " + path);
            hash = fnv1a(b, 4, hash);
            uint32_t u = uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
                         uint32_t(b[3]) << 24;
            float v;
            std::memcpy(&v, &u, 4);
            if (!std::isfinite(v))
                throw FormatError("non-finite token at offset " + std::to_string(offset) + ": " + path);
            out.data(r, c) = v;
            offset += 4;
        }
    uint64_t stored;
    if (!read_le_u64(is, stored))
        throw FormatError("truncated checksum at offset " + std::to_string(offset) + ": " + path);
    if (stored != hash) throw ChecksumMismatch("payload checksum mismatch: " + path);
    offset += 8;
    if (is.peek() != EOF)
        throw FormatError("trailing bytes at offset " + std::to_string(offset) + ": " + path);
    return out;
}

}  // namespace twinspect::feat
