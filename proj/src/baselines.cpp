#include "twinspect/baselines.hpp"

#include <algorithm>
#include <cmath>

namespace twinspect::baseline {

namespace {

void check_sizes(const ImageF& a, const ImageF& b, const Mask& m) {
    if (a.width != b.width || a.height != b.height || a.width != m.width || a.height != m.height)
        throw Error("baseline inputs must share one resolution");
}

// Foreground mean/std; sigma floored to keep flat images well-defined.
std::pair<double, double> fg_stats(const ImageF& img, const Mask& m) {
    double sum = 0, sum2 = 0;
    size_t n = 0;
    for (size_t i = 0; i < img.size(); ++i)
        if (m.data[i]) {
            sum += img.data[i];
            sum2 += double(img.data[i]) * img.data[i];
            ++n;
        }
    if (n == 0) return {0.0, 1.0};
    const double mean = sum / double(n);
    const double var = std::max(0.0, sum2 / double(n) - mean * mean);
    return {mean, std::max(std::sqrt(var), 1e-6)};
}

void sobel(const ImageF& img, std::vector<float>& gx, std::vector<float>& gy) {
    const int w = img.width, h = img.height;
    gx.assign(size_t(w) * h, 0.0f);
    gy.assign(size_t(w) * h, 0.0f);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float tl = img.at_clamped(x - 1, y - 1), tc = img.at_clamped(x, y - 1),
                        tr = img.at_clamped(x + 1, y - 1), ml = img.at_clamped(x - 1, y),
                        mr = img.at_clamped(x + 1, y), bl = img.at_clamped(x - 1, y + 1),
                        bc = img.at_clamped(x, y + 1), br = img.at_clamped(x + 1, y + 1);
            gx[size_t(y) * w + x] = (tr + 2 * mr + br) - (tl + 2 * ml + bl);
            gy[size_t(y) * w + x] = (bl + 2 * bc + br) - (tl + 2 * tc + tr);
        }
}

}  // namespace

ImageF rgb_residual(const ImageF& real, const ImageF& render, const Mask& mask_w) {
    check_sizes(real, render, mask_w);
    const auto [mr, sr] = fg_stats(real, mask_w);
    const auto [ms, ss] = fg_stats(render, mask_w);
    ImageF out(real.width, real.height);
    for (size_t i = 0; i < out.size(); ++i)
        if (mask_w.data[i]) {
            const double a = (real.data[i] - mr) / sr;
            const double b = (render.data[i] - ms) / ss;
            out.data[i] = float(std::abs(a - b));
        }
    return out;
}

ImageF gradient_residual(const ImageF& real, const ImageF& render, const Mask& mask_w) {
    check_sizes(real, render, mask_w);
    std::vector<float> gxr, gyr, gxs, gys;
    sobel(real, gxr, gyr);
    sobel(render, gxs, gys);
    ImageF out(real.width, real.height);
    for (size_t i = 0; i < out.size(); ++i)
        if (mask_w.data[i]) {
            const double dx = double(gxr[i]) - gxs[i];
            const double dy = double(gyr[i]) - gys[i];
            out.data[i] = float(std::sqrt(dx * dx + dy * dy));
        }
    return out;
}

ImageF ssim_residual(const ImageF& real, const ImageF& render, const Mask& mask_w) {
    check_sizes(real, render, mask_w);
    constexpr int kRadius = 5;  // 11x11 window
    constexpr double kSigma = 1.5;
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;

    double kernel[2 * kRadius + 1];
    double ksum = 0;
    for (int i = -kRadius; i <= kRadius; ++i) {
        kernel[i + kRadius] = std::exp(-0.5 * (double(i) * i) / (kSigma * kSigma));
        ksum += kernel[i + kRadius];
    }
    for (double& k : kernel) k /= ksum;

    const int w = real.width, h = real.height;
    // Separable Gaussian with edge replication.
    auto blur = [&](const std::vector<double>& src) {
        std::vector<double> tmp(size_t(w) * h), dst(size_t(w) * h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int i = -kRadius; i <= kRadius; ++i)
                    acc += kernel[i + kRadius] * src[size_t(y) * w + std::clamp(x + i, 0, w - 1)];
                tmp[size_t(y) * w + x] = acc;
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int i = -kRadius; i <= kRadius; ++i)
                    acc += kernel[i + kRadius] * tmp[size_t(std::clamp(y + i, 0, h - 1)) * w + x];
                dst[size_t(y) * w + x] = acc;
            }
        return dst;
    };

    std::vector<double> a(size_t(w) * h), b(size_t(w) * h), aa(size_t(w) * h), bb(size_t(w) * h),
        ab(size_t(w) * h);
    for (size_t i = 0; i < a.size(); ++i) {
        a[i] = real.data[i];
        b[i] = render.data[i];
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto mu_a = blur(a), mu_b = blur(b), m_aa = blur(aa), m_bb = blur(bb), m_ab = blur(ab);

    ImageF out(w, h);
    for (size_t i = 0; i < out.size(); ++i) {
        if (!mask_w.data[i]) continue;
        const double va = m_aa[i] - mu_a[i] * mu_a[i];
        const double vb = m_bb[i] - mu_b[i] * mu_b[i];
        const double cov = m_ab[i] - mu_a[i] * mu_b[i];
        const double ssim = ((2 * mu_a[i] * mu_b[i] + kC1) * (2 * cov + kC2)) /
                            ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1) * (va + vb + kC2));
        out.data[i] = float(std::max(0.0, (1.0 - ssim) / 2.0));
    }
    return out;
}

}  // namespace twinspect::baseline
