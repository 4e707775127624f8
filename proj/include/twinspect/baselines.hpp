// baselines.hpp — training-free residual score maps shared with the learned
// method's emission and evaluation path. All maps are >= 0 and exactly 0
// outside the foreground mask.
#pragma once

#include "twinspect/image.hpp"

namespace twinspect::baseline {

// |real - render| after per-image foreground mean/std normalization.
ImageF rgb_residual(const ImageF& real, const ImageF& render, const Mask& mask_w);

// Magnitude of the Sobel-gradient difference; borders by edge replication.
ImageF gradient_residual(const ImageF& real, const ImageF& render, const Mask& mask_w);

// Per-pixel (1 - SSIM)/2 with an 11x11 Gaussian window (sigma 1.5),
// C1 = 0.01^2, C2 = 0.03^2 for unit dynamic range; borders replicated.
ImageF ssim_residual(const ImageF& real, const ImageF& render, const Mask& mask_w);

}  // namespace twinspect::baseline
