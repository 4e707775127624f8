// renderer.hpp — software rasterizer for the digital twin: shaded image,
// binary silhouette mask, depth buffer, and a smooth silhouette surrogate
// for derivative-free pose refinement.
#pragma once

#include <limits>

#include "twinspect/geometry.hpp"
#include "twinspect/image.hpp"
#include "twinspect/mesh.hpp"

namespace twinspect::render {

using geom::CameraIntrinsics;
using geom::Se3Pose;
using geom::Vec3;

TWINSPECT_ERROR(InvalidLightDir);

struct RasterOutput {
    ImageF image;              // Lambertian shading in [0,1]; 0 where empty
    Mask mask;                 // 1 iff depth is finite
    std::vector<float> depth;  // meters; +inf where empty

    float depth_at(int x, int y) const { return depth[size_t(y) * mask.width + x]; }
};

// Z-buffered perspective rasterization with flat two-sided Lambertian
// shading clamped to [0.05, 1]. light_dir is a unit vector in the CAMERA
// frame (a headlight convention), which keeps rendering invariant under a
// rigid transform applied to both poses. Deterministic; an off-screen or
// behind-camera object yields an all-zero mask.
RasterOutput rasterize(const mesh::TriMesh& m, const Se3Pose& t_obj_base,
                       const Se3Pose& t_cam_base, const CameraIntrinsics& k,
                       const Vec3& light_dir);

// Silhouette-only variant; bit-identical to rasterize(...).mask.
Mask render_mask(const mesh::TriMesh& m, const Se3Pose& t_obj_base, const Se3Pose& t_cam_base,
                 const CameraIntrinsics& k);

// Smooth silhouette: per pixel 1 - prod_t (1 - sigmoid(sharpness * d_t)),
// where d_t is the signed 2-D distance (pixels) to triangle t's projected
// boundary. Continuous in the pose; approaches the hard mask as
// sharpness -> inf; equals 0.5 exactly on a silhouette edge.
ImageF soft_mask(const mesh::TriMesh& m, const Se3Pose& t_obj_base, const Se3Pose& t_cam_base,
                 const CameraIntrinsics& k, double sharpness);

}  // namespace twinspect::render
