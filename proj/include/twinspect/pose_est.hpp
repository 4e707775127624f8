// pose_est.hpp — two-stage object pose estimation from a single observation:
// foreground segmentation, coarse template matching over a viewpoint plan,
// then derivative-free refinement of the soft-silhouette discrepancy.
#pragma once

#include "twinspect/geometry.hpp"
#include "twinspect/image.hpp"
#include "twinspect/mesh.hpp"

namespace twinspect::pose {

TWINSPECT_ERROR(EmptyForeground);
TWINSPECT_ERROR(NoOverlap);

struct PoseEstimate {
    geom::Se3Pose pose;   // T_obj^cam
    double residual = 0;  // final loss (refine) or 1 - IoU (coarse)
    int iterations = 0;
    bool converged = false;
};

// Otsu threshold followed by largest-8-connected-component selection.
// EmptyForeground when the best component covers < 0.1% of the image.
Mask extract_foreground(const ImageF& image);

// Renders every template view's silhouette, keeps the best mask-IoU match,
// and rescales its distance so projected areas agree (area ~ 1/z^2).
PoseEstimate coarse_pose_match(const Mask& s0, const mesh::TriMesh& m,
                               const geom::CameraIntrinsics& k,
                               const geom::ViewpointPlan& template_views);

struct RefineOptions {
    int max_iters = 150;  // Nelder-Mead iterations per sharpness stage
    std::vector<double> sharpness_stages = {5.0, 15.0, 50.0};  // px^-1, coarse to fine
    double simplex_tol = 1e-4;    // scaled-units simplex diameter
    double rot_step = 0.05;       // initial simplex step, radians
    double trans_step = 0.025;    // initial simplex step, fraction of distance
    uint64_t seed = 0;
    std::vector<double>* loss_trace = nullptr;  // running-minimum trace, optional
};

// Minimizes mean((soft_mask - s0)^2) over a 6-vector (left-multiplied
// axis-angle increment, camera-frame translation increment), annealing the
// silhouette sharpness across restarts. Never returns a pose worse than the
// init under the final-stage loss; NotConverged is a flag, not a failure.
PoseEstimate refine_pose(const Mask& s0, const mesh::TriMesh& m, const geom::CameraIntrinsics& k,
                         const geom::Se3Pose& init, const RefineOptions& opts = {});

}  // namespace twinspect::pose
