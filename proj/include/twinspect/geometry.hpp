// geometry.hpp — SE(3) poses, pinhole camera, look-at, and equal-area
// viewpoint planning on a sphere cap.
//
// Conventions used throughout the project:
//   * A pose T_A^B transforms A-frame coordinates into B-frame coordinates:
//     p_B = R p_A + t. compose(a, b) is the homogeneous matrix product A*B,
//     so T_obj^base = compose(compose(T_ee^base, T_cam^ee), T_obj^cam).
//   * Cameras look down +Z; project_point flags points with z <= 0.
//   * All geometry is double precision.
#pragma once

#include <Eigen/Dense>
#include <array>
#include <vector>

#include "twinspect/common.hpp"

namespace twinspect::geom {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

TWINSPECT_ERROR(InvalidPose);
TWINSPECT_ERROR(InvalidIntrinsics);
TWINSPECT_ERROR(ZeroViewpoints);

class Se3Pose {
  public:
    // Identity pose.
    Se3Pose() : r_(Mat3::Identity()), t_(Vec3::Zero()) {}

    // Validates orthonormality (R Rt = I, det R = +1, both within 1e-9).
    Se3Pose(const Mat3& rotation, const Vec3& translation);

    static Se3Pose identity() { return Se3Pose(); }

    // Rodrigues exponential of an axis-angle vector plus translation.
    static Se3Pose from_axis_angle(const Vec3& axis_angle, const Vec3& translation);

    const Mat3& rotation() const { return r_; }
    const Vec3& translation() const { return t_; }

    Vec3 apply(const Vec3& p) const { return r_ * p + t_; }

    Se3Pose inverse() const;

    Eigen::Matrix4d matrix() const;

    // 12 doubles: row-major R then t. Matches the on-disk metadata layout.
    std::array<double, 12> serialize() const;
    static Se3Pose deserialize(const std::array<double, 12>& v);

  private:
    Mat3 r_;
    Vec3 t_;
};

// Homogeneous product a * b (apply b first, then a, in coordinate terms).
Se3Pose compose(const Se3Pose& a, const Se3Pose& b);

// Eq-2-style chain: T_obj^base = T_ee^base * T_cam^ee * T_obj^cam.
Se3Pose object_pose_in_base(const Se3Pose& t_ee_base, const Se3Pose& t_cam_ee,
                            const Se3Pose& t_obj_cam);

struct CameraIntrinsics {
    double fx = 0, fy = 0;
    double cx = 0, cy = 0;
    int width = 0, height = 0;

    CameraIntrinsics() = default;
    CameraIntrinsics(double fx_, double fy_, double cx_, double cy_, int w, int h);
};

struct PixelProjection {
    bool behind_camera = false;
    double x = 0, y = 0;
};

// Pinhole projection of a camera-frame point; behind-camera flag when z <= 0.
PixelProjection project_point(const Vec3& p, const CameraIntrinsics& k);

// Camera-to-world pose with +Z pointing from eye toward target. Degenerate
// up hints fall back to (0,0,1) and then (1,0,0), deterministically.
Se3Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up_hint);

struct ViewpointPlan {
    Vec3 center = Vec3::Zero();
    double radius = 0;
    std::vector<Se3Pose> poses;  // camera-to-base
};

// Elevation of a pose above the center's z-plane, degrees in [-90, 90].
double elevation_deg(const Se3Pose& pose, const Vec3& center);

// Near-equal-area viewpoints: a Fibonacci lattice over the full sphere,
// filtered to the elevation band, each pose looking at the center from
// distance `radius`. Deterministic; the returned count stays within a few
// samples of target_count.
ViewpointPlan sample_viewpoints(const Vec3& center, double radius, int target_count,
                                double elev_min_deg, double elev_max_deg);

}  // namespace twinspect::geom
