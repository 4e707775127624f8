#include "twinspect/geometry.hpp"

#include <cmath>

namespace twinspect::geom {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kOrthoTol = 1e-9;
}  // namespace

Se3Pose::Se3Pose(const Mat3& rotation, const Vec3& translation)
    : r_(rotation), t_(translation) {
    const double ortho = (r_ * r_.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    const double det = r_.determinant();
    if (ortho > kOrthoTol || std::abs(det - 1.0) > kOrthoTol)
        throw InvalidPose("rotation not orthonormal: max|RRt-I|=" + std::to_string(ortho) +
                          " det=" + std::to_string(det));
    if (!t_.allFinite()) throw InvalidPose("non-finite translation");
}

Se3Pose Se3Pose::from_axis_angle(const Vec3& axis_angle, const Vec3& translation) {
    const double theta = axis_angle.norm();
    Mat3 r;
    if (theta < 1e-12) {
        // Second-order expansion keeps the result orthonormal to machine eps.
        Mat3 k;
        k << 0, -axis_angle.z(), axis_angle.y(), axis_angle.z(), 0, -axis_angle.x(),
            -axis_angle.y(), axis_angle.x(), 0;
        r = Mat3::Identity() + k + 0.5 * k * k;
        Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
        r = svd.matrixU() * svd.matrixV().transpose();
    } else {
        const Vec3 axis = axis_angle / theta;
        r = Eigen::AngleAxisd(theta, axis).toRotationMatrix();
    }
    return Se3Pose(r, translation);
}

Se3Pose Se3Pose::inverse() const {
    Mat3 rt = r_.transpose();
    return Se3Pose(rt, -(rt * t_));
}

Eigen::Matrix4d Se3Pose::matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.block<3, 3>(0, 0) = r_;
    m.block<3, 1>(0, 3) = t_;
    return m;
}

std::array<double, 12> Se3Pose::serialize() const {
    std::array<double, 12> out{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out[size_t(i * 3 + j)] = r_(i, j);
    for (int i = 0; i < 3; ++i) out[size_t(9 + i)] = t_(i);
    return out;
}

Se3Pose Se3Pose::deserialize(const std::array<double, 12>& v) {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r(i, j) = v[size_t(i * 3 + j)];
    return Se3Pose(r, Vec3(v[9], v[10], v[11]));
}

Se3Pose compose(const Se3Pose& a, const Se3Pose& b) {
    return Se3Pose(a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation());
}

Se3Pose object_pose_in_base(const Se3Pose& t_ee_base, const Se3Pose& t_cam_ee,
                            const Se3Pose& t_obj_cam) {
    return compose(compose(t_ee_base, t_cam_ee), t_obj_cam);
}

CameraIntrinsics::CameraIntrinsics(double fx_, double fy_, double cx_, double cy_, int w, int h)
    : fx(fx_), fy(fy_), cx(cx_), cy(cy_), width(w), height(h) {
    if (fx <= 0 || fy <= 0) throw InvalidIntrinsics("focal lengths must be positive");
    if (w <= 0 || h <= 0) throw InvalidIntrinsics("resolution must be positive");
    if (cx < 0 || cx >= w || cy < 0 || cy >= h)
        throw InvalidIntrinsics("principal point outside the image");
}

PixelProjection project_point(const Vec3& p, const CameraIntrinsics& k) {
    PixelProjection out;
    if (p.z() <= 0.0) {
        out.behind_camera = true;
        return out;
    }
    out.x = k.fx * p.x() / p.z() + k.cx;
    out.y = k.fy * p.y() / p.z() + k.cy;
    return out;
}

Se3Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up_hint) {
    Vec3 forward = target - eye;
    const double dist = forward.norm();
    if (dist < 1e-15) throw InvalidPose("look_at: eye equals target");
    forward /= dist;

    Vec3 up = up_hint;
    Vec3 right = up.cross(forward);
    if (right.norm() < 1e-9) {
        up = Vec3(0, 0, 1);
        right = up.cross(forward);
        if (right.norm() < 1e-9) {
            up = Vec3(1, 0, 0);
            right = up.cross(forward);
        }
    }
    right.normalize();
    const Vec3 down = forward.cross(right);  // completes a right-handed frame

    Mat3 r;
    r.col(0) = right;
    r.col(1) = down;
    r.col(2) = forward;
    return Se3Pose(r, eye);
}

double elevation_deg(const Se3Pose& pose, const Vec3& center) {
    const Vec3 d = pose.translation() - center;
    const double n = d.norm();
    if (n < 1e-15) return 0.0;
    return std::asin(std::clamp(d.z() / n, -1.0, 1.0)) * 180.0 / kPi;
}

ViewpointPlan sample_viewpoints(const Vec3& center, double radius, int target_count,
                                double elev_min_deg, double elev_max_deg) {
    if (radius <= 0) throw ZeroViewpoints("radius must be positive");
    if (!(elev_min_deg >= 0 && elev_min_deg < elev_max_deg && elev_max_deg <= 90))
        throw ZeroViewpoints("elevation band must satisfy 0 <= min < max <= 90");
    if (target_count < 1) throw ZeroViewpoints("target_count must be >= 1");

    const double z_lo = std::sin(elev_min_deg * kPi / 180.0);
    const double z_hi = std::sin(elev_max_deg * kPi / 180.0);
    const double band_fraction = (z_hi - z_lo) / 2.0;  // of the full sphere

    // Lay a Fibonacci lattice over the whole sphere sized so the band keeps
    // roughly target_count points, then filter on elevation.
    const int full_count = std::max(target_count, int(std::ceil(target_count / band_fraction)));
    const double golden = (1.0 + std::sqrt(5.0)) / 2.0;

    ViewpointPlan plan;
    plan.center = center;
    plan.radius = radius;
    for (int i = 0; i < full_count; ++i) {
        const double z = -1.0 + 2.0 * (i + 0.5) / full_count;
        if (z < z_lo || z > z_hi) continue;
        const double azimuth = 2.0 * kPi * std::fmod(i / golden, 1.0);
        const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
        const Vec3 dir(rho * std::cos(azimuth), rho * std::sin(azimuth), z);
        const Vec3 eye = center + radius * dir;
        plan.poses.push_back(look_at(eye, center, Vec3(0, 0, 1)));
    }
    if (plan.poses.empty())
        throw ZeroViewpoints("elevation band excluded every lattice point");
    return plan;
}

}  // namespace twinspect::geom
