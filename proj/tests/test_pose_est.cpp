#include <doctest.h>

#include <cmath>

#include "twinspect/pose_est.hpp"
#include "twinspect/renderer.hpp"
#include "twinspect/scene_sim.hpp"

using namespace twinspect;
using geom::Se3Pose;
using geom::Vec3;

namespace {

const Vec3 kLight = Vec3(0.25, -0.2, -0.95).normalized();

double rotation_error_deg(const geom::Mat3& a, const geom::Mat3& b) {
    const double tr = (a.transpose() * b).trace();
    return std::acos(std::clamp((tr - 1.0) / 2.0, -1.0, 1.0)) * 180.0 / 3.14159265358979323846;
}

double mask_iou(const Mask& a, const Mask& b) {
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        inter += a.data[i] && b.data[i];
        uni += a.data[i] || b.data[i];
    }
    return uni ? double(inter) / double(uni) : 0.0;
}

}  // namespace

TEST_CASE("extract_foreground: neutral render recovers the render mask") {
    const auto m = mesh::make_flanged_block();
    const geom::CameraIntrinsics k(420, 420, 126, 126, 252, 252);
    const double r = 2.0 * m.bounding_sphere_radius();
    const auto cam = geom::look_at(m.bbox_center() + Vec3(0.5 * r, 0.4 * r, 0.6 * r),
                                   m.bbox_center(), Vec3(0, 0, 1));
    const auto out = render::rasterize(m, Se3Pose::identity(), cam, k, kLight);
    const Mask fg = pose::extract_foreground(out.image);
    CHECK(mask_iou(fg, out.mask) >= 0.99);

    CHECK_THROWS_AS(pose::extract_foreground(ImageF(64, 64, 0.0f)), pose::EmptyForeground);
}

TEST_CASE("extract_foreground: robust to sensor noise") {
    const auto m = mesh::make_flanged_block();
    const geom::CameraIntrinsics k(420, 420, 126, 126, 252, 252);
    const double r = 2.0 * m.bounding_sphere_radius();
    const auto cam = geom::look_at(m.bbox_center() + Vec3(0.45 * r, 0.5 * r, 0.55 * r),
                                   m.bbox_center(), Vec3(0, 0, 1));
    const auto out = render::rasterize(m, Se3Pose::identity(), cam, k, kLight);
    sim::DomainParams p;
    p.noise_sigma = 0.05;
    p.seed = 3;
    const ImageF noisy =
        sim::synthesize_real(out, p, m, Se3Pose::identity(), cam, k, kLight);
    const Mask fg = pose::extract_foreground(noisy);
    CHECK(mask_iou(fg, out.mask) >= 0.95);
}

TEST_CASE("coarse_pose_match: membership, distance rescale, no-overlap") {
    const auto m = mesh::make_flanged_block();
    const geom::CameraIntrinsics k(420, 420, 126, 126, 252, 252);
    const double radius = 2.0 * m.bounding_sphere_radius();
    const auto plan = geom::sample_viewpoints(m.bbox_center(), radius, 40, 20, 80);

    // A mask generated from a template view must return that template.
    const size_t pick = 13;
    const Mask s0 = render::render_mask(m, Se3Pose::identity(), plan.poses[pick], k);
    const auto est = pose::coarse_pose_match(s0, m, k, plan);
    CHECK(est.converged);
    CHECK(std::abs(est.residual) < 1e-9);
    const Se3Pose expect = plan.poses[pick].inverse();
    CHECK(rotation_error_deg(est.pose.rotation(), expect.rotation()) < 1e-6);
    CHECK((est.pose.translation() - expect.translation()).norm() < 1e-9);

    // Observation at 1.5x the template distance: area rescale recovers it.
    const auto far_cam = geom::look_at(
        m.bbox_center() + 1.5 * (plan.poses[pick].translation() - m.bbox_center()),
        m.bbox_center(), Vec3(0, 0, 1));
    const Mask far_mask = render::render_mask(m, Se3Pose::identity(), far_cam, k);
    const auto far_est = pose::coarse_pose_match(far_mask, m, k, plan);
    const double true_dist = far_cam.inverse().translation().norm();
    CHECK(std::abs(far_est.pose.translation().norm() - true_dist) / true_dist < 0.05);

    // A sparse random mask overlaps nothing.
    Mask noise(252, 252, 0);
    Rng rng(8);
    for (int i = 0; i < 300; ++i)
        noise.data[size_t(rng.below(noise.size()))] = 1;
    CHECK_THROWS_AS(pose::coarse_pose_match(noise, m, k, plan), pose::NoOverlap);
}

TEST_CASE("refine_pose: true pose is a fixed point") {
    const auto m = mesh::make_flanged_block();
    const geom::CameraIntrinsics k(420, 420, 126, 126, 252, 252);
    const double r = 2.0 * m.bounding_sphere_radius();
    const auto cam = geom::look_at(m.bbox_center() + Vec3(0.5 * r, 0.42 * r, 0.58 * r),
                                   m.bbox_center(), Vec3(0, 0, 1));
    const Se3Pose truth = cam.inverse();
    const Mask s0 = render::render_mask(m, truth, Se3Pose::identity(), k);

    pose::RefineOptions opts;
    opts.seed = 4;
    std::vector<double> trace;
    opts.loss_trace = &trace;
    const auto est = pose::refine_pose(s0, m, k, truth, opts);
    CHECK(est.converged);
    CHECK(rotation_error_deg(est.pose.rotation(), truth.rotation()) < 0.1);
    CHECK((est.pose.translation() - truth.translation()).norm() <
          0.001 * truth.translation().norm());
    // Running minimum is monotone non-increasing.
    for (size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1] + 1e-15);
}

TEST_CASE("refine_pose: recovers seeded perturbations and improves IoU") {
    const auto m = mesh::make_flanged_block();
    const geom::CameraIntrinsics k(420, 420, 126, 126, 252, 252);
    const double r = 2.0 * m.bounding_sphere_radius();
    Rng rng(55);
    int recovered = 0;
    const int trials = 5;
    for (int t = 0; t < trials; ++t) {
        const auto view = geom::sample_viewpoints(m.bbox_center(), r, 40, 25, 75);
        const auto cam = view.poses[size_t(rng.below(view.poses.size()))];
        const Se3Pose truth = cam.inverse();
        const Mask s0 = render::render_mask(m, truth, Se3Pose::identity(), k);

        // Perturb up to 5 degrees and 3% of the distance.
        Vec3 axis(rng.normal(), rng.normal(), rng.normal());
        axis.normalize();
        const double angle = (5.0 * 3.14159265358979323846 / 180.0) * rng.uniform();
        Vec3 dt(rng.normal(), rng.normal(), rng.normal());
        dt.normalize();
        const Se3Pose delta = Se3Pose::from_axis_angle(axis * angle, Vec3::Zero());
        const Se3Pose init(delta.rotation() * truth.rotation(),
                           truth.translation() + dt * (0.03 * truth.translation().norm() * rng.uniform()));

        pose::RefineOptions opts;
        opts.seed = 100 + uint64_t(t);
        const auto est = pose::refine_pose(s0, m, k, init, opts);

        const double rot_err = rotation_error_deg(est.pose.rotation(), truth.rotation());
        const double trans_err =
            (est.pose.translation() - truth.translation()).norm() / truth.translation().norm();
        if (rot_err <= 1.0 && trans_err <= 0.01) ++recovered;

        const Mask before = render::render_mask(m, init, Se3Pose::identity(), k);
        const Mask after = render::render_mask(m, est.pose, Se3Pose::identity(), k);
        CHECK(mask_iou(after, s0) >= mask_iou(before, s0));
        CHECK(est.residual >= 0.0);
    }
    CHECK(recovered >= 4);
}

TEST_CASE("refine_pose is deterministic for a fixed seed") {
    const auto m = mesh::make_cube(0.08);
    const geom::CameraIntrinsics k(250, 250, 64, 64, 128, 128);
    const auto cam = geom::look_at(Vec3(0.2, 0.16, 0.24), Vec3::Zero(), Vec3(0, 0, 1));
    const Se3Pose truth = cam.inverse();
    const Mask s0 = render::render_mask(m, truth, Se3Pose::identity(), k);
    const Se3Pose init = Se3Pose(
        Se3Pose::from_axis_angle(Vec3(0.03, -0.02, 0.04), Vec3::Zero()).rotation() * truth.rotation(),
        truth.translation() * 1.01);
    pose::RefineOptions opts;
    opts.seed = 9;
    const auto a = pose::refine_pose(s0, m, k, init, opts);
    const auto b = pose::refine_pose(s0, m, k, init, opts);
    CHECK(a.residual == b.residual);
    CHECK(a.iterations == b.iterations);
    CHECK((a.pose.matrix() - b.pose.matrix()).cwiseAbs().maxCoeff() == 0.0);
}
