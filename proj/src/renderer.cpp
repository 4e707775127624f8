#include "twinspect/renderer.hpp"

#include <algorithm>
#include <cmath>

namespace twinspect::render {

namespace {

constexpr double kNearZ = 1e-6;

struct CamTri {
    Vec3 v[3];    // camera-frame vertices, all z > kNearZ
    int face;     // source face index
};

// Clips one triangle against the z = kNearZ plane (Sutherland-Hodgman),
// emitting 0-2 triangles.
void clip_near(const Vec3 in[3], int face, std::vector<CamTri>& out) {
    Vec3 poly[4];
    int n = 0;
    for (int i = 0; i < 3; ++i) {
        const Vec3& a = in[i];
        const Vec3& b = in[(i + 1) % 3];
        const bool a_in = a.z() > kNearZ;
        const bool b_in = b.z() > kNearZ;
        if (a_in) poly[n++] = a;
        if (a_in != b_in) {
            const double t = (kNearZ - a.z()) / (b.z() - a.z());
            poly[n++] = a + t * (b - a);
        }
    }
    for (int i = 1; i + 1 < n; ++i) out.push_back({{poly[0], poly[i], poly[i + 1]}, face});
}

struct Projected {
    double x[3], y[3], inv_z[3];
    double area;  // signed, in pixels^2
};

Projected project_tri(const CamTri& t, const CameraIntrinsics& k) {
    Projected p{};
    for (int i = 0; i < 3; ++i) {
        p.x[i] = k.fx * t.v[i].x() / t.v[i].z() + k.cx;
        p.y[i] = k.fy * t.v[i].y() / t.v[i].z() + k.cy;
        p.inv_z[i] = 1.0 / t.v[i].z();
    }
    p.area = (p.x[1] - p.x[0]) * (p.y[2] - p.y[0]) - (p.x[2] - p.x[0]) * (p.y[1] - p.y[0]);
    return p;
}

double sigmoid(double x) {
    if (x >= 0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Signed 2-D distance from point (px,py) to the triangle boundary:
// positive inside, negative outside.
double signed_dist_tri(double px, double py, const Projected& t) {
    double min_d2 = std::numeric_limits<double>::infinity();
    bool inside = true;
    const double orient = t.area >= 0 ? 1.0 : -1.0;
    for (int i = 0; i < 3; ++i) {
        const int j = (i + 1) % 3;
        const double ex = t.x[j] - t.x[i];
        const double ey = t.y[j] - t.y[i];
        const double qx = px - t.x[i];
        const double qy = py - t.y[i];
        const double cross = ex * qy - ey * qx;
        if (cross * orient < 0) inside = false;
        const double len2 = ex * ex + ey * ey;
        double s = len2 > 0 ? (qx * ex + qy * ey) / len2 : 0.0;
        s = std::clamp(s, 0.0, 1.0);
        const double dx = qx - s * ex;
        const double dy = qy - s * ey;
        min_d2 = std::min(min_d2, dx * dx + dy * dy);
    }
    const double d = std::sqrt(min_d2);
    return inside ? d : -d;
}

std::vector<CamTri> to_camera(const mesh::TriMesh& m, const Se3Pose& t_obj_base,
                              const Se3Pose& t_cam_base) {
    const Se3Pose obj_to_cam = geom::compose(t_cam_base.inverse(), t_obj_base);
    std::vector<Vec3> cam_verts(m.vertices.size());
    for (size_t i = 0; i < m.vertices.size(); ++i) cam_verts[i] = obj_to_cam.apply(m.vertices[i]);
    std::vector<CamTri> tris;
    tris.reserve(m.triangles.size());
    for (size_t f = 0; f < m.triangles.size(); ++f) {
        const auto& t = m.triangles[f];
        Vec3 v[3] = {cam_verts[size_t(t[0])], cam_verts[size_t(t[1])], cam_verts[size_t(t[2])]};
        if (v[0].z() > kNearZ && v[1].z() > kNearZ && v[2].z() > kNearZ)
            tris.push_back({{v[0], v[1], v[2]}, int(f)});
        else if (v[0].z() > kNearZ || v[1].z() > kNearZ || v[2].z() > kNearZ)
            clip_near(v, int(f), tris);
    }
    return tris;
}

RasterOutput raster_impl(const mesh::TriMesh& m, const Se3Pose& t_obj_base,
                         const Se3Pose& t_cam_base, const CameraIntrinsics& k,
                         const Vec3* light_dir) {
    RasterOutput out;
    out.image = ImageF(k.width, k.height, 0.0f);
    out.mask = Mask(k.width, k.height, 0);
    out.depth.assign(size_t(k.width) * k.height, std::numeric_limits<float>::infinity());

    const auto tris = to_camera(m, t_obj_base, t_cam_base);
    for (const auto& ct : tris) {
        const Projected p = project_tri(ct, k);
        if (p.area == 0.0) continue;
        const double sgn = p.area > 0 ? 1.0 : -1.0;
        const double inv_area = 1.0 / p.area;

        float shade = 1.0f;
        if (light_dir) {
            // Flat shading on the camera-frame normal, flipped toward the
            // camera so inconsistent winding still lights up.
            Vec3 n = (ct.v[1] - ct.v[0]).cross(ct.v[2] - ct.v[0]);
            const double nn = n.norm();
            if (nn > 0) {
                n /= nn;
                const Vec3 centroid = (ct.v[0] + ct.v[1] + ct.v[2]) / 3.0;
                if (n.dot(centroid) > 0) n = -n;  // make it face the origin
                const double lambert = std::max(0.0, n.dot(*light_dir));
                shade = float(std::clamp(double(m.albedo[size_t(ct.face)]) * lambert, 0.05, 1.0));
            } else {
                shade = 0.05f;
            }
        }

        const int x_lo = std::max(0, int(std::ceil(std::min({p.x[0], p.x[1], p.x[2]}) - 0.5)));
        const int x_hi = std::min(k.width - 1, int(std::floor(std::max({p.x[0], p.x[1], p.x[2]}) - 0.5)));
        const int y_lo = std::max(0, int(std::ceil(std::min({p.y[0], p.y[1], p.y[2]}) - 0.5)));
        const int y_hi = std::min(k.height - 1, int(std::floor(std::max({p.y[0], p.y[1], p.y[2]}) - 0.5)));

        for (int py = y_lo; py <= y_hi; ++py) {
            const double cyp = py + 0.5;
            for (int px = x_lo; px <= x_hi; ++px) {
                const double cxp = px + 0.5;
                // Edge functions, orientation-normalized; boundary inclusive.
                const double e0 = ((p.x[1] - p.x[0]) * (cyp - p.y[0]) - (p.y[1] - p.y[0]) * (cxp - p.x[0])) * sgn;
                const double e1 = ((p.x[2] - p.x[1]) * (cyp - p.y[1]) - (p.y[2] - p.y[1]) * (cxp - p.x[1])) * sgn;
                const double e2 = ((p.x[0] - p.x[2]) * (cyp - p.y[2]) - (p.y[0] - p.y[2]) * (cxp - p.x[2])) * sgn;
                if (e0 < 0 || e1 < 0 || e2 < 0) continue;
                // Screen-space barycentrics interpolate 1/z exactly.
                const double l0 = e1 * inv_area * sgn;
                const double l1 = e2 * inv_area * sgn;
                const double l2 = e0 * inv_area * sgn;
                const double inv_z = l0 * p.inv_z[0] + l1 * p.inv_z[1] + l2 * p.inv_z[2];
                if (inv_z <= 0) continue;
                const float z = float(1.0 / inv_z);
                float& zbuf = out.depth[size_t(py) * k.width + px];
                if (z < zbuf) {
                    zbuf = z;
                    out.mask.at(px, py) = 1;
                    out.image.at(px, py) = shade;
                }
            }
        }
    }
    if (!light_dir)
        for (size_t i = 0; i < out.image.data.size(); ++i)
            out.image.data[i] = out.mask.data[i] ? 1.0f : 0.0f;
    return out;
}

}  // namespace

RasterOutput rasterize(const mesh::TriMesh& m, const Se3Pose& t_obj_base,
                       const Se3Pose& t_cam_base, const CameraIntrinsics& k,
                       const Vec3& light_dir) {
    if (std::abs(light_dir.norm() - 1.0) > 1e-6)
        throw InvalidLightDir("light_dir must be unit length");
    return raster_impl(m, t_obj_base, t_cam_base, k, &light_dir);
}

Mask render_mask(const mesh::TriMesh& m, const Se3Pose& t_obj_base, const Se3Pose& t_cam_base,
                 const CameraIntrinsics& k) {
    return raster_impl(m, t_obj_base, t_cam_base, k, nullptr).mask;
}

ImageF soft_mask(const mesh::TriMesh& m, const Se3Pose& t_obj_base, const Se3Pose& t_cam_base,
                 const CameraIntrinsics& k, double sharpness) {
    if (!(sharpness > 0)) throw Error("soft_mask: sharpness must be positive");
    // miss(p) accumulates prod_t (1 - sigmoid(sharpness * d_t)).
    std::vector<double> miss(size_t(k.width) * k.height, 1.0);
    const double margin = 12.0 / sharpness + 0.5;

    const auto tris = to_camera(m, t_obj_base, t_cam_base);
    for (const auto& ct : tris) {
        const Projected p = project_tri(ct, k);
        if (p.area == 0.0) continue;
        const int x_lo = std::max(0, int(std::floor(std::min({p.x[0], p.x[1], p.x[2]}) - margin)));
        const int x_hi = std::min(k.width - 1, int(std::ceil(std::max({p.x[0], p.x[1], p.x[2]}) + margin)));
        const int y_lo = std::max(0, int(std::floor(std::min({p.y[0], p.y[1], p.y[2]}) - margin)));
        const int y_hi = std::min(k.height - 1, int(std::ceil(std::max({p.y[0], p.y[1], p.y[2]}) + margin)));
        for (int py = y_lo; py <= y_hi; ++py) {
            for (int px = x_lo; px <= x_hi; ++px) {
                double& cell = miss[size_t(py) * k.width + px];
                if (cell == 0.0) continue;
                const double d = signed_dist_tri(px + 0.5, py + 0.5, p);
                if (d < -margin) continue;  // sigmoid ~ 0, factor ~ 1
                cell *= 1.0 - sigmoid(sharpness * d);
            }
        }
    }
    ImageF out(k.width, k.height);
    for (size_t i = 0; i < miss.size(); ++i) out.data[i] = float(1.0 - miss[i]);
    return out;
}

}  // namespace twinspect::render
