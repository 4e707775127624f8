#include "twinspect/pose_est.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "twinspect/renderer.hpp"

namespace twinspect::pose {

namespace {

// Largest 8-connected component of a binary mask.
Mask largest_component(const Mask& m) {
    Mask out(m.width, m.height, 0);
    std::vector<uint8_t> seen(m.size(), 0);
    std::vector<size_t> best;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            const size_t root = size_t(y) * m.width + x;
            if (!m.data[root] || seen[root]) continue;
            std::vector<size_t> comp;
            seen[root] = 1;
            queue.push_back({x, y});
            while (!queue.empty()) {
                auto [cx, cy] = queue.front();
                queue.pop_front();
                comp.push_back(size_t(cy) * m.width + cx);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx, ny = cy + dy;
                        if (nx < 0 || ny < 0 || nx >= m.width || ny >= m.height) continue;
                        const size_t ni = size_t(ny) * m.width + nx;
                        if (m.data[ni] && !seen[ni]) {
                            seen[ni] = 1;
                            queue.push_back({nx, ny});
                        }
                    }
            }
            if (comp.size() > best.size()) best = std::move(comp);
        }
    for (size_t i : best) out.data[i] = 1;
    return out;
}

double mask_iou(const Mask& a, const Mask& b) {
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const bool va = a.data[i] != 0, vb = b.data[i] != 0;
        inter += va && vb;
        uni += va || vb;
    }
    return uni == 0 ? 0.0 : double(inter) / double(uni);
}

}  // namespace

Mask extract_foreground(const ImageF& image) {
    // Otsu over a 256-bin histogram.
    size_t hist[256] = {0};
    for (float v : image.data) {
        const int bin = std::clamp(int(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)), 0, 255);
        ++hist[size_t(bin)];
    }
    const double total = double(image.size());
    double sum_all = 0;
    for (int i = 0; i < 256; ++i) sum_all += double(i) * double(hist[i]);
    double sum_b = 0, w_b = 0, best_var = -1;
    int threshold = 0;
    for (int t = 0; t < 256; ++t) {
        w_b += double(hist[t]);
        if (w_b == 0) continue;
        const double w_f = total - w_b;
        if (w_f == 0) break;
        sum_b += double(t) * double(hist[t]);
        const double m_b = sum_b / w_b;
        const double m_f = (sum_all - sum_b) / w_f;
        const double var = w_b * w_f * (m_b - m_f) * (m_b - m_f);
        if (var > best_var) {
            best_var = var;
            threshold = t;
        }
    }
    Mask fg(image.width, image.height, 0);
    for (size_t i = 0; i < image.size(); ++i)
        fg.data[i] = std::lround(std::clamp(image.data[i], 0.0f, 1.0f) * 255.0f) > threshold;
    Mask comp = largest_component(fg);
    if (double(comp.count()) < 0.001 * total)
        throw EmptyForeground("no component above 0.1% of the image");
    return comp;
}

PoseEstimate coarse_pose_match(const Mask& s0, const mesh::TriMesh& m,
                               const geom::CameraIntrinsics& k,
                               const geom::ViewpointPlan& template_views) {
    if (s0.count() == 0) throw NoOverlap("empty foreground mask");
    if (template_views.poses.empty()) throw NoOverlap("template plan has no views");

    double best_iou = -1;
    size_t best_idx = 0;
    double best_area = 0;
    for (size_t i = 0; i < template_views.poses.size(); ++i) {
        const Mask tmpl =
            render::render_mask(m, geom::Se3Pose::identity(), template_views.poses[i], k);
        const double iou = mask_iou(tmpl, s0);
        if (iou > best_iou) {
            best_iou = iou;
            best_idx = i;
            best_area = double(tmpl.count());
        }
    }
    if (best_iou < 0.05) throw NoOverlap("best template IoU below 0.05");

    PoseEstimate est;
    est.iterations = int(template_views.poses.size());
    est.residual = 1.0 - best_iou;
    est.converged = true;
    // Projected area scales as 1/z^2: walking the translation along the
    // camera ray by sqrt(area_template / area_observed) matches the areas.
    const geom::Se3Pose obj_cam = template_views.poses[best_idx].inverse();
    const double scale = s0.count() > 0 ? std::sqrt(best_area / double(s0.count())) : 1.0;
    est.pose = geom::Se3Pose(obj_cam.rotation(), obj_cam.translation() * scale);
    return est;
}

// ---------------------------------------------------------------------------
// Nelder-Mead over the soft-silhouette loss
// ---------------------------------------------------------------------------

namespace {

using Vec6 = Eigen::Matrix<double, 6, 1>;

geom::Se3Pose apply_increment(const geom::Se3Pose& init, const Vec6& x, double dist_scale) {
    const geom::Vec3 omega = x.head<3>();
    const geom::Se3Pose rot = geom::Se3Pose::from_axis_angle(omega, geom::Vec3::Zero());
    return geom::Se3Pose(rot.rotation() * init.rotation(),
                         init.translation() + x.tail<3>() * dist_scale);
}

struct Simplex {
    std::vector<Vec6> x;
    std::vector<double> f;
};

double simplex_diameter(const Simplex& s, size_t best) {
    double d = 0;
    for (size_t i = 0; i < s.x.size(); ++i)
        if (i != best) d = std::max(d, (s.x[i] - s.x[best]).cwiseAbs().maxCoeff());
    return d;
}

}  // namespace

PoseEstimate refine_pose(const Mask& s0, const mesh::TriMesh& m, const geom::CameraIntrinsics& k,
                         const geom::Se3Pose& init, const RefineOptions& opts) {
    if (opts.max_iters <= 0) throw Error("refine_pose: max_iters must be > 0");
    const double dist_scale = std::max(init.translation().norm(), 1e-6);
    std::vector<float> target(s0.size());
    for (size_t i = 0; i < s0.size(); ++i) target[i] = s0.data[i] ? 1.0f : 0.0f;

    double running_min = std::numeric_limits<double>::infinity();
    auto loss_at = [&](const Vec6& x, double sharpness) {
        const geom::Se3Pose cam = geom::Se3Pose::identity();  // object pose in camera frame
        const geom::Se3Pose obj = apply_increment(init, x, dist_scale);
        const ImageF soft = render::soft_mask(m, obj, cam, k, sharpness);
        double acc = 0;
        for (size_t i = 0; i < soft.size(); ++i) {
            const double d = double(soft.data[i]) - target[i];
            acc += d * d;
        }
        const double loss = acc / double(soft.size());
        running_min = std::min(running_min, loss);
        if (opts.loss_trace) opts.loss_trace->push_back(running_min);
        return loss;
    };

    Rng rng(opts.seed);
    Vec6 best_x = Vec6::Zero();
    int total_iters = 0;
    bool converged = false;

    for (size_t stage = 0; stage < opts.sharpness_stages.size(); ++stage) {
        const double sharpness = opts.sharpness_stages[stage];
        running_min = std::numeric_limits<double>::infinity();
        const double shrinkage = stage == 0 ? 1.0 : 0.35;

        Simplex s;
        s.x.push_back(best_x);
        s.f.push_back(loss_at(best_x, sharpness));
        for (int i = 0; i < 6; ++i) {
            Vec6 v = best_x;
            const double step = (i < 3 ? opts.rot_step : opts.trans_step) * shrinkage;
            v[i] += step * (1.0 + 0.1 * (rng.uniform() - 0.5));
            s.x.push_back(v);
            s.f.push_back(loss_at(v, sharpness));
        }

        for (int iter = 0; iter < opts.max_iters; ++iter) {
            ++total_iters;
            std::vector<size_t> order(7);
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return s.f[a] < s.f[b]; });
            const size_t lo = order[0], hi = order[6], second_hi = order[5];

            if (simplex_diameter(s, lo) < opts.simplex_tol) {
                converged = true;
                break;
            }
            Vec6 centroid = Vec6::Zero();
            for (size_t i = 0; i < 7; ++i)
                if (i != hi) centroid += s.x[i];
            centroid /= 6.0;

            const Vec6 reflected = centroid + (centroid - s.x[hi]);
            const double f_r = loss_at(reflected, sharpness);
            if (f_r < s.f[lo]) {
                const Vec6 expanded = centroid + 2.0 * (centroid - s.x[hi]);
                const double f_e = loss_at(expanded, sharpness);
                if (f_e < f_r) {
                    s.x[hi] = expanded;
                    s.f[hi] = f_e;
                } else {
                    s.x[hi] = reflected;
                    s.f[hi] = f_r;
                }
            } else if (f_r < s.f[second_hi]) {
                s.x[hi] = reflected;
                s.f[hi] = f_r;
            } else {
                const Vec6 contracted = centroid + 0.5 * (s.x[hi] - centroid);
                const double f_c = loss_at(contracted, sharpness);
                if (f_c < s.f[hi]) {
                    s.x[hi] = contracted;
                    s.f[hi] = f_c;
                } else {
                    for (size_t i = 0; i < 7; ++i) {
                        if (i == lo) continue;
                        s.x[i] = s.x[lo] + 0.5 * (s.x[i] - s.x[lo]);
                        s.f[i] = loss_at(s.x[i], sharpness);
                    }
                }
            }
        }
        const size_t lo =
            size_t(std::min_element(s.f.begin(), s.f.end()) - s.f.begin());
        best_x = s.x[lo];
    }

    // Never hand back something worse than the init under the final loss.
    const double final_sharpness = opts.sharpness_stages.back();
    const double f_init = loss_at(Vec6::Zero(), final_sharpness);
    const double f_best = loss_at(best_x, final_sharpness);
    PoseEstimate est;
    est.iterations = total_iters;
    if (f_best <= f_init) {
        est.pose = apply_increment(init, best_x, dist_scale);
        est.residual = f_best;
        est.converged = converged;
    } else {
        est.pose = init;
        est.residual = f_init;
        est.converged = false;
    }
    return est;
}

}  // namespace twinspect::pose
