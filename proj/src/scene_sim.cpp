#include "twinspect/scene_sim.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

namespace twinspect::sim {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kSpecularAmplitude = 0.30;
constexpr double kPi = 3.14159265358979323846;

// Unresolved defect locations are marked NaN until the generator samples
// them from the rendered foreground.
bool location_resolved(const DefectSpec& s) { return std::isfinite(s.u) && std::isfinite(s.v); }

}  // namespace

void DomainParams::validate() const {
    if (!(gain > 0)) throw ConfigError("domain.gain must be > 0");
    if (!(gamma > 0)) throw ConfigError("domain.gamma must be > 0");
    if (!(noise_sigma >= 0)) throw ConfigError("domain.noise_sigma must be >= 0");
    if (specular_count < 0) throw ConfigError("domain.specular_count must be >= 0");
    if (!(specular_radius_px > 0)) throw ConfigError("domain.specular_radius_px must be > 0");
    if (!(jitter_rot_deg >= 0) || !(jitter_trans_frac >= 0))
        throw ConfigError("domain jitter magnitudes must be >= 0");
}

void DefectSpec::validate() const {
    if (!(size_frac > 0 && size_frac <= 0.5))
        throw ConfigError("defect.size_frac must lie in (0, 0.5]");
    if (!(magnitude > 0)) throw DegenerateDefect("defect.magnitude must be > 0");
}

void DatasetConfig::validate() const {
    auto positive = [](double v, const char* path) {
        if (!(v > 0)) throw ConfigError(std::string(path) + " must be > 0");
    };
    positive(fx, "image.fx");
    positive(fy, "image.fy");
    if (width <= 0 || height <= 0) throw ConfigError("image.width/height must be > 0");
    if (patch <= 0 || width % patch != 0 || height % patch != 0)
        throw ConfigError("image.patch must divide width and height");
    if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
        throw ConfigError("image.cx/cy must lie inside the image");
    if (viewpoint_target < 1) throw ConfigError("viewpoints.target_count must be >= 1");
    if (!(elev_min >= 0 && elev_min < elev_max && elev_max <= 90))
        throw ConfigError("viewpoints.elev band must satisfy 0 <= min < max <= 90");
    positive(radius_scale, "viewpoints.radius_scale");
    if (train_count < 0 || test_normal < 0 || test_texture < 0 || test_structural < 0 ||
        test_logical < 0)
        throw ConfigError("counts.* must be >= 0");
    auto range_ok = [](const Range& r, const char* path, bool pos) {
        if (r.lo > r.hi || (pos && !(r.lo > 0)))
            throw ConfigError(std::string(path) + " range invalid");
    };
    range_ok(gain, "domain.gain", true);
    range_ok(gamma, "domain.gamma", true);
    range_ok(bias, "domain.bias", false);
    if (!(noise_sigma >= 0)) throw ConfigError("domain.noise_sigma must be >= 0");
    if (specular_count < 0) throw ConfigError("domain.specular_count must be >= 0");
    if (!(jitter_rot_deg >= 0) || !(jitter_trans_frac >= 0))
        throw ConfigError("domain.jitter must be >= 0");
    range_ok(texture_size, "defect.texture.size_frac", true);
    range_ok(texture_mag, "defect.texture.magnitude", true);
    range_ok(structural_size, "defect.structural.size_frac", true);
    range_ok(structural_mag, "defect.structural.magnitude", true);
    range_ok(logical_mag, "defect.logical.magnitude", true);
    if (!(logical_size_frac > 0 && logical_size_frac <= 0.5))
        throw ConfigError("defect.logical.size_frac must lie in (0, 0.5]");
}

// ---------------------------------------------------------------------------
// synthesize_real
// ---------------------------------------------------------------------------

ImageF synthesize_real(const render::RasterOutput& rendered, const DomainParams& params,
                       const mesh::TriMesh& m, const geom::Se3Pose& t_obj_base,
                       const geom::Se3Pose& t_cam_base, const geom::CameraIntrinsics& k,
                       const geom::Vec3& light_dir) {
    params.validate();
    const Mask& mask_w = rendered.mask;
    Rng rng(params.seed);

    // Jitter draws happen unconditionally so the stream layout is fixed.
    geom::Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    if (axis.norm() < 1e-12) axis = geom::Vec3(0, 0, 1);
    axis.normalize();
    const double angle = params.jitter_rot_deg * kPi / 180.0 * rng.uniform();
    geom::Vec3 tdir(rng.normal(), rng.normal(), rng.normal());
    if (tdir.norm() < 1e-12) tdir = geom::Vec3(1, 0, 0);
    tdir.normalize();
    const double cam_dist =
        (geom::compose(t_cam_base.inverse(), t_obj_base)).translation().norm();
    const double tmag = params.jitter_trans_frac * cam_dist * rng.uniform();

    const ImageF* base = &rendered.image;
    render::RasterOutput jittered;
    if (angle != 0.0 || tmag != 0.0) {
        const geom::Se3Pose delta = geom::Se3Pose::from_axis_angle(axis * angle, tdir * tmag);
        jittered = render::rasterize(m, t_obj_base, geom::compose(t_cam_base, delta), k, light_dir);
        base = &jittered.image;
    }

    ImageF out(k.width, k.height, 0.0f);
    const bool plain_gamma = params.gamma == 1.0;
    for (size_t i = 0; i < out.size(); ++i) {
        if (!mask_w.data[i]) continue;
        double v = base->data[i];
        if (!plain_gamma) v = std::pow(std::max(0.0, v), params.gamma);
        out.data[i] = float(params.gain * v + params.bias);
    }

    // Specular blobs, centered on render-mask pixels so the draw sequence is
    // independent of the jittered silhouette.
    if (params.specular_count > 0) {
        std::vector<std::pair<int, int>> fg;
        fg.reserve(mask_w.count());
        for (int y = 0; y < mask_w.height; ++y)
            for (int x = 0; x < mask_w.width; ++x)
                if (mask_w.at(x, y)) fg.emplace_back(x, y);
        const double sigma = params.specular_radius_px;
        const int reach = int(std::ceil(3.0 * sigma));
        for (int s = 0; s < params.specular_count && !fg.empty(); ++s) {
            const auto [cx, cy] = fg[size_t(rng.below(fg.size()))];
            for (int y = std::max(0, cy - reach); y <= std::min(k.height - 1, cy + reach); ++y)
                for (int x = std::max(0, cx - reach); x <= std::min(k.width - 1, cx + reach); ++x) {
                    if (!mask_w.at(x, y)) continue;
                    const double d2 = double(x - cx) * (x - cx) + double(y - cy) * (y - cy);
                    out.at(x, y) += float(kSpecularAmplitude * std::exp(-0.5 * d2 / (sigma * sigma)));
                }
        }
    }

    if (params.noise_sigma > 0) {
        for (size_t i = 0; i < out.size(); ++i)
            if (mask_w.data[i]) out.data[i] += float(params.noise_sigma * rng.normal());
    }

    for (size_t i = 0; i < out.size(); ++i)
        if (mask_w.data[i]) out.data[i] = std::clamp(out.data[i], 0.0f, 1.0f);
    return out;
}

// ---------------------------------------------------------------------------
// Defect injection
// ---------------------------------------------------------------------------

namespace {

struct Ellipse {
    double cx, cy, a, b, cos_t, sin_t;
    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double u = (dx * cos_t + dy * sin_t) / a;
        const double v = (-dx * sin_t + dy * cos_t) / b;
        return u * u + v * v <= 1.0;
    }
};

std::array<int, 4> mask_bbox(const Mask& m) {
    int x0 = m.width, y0 = m.height, x1 = -1, y1 = -1;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(x, y)) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    return {x0, y0, x1, y1};
}

// Approximate interior distance (chamfer 3-4, normalized to pixels).
std::vector<float> chamfer_interior(const Mask& m) {
    const int w = m.width, h = m.height;
    const float big = 1e9f;
    std::vector<float> d(size_t(w) * h);
    for (size_t i = 0; i < d.size(); ++i) d[i] = m.data[i] ? big : 0.0f;
    auto at = [&](int x, int y) -> float& { return d[size_t(y) * w + x]; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (at(x, y) == 0.0f) continue;
            float best = at(x, y);
            if (x > 0) best = std::min(best, at(x - 1, y) + 3);
            if (y > 0) {
                best = std::min(best, at(x, y - 1) + 3);
                if (x > 0) best = std::min(best, at(x - 1, y - 1) + 4);
                if (x + 1 < w) best = std::min(best, at(x + 1, y - 1) + 4);
            }
            at(x, y) = best;
        }
    for (int y = h - 1; y >= 0; --y)
        for (int x = w - 1; x >= 0; --x) {
            if (at(x, y) == 0.0f) continue;
            float best = at(x, y);
            if (x + 1 < w) best = std::min(best, at(x + 1, y) + 3);
            if (y + 1 < h) {
                best = std::min(best, at(x, y + 1) + 3);
                if (x + 1 < w) best = std::min(best, at(x + 1, y + 1) + 4);
                if (x > 0) best = std::min(best, at(x - 1, y + 1) + 4);
            }
            at(x, y) = best;
        }
    for (auto& v : d) v /= 3.0f;
    return d;
}

// Picks a foreground pixel at least margin_px inside the silhouette
// (falls back to the deepest pixel).
std::pair<double, double> sample_location(const Mask& mask_w, double margin_px, uint64_t seed) {
    const auto dist = chamfer_interior(mask_w);
    std::vector<size_t> candidates;
    size_t deepest = 0;
    float deepest_d = -1;
    for (size_t i = 0; i < dist.size(); ++i) {
        if (!mask_w.data[i]) continue;
        if (dist[i] >= margin_px) candidates.push_back(i);
        if (dist[i] > deepest_d) {
            deepest_d = dist[i];
            deepest = i;
        }
    }
    Rng rng(derive_seed(seed, 0xD1F));
    const size_t pick = candidates.empty() ? deepest : candidates[size_t(rng.below(candidates.size()))];
    const int x = int(pick % size_t(mask_w.width));
    const int y = int(pick / size_t(mask_w.width));
    return {double(x) / (mask_w.width - 1), double(y) / (mask_w.height - 1)};
}

// Silhouette of one named part rendered on its own.
Mask part_silhouette(const mesh::TriMesh& m, const std::string& part, const geom::Se3Pose& obj,
                     const geom::Se3Pose& cam, const geom::CameraIntrinsics& k) {
    const auto range = m.parts.at(part);
    mesh::TriMesh sub;
    sub.vertices = m.vertices;
    for (int f = range.first; f < range.second; ++f) {
        sub.triangles.push_back(m.triangles[size_t(f)]);
        sub.albedo.push_back(m.albedo[size_t(f)]);
    }
    return render::render_mask(sub, obj, cam, k);
}

}  // namespace

ImagePair inject_defect(const ImagePair& pair, const DefectSpec& spec, const mesh::TriMesh& m) {
    if (pair.label != Label::Normal) throw DegenerateDefect("inject_defect requires a normal pair");
    spec.validate();
    if (!location_resolved(spec)) throw LocationOutsideForeground("defect location unresolved");

    const int w = pair.real.width, h = pair.real.height;
    const int px = int(std::lround(spec.u * (w - 1)));
    const int py = int(std::lround(spec.v * (h - 1)));
    if (px < 0 || py < 0 || px >= w || py >= h || !pair.mask_w.at(px, py))
        throw LocationOutsideForeground("defect location not on the rendered foreground");

    ImagePair out = pair;
    out.meta.defect = spec;
    out.label = Label::Anomalous;
    out.gt = Mask(w, h, 0);
    Rng rng(spec.seed);

    if (spec.kind == DefectKind::Texture || spec.kind == DefectKind::Structural) {
        const auto [x0, y0, x1, y1] = mask_bbox(pair.mask_w);
        const double bw = double(x1 - x0 + 1), bh = double(y1 - y0 + 1);
        const double jig = rng.uniform(0.85, 1.18);
        Ellipse e;
        e.cx = spec.u * (w - 1);
        e.cy = spec.v * (h - 1);
        e.a = std::max(1.5, 0.5 * spec.size_frac * bw * jig);
        e.b = std::max(1.5, 0.5 * spec.size_frac * bh / jig);
        const double theta = rng.uniform(0.0, kPi);
        e.cos_t = std::cos(theta);
        e.sin_t = std::sin(theta);
        const bool darken = rng.uniform() < 0.5;

        // Background statistics for the structural fill.
        double bg_mean = 0, bg_m2 = 0;
        size_t bg_n = 0;
        for (size_t i = 0; i < pair.real.size(); ++i)
            if (!pair.mask_w.data[i]) {
                bg_mean += pair.real.data[i];
                bg_m2 += double(pair.real.data[i]) * pair.real.data[i];
                ++bg_n;
            }
        bg_mean = bg_n ? bg_mean / double(bg_n) : 0.0;
        const double bg_std = bg_n ? std::sqrt(std::max(0.0, bg_m2 / double(bg_n) - bg_mean * bg_mean)) : 0.0;

        const int rx = int(std::ceil(std::max(e.a, e.b)));
        for (int y = std::max(0, int(e.cy) - rx); y <= std::min(h - 1, int(e.cy) + rx); ++y)
            for (int x = std::max(0, int(e.cx) - rx); x <= std::min(w - 1, int(e.cx) + rx); ++x) {
                if (!pair.mask_w.at(x, y) || !e.contains(x + 0.5, y + 0.5)) continue;
                out.gt.at(x, y) = 1;
                float& v = out.real.at(x, y);
                if (spec.kind == DefectKind::Texture) {
                    const double f = darken ? 1.0 - spec.magnitude : 1.0 + spec.magnitude;
                    v = float(std::clamp(double(v) * f, 0.0, 1.0));
                } else {
                    v = float(std::clamp(bg_mean + bg_std * rng.normal(), 0.0, 1.0));
                }
            }
    } else {
        if (m.parts.empty()) throw PartRequired("logical defect needs a mesh with named sub-parts");
        std::string part = spec.part;
        if (part.empty()) {
            std::vector<std::string> names;
            for (const auto& [name, _] : m.parts) names.push_back(name);
            part = names[size_t(rng.below(names.size()))];
            out.meta.defect->part = part;
        } else if (!m.parts.count(part)) {
            throw PartRequired("mesh has no part named " + part);
        }

        // Shift along a seeded in-plane direction by magnitude x part extent.
        std::set<int> verts;
        const auto range = m.parts.at(part);
        for (int f = range.first; f < range.second; ++f)
            for (int idx : m.triangles[size_t(f)]) verts.insert(idx);
        geom::Vec3 lo = geom::Vec3::Constant(std::numeric_limits<double>::infinity());
        geom::Vec3 hi = -lo;
        for (int idx : verts) {
            lo = lo.cwiseMin(m.vertices[size_t(idx)]);
            hi = hi.cwiseMax(m.vertices[size_t(idx)]);
        }
        const double extent = (hi - lo).norm();
        const double ang = rng.uniform(0.0, 2.0 * kPi);
        const geom::Vec3 delta =
            geom::Vec3(std::cos(ang), std::sin(ang), 0.0) * (spec.magnitude * extent);
        const mesh::TriMesh moved = mesh::translate_part(m, part, delta);

        const auto& meta = pair.meta;
        const auto rendered =
            render::rasterize(moved, meta.t_obj_base, meta.t_cam_base, meta.intrinsics, meta.light_dir);
        ImageF real = synthesize_real(rendered, meta.domain, moved, meta.t_obj_base, meta.t_cam_base,
                                      meta.intrinsics, meta.light_dir);
        // Keep the pair's foreground gate: the defective observation is
        // still compared against the pristine render mask.
        for (size_t i = 0; i < real.size(); ++i)
            if (!pair.mask_w.data[i]) real.data[i] = 0.0f;
        const Mask before =
            part_silhouette(m, part, meta.t_obj_base, meta.t_cam_base, meta.intrinsics);
        const Mask after =
            part_silhouette(moved, part, meta.t_obj_base, meta.t_cam_base, meta.intrinsics);
        size_t nonzero = 0;
        for (size_t i = 0; i < out.gt.size(); ++i) {
            const bool xor_bit = (before.data[i] != 0) != (after.data[i] != 0);
            const bool changed = std::abs(real.data[i] - pair.real.data[i]) > 1e-6f;
            out.gt.data[i] = (pair.mask_w.data[i] && (xor_bit || changed)) ? 1 : 0;
            nonzero += out.gt.data[i];
        }
        if (nonzero == 0) throw DegenerateDefect("logical shift produced no visible change");
        out.real = std::move(real);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pair materialization and dataset generation
// ---------------------------------------------------------------------------

ImagePair generate_pair(const PairMeta& meta, const mesh::TriMesh& m) {
    ImagePair pair;
    pair.meta = meta;
    pair.meta.defect.reset();  // the normal pair first; inject re-attaches
    const auto rendered =
        render::rasterize(m, meta.t_obj_base, meta.t_cam_base, meta.intrinsics, meta.light_dir);
    pair.render = rendered.image;
    pair.mask_w = rendered.mask;
    pair.gt = Mask(meta.intrinsics.width, meta.intrinsics.height, 0);
    pair.real = synthesize_real(rendered, meta.domain, m, meta.t_obj_base, meta.t_cam_base,
                                meta.intrinsics, meta.light_dir);
    pair.label = Label::Normal;
    if (!meta.defect) return pair;

    DefectSpec spec = *meta.defect;
    if (!location_resolved(spec)) {
        if (spec.kind == DefectKind::Logical) {
            // Anchor the location on the chosen part's projected centroid.
            Rng pick(spec.seed);
            std::vector<std::string> names;
            for (const auto& [name, _] : m.parts) names.push_back(name);
            if (names.empty()) throw PartRequired("logical defect needs named sub-parts");
            if (spec.part.empty()) spec.part = names[size_t(pick.below(names.size()))];
            const auto sil = part_silhouette(m, spec.part, meta.t_obj_base, meta.t_cam_base,
                                             meta.intrinsics);
            // Deepest visible pixel of the part that is also on the object mask.
            Mask visible(sil.width, sil.height, 0);
            for (size_t i = 0; i < sil.size(); ++i)
                visible.data[i] = (sil.data[i] && pair.mask_w.data[i]) ? 1 : 0;
            if (visible.count() == 0) throw DegenerateDefect("part not visible from this viewpoint");
            auto [u, v] = sample_location(visible, 1.0, spec.seed);
            spec.u = u;
            spec.v = v;
        } else {
            const auto [x0, y0, x1, y1] = mask_bbox(pair.mask_w);
            const double margin =
                0.35 * spec.size_frac * std::max(double(x1 - x0 + 1), double(y1 - y0 + 1));
            auto [u, v] = sample_location(pair.mask_w, margin, spec.seed);
            spec.u = u;
            spec.v = v;
        }
    }
    return inject_defect(pair, spec, m);
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

namespace {

json pose_to_json(const geom::Se3Pose& p) {
    const auto v = p.serialize();
    return json(std::vector<double>(v.begin(), v.end()));
}

geom::Se3Pose pose_from_json(const json& j, const char* path) {
    if (!j.is_array() || j.size() != 12) throw ConfigError(std::string(path) + ": expected 12 numbers");
    std::array<double, 12> v{};
    for (size_t i = 0; i < 12; ++i) v[i] = j[i].get<double>();
    return geom::Se3Pose::deserialize(v);
}

const char* kind_name(DefectKind k) {
    switch (k) {
        case DefectKind::Texture: return "texture";
        case DefectKind::Structural: return "structural";
        default: return "logical";
    }
}

DefectKind kind_from_name(const std::string& s) {
    if (s == "texture") return DefectKind::Texture;
    if (s == "structural") return DefectKind::Structural;
    if (s == "logical") return DefectKind::Logical;
    throw ConfigError("defect.kind: unknown value " + s);
}

json meta_to_json(const PairMeta& meta, Label label) {
    json j;
    j["id"] = meta.id;
    j["split"] = meta.split;
    j["mesh"] = meta.mesh_spec;
    j["label"] = label == Label::Anomalous ? "anomalous" : "normal";
    j["t_obj_base"] = pose_to_json(meta.t_obj_base);
    j["t_cam_base"] = pose_to_json(meta.t_cam_base);
    j["intrinsics"] = {{"fx", meta.intrinsics.fx}, {"fy", meta.intrinsics.fy},
                       {"cx", meta.intrinsics.cx}, {"cy", meta.intrinsics.cy},
                       {"width", meta.intrinsics.width}, {"height", meta.intrinsics.height}};
    j["light_dir"] = {meta.light_dir.x(), meta.light_dir.y(), meta.light_dir.z()};
    j["domain"] = {{"gain", meta.domain.gain},
                   {"bias", meta.domain.bias},
                   {"gamma", meta.domain.gamma},
                   {"noise_sigma", meta.domain.noise_sigma},
                   {"specular_count", meta.domain.specular_count},
                   {"specular_radius_px", meta.domain.specular_radius_px},
                   {"jitter_rot_deg", meta.domain.jitter_rot_deg},
                   {"jitter_trans_frac", meta.domain.jitter_trans_frac},
                   {"seed", meta.domain.seed}};
    if (meta.defect) {
        j["defect"] = {{"kind", kind_name(meta.defect->kind)}, {"u", meta.defect->u},
                       {"v", meta.defect->v},
                       {"size_frac", meta.defect->size_frac},
                       {"magnitude", meta.defect->magnitude},
                       {"seed", meta.defect->seed},
                       {"part", meta.defect->part}};
    } else {
        j["defect"] = nullptr;
    }
    return j;
}

PairMeta meta_from_json(const json& j) {
    PairMeta meta;
    meta.id = j.at("id").get<std::string>();
    meta.split = j.at("split").get<std::string>();
    meta.mesh_spec = j.at("mesh").get<std::string>();
    meta.t_obj_base = pose_from_json(j.at("t_obj_base"), "t_obj_base");
    meta.t_cam_base = pose_from_json(j.at("t_cam_base"), "t_cam_base");
    const auto& k = j.at("intrinsics");
    meta.intrinsics =
        geom::CameraIntrinsics(k.at("fx").get<double>(), k.at("fy").get<double>(),
                               k.at("cx").get<double>(), k.at("cy").get<double>(),
                               k.at("width").get<int>(), k.at("height").get<int>());
    const auto& l = j.at("light_dir");
    meta.light_dir = geom::Vec3(l[0].get<double>(), l[1].get<double>(), l[2].get<double>());
    const auto& d = j.at("domain");
    meta.domain.gain = d.at("gain").get<double>();
    meta.domain.bias = d.at("bias").get<double>();
    meta.domain.gamma = d.at("gamma").get<double>();
    meta.domain.noise_sigma = d.at("noise_sigma").get<double>();
    meta.domain.specular_count = d.at("specular_count").get<int>();
    meta.domain.specular_radius_px = d.at("specular_radius_px").get<double>();
    meta.domain.jitter_rot_deg = d.at("jitter_rot_deg").get<double>();
    meta.domain.jitter_trans_frac = d.at("jitter_trans_frac").get<double>();
    meta.domain.seed = d.at("seed").get<uint64_t>();
    if (!j.at("defect").is_null()) {
        const auto& f = j.at("defect");
        DefectSpec spec;
        spec.kind = kind_from_name(f.at("kind").get<std::string>());
        spec.u = f.at("u").get<double>();
        spec.v = f.at("v").get<double>();
        spec.size_frac = f.at("size_frac").get<double>();
        spec.magnitude = f.at("magnitude").get<double>();
        spec.seed = f.at("seed").get<uint64_t>();
        spec.part = f.value("part", std::string());
        meta.defect = spec;
    }
    return meta;
}

json range_to_json(const Range& r) { return json{r.lo, r.hi}; }

Range range_from_json(const json& j, const char* path) {
    if (!j.is_array() || j.size() != 2) throw ConfigError(std::string(path) + ": expected [lo, hi]");
    return Range{j[0].get<double>(), j[1].get<double>()};
}

json config_to_json(const DatasetConfig& c) {
    json j;
    j["image"] = {{"width", c.width}, {"height", c.height}, {"fx", c.fx}, {"fy", c.fy},
                  {"cx", c.cx}, {"cy", c.cy}, {"patch", c.patch}};
    j["light_dir"] = {c.light_dir.x(), c.light_dir.y(), c.light_dir.z()};
    j["meshes"] = {{"train", c.train_mesh}, {"test", c.test_mesh}};
    j["viewpoints"] = {{"target_count", c.viewpoint_target}, {"elev_min", c.elev_min},
                       {"elev_max", c.elev_max}, {"radius_scale", c.radius_scale}};
    j["counts"] = {{"train", c.train_count}, {"test_normal", c.test_normal},
                   {"test_texture", c.test_texture}, {"test_structural", c.test_structural},
                   {"test_logical", c.test_logical}};
    j["domain"] = {{"gain", range_to_json(c.gain)}, {"bias", range_to_json(c.bias)},
                   {"gamma", range_to_json(c.gamma)}, {"noise_sigma", c.noise_sigma},
                   {"specular_count", c.specular_count},
                   {"specular_radius_px", c.specular_radius_px},
                   {"jitter_rot_deg", c.jitter_rot_deg},
                   {"jitter_trans_frac", c.jitter_trans_frac}};
    j["defect"] = {{"texture", {{"size_frac", range_to_json(c.texture_size)},
                                {"magnitude", range_to_json(c.texture_mag)}}},
                   {"structural", {{"size_frac", range_to_json(c.structural_size)},
                                   {"magnitude", range_to_json(c.structural_mag)}}},
                   {"logical", {{"size_frac", c.logical_size_frac},
                                {"magnitude", range_to_json(c.logical_mag)}}}};
    j["seed"] = c.seed;
    return j;
}

DatasetConfig config_from_json(const json& j) {
    DatasetConfig c;
    try {
        if (j.contains("image")) {
            const auto& i = j.at("image");
            c.width = i.value("width", c.width);
            c.height = i.value("height", c.height);
            c.fx = i.value("fx", c.fx);
            c.fy = i.value("fy", c.fy);
            c.cx = i.value("cx", c.cx);
            c.cy = i.value("cy", c.cy);
            c.patch = i.value("patch", c.patch);
        }
        if (j.contains("light_dir")) {
            const auto& l = j.at("light_dir");
            c.light_dir =
                geom::Vec3(l[0].get<double>(), l[1].get<double>(), l[2].get<double>()).normalized();
        }
        if (j.contains("meshes")) {
            c.train_mesh = j.at("meshes").value("train", c.train_mesh);
            c.test_mesh = j.at("meshes").value("test", c.test_mesh);
        }
        if (j.contains("viewpoints")) {
            const auto& v = j.at("viewpoints");
            c.viewpoint_target = v.value("target_count", c.viewpoint_target);
            c.elev_min = v.value("elev_min", c.elev_min);
            c.elev_max = v.value("elev_max", c.elev_max);
            c.radius_scale = v.value("radius_scale", c.radius_scale);
        }
        if (j.contains("counts")) {
            const auto& n = j.at("counts");
            c.train_count = n.value("train", c.train_count);
            c.test_normal = n.value("test_normal", c.test_normal);
            c.test_texture = n.value("test_texture", c.test_texture);
            c.test_structural = n.value("test_structural", c.test_structural);
            c.test_logical = n.value("test_logical", c.test_logical);
        }
        if (j.contains("domain")) {
            const auto& d = j.at("domain");
            if (d.contains("gain")) c.gain = range_from_json(d.at("gain"), "domain.gain");
            if (d.contains("bias")) c.bias = range_from_json(d.at("bias"), "domain.bias");
            if (d.contains("gamma")) c.gamma = range_from_json(d.at("gamma"), "domain.gamma");
            c.noise_sigma = d.value("noise_sigma", c.noise_sigma);
            c.specular_count = d.value("specular_count", c.specular_count);
            c.specular_radius_px = d.value("specular_radius_px", c.specular_radius_px);
            c.jitter_rot_deg = d.value("jitter_rot_deg", c.jitter_rot_deg);
            c.jitter_trans_frac = d.value("jitter_trans_frac", c.jitter_trans_frac);
        }
        if (j.contains("defect")) {
            const auto& f = j.at("defect");
            if (f.contains("texture")) {
                const auto& t = f.at("texture");
                if (t.contains("size_frac"))
                    c.texture_size = range_from_json(t.at("size_frac"), "defect.texture.size_frac");
                if (t.contains("magnitude"))
                    c.texture_mag = range_from_json(t.at("magnitude"), "defect.texture.magnitude");
            }
            if (f.contains("structural")) {
                const auto& s = f.at("structural");
                if (s.contains("size_frac"))
                    c.structural_size =
                        range_from_json(s.at("size_frac"), "defect.structural.size_frac");
                if (s.contains("magnitude"))
                    c.structural_mag =
                        range_from_json(s.at("magnitude"), "defect.structural.magnitude");
            }
            if (f.contains("logical")) {
                const auto& l = f.at("logical");
                c.logical_size_frac = l.value("size_frac", c.logical_size_frac);
                if (l.contains("magnitude"))
                    c.logical_mag = range_from_json(l.at("magnitude"), "defect.logical.magnitude");
            }
        }
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace

DatasetConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse: ") + e.what());
    }
    return config_from_json(j);
}

std::string config_to_json_text(const DatasetConfig& cfg) { return config_to_json(cfg).dump(2); }

void save_pair(const std::string& dataset_dir, const ImagePair& pair) {
    const fs::path dir = fs::path(dataset_dir) / pair.meta.id;
    fs::create_directories(dir);
    write_pgm((dir / "real.pgm").string(), pair.real);
    write_pgm((dir / "render.pgm").string(), pair.render);
    write_pbm((dir / "mask.pbm").string(), pair.mask_w);
    write_pbm((dir / "gt.pbm").string(), pair.gt);
    std::ofstream os(dir / "meta.json");
    os << meta_to_json(pair.meta, pair.label).dump(2) << "\n";
    if (!os) throw DatasetError("failed writing meta for " + pair.meta.id);
}

ImagePair load_pair(const std::string& dataset_dir, const PairMeta& meta) {
    const fs::path dir = fs::path(dataset_dir) / meta.id;
    ImagePair pair;
    pair.meta = meta;
    pair.real = read_pgm((dir / "real.pgm").string());
    pair.render = read_pgm((dir / "render.pgm").string());
    pair.mask_w = read_pbm((dir / "mask.pbm").string());
    pair.gt = read_pbm((dir / "gt.pbm").string());
    pair.label = pair.gt.count() > 0 ? Label::Anomalous : Label::Normal;
    return pair;
}

Manifest generate_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    const mesh::TriMesh train_mesh = mesh::load_mesh_spec(cfg.train_mesh);
    const mesh::TriMesh test_mesh = mesh::load_mesh_spec(cfg.test_mesh);
    if (cfg.test_logical > 0 && test_mesh.parts.empty())
        throw ConfigError("counts.test_logical requires a test mesh with named sub-parts");

    const geom::CameraIntrinsics k(cfg.fx, cfg.fy, cfg.cx, cfg.cy, cfg.width, cfg.height);
    auto plan_for = [&](const mesh::TriMesh& m) {
        return geom::sample_viewpoints(m.bbox_center(), cfg.radius_scale * m.bounding_sphere_radius(),
                                       cfg.viewpoint_target, cfg.elev_min, cfg.elev_max);
    };
    const auto train_plan = plan_for(train_mesh);
    const auto test_plan = plan_for(test_mesh);

    // Build fully seeded pair prototypes; materialization then runs in
    // parallel with no further coordination.
    std::vector<PairMeta> protos;
    auto draw_domain = [&](uint64_t seed) {
        Rng rng(derive_seed(seed, 7));
        DomainParams d;
        d.gain = cfg.gain.draw(rng);
        d.bias = cfg.bias.draw(rng);
        d.gamma = cfg.gamma.draw(rng);
        d.noise_sigma = cfg.noise_sigma;
        d.specular_count = cfg.specular_count;
        d.specular_radius_px = cfg.specular_radius_px;
        d.jitter_rot_deg = cfg.jitter_rot_deg;
        d.jitter_trans_frac = cfg.jitter_trans_frac;
        d.seed = derive_seed(seed, 8);
        return d;
    };
    char idbuf[32];
    for (int i = 0; i < cfg.train_count; ++i) {
        PairMeta meta;
        std::snprintf(idbuf, sizeof idbuf, "train/%04d", i);
        meta.id = idbuf;
        meta.split = "train";
        meta.mesh_spec = cfg.train_mesh;
        meta.t_obj_base = geom::Se3Pose::identity();
        meta.t_cam_base = train_plan.poses[size_t(i) % train_plan.poses.size()];
        meta.intrinsics = k;
        meta.light_dir = cfg.light_dir;
        meta.domain = draw_domain(derive_seed(cfg.seed, 1'000'000 + uint64_t(i)));
        protos.push_back(std::move(meta));
    }
    struct KindCount {
        DefectKind kind;
        int count;
        const Range* size;
        const Range* mag;
    };
    const KindCount kinds[] = {
        {DefectKind::Texture, cfg.test_texture, &cfg.texture_size, &cfg.texture_mag},
        {DefectKind::Structural, cfg.test_structural, &cfg.structural_size, &cfg.structural_mag},
        {DefectKind::Logical, cfg.test_logical, nullptr, &cfg.logical_mag},
    };
    int test_idx = 0;
    auto push_test = [&](std::optional<DefectSpec> defect) {
        PairMeta meta;
        std::snprintf(idbuf, sizeof idbuf, "test/%04d", test_idx);
        meta.id = idbuf;
        meta.split = "test";
        meta.mesh_spec = cfg.test_mesh;
        meta.t_obj_base = geom::Se3Pose::identity();
        meta.t_cam_base = test_plan.poses[size_t(test_idx) % test_plan.poses.size()];
        meta.intrinsics = k;
        meta.light_dir = cfg.light_dir;
        meta.domain = draw_domain(derive_seed(cfg.seed, 2'000'000 + uint64_t(test_idx)));
        meta.defect = std::move(defect);
        protos.push_back(std::move(meta));
        ++test_idx;
    };
    for (int i = 0; i < cfg.test_normal; ++i) push_test(std::nullopt);
    for (const auto& kc : kinds)
        for (int i = 0; i < kc.count; ++i) {
            DefectSpec spec;
            spec.kind = kc.kind;
            spec.seed = derive_seed(cfg.seed, 3'000'000 + uint64_t(test_idx));
            Rng rng(derive_seed(spec.seed, 11));
            spec.size_frac = kc.size ? kc.size->draw(rng) : cfg.logical_size_frac;
            spec.magnitude = kc.mag->draw(rng);
            spec.u = spec.v = std::numeric_limits<double>::quiet_NaN();  // resolved at render time
            push_test(spec);
        }

    fs::create_directories(out_dir);
    std::vector<PairMeta> realized(protos.size());
    std::vector<uint8_t> anomalous(protos.size(), 0);
    parallel_for(protos.size(), [&](size_t i) {
        const mesh::TriMesh& m = protos[i].split == "train" ? train_mesh : test_mesh;
        ImagePair pair = generate_pair(protos[i], m);
        save_pair(out_dir, pair);
        realized[i] = pair.meta;
        anomalous[i] = pair.label == Label::Anomalous;
    });

    Manifest manifest;
    manifest.config = cfg;
    manifest.pairs = realized;
    json j;
    j["version"] = 1;
    j["config"] = config_to_json(cfg);
    json pair_list = json::array();
    for (size_t i = 0; i < realized.size(); ++i)
        pair_list.push_back(meta_to_json(realized[i], anomalous[i] ? Label::Anomalous : Label::Normal));
    j["pairs"] = std::move(pair_list);
    std::ofstream os(fs::path(out_dir) / "manifest.json");
    os << j.dump(2) << "\n";
    if (!os) throw DatasetError("failed writing manifest");
    return manifest;
}

Manifest load_manifest(const std::string& dataset_dir) {
    std::ifstream is(fs::path(dataset_dir) / "manifest.json");
    if (!is) throw DatasetError("no manifest.json under " + dataset_dir);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw DatasetError(std::string("manifest parse: ") + e.what());
    }
    Manifest m;
    m.config = config_from_json(j.at("config"));
    for (const auto& p : j.at("pairs")) m.pairs.push_back(meta_from_json(p));
    return m;
}

}  // namespace twinspect::sim
