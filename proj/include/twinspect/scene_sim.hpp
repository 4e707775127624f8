// scene_sim.hpp — stands in for the robot/camera rig: synthesizes the "real"
// side of each pair from the digital render under controlled domain-gap and
// jitter perturbations, injects ground-truth defects, and materializes the
// category-disjoint dataset on disk. Every stochastic choice flows from
// explicit seeds so a manifest regenerates the dataset byte for byte.
#pragma once

#include <optional>
#include <string>

#include "twinspect/geometry.hpp"
#include "twinspect/image.hpp"
#include "twinspect/mesh.hpp"
#include "twinspect/renderer.hpp"

namespace twinspect::sim {

TWINSPECT_ERROR(ConfigError);
TWINSPECT_ERROR(PartRequired);
TWINSPECT_ERROR(LocationOutsideForeground);
TWINSPECT_ERROR(DegenerateDefect);
TWINSPECT_ERROR(DatasetError);

// Realized per-pair nuisance parameters (the two §-level nuisance factors:
// appearance gap and residual spatial misalignment).
struct DomainParams {
    double gain = 1.0;
    double bias = 0.0;
    double gamma = 1.0;
    double noise_sigma = 0.0;
    int specular_count = 0;
    double specular_radius_px = 12.0;
    double jitter_rot_deg = 0.0;
    double jitter_trans_frac = 0.0;
    uint64_t seed = 0;

    void validate() const;
};

enum class DefectKind { Texture, Structural, Logical };

struct DefectSpec {
    DefectKind kind = DefectKind::Texture;
    double u = 0.5, v = 0.5;  // normalized image location, must hit foreground
    double size_frac = 0.2;   // of the foreground bounding box
    double magnitude = 0.5;
    uint64_t seed = 0;
    std::string part;  // Logical only; picked from the mesh when empty

    void validate() const;
};

enum class Label { Normal, Anomalous };

struct PairMeta {
    std::string id;         // e.g. "test/0007"
    std::string split;      // "train" | "test"
    std::string mesh_spec;  // e.g. "builtin:flanged_block"
    geom::Se3Pose t_obj_base, t_cam_base;
    geom::CameraIntrinsics intrinsics;
    geom::Vec3 light_dir = geom::Vec3(0, 0, -1);  // camera frame, unit
    DomainParams domain;
    std::optional<DefectSpec> defect;
};

struct ImagePair {
    ImageF real, render;
    Mask mask_w;  // render foreground
    Mask gt;      // defect footprint, subset of mask_w; all-zero when normal
    Label label = Label::Normal;
    PairMeta meta;
};

// Re-renders under a seeded pose perturbation, applies gain*x^gamma + bias,
// adds specular blobs and Gaussian noise inside the render mask, clamps to
// [0,1]. Pixels outside the render mask are never touched. Neutral
// parameters reproduce the render bit-exactly.
ImageF synthesize_real(const render::RasterOutput& rendered, const DomainParams& params,
                       const mesh::TriMesh& m, const geom::Se3Pose& t_obj_base,
                       const geom::Se3Pose& t_cam_base, const geom::CameraIntrinsics& k,
                       const geom::Vec3& light_dir);

// Injects one defect into the real side of a normal pair. Texture scales an
// elliptical region, Structural fills it with background statistics, Logical
// translates a named mesh sub-part and re-synthesizes the real image. The
// returned pair carries the ground-truth footprint and the Anomalous label.
ImagePair inject_defect(const ImagePair& pair, const DefectSpec& spec, const mesh::TriMesh& m);

struct Range {
    double lo = 0, hi = 0;
    double draw(Rng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
};

struct DatasetConfig {
    int width = 504, height = 504;
    double fx = 420, fy = 420, cx = 252, cy = 252;
    int patch = 14;
    geom::Vec3 light_dir = geom::Vec3(0.25, -0.2, -0.95).normalized();
    std::string train_mesh = "builtin:flanged_block";
    std::string test_mesh = "builtin:jointed_bracket";
    int viewpoint_target = 64;
    double elev_min = 20.0, elev_max = 80.0;
    double radius_scale = 2.0;  // times the mesh bounding-sphere radius
    int train_count = 216;
    int test_normal = 54, test_texture = 54, test_structural = 53, test_logical = 53;
    Range gain{0.8, 1.2}, bias{-0.02, 0.02}, gamma{0.9, 1.1};
    double noise_sigma = 0.02;
    int specular_count = 2;
    double specular_radius_px = 14.0;
    double jitter_rot_deg = 1.0, jitter_trans_frac = 0.01;
    Range texture_size{0.12, 0.22}, texture_mag{0.35, 0.6};
    Range structural_size{0.12, 0.22}, structural_mag{0.5, 1.0};
    Range logical_mag{0.5, 1.0};
    double logical_size_frac = 0.35;
    uint64_t seed = 0;

    void validate() const;  // ConfigError with the offending field path
};

struct Manifest {
    DatasetConfig config;
    std::vector<PairMeta> pairs;
};

// Writes <out_dir>/{train,test}/<idx>/{real.pgm,render.pgm,mask.pbm,gt.pbm,
// meta.json} plus <out_dir>/manifest.json, and returns the manifest.
// Train pairs are normal renders of the base mesh; test pairs draw from the
// novel mesh with normal/texture/structural/logical composition.
Manifest generate_dataset(const DatasetConfig& cfg, const std::string& out_dir);

// Materializes one pair from fully realized metadata (the regeneration
// path; generate_dataset funnels through this too).
ImagePair generate_pair(const PairMeta& meta, const mesh::TriMesh& m);

Manifest load_manifest(const std::string& dataset_dir);
ImagePair load_pair(const std::string& dataset_dir, const PairMeta& meta);
void save_pair(const std::string& dataset_dir, const ImagePair& pair);

DatasetConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const DatasetConfig& cfg);

}  // namespace twinspect::sim
