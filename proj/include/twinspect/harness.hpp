// harness.hpp — orchestration behind the CLI: config tree with dotted-path
// overrides, dataset/train/eval/ablate drivers, and reproducibility
// manifests with content hashes.
#pragma once

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

#include "twinspect/calibration.hpp"
#include "twinspect/metrics.hpp"
#include "twinspect/pose_est.hpp"
#include "twinspect/scene_sim.hpp"

namespace twinspect::harness {

TWINSPECT_ERROR(UnknownVariant);
TWINSPECT_ERROR(RunError);

struct RunConfig {
    sim::DatasetConfig dataset;
    calib::TrainConfig train;
    int model_d = 32;
    std::vector<std::string> methods = {"avatar", "rgb", "grad", "ssim"};
    double aupro_fpr_limit = 0.3;
    int ablate_seeds = 3;
    nlohmann::json raw;  // the full tree, recorded into manifests
};

nlohmann::json default_config_json();

// Loads the tree (or the defaults when path is empty), applies dotted-path
// overrides ("dataset.seed=7"), then an optional seed flag that retargets
// both dataset.seed and train.seed.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                      std::optional<uint64_t> seed_flag);

// ---- per-pair plumbing shared by train/eval/ablate -------------------------

calib::PairTokens pair_tokens(const sim::ImagePair& pair, int patch);
std::vector<calib::PairTokens> split_tokens(const std::string& dataset_dir,
                                            const sim::Manifest& manifest,
                                            const std::string& split, int patch);

// Score map for one named method ("avatar" needs the model).
ImageF method_map(const std::string& method, const sim::ImagePair& pair,
                  const calib::CalibrationModel* model, int patch);

// ---- subcommand drivers -----------------------------------------------------

sim::Manifest run_gen(const RunConfig& cfg, const std::string& out_dir);
void run_plan(const RunConfig& cfg, const std::string& out_path);
pose::PoseEstimate run_pose(const RunConfig& cfg, const std::string& image_path,
                            const std::string& mesh_spec, int template_count,
                            const std::string& out_path);

enum class Variant { Full, NoPReal, NoPRender, NoLocal };
Variant variant_from_name(const std::string& name);
const char* variant_name(Variant v);

calib::TrainResult run_train(const RunConfig& cfg, const std::string& dataset_dir,
                             const std::string& out_dir, Variant variant = Variant::Full);

metrics::EvalReport run_eval(const RunConfig& cfg, const std::string& dataset_dir,
                             const std::string& model_path, const std::string& out_dir);

// Trains one ablation variant and evaluates its score maps in memory,
// returning the metric row (Table-2-style protocol).
metrics::MethodRow ablate_variant(Variant v, const std::string& dataset_dir, const RunConfig& cfg,
                                  uint64_t seed, const std::string& work_dir);

struct AblationResult {
    std::vector<std::string> variants;
    std::vector<uint64_t> seeds;
    // rows[variant][seed]
    std::vector<std::vector<metrics::MethodRow>> rows;

    double image_mean(size_t variant, size_t seed) const;
    double pixel_mean(size_t variant, size_t seed) const;
    std::string table() const;  // mean +- std over seeds, x100
    std::string csv() const;
};

AblationResult run_ablate(const RunConfig& cfg, const std::string& dataset_dir,
                          const std::string& out_dir);

void run_report(const std::string& run_dir, const std::string& out_path);

// ---- reproducibility manifests ----------------------------------------------

uint64_t hash_file(const std::string& path);

// Hashes every file under dir (sorted relative paths, run_manifest.json
// excluded) and writes run_manifest.json with per-file hashes and a combined
// content hash.
uint64_t write_run_manifest(const std::string& dir, const std::string& command,
                            const nlohmann::json& config, uint64_t seed);

// Reads back the combined hash of an existing manifest.
uint64_t read_manifest_hash(const std::string& dir);

}  // namespace twinspect::harness
