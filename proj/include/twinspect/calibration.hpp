// calibration.hpp — twin-anchored representation calibration: dual MLP
// projectors into a shared embedding, single-head cross-attention dictionary
// reassembly, foreground-gated local cosine loss plus a global-average
// regularizer, hand-derived gradients, AdamW training, and zero-shot scoring.
#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "twinspect/features.hpp"
#include "twinspect/image.hpp"

namespace twinspect::calib {

TWINSPECT_ERROR(ShapeMismatch);
TWINSPECT_ERROR(EmptyForegroundMask);
TWINSPECT_ERROR(AnomalousTrainingPair);
TWINSPECT_ERROR(FormatError);
TWINSPECT_ERROR(ChecksumMismatch);

// Two-layer perceptron: ramp(F W1 + b1) W2 + b2. Hidden width equals the
// embedding width d.
struct MlpWeights {
    Eigen::MatrixXd w1;  // dim_in x d
    Eigen::VectorXd b1;  // d
    Eigen::MatrixXd w2;  // d x d
    Eigen::VectorXd b2;  // d
};

struct CalibrationModel {
    int dim_in = feat::kBuiltinTokenDim;
    int d = 32;
    // Ablation switches: an identity projector copies the first
    // min(dim_in, d) channels and zero-pads the rest; it carries no
    // trainable weights.
    bool identity_phi_r = false;
    bool identity_phi_s = false;
    MlpWeights phi_r, phi_s;
    Eigen::MatrixXd wq, we, wd;  // d x d, no biases

    double scale() const { return 1.0 / std::sqrt(double(d)); }

    // Seeded uniform init in +-sqrt(6 / (fan_in + fan_out)); zero biases.
    static CalibrationModel init(int dim_in, int d, uint64_t seed);
};

struct ModelGrads {
    MlpWeights phi_r, phi_s;
    Eigen::MatrixXd wq, we, wd;

    static ModelGrads zeros(const CalibrationModel& model);
};

// ---- spec-level operations (f32 token views over the f64 core) ------------

feat::PatchTokens project_real(const feat::PatchTokens& f_r, const CalibrationModel& model);
feat::PatchTokens project_render(const feat::PatchTokens& f_s, const CalibrationModel& model);

// Row-stochastic affinity: softmax(Q(Z_r) E(Z_s)^T / sqrt(d)) per row.
Eigen::MatrixXd affinity(const feat::PatchTokens& z_r, const feat::PatchTokens& z_s,
                         const CalibrationModel& model);

// Zhat_s = M D(Z_s): every output token a convex combination of dictionary rows.
feat::PatchTokens reassemble(const Eigen::MatrixXd& m, const feat::PatchTokens& z_s,
                             const CalibrationModel& model);

// Cosine against a zero vector is defined as 0 (loss contribution 1).
double local_loss(const feat::PatchTokens& z_r, const feat::PatchTokens& z_hat_s,
                  const feat::PatchMask& w);
double global_loss(const feat::PatchTokens& z_hat_s, const feat::PatchTokens& z_s);

// ---- training --------------------------------------------------------------

struct PairTokens {
    feat::PatchTokens f_r, f_s;
    feat::PatchMask w;
    bool anomalous = false;
    std::string id;
};

struct ForwardBackward {
    double total = 0, local = 0, global = 0;
    ModelGrads grads;
};

// Exact analytic gradients of lambda_local * L_local + lambda_global *
// L_global with respect to every trainable weight (ramp subgradient at 0
// taken as 0).
ForwardBackward forward_backward(const PairTokens& pair, const CalibrationModel& model,
                                 double lambda_local, double lambda_global);

struct TrainConfig {
    int epochs = 50;
    int batch = 8;
    double lr = 1e-4;
    double weight_decay = 1e-4;
    double lambda_local = 1.0;
    double lambda_global = 1.0;
    uint64_t seed = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct EpochStats {
    int epoch = 0;
    double local = 0, global = 0, total = 0;  // means over the epoch's pairs
};

struct TrainResult {
    CalibrationModel model;
    std::vector<EpochStats> history;
};

// Decoupled-weight-decay adaptive-moment training over seeded shuffled
// minibatches. Pairs within a batch run concurrently; gradients reduce by a
// fixed pairwise tree, so results are bit-stable for a given seed. Throws
// AnomalousTrainingPair if any pair carries a nonzero defect mask.
TrainResult train(const std::vector<PairTokens>& pairs, const CalibrationModel& init,
                  const TrainConfig& cfg);

// ---- inference -------------------------------------------------------------

// Grid scores (1 - cos(Z_r, Zhat_s)) * W, row-major grid_h x grid_w.
Eigen::VectorXd score_grid(const PairTokens& pair, const CalibrationModel& model);

// Grid scores bilinearly upsampled to the mask resolution and re-masked so
// background pixels are exactly zero.
ImageF score_map(const PairTokens& pair, const CalibrationModel& model, const Mask& full_mask);

// Mean of the top-K pixels, K = max(1, 0.1% of foreground pixels).
double image_score(const ImageF& map, size_t foreground_px);

// ---- persistence -----------------------------------------------------------

// Checkpoint: magic "CALM", u32 version, u32 d, u32 dim_in, u32 flags,
// little-endian f64 weight blobs, u64 FNV-1a checksum of the blobs.
void save_model(const std::string& path, const CalibrationModel& model);
CalibrationModel load_model(const std::string& path);

void save_history_csv(const std::string& path, const std::vector<EpochStats>& history);

}  // namespace twinspect::calib
