// metrics.hpp — image- and pixel-level anomaly metrics: AUROC (Mann-Whitney
// with tie correction), average precision, F1max, AUPRO (per-region overlap
// integrated against global FPR), plus run-directory evaluation producing a
// per-method report table.
#pragma once

#include <string>
#include <vector>

#include "twinspect/image.hpp"

namespace twinspect::metrics {

TWINSPECT_ERROR(SingleClass);
TWINSPECT_ERROR(NoPositives);
TWINSPECT_ERROR(NoAnomalousRegions);
TWINSPECT_ERROR(MissingScores);
TWINSPECT_ERROR(EvalError);

// Probability a positive outranks a negative, ties counted 1/2.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// AP over descending-score thresholds; equal scores processed as one
// threshold group.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

// Max F1 over all distinct-score thresholds (predict positive at >= t).
double f1_max(const std::vector<double>& scores, const std::vector<int>& labels);

// Packed variants used on large pixel populations (identical math).
double auroc_px(const std::vector<float>& scores, const std::vector<uint8_t>& labels);
double average_precision_px(const std::vector<float>& scores, const std::vector<uint8_t>& labels);
double f1_max_px(const std::vector<float>& scores, const std::vector<uint8_t>& labels);

// All three pixel metrics from one sort of the packed population.
void pixel_metrics(const std::vector<float>& scores, const std::vector<uint8_t>& labels,
                   double& out_auroc, double& out_ap, double& out_f1);

// Per-region-overlap curve vs global FPR over anomaly-free pixels,
// trapezoid-integrated up to fpr_limit and normalized by it. The sweep uses
// `sweep_points` quantile-spaced thresholds of the pooled score
// distribution, which covers every distinct value on instances with at most
// that many pixels.
double aupro(const std::vector<ImageF>& score_maps, const std::vector<Mask>& gt_masks,
             double fpr_limit = 0.3, int sweep_points = 201);

struct MethodRow {
    std::string method;
    double i_auroc = 0, i_ap = 0, i_f1 = 0;
    double p_auroc = 0, p_ap = 0, p_f1 = 0, aupro = 0;
};

struct EvalReport {
    std::vector<MethodRow> rows;
    int pairs_evaluated = 0;

    // Aligned plain-text table / CSV, values x100 with 2 decimals, columns
    // I-AUROC, I-AP, I-F1, P-AUROC, P-AP, P-F1, AUPRO.
    std::string table() const;
    std::string csv() const;
};

// One method's row from in-memory maps. `fg_counts` are the per-pair
// foreground pixel counts feeding the shared top-K image score.
MethodRow evaluate_method(const std::string& method, const std::vector<ImageF>& maps,
                          const std::vector<Mask>& gts, const std::vector<size_t>& fg_counts,
                          const std::vector<int>& labels, double fpr_limit = 0.3);

// Evaluates score maps stored under <run_dir>/maps/<method>/ against the
// dataset recorded in <run_dir>/run.json. Image-level scores use the same
// top-K pooling for every method.
EvalReport evaluate(const std::string& run_dir, const std::vector<std::string>& methods);

}  // namespace twinspect::metrics
