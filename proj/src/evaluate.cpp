// evaluate.cpp — run-directory evaluation: loads per-method score maps and
// dataset ground truth, applies the shared image-score pooling, and fills the
// Table-1-shaped report.
#include <json.hpp>

#include <filesystem>
#include <fstream>

#include "twinspect/calibration.hpp"
#include "twinspect/metrics.hpp"
#include "twinspect/scene_sim.hpp"

namespace twinspect::metrics {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string map_stem(const std::string& pair_id) {
    std::string s = pair_id;
    for (char& c : s)
        if (c == '/') c = '_';
    return s;
}

}  // namespace

MethodRow evaluate_method(const std::string& method, const std::vector<ImageF>& maps,
                          const std::vector<Mask>& gts, const std::vector<size_t>& fg_counts,
                          const std::vector<int>& labels, double fpr_limit) {
    if (maps.size() != gts.size() || maps.size() != labels.size() || maps.size() != fg_counts.size())
        throw EvalError("evaluate_method: input lengths differ");
    if (maps.empty()) throw EvalError("evaluate_method: no pairs");

    MethodRow row;
    row.method = method;

    std::vector<double> img_scores(maps.size());
    for (size_t i = 0; i < maps.size(); ++i)
        img_scores[i] = calib::image_score(maps[i], fg_counts[i]);
    bool any_pos = false, any_neg = false;
    for (int l : labels) (l ? any_pos : any_neg) = true;
    if (!any_pos)
        throw NoPositives(
            "no anomalous pair in the evaluated set; affected metrics: i_auroc, i_ap, i_f1max, "
            "p_auroc, p_ap, p_f1max, aupro");
    if (!any_neg) throw SingleClass("no normal pair in the evaluated set; affected: i_auroc");
    row.i_auroc = auroc(img_scores, labels);
    row.i_ap = average_precision(img_scores, labels);
    row.i_f1 = f1_max(img_scores, labels);

    size_t total_px = 0;
    for (const auto& m : maps) total_px += m.size();
    std::vector<float> px_scores;
    std::vector<uint8_t> px_labels;
    px_scores.reserve(total_px);
    px_labels.reserve(total_px);
    for (size_t i = 0; i < maps.size(); ++i) {
        if (maps[i].width != gts[i].width || maps[i].height != gts[i].height)
            throw EvalError("map/gt resolution mismatch");
        px_scores.insert(px_scores.end(), maps[i].data.begin(), maps[i].data.end());
        px_labels.insert(px_labels.end(), gts[i].data.begin(), gts[i].data.end());
    }
    pixel_metrics(px_scores, px_labels, row.p_auroc, row.p_ap, row.p_f1);
    px_scores.clear();
    px_scores.shrink_to_fit();
    px_labels.clear();
    px_labels.shrink_to_fit();
    row.aupro = aupro(maps, gts, fpr_limit);
    return row;
}

EvalReport evaluate(const std::string& run_dir, const std::vector<std::string>& methods) {
    std::ifstream is(fs::path(run_dir) / "run.json");
    if (!is) throw EvalError("no run.json under " + run_dir);
    json run;
    try {
        is >> run;
    } catch (const json::exception& e) {
        throw EvalError(std::string("run.json parse: ") + e.what());
    }
    const std::string dataset_dir = run.at("dataset").get<std::string>();
    const double fpr_limit = run.value("aupro_fpr_limit", 0.3);
    const sim::Manifest manifest = sim::load_manifest(dataset_dir);

    std::vector<const sim::PairMeta*> test_pairs;
    for (const auto& meta : manifest.pairs)
        if (meta.split == "test") test_pairs.push_back(&meta);
    if (test_pairs.empty()) throw EvalError("dataset has no test pairs");

    std::vector<Mask> gts;
    std::vector<size_t> fg_counts;
    std::vector<int> labels;
    gts.reserve(test_pairs.size());
    for (const auto* meta : test_pairs) {
        const fs::path dir = fs::path(dataset_dir) / meta->id;
        Mask mask_w = read_pbm((dir / "mask.pbm").string());
        Mask gt = read_pbm((dir / "gt.pbm").string());
        fg_counts.push_back(mask_w.count());
        labels.push_back(gt.count() > 0 ? 1 : 0);
        gts.push_back(std::move(gt));
    }

    EvalReport report;
    report.pairs_evaluated = int(test_pairs.size());
    for (const auto& method : methods) {
        std::vector<ImageF> maps;
        maps.reserve(test_pairs.size());
        for (const auto* meta : test_pairs) {
            const fs::path base = fs::path(run_dir) / "maps" / method / map_stem(meta->id);
            const fs::path pgm = base.string() + ".pgm";
            const fs::path side = base.string() + ".json";
            if (!fs::exists(pgm) || !fs::exists(side))
                throw MissingScores("missing " + method + " map for pair " + meta->id);
            std::ifstream sis(side);
            json sj;
            try {
                sis >> sj;
            } catch (const json::exception& e) {
                throw EvalError("sidecar parse for " + meta->id + ": " + e.what());
            }
            maps.push_back(read_pgm16(pgm.string(), sj.at("min").get<float>(),
                                      sj.at("max").get<float>()));
        }
        report.rows.push_back(evaluate_method(method, maps, gts, fg_counts, labels, fpr_limit));
    }
    return report;
}

}  // namespace twinspect::metrics
