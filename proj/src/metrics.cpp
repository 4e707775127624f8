#include "twinspect/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <sstream>

namespace twinspect::metrics {

namespace {

// Order-preserving map from float bits to an unsigned key.
uint32_t float_key(float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    return (u & 0x80000000u) ? ~u : (u | 0x80000000u);
}

// score key in the high 32 bits, label in bit 0.
uint64_t pack(float score, bool label) {
    return (uint64_t(float_key(score)) << 32) | uint64_t(label ? 1 : 0);
}

struct Ranked {
    std::vector<uint64_t> packed;  // ascending by score
    size_t positives = 0;
    size_t negatives = 0;
};

Ranked rank_packed(const float* scores, const uint8_t* labels, size_t n) {
    Ranked r;
    r.packed.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const bool pos = labels[i] != 0;
        r.packed[i] = pack(scores[i], pos);
        if (pos)
            ++r.positives;
        else
            ++r.negatives;
    }
    std::sort(r.packed.begin(), r.packed.end());
    return r;
}

double auroc_ranked(const Ranked& r) {
    if (r.positives == 0 || r.negatives == 0)
        throw SingleClass("auroc requires both classes present");
    const size_t n = r.packed.size();
    // 2x the midrank sum over positives stays integral, hence exact in u64.
    unsigned long long twice_rank_sum = 0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        const uint64_t key = r.packed[i] >> 32;
        size_t pos_in_group = 0;
        while (j < n && (r.packed[j] >> 32) == key) {
            pos_in_group += r.packed[j] & 1u;
            ++j;
        }
        // ranks i+1 .. j; midrank = (i + 1 + j) / 2
        twice_rank_sum += (unsigned long long)(pos_in_group) * (unsigned long long)(i + 1 + j);
        i = j;
    }
    const double p = double(r.positives), q = double(r.negatives);
    const double u_stat = 0.5 * double(twice_rank_sum) - p * (p + 1.0) / 2.0;
    return u_stat / (p * q);
}

// Walks descending tie groups; calls fn(tp, fp) after each group.
template <typename Fn>
void walk_descending(const Ranked& r, Fn&& fn) {
    const auto& v = r.packed;
    size_t tp = 0, fp = 0;
    size_t i = v.size();
    while (i > 0) {
        const uint64_t key = v[i - 1] >> 32;
        while (i > 0 && (v[i - 1] >> 32) == key) {
            if (v[i - 1] & 1u)
                ++tp;
            else
                ++fp;
            --i;
        }
        fn(tp, fp);
    }
}

double ap_ranked(const Ranked& r) {
    if (r.positives == 0) throw NoPositives("average_precision requires >= 1 positive");
    double ap = 0;
    double prev_recall = 0;
    const double total_pos = double(r.positives);
    walk_descending(r, [&](size_t tp, size_t fp) {
        const double recall = double(tp) / total_pos;
        const double precision = double(tp) / double(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    });
    return ap;
}

double f1_ranked(const Ranked& r) {
    if (r.positives == 0) throw NoPositives("f1_max requires >= 1 positive");
    double best = 0;
    const double total_pos = double(r.positives);
    walk_descending(r, [&](size_t tp, size_t fp) {
        const double denom = 2.0 * double(tp) + double(fp) + (total_pos - double(tp));
        if (denom > 0) best = std::max(best, 2.0 * double(tp) / denom);
    });
    return best;
}

Ranked rank_from_doubles(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw EvalError("scores/labels length mismatch");
    if (scores.empty()) throw EvalError("empty score list");
    std::vector<float> s(scores.size());
    std::vector<uint8_t> l(scores.size());
    // Rank statistics only depend on order; doubles are ranked directly to
    // avoid f32 rounding surprises in the exact hand-computed cases.
    std::vector<size_t> idx(scores.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    Ranked r;
    r.packed.resize(scores.size());
    // Re-key by dense rank of the double value so exact ties stay ties.
    size_t i = 0;
    uint64_t key = 0;
    while (i < idx.size()) {
        size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        for (size_t t = i; t < j; ++t) {
            const bool pos = labels[idx[t]] != 0;
            r.packed[t] = (key << 32) | (pos ? 1u : 0u);
            if (pos)
                ++r.positives;
            else
                ++r.negatives;
        }
        ++key;
        i = j;
    }
    return r;
}

}  // namespace

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    return auroc_ranked(rank_from_doubles(scores, labels));
}

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    return ap_ranked(rank_from_doubles(scores, labels));
}

double f1_max(const std::vector<double>& scores, const std::vector<int>& labels) {
    return f1_ranked(rank_from_doubles(scores, labels));
}

double auroc_px(const std::vector<float>& scores, const std::vector<uint8_t>& labels) {
    return auroc_ranked(rank_packed(scores.data(), labels.data(), scores.size()));
}

double average_precision_px(const std::vector<float>& scores, const std::vector<uint8_t>& labels) {
    return ap_ranked(rank_packed(scores.data(), labels.data(), scores.size()));
}

double f1_max_px(const std::vector<float>& scores, const std::vector<uint8_t>& labels) {
    return f1_ranked(rank_packed(scores.data(), labels.data(), scores.size()));
}

void pixel_metrics(const std::vector<float>& scores, const std::vector<uint8_t>& labels,
                   double& out_auroc, double& out_ap, double& out_f1) {
    const Ranked r = rank_packed(scores.data(), labels.data(), scores.size());
    out_auroc = auroc_ranked(r);
    out_ap = ap_ranked(r);
    out_f1 = f1_ranked(r);
}

// ---------------------------------------------------------------------------
// AUPRO
// ---------------------------------------------------------------------------

namespace {

// 8-connected components of a binary mask; returns per-component pixel lists.
std::vector<std::vector<size_t>> connected_regions(const Mask& m) {
    std::vector<std::vector<size_t>> regions;
    std::vector<uint8_t> seen(m.size(), 0);
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            const size_t root = size_t(y) * m.width + x;
            if (!m.data[root] || seen[root]) continue;
            regions.emplace_back();
            seen[root] = 1;
            queue.push_back({x, y});
            while (!queue.empty()) {
                auto [cx, cy] = queue.front();
                queue.pop_front();
                regions.back().push_back(size_t(cy) * m.width + cx);
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
        }
    return regions;
}

// Count of elements >= t in an ascending-sorted vector.
size_t count_ge(const std::vector<float>& sorted, float t) {
    return sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), t);
}

}  // namespace

double aupro(const std::vector<ImageF>& score_maps, const std::vector<Mask>& gt_masks,
             double fpr_limit, int sweep_points) {
    if (score_maps.size() != gt_masks.size() || score_maps.empty())
        throw EvalError("aupro: maps/masks mismatch");
    if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw EvalError("aupro: fpr_limit in (0,1]");
    if (sweep_points < 2) throw EvalError("aupro: need >= 2 sweep points");

    std::vector<std::vector<float>> region_scores;  // each ascending
    std::vector<float> normal_scores;
    std::vector<float> pooled;
    for (size_t i = 0; i < score_maps.size(); ++i) {
        const ImageF& map = score_maps[i];
        const Mask& gt = gt_masks[i];
        if (map.width != gt.width || map.height != gt.height)
            throw EvalError("aupro: map/mask size mismatch");
        for (const auto& region : connected_regions(gt)) {
            std::vector<float> s;
            s.reserve(region.size());
            for (size_t px : region) s.push_back(map.data[px]);
            std::sort(s.begin(), s.end());
            region_scores.push_back(std::move(s));
        }
        for (size_t p = 0; p < map.size(); ++p) {
            pooled.push_back(map.data[p]);
            if (!gt.data[p]) normal_scores.push_back(map.data[p]);
        }
    }
    if (region_scores.empty()) throw NoAnomalousRegions("aupro: no anomalous region in the set");
    if (normal_scores.empty()) throw EvalError("aupro: no anomaly-free pixels");
    std::sort(normal_scores.begin(), normal_scores.end());
    std::sort(pooled.begin(), pooled.end());

    // Quantile-spaced thresholds of the pooled distribution, descending.
    std::vector<float> thresholds;
    thresholds.reserve(size_t(sweep_points));
    for (int k = 0; k < sweep_points; ++k) {
        const double q = double(k) / (sweep_points - 1);
        const size_t idx = size_t(std::llround(q * double(pooled.size() - 1)));
        thresholds.push_back(pooled[idx]);
    }
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    std::reverse(thresholds.begin(), thresholds.end());

    // Curve starts at the all-negative operating point.
    std::vector<std::pair<double, double>> curve;  // (fpr, pro), fpr ascending
    curve.emplace_back(0.0, 0.0);
    const double n_regions = double(region_scores.size());
    const double n_normals = double(normal_scores.size());
    for (float t : thresholds) {
        double pro = 0;
        for (const auto& rs : region_scores) pro += double(count_ge(rs, t)) / double(rs.size());
        pro /= n_regions;
        const double fpr = double(count_ge(normal_scores, t)) / n_normals;
        curve.emplace_back(fpr, pro);
    }
    std::sort(curve.begin(), curve.end());

    // Trapezoid up to fpr_limit with linear interpolation at the clip point.
    double area = 0;
    for (size_t i = 1; i < curve.size(); ++i) {
        auto [x0, y0] = curve[i - 1];
        auto [x1, y1] = curve[i];
        if (x0 >= fpr_limit) break;
        if (x1 > fpr_limit) {
            const double t = (fpr_limit - x0) / (x1 - x0);
            x1 = fpr_limit;
            y1 = y0 + t * (y1 - y0);
        }
        area += 0.5 * (y0 + y1) * (x1 - x0);
    }
    return area / fpr_limit;
}

// ---------------------------------------------------------------------------
// Report formatting
// ---------------------------------------------------------------------------

namespace {
std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
    return buf;
}
}  // namespace

std::string EvalReport::table() const {
    static const char* cols[] = {"I-AUROC", "I-AP", "I-F1", "P-AUROC", "P-AP", "P-F1", "AUPRO"};
    size_t name_w = 6;
    for (const auto& r : rows) name_w = std::max(name_w, r.method.size());
    std::ostringstream os;
    os << std::string(name_w, ' ');
    for (const char* c : cols) {
        os << "  ";
        os.width(8);
        os << c;
    }
    os << "\n";
    for (const auto& r : rows) {
        os << r.method << std::string(name_w - r.method.size(), ' ');
        for (double v : {r.i_auroc, r.i_ap, r.i_f1, r.p_auroc, r.p_ap, r.p_f1, r.aupro}) {
            os << "  ";
            os.width(8);
            os << fmt2(v);
        }
        os << "\n";
    }
    return os.str();
}

std::string EvalReport::csv() const {
    std::ostringstream os;
    os << "method,I-AUROC,I-AP,I-F1,P-AUROC,P-AP,P-F1,AUPRO\n";
    for (const auto& r : rows) {
        os << r.method;
        for (double v : {r.i_auroc, r.i_ap, r.i_f1, r.p_auroc, r.p_ap, r.p_f1, r.aupro})
            os << "," << fmt2(v);
        os << "\n";
    }
    return os.str();
}

}  // namespace twinspect::metrics
