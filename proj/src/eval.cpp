#include "daf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "daf/error.hpp"
#include "daf/parallel.hpp"
#include "daf/rasterops.hpp"

#include "json.hpp"

namespace daf::eval {

namespace {

// Validates parallel score/label arrays and returns (n_pos, n_neg).
std::pair<long long, long long> count_classes(const char* who, const std::vector<double>& scores,
                                              const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw ShapeError(std::string(who) + ": " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
    long long n_pos = 0, n_neg = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            throw ConfigError(std::string(who) + ": labels must be 0 or 1");
        if (!std::isfinite(scores[i]))
            throw MetricError(std::string(who) + ": non-finite score at index " + std::to_string(i));
        (labels[i] ? n_pos : n_neg)++;
    }
    return {n_pos, n_neg};
}

// Indices sorted ascending by score; equal scores keep input order.
std::vector<size_t> ascending_order(const std::vector<double>& scores) {
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t(0));
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    return order;
}

}  // namespace

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    const auto [n_pos, n_neg] = count_classes("roc_auc", scores, labels);
    if (n_pos == 0 || n_neg == 0)
        throw MetricError("roc_auc needs both classes (got " + std::to_string(n_pos) +
                          " positive, " + std::to_string(n_neg) + " negative)");
    const std::vector<size_t> order = ascending_order(scores);
    const size_t n = scores.size();
    double pos_rank_sum = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i + 1;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        // the tie group occupies ranks i+1 .. j; every member gets the mean
        const double avg_rank = 0.5 * (double(i + 1) + double(j));
        for (size_t k = i; k < j; ++k)
            if (labels[order[k]]) pos_rank_sum += avg_rank;
        i = j;
    }
    return (pos_rank_sum - 0.5 * double(n_pos) * double(n_pos + 1)) /
           (double(n_pos) * double(n_neg));
}

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    const auto [n_pos, n_neg] = count_classes("average_precision", scores, labels);
    (void)n_neg;
    if (n_pos == 0) throw MetricError("average_precision needs at least one positive");
    const std::vector<size_t> order = ascending_order(scores);
    const size_t n = scores.size();
    double ap = 0.0, recall_prev = 0.0;
    long long tp = 0, fp = 0;
    // walk thresholds from the highest score down; each unique value is one
    // operating point on the precision-recall curve
    size_t i = n;
    while (i > 0) {
        size_t j = i;
        while (j > 0 && scores[order[j - 1]] == scores[order[i - 1]]) --j;
        for (size_t k = j; k < i; ++k)
            (labels[order[k]] ? tp : fp)++;
        const double recall = double(tp) / double(n_pos);
        const double precision = double(tp) / double(tp + fp);
        ap += (recall - recall_prev) * precision;
        recall_prev = recall;
        i = j;
    }
    return ap;
}

double pro_score(const std::vector<std::vector<double>>& score_maps,
                 const std::vector<Mask>& masks, double fpr_limit, int n_thresholds) {
    if (score_maps.size() != masks.size())
        throw ShapeError("pro_score: " + std::to_string(score_maps.size()) + " maps vs " +
                         std::to_string(masks.size()) + " masks");
    if (score_maps.empty()) throw MetricError("pro_score: empty input");
    if (!(fpr_limit > 0.0) || !(fpr_limit <= 1.0))
        throw ConfigError("pro_score: fpr_limit must be in (0, 1]");
    if (n_thresholds < 2) throw ConfigError("pro_score: n_thresholds must be >= 2");

    std::vector<std::vector<double>> region_scores;
    std::vector<double> neg_scores;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (size_t i = 0; i < masks.size(); ++i) {
        const Mask& m = masks[i];
        const std::vector<double>& sm = score_maps[i];
        if (sm.size() != size_t(m.h) * size_t(m.w))
            throw ShapeError("pro_score: map " + std::to_string(i) + " has " +
                             std::to_string(sm.size()) + " values for a " + std::to_string(m.h) +
                             "x" + std::to_string(m.w) + " mask");
        const Components comps = connected_components(m);
        const size_t base = region_scores.size();
        region_scores.resize(base + size_t(comps.count));
        for (size_t p = 0; p < sm.size(); ++p) {
            if (!std::isfinite(sm[p]))
                throw MetricError("pro_score: non-finite score in map " + std::to_string(i));
            lo = std::min(lo, sm[p]);
            hi = std::max(hi, sm[p]);
            const int lbl = comps.labels[p];
            if (lbl > 0)
                region_scores[base + size_t(lbl - 1)].push_back(sm[p]);
            else
                neg_scores.push_back(sm[p]);
        }
    }
    if (region_scores.empty()) throw MetricError("pro_score: no anomalous region in any mask");
    if (neg_scores.empty()) throw MetricError("pro_score: no normal pixels");
    for (auto& rs : region_scores) std::sort(rs.begin(), rs.end());
    std::sort(neg_scores.begin(), neg_scores.end());

    // Sorted unique scores when few enough (evaluates the curve exactly),
    // else a uniform grid over the observed range.
    std::vector<double> thresholds;
    {
        std::vector<double> uniq = neg_scores;
        for (const auto& rs : region_scores) uniq.insert(uniq.end(), rs.begin(), rs.end());
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        if (uniq.size() <= size_t(n_thresholds)) {
            thresholds = std::move(uniq);
        } else {
            thresholds.resize(size_t(n_thresholds));
            for (int j = 0; j < n_thresholds; ++j)
                thresholds[size_t(j)] = lo + (hi - lo) * double(j) / double(n_thresholds - 1);
        }
    }

    // Curve points in descending threshold order; predictions {score >= t}
    // are nested, so FPR and PRO both grow monotonically along the curve.
    const double n_neg = double(neg_scores.size());
    const double n_reg = double(region_scores.size());
    std::vector<std::pair<double, double>> pts;  // (fpr, pro)
    pts.reserve(thresholds.size() + 1);
    pts.emplace_back(0.0, 0.0);  // empty prediction above the top threshold
    for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
        const double t = *it;
        const auto count_ge = [&](const std::vector<double>& sorted) {
            return double(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), t));
        };
        double pro = 0.0;
        for (const auto& rs : region_scores) pro += count_ge(rs) / double(rs.size());
        pts.emplace_back(count_ge(neg_scores) / n_neg, pro / n_reg);
    }

    double area = 0.0;
    for (size_t k = 0; k + 1 < pts.size(); ++k) {
        const auto [x0, y0] = pts[k];
        const auto [x1, y1] = pts[k + 1];
        if (x0 >= fpr_limit) break;
        if (x1 <= x0) continue;  // tie in FPR: zero-width segment
        const double x_hi = std::min(x1, fpr_limit);
        const double y_hi = y0 + (y1 - y0) * (x_hi - x0) / (x1 - x0);
        area += (x_hi - x0) * 0.5 * (y0 + y_hi);
    }
    return area / fpr_limit;
}

namespace {

struct ItemOut {
    double image_score = 0;
    std::vector<double> raster;  // score map at the mask's resolution
};

MetricSet metrics_for(const std::vector<int>& idx, const std::vector<EvalItem>& items,
                      const std::vector<ItemOut>& outs) {
    MetricSet ms;
    ms.n_images = int(idx.size());
    std::vector<double> image_scores, pixel_scores;
    std::vector<int> image_labels, pixel_labels;
    std::vector<std::vector<double>> maps;
    std::vector<Mask> masks;
    for (int i : idx) {
        const Mask& m = items[size_t(i)].mask;
        image_scores.push_back(outs[size_t(i)].image_score);
        image_labels.push_back(m.area() > 0 ? 1 : 0);
        ms.n_pixels += (long long)m.h * m.w;
        const std::vector<double>& r = outs[size_t(i)].raster;
        pixel_scores.insert(pixel_scores.end(), r.begin(), r.end());
        for (uint8_t v : m.data) pixel_labels.push_back(v ? 1 : 0);
        maps.push_back(r);
        masks.push_back(m);
    }
    // undefined on this group -> null in the report; the rest still computed
    try {
        ms.i_auc = roc_auc(image_scores, image_labels);
    } catch (const MetricError&) {
    }
    try {
        ms.p_auc = roc_auc(pixel_scores, pixel_labels);
    } catch (const MetricError&) {
    }
    try {
        ms.p_map = average_precision(pixel_scores, pixel_labels);
    } catch (const MetricError&) {
    }
    try {
        ms.p_pro = pro_score(maps, masks);
    } catch (const MetricError&) {
    }
    return ms;
}

nlohmann::ordered_json metric_fields(const MetricSet& s) {
    nlohmann::ordered_json j;
    j["i_auc"] = s.i_auc ? nlohmann::ordered_json(*s.i_auc) : nlohmann::ordered_json(nullptr);
    j["p_auc"] = s.p_auc ? nlohmann::ordered_json(*s.p_auc) : nlohmann::ordered_json(nullptr);
    j["p_pro"] = s.p_pro ? nlohmann::ordered_json(*s.p_pro) : nlohmann::ordered_json(nullptr);
    j["p_map"] = s.p_map ? nlohmann::ordered_json(*s.p_map) : nlohmann::ordered_json(nullptr);
    return j;
}

}  // namespace

std::string to_json(const MetricReport& report) {
    nlohmann::ordered_json j = metric_fields(report.overall);
    nlohmann::ordered_json pc = nlohmann::ordered_json::object();
    for (const auto& [name, set] : report.per_category) {
        nlohmann::ordered_json c = metric_fields(set);
        c["n_images"] = set.n_images;
        c["n_pixels"] = set.n_pixels;
        pc[name] = std::move(c);
    }
    j["per_category"] = std::move(pc);
    j["n_images"] = report.overall.n_images;
    j["n_pixels"] = report.overall.n_pixels;
    j["config_hash"] = report.config_hash;
    return j.dump(2) + "\n";
}

MetricReport evaluate_dataset(const nn::ParamStore& params, const std::vector<EvalItem>& items,
                              const EvalConfig& cfg) {
    if (items.empty()) throw ConfigError("evaluate_dataset: no test items");
    if (cfg.image_size < 16 || cfg.image_size % 16 != 0)
        throw ConfigError("evaluate_dataset: image_size must be a positive multiple of 16");
    for (size_t i = 0; i < items.size(); ++i)
        if (items[i].mask.h != items[i].image.h || items[i].mask.w != items[i].image.w)
            throw ShapeError("evaluate_dataset: item " + std::to_string(i) + " mask is " +
                             std::to_string(items[i].mask.h) + "x" + std::to_string(items[i].mask.w) +
                             " but its image is " + std::to_string(items[i].image.h) + "x" +
                             std::to_string(items[i].image.w));

    const int threads = nn::thread_cap(cfg.threads);
    const int s = cfg.image_size;
    std::vector<ItemOut> outs(items.size());
    parallel_items(int(items.size()), threads, [&](int i) {
        const EvalItem& item = items[size_t(i)];
        const Image sized = (item.image.h == s && item.image.w == s)
                                ? item.image
                                : resize_bilinear(item.image, s, s);
        const nn::InferResult r = nn::infer(params, sized, cfg.variant);
        outs[size_t(i)].image_score = r.image_score;
        outs[size_t(i)].raster = (item.mask.h == s && item.mask.w == s)
                                     ? r.score_map.v
                                     : resize_bilinear(r.score_map.v, s, s, item.mask.h,
                                                       item.mask.w);
    });

    MetricReport report;
    report.config_hash = cfg.config_hash;
    std::vector<int> all(items.size());
    std::iota(all.begin(), all.end(), 0);
    report.overall = metrics_for(all, items, outs);
    std::map<std::string, std::vector<int>> groups;
    for (size_t i = 0; i < items.size(); ++i)
        if (!items[i].category.empty()) groups[items[i].category].push_back(int(i));
    for (const auto& [name, idx] : groups) report.per_category[name] = metrics_for(idx, items, outs);
    return report;
}

}  // namespace daf::eval
