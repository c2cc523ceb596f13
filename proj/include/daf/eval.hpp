#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "daf/image.hpp"
#include "daf/segtrain.hpp"

namespace daf::eval {

// ----------------------------------------------------------------- metrics
//
// Each metric has a brute-force oracle in the tests; the implementations
// below are the fast rank/sort-based forms, exact up to floating-point
// accumulation order. All throw MetricError when the metric is undefined
// for the given inputs (the callers that assemble reports catch that and
// emit an explicit null instead of a made-up number).

// Rank-based AUC (Mann-Whitney). A tie between a positive and a negative
// score counts one half. Labels must be 0/1 and both classes present.
// Invariant under strictly monotone transforms of the scores.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Area under the precision-recall curve: sum of (R_k - R_{k-1}) * P_k over
// descending unique score thresholds. Requires at least one positive.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

// Per-region-overlap score. For each threshold t the prediction is
// {score >= t}; for every 8-connected ground-truth region the overlap is
// |region ∩ prediction| / |region|, PRO(t) is the mean over all regions of
// all images, and FPR(t) pools false positives over all normal pixels. The
// (FPR, PRO) curve — anchored at (0, 0) for the empty prediction — is
// integrated by trapezoids from FPR 0 to fpr_limit and normalized by
// fpr_limit. Thresholds are the sorted unique score values when there are
// at most n_thresholds of them (small instances evaluate exactly),
// otherwise n_thresholds values spaced uniformly over the observed score
// range. score_maps[i] is a masks[i].h x masks[i].w raster. Requires at
// least one anomalous region and at least one normal pixel across the set.
double pro_score(const std::vector<std::vector<double>>& score_maps,
                 const std::vector<Mask>& masks, double fpr_limit = 0.3,
                 int n_thresholds = 200);

// ------------------------------------------------------------ dataset eval

// One labeled test image. The mask carries the ground truth at the image's
// native resolution; a normal item simply has an all-zero mask. category
// groups items for the per-category breakdown ("" = uncategorized).
struct EvalItem {
    Image image;
    Mask mask;
    std::string category;
};

// Metric values for one group of items. nullopt means the metric was
// undefined on that group (single-class, no positives, ...); it is reported
// as JSON null, never coerced to a number.
struct MetricSet {
    std::optional<double> i_auc;
    std::optional<double> p_auc;
    std::optional<double> p_pro;
    std::optional<double> p_map;
    int n_images = 0;
    long long n_pixels = 0;
};

struct MetricReport {
    MetricSet overall;
    std::map<std::string, MetricSet> per_category;  // distinct non-"" categories
    std::string config_hash;
};

// Serializes a report as JSON with the fixed key layout
// {i_auc, p_auc, p_pro, p_map, per_category, n_images, n_pixels,
// config_hash}; undefined metrics appear as null.
std::string to_json(const MetricReport& report);

struct EvalConfig {
    int image_size = 256;                    // inference resolution (multiple of 16)
    nn::Variant variant = nn::Variant::full; // which score components the weights provide
    int threads = 1;                         // worker cap (DAF_THREADS also applies)
    std::string config_hash;                 // copied verbatim into the report
};

// Runs inference on every item (resized to cfg.image_size), upsamples each
// score map back to its mask's resolution, and folds the metrics:
// image-level AUC over image scores, pixel AUC / AP over all pixels pooled
// across images, and the per-region-overlap score. Per-metric failures
// become nulls; the other metrics are still computed. Items run in
// parallel over a read-only weight snapshot and are reduced in item order,
// so the report does not depend on the worker count.
MetricReport evaluate_dataset(const nn::ParamStore& params, const std::vector<EvalItem>& items,
                              const EvalConfig& cfg);

}  // namespace daf::eval
