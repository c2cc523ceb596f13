#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "daf/error.hpp"
#include "daf/eval.hpp"
#include "daf/model.hpp"
#include "daf/rasterops.hpp"
#include "daf/rng.hpp"
#include "doctest.h"
#include "json.hpp"

using daf::ConfigError;
using daf::Image;
using daf::Mask;
using daf::MetricError;
using daf::Rng;
using daf::ShapeError;

namespace {

// ------------------------------------------------------------- oracle forms

// Mean over all positive/negative pairs of [s_p > s_n] + 0.5 [s_p == s_n].
double auc_pairwise_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0;
    long long pairs = 0;
    for (size_t i = 0; i < s.size(); ++i) {
        if (!y[i]) continue;
        for (size_t j = 0; j < s.size(); ++j) {
            if (y[j]) continue;
            ++pairs;
            if (s[i] > s[j])
                wins += 1.0;
            else if (s[i] == s[j])
                wins += 0.5;
        }
    }
    return wins / double(pairs);
}

// Recomputes precision/recall from scratch at every unique threshold.
double ap_threshold_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    std::vector<double> thr = s;
    std::sort(thr.begin(), thr.end(), std::greater<>());
    thr.erase(std::unique(thr.begin(), thr.end()), thr.end());
    long long n_pos = 0;
    for (int v : y) n_pos += v;
    double ap = 0, r_prev = 0;
    for (double t : thr) {
        long long tp = 0, fp = 0;
        for (size_t i = 0; i < s.size(); ++i)
            if (s[i] >= t) (y[i] ? tp : fp)++;
        const double r = double(tp) / double(n_pos);
        ap += (r - r_prev) * (double(tp) / double(tp + fp));
        r_prev = r;
    }
    return ap;
}

// Enumerates every threshold by brute force: full raster scans per
// threshold, per-region tallies by label lookup, then a trapezoid
// integration of the clipped curve written independently of the library.
double pro_oracle(const std::vector<std::vector<double>>& maps, const std::vector<Mask>& masks,
                  double fpr_limit, int n_thresholds) {
    std::vector<daf::Components> comps;
    std::vector<long long> region_sizes;
    long long n_neg = 0;
    std::vector<double> all;
    for (size_t i = 0; i < masks.size(); ++i) {
        comps.push_back(daf::connected_components(masks[i]));
        for (int c = 0; c < comps.back().count; ++c) region_sizes.push_back(0);
        const size_t first = region_sizes.size() - size_t(comps.back().count);
        for (size_t p = 0; p < masks[i].data.size(); ++p) {
            all.push_back(maps[i][p]);
            const int lbl = comps.back().labels[p];
            if (lbl > 0)
                region_sizes[first + size_t(lbl - 1)]++;
            else
                ++n_neg;
        }
    }
    const double lo = *std::min_element(all.begin(), all.end());
    const double hi = *std::max_element(all.begin(), all.end());
    std::vector<double> thr = all;
    std::sort(thr.begin(), thr.end());
    thr.erase(std::unique(thr.begin(), thr.end()), thr.end());
    if (thr.size() > size_t(n_thresholds)) {
        thr.resize(size_t(n_thresholds));
        for (int j = 0; j < n_thresholds; ++j)
            thr[size_t(j)] = lo + (hi - lo) * double(j) / double(n_thresholds - 1);
    }
    std::vector<double> xs{0.0}, ys{0.0};
    for (auto it = thr.rbegin(); it != thr.rend(); ++it) {
        const double t = *it;
        long long fp = 0;
        std::vector<long long> hit(region_sizes.size(), 0);
        size_t region_base = 0;
        for (size_t i = 0; i < masks.size(); ++i) {
            for (size_t p = 0; p < masks[i].data.size(); ++p) {
                if (maps[i][p] < t) continue;
                const int lbl = comps[i].labels[p];
                if (lbl > 0)
                    hit[region_base + size_t(lbl - 1)]++;
                else
                    ++fp;
            }
            region_base += size_t(comps[i].count);
        }
        double pro = 0;
        for (size_t r = 0; r < hit.size(); ++r) pro += double(hit[r]) / double(region_sizes[r]);
        xs.push_back(double(fp) / double(n_neg));
        ys.push_back(pro / double(hit.size()));
    }
    double area = 0;
    for (size_t k = 0; k + 1 < xs.size(); ++k) {
        if (xs[k] >= fpr_limit) break;
        if (xs[k + 1] <= xs[k]) continue;
        const double x1 = std::min(xs[k + 1], fpr_limit);
        const double y1 = ys[k] + (ys[k + 1] - ys[k]) * (x1 - xs[k]) / (xs[k + 1] - xs[k]);
        area += (x1 - xs[k]) * 0.5 * (ys[k] + y1);
    }
    return area / fpr_limit;
}

// Random score/label instance; grid-valued scores with ~50% probability so
// ties across and within classes are common.
void random_instance(Rng& r, std::vector<double>& s, std::vector<int>& y) {
    const int n = r.range(2, 32);
    const bool grid = r.uniform() < 0.5;
    s.clear();
    y.clear();
    for (int i = 0; i < n; ++i) {
        s.push_back(grid ? double(r.range(0, 5)) / 7.0 : r.uniform());
        y.push_back(int(r.below(2)));
    }
    y[0] = 0;  // force both classes
    y[size_t(n) - 1] = 1;
}

}  // namespace

TEST_CASE("roc_auc closed forms and degenerate inputs") {
    CHECK(daf::eval::roc_auc({1, 2, 3, 4}, {0, 0, 1, 1}) == 1.0);
    CHECK(daf::eval::roc_auc({1, 2, 3, 4}, {1, 1, 0, 0}) == 0.0);
    CHECK(daf::eval::roc_auc({7, 7, 7, 7, 7}, {0, 1, 0, 1, 1}) == 0.5);
    CHECK(daf::eval::roc_auc({1, 2, 3, 4}, {0, 1, 0, 1}) == 0.75);

    CHECK_THROWS_AS(daf::eval::roc_auc({1, 2}, {1, 1}), MetricError);
    CHECK_THROWS_AS(daf::eval::roc_auc({1, 2}, {0, 0}), MetricError);
    CHECK_THROWS_AS(daf::eval::roc_auc({}, {}), MetricError);
    CHECK_THROWS_AS(daf::eval::roc_auc({1, 2, 3}, {0, 1}), ShapeError);
    CHECK_THROWS_AS(daf::eval::roc_auc({1, 2}, {0, 2}), ConfigError);
    const double bad = std::nan("");
    CHECK_THROWS_AS(daf::eval::roc_auc({1, bad}, {0, 1}), MetricError);
}

TEST_CASE("roc_auc matches the pairwise oracle") {
    Rng r(2026);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<double> s;
        std::vector<int> y;
        random_instance(r, s, y);
        const double fast = daf::eval::roc_auc(s, y);
        CHECK(std::abs(fast - auc_pairwise_oracle(s, y)) <= 1e-9);

        // strictly monotone transform with exact arithmetic: same ranks
        std::vector<double> st(s.size());
        for (size_t i = 0; i < s.size(); ++i) st[i] = 0.25 * s[i] - 3.0;
        CHECK(daf::eval::roc_auc(st, y) == fast);

        // negating scores flips every pairwise win; ties stay ties
        std::vector<double> sn(s.size());
        for (size_t i = 0; i < s.size(); ++i) sn[i] = -s[i];
        CHECK(std::abs(daf::eval::roc_auc(sn, y) - (1.0 - fast)) <= 1e-12);
    }
}

TEST_CASE("average_precision closed forms and degenerate inputs") {
    CHECK(daf::eval::average_precision({4, 3, 2, 1}, {1, 1, 0, 0}) == 1.0);
    CHECK(daf::eval::average_precision({5, 4, 3, 2, 1}, {0, 0, 0, 0, 1}) == 0.2);
    CHECK(daf::eval::average_precision({1, 2, 3}, {1, 1, 1}) == 1.0);

    CHECK_THROWS_AS(daf::eval::average_precision({1, 2}, {0, 0}), MetricError);
    CHECK_THROWS_AS(daf::eval::average_precision({}, {}), MetricError);
    CHECK_THROWS_AS(daf::eval::average_precision({1}, {0, 1}), ShapeError);
}

TEST_CASE("average_precision matches the exhaustive-threshold oracle") {
    Rng r(77);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<double> s;
        std::vector<int> y;
        random_instance(r, s, y);
        CHECK(std::abs(daf::eval::average_precision(s, y) - ap_threshold_oracle(s, y)) <= 1e-9);
    }
}

TEST_CASE("pro_score hand-built cases") {
    // indicator scores: every region fully recovered before any false positive
    Mask m(8, 8);
    for (int y = 2; y < 5; ++y)
        for (int x = 3; x < 6; ++x) m.at(y, x) = 1;
    std::vector<double> ind(64, 0.0);
    for (size_t p = 0; p < ind.size(); ++p) ind[p] = m.data[p] ? 1.0 : 0.0;
    CHECK(daf::eval::pro_score({ind}, {m}) == 1.0);

    // constant map: the curve is the single segment (0,0)-(1,1)
    std::vector<double> flat(64, 0.4);
    CHECK(daf::eval::pro_score({flat}, {m}) == doctest::Approx(0.15).epsilon(1e-12));

    Mask empty(8, 8);
    CHECK_THROWS_AS(daf::eval::pro_score({ind}, {empty}), MetricError);
    Mask full(8, 8, 1);
    CHECK_THROWS_AS(daf::eval::pro_score({ind}, {full}), MetricError);
    CHECK_THROWS_AS(daf::eval::pro_score({ind}, {m, m}), ShapeError);
    CHECK_THROWS_AS(daf::eval::pro_score({{1.0, 2.0}}, {m}), ShapeError);
    CHECK_THROWS_AS(daf::eval::pro_score({ind}, {m}, 0.0), ConfigError);
    CHECK_THROWS_AS(daf::eval::pro_score({ind}, {m}, 0.3, 1), ConfigError);

    // image order must not matter
    Rng r(5);
    Mask m2(8, 8);
    for (int i = 0; i < 6; ++i) m2.at(int(r.below(8)), int(r.below(8))) = 1;
    std::vector<double> s2(64);
    for (double& v : s2) v = r.uniform();
    const double ab = daf::eval::pro_score({ind, s2}, {m, m2});
    const double ba = daf::eval::pro_score({s2, ind}, {m2, m});
    CHECK(std::abs(ab - ba) <= 1e-12);
}

TEST_CASE("pro_score matches the exhaustive-unique-threshold oracle") {
    Rng r(4242);
    for (int trial = 0; trial < 300; ++trial) {
        const int n_img = r.range(1, 3);
        std::vector<std::vector<double>> maps;
        std::vector<Mask> masks;
        bool any_pos = false, any_neg = false;
        for (int i = 0; i < n_img; ++i) {
            const int h = r.range(3, 8), w = r.range(3, 8);
            Mask m(h, w);
            for (auto& v : m.data) v = r.uniform() < 0.3 ? 1 : 0;
            std::vector<double> s(size_t(h) * size_t(w));
            const bool grid = r.uniform() < 0.5;
            for (double& v : s) v = grid ? double(r.range(0, 5)) / 7.0 : r.uniform();
            maps.push_back(std::move(s));
            masks.push_back(std::move(m));
        }
        for (const Mask& m : masks)
            for (uint8_t v : m.data) (v ? any_pos : any_neg) = true;
        if (!any_pos) masks[0].at(0, 0) = 1;
        if (!any_neg) masks[0].at(masks[0].h - 1, masks[0].w - 1) = 0;
        const double got = daf::eval::pro_score(maps, masks);
        const double want = pro_oracle(maps, masks, 0.3, 200);
        CHECK(std::abs(got - want) <= 1e-9);
    }

    // uniform-grid mode: more unique scores than thresholds
    Rng r2(9);
    Mask m(12, 12);
    for (int y = 4; y < 8; ++y)
        for (int x = 2; x < 9; ++x) m.at(y, x) = 1;
    std::vector<double> s(144);
    for (double& v : s) v = r2.uniform();
    const double got = daf::eval::pro_score({s}, {m}, 0.3, 50);
    CHECK(std::abs(got - pro_oracle({s}, {m}, 0.3, 50)) <= 1e-9);
}

TEST_CASE("fused score map: constants, monotonicity, and shape checks") {
    const int h = 12, w = 12;
    std::vector<double> zeros(size_t(h) * w, 0.0);
    std::vector<double> constant(size_t(h) * w, 0.2);
    const daf::nn::FusedScore fs = daf::nn::fuse_score_map(zeros, constant, h, w);
    for (double v : fs.map) CHECK(v == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(fs.image_score == doctest::Approx(0.6).epsilon(1e-12));

    Rng r(31);
    std::vector<double> agg(size_t(h) * w), seg(size_t(h) * w);
    for (double& v : agg) v = r.uniform() * 4.0;
    for (double& v : seg) v = r.uniform();
    const double base = daf::nn::fuse_score_map(agg, seg, h, w).image_score;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> bumped = agg;
        bumped[r.below(bumped.size())] += 0.7;
        CHECK(daf::nn::fuse_score_map(bumped, seg, h, w).image_score >= base);
    }

    CHECK_THROWS_AS(daf::nn::fuse_score_map(zeros, constant, h, w + 1), ShapeError);
    CHECK_THROWS_AS(daf::nn::fuse_score_map({1.0}, constant, h, w), ShapeError);
}

namespace {

daf::nn::ParamStore random_full_params(uint64_t seed) {
    daf::nn::ParamStore ps;
    daf::nn::init_encoder(ps, "teacher.encoder", seed);
    daf::nn::init_encoder(ps, "student.encoder", seed + 1);
    daf::nn::init_decoder(ps, "decoder", seed + 2);
    return ps;
}

Image noise_image(int side, uint64_t seed) {
    Image img(side, side, 3);
    Rng r(seed);
    for (double& v : img.data) v = r.uniform();
    return img;
}

}  // namespace

TEST_CASE("fused score map agrees with inference output") {
    const daf::nn::ParamStore ps = random_full_params(900);
    const Image img = noise_image(32, 4);
    const daf::nn::InferResult res = daf::nn::infer(ps, img, daf::nn::Variant::full);
    const daf::nn::FusedScore fs = daf::nn::fuse_score_map(res.aggregate.v, res.seg.v, 32, 32);
    CHECK(fs.map == res.score_map.v);
    CHECK(fs.image_score == res.image_score);
}

TEST_CASE("evaluate_dataset: report structure, categories, and nulls") {
    const daf::nn::ParamStore ps = random_full_params(1000);
    std::vector<daf::eval::EvalItem> items;
    // category "a": three normals; category "b": three defects
    for (int i = 0; i < 3; ++i)
        items.push_back({noise_image(32, uint64_t(i)), Mask(32, 32), "a"});
    Rng r(55);
    for (int i = 0; i < 3; ++i) {
        Mask m(32, 32);
        const int y0 = r.range(2, 20), x0 = r.range(2, 20);
        for (int y = y0; y < y0 + 6; ++y)
            for (int x = x0; x < x0 + 6; ++x) m.at(y, x) = 1;
        items.push_back({noise_image(32, uint64_t(100 + i)), m, "b"});
    }

    daf::eval::EvalConfig cfg;
    cfg.image_size = 32;
    cfg.threads = 1;
    cfg.config_hash = "deadbeef";
    const daf::eval::MetricReport rep = daf::eval::evaluate_dataset(ps, items, cfg);

    CHECK(rep.overall.n_images == 6);
    CHECK(rep.overall.n_pixels == 6 * 1024);
    REQUIRE(rep.overall.i_auc.has_value());
    CHECK(*rep.overall.i_auc >= 0.0);
    CHECK(*rep.overall.i_auc <= 1.0);
    REQUIRE(rep.overall.p_auc.has_value());
    REQUIRE(rep.overall.p_map.has_value());
    REQUIRE(rep.overall.p_pro.has_value());
    CHECK(*rep.overall.p_pro >= 0.0);
    CHECK(*rep.overall.p_pro <= 1.0);

    REQUIRE(rep.per_category.count("a") == 1);
    REQUIRE(rep.per_category.count("b") == 1);
    const daf::eval::MetricSet& a = rep.per_category.at("a");
    CHECK(a.n_images == 3);
    CHECK(a.n_pixels == 3 * 1024);
    CHECK_FALSE(a.i_auc.has_value());  // single class within the group
    CHECK_FALSE(a.p_auc.has_value());  // no positive pixels
    CHECK_FALSE(a.p_map.has_value());
    CHECK_FALSE(a.p_pro.has_value());
    const daf::eval::MetricSet& b = rep.per_category.at("b");
    CHECK_FALSE(b.i_auc.has_value());
    CHECK(b.p_auc.has_value());
    CHECK(b.p_map.has_value());
    CHECK(b.p_pro.has_value());

    const std::string js = daf::eval::to_json(rep);
    const nlohmann::json j = nlohmann::json::parse(js);
    const std::set<std::string> want{"i_auc",        "p_auc",    "p_pro",    "p_map",
                                     "per_category", "n_images", "n_pixels", "config_hash"};
    std::set<std::string> got;
    for (auto it = j.begin(); it != j.end(); ++it) got.insert(it.key());
    CHECK(got == want);
    CHECK(j["config_hash"] == "deadbeef");
    CHECK(j["per_category"]["a"]["i_auc"].is_null());
    CHECK(j["per_category"]["b"]["p_auc"].is_number());
    CHECK(j["n_images"] == 6);

    // deterministic, including across worker counts
    CHECK(daf::eval::to_json(daf::eval::evaluate_dataset(ps, items, cfg)) == js);
    daf::eval::EvalConfig cfg3 = cfg;
    cfg3.threads = 3;
    CHECK(daf::eval::to_json(daf::eval::evaluate_dataset(ps, items, cfg3)) == js);
}

TEST_CASE("evaluate_dataset resizes for inference and validates input") {
    const daf::nn::ParamStore ps = random_full_params(1100);
    std::vector<daf::eval::EvalItem> items;
    Mask m(48, 48);
    for (int y = 10; y < 20; ++y)
        for (int x = 12; x < 30; ++x) m.at(y, x) = 1;
    items.push_back({noise_image(48, 7), Mask(48, 48), ""});
    items.push_back({noise_image(48, 8), m, ""});

    daf::eval::EvalConfig cfg;
    cfg.image_size = 32;  // inference below mask resolution: maps upsampled back
    const daf::eval::MetricReport rep = daf::eval::evaluate_dataset(ps, items, cfg);
    CHECK(rep.overall.n_pixels == 2 * 48 * 48);
    CHECK(rep.per_category.empty());
    CHECK(rep.overall.i_auc.has_value());
    CHECK(rep.overall.p_auc.has_value());

    CHECK_THROWS_AS(daf::eval::evaluate_dataset(ps, {}, cfg), ConfigError);
    daf::eval::EvalConfig bad = cfg;
    bad.image_size = 20;
    CHECK_THROWS_AS(daf::eval::evaluate_dataset(ps, items, bad), ConfigError);
    std::vector<daf::eval::EvalItem> mismatched = items;
    mismatched[0].mask = Mask(16, 16);
    CHECK_THROWS_AS(daf::eval::evaluate_dataset(ps, mismatched, cfg), ShapeError);
}
