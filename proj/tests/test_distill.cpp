#include <array>
#include <cmath>
#include <vector>

#include "autodiff_check.hpp"
#include "daf/distill.hpp"
#include "daf/model.hpp"
#include "daf/rasterops.hpp"
#include "daf/rng.hpp"
#include "doctest.h"

using namespace daf;
using namespace daf::nn;
using daf::testutil::check_grads;
using daf::testutil::rand_tensor;
using daf::testutil::weighted_sum;

namespace {

// Direct (non-separable) weighted-window similarity oracle mirroring the
// documented statistics: uniform 11x11 reflect-padded windows confined to
// weight-1 positions, per-channel similarity, channel mean, clamp.
Tensor ssim_oracle(const Tensor& p, const Tensor& q, const Tensor& weight) {
    const int c = p.c(), h = p.h(), w = p.w(), r = kSsimWindow / 2;
    Tensor out({1, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double mean_acc = 0;
            double n = 0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx)
                    n += weight[size_t(reflect_index(y + dy, h)) * w + reflect_index(x + dx, w)];
            const double inv = 1.0 / std::max(n, 1.0);
            for (int ch = 0; ch < c; ++ch) {
                double sp = 0, sq = 0, spq = 0, spp = 0, sqq = 0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        const int yy = reflect_index(y + dy, h), xx = reflect_index(x + dx, w);
                        const double wv = weight[size_t(yy) * w + xx];
                        const double pv = p.at(ch, yy, xx), qv = q.at(ch, yy, xx);
                        sp += wv * pv;
                        sq += wv * qv;
                        spq += wv * (pv * qv);
                        spp += wv * (pv * pv);
                        sqq += wv * (qv * qv);
                    }
                const double mp = sp * inv, mq = sq * inv;
                const double sigpq = spq * inv - mp * mq;
                const double sigpp = spp * inv - mp * mp;
                const double sigqq = sqq * inv - mq * mq;
                const double num = (2.0 * (mp * mq) + kSsimC1) * (2.0 * sigpq + kSsimC2);
                const double den = (mp * mp + mq * mq + kSsimC1) * (sigpp + sigqq + kSsimC2);
                mean_acc += num / den;
            }
            out.at(0, y, x) = std::min(1.0, std::max(-1.0, mean_acc / c));
        }
    return out;
}

Tensor ones_raster(int h, int w) {
    Tensor t({h, w});
    t.fill(1.0);
    return t;
}

Tensor random_weight(int h, int w, double keep_prob, uint64_t seed) {
    Tensor t({h, w});
    Rng rng(seed);
    for (long i = 0; i < t.size(); ++i) t[i] = rng.uniform() < keep_prob ? 1.0 : 0.0;
    return t;
}

}  // namespace

TEST_CASE("ssim_map matches the direct-window oracle") {
    Rng rng(101);
    Tensor p = rand_tensor({3, 8, 8}, rng);
    Tensor q = rand_tensor({3, 8, 8}, rng);
    for (int mode = 0; mode < 2; ++mode) {
        CAPTURE(mode);
        Tensor w = mode == 0 ? ones_raster(8, 8) : random_weight(8, 8, 0.7, 5);
        Tape t;
        const Tensor& got = t.val(ssim_map(t, t.leaf(p), t.leaf(q), w));
        Tensor want = ssim_oracle(p, q, w);
        REQUIRE(got.shape == want.shape);
        for (long i = 0; i < got.size(); ++i)
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-10));
    }
    Tape t;
    CHECK_THROWS_AS((void)ssim_map(t, t.leaf(p), t.leaf(q), ones_raster(4, 8)), ShapeError);
}

TEST_CASE("ssim_map of bitwise-identical features is exactly one") {
    Rng rng(102);
    // Power-of-two channel count: the channel-mean scale is exact.
    Tensor p = rand_tensor({4, 6, 6}, rng, -2.0, 2.0);
    Tensor copy = p;
    Tape t;
    const Tensor& got = t.val(ssim_map(t, t.leaf(p), t.leaf(copy), ones_raster(6, 6)));
    for (long i = 0; i < got.size(); ++i) CHECK(got[i] == 1.0);

    // Also under a partial weight raster.
    const Tensor& got2 =
        t.val(ssim_map(t, t.leaf(p), t.leaf(copy), random_weight(6, 6, 0.6, 7)));
    for (long i = 0; i < got2.size(); ++i) CHECK(got2[i] == 1.0);
}

TEST_CASE("ssim_map is exactly invariant to values at weight-0 positions") {
    Rng rng(103);
    Tensor p = rand_tensor({3, 8, 8}, rng);
    Tensor q = rand_tensor({3, 8, 8}, rng);
    Tensor w = random_weight(8, 8, 0.65, 9);

    Tensor p2 = p, q2 = q;
    Rng noise(104);
    for (long pos = 0; pos < 64; ++pos) {
        if (w[pos] != 0.0) continue;
        for (int ch = 0; ch < 3; ++ch) {
            const long i = ch * 64 + pos;
            switch (noise.below(4)) {
                case 0: p2[i] = 1e6; q2[i] = -1e6; break;
                case 1: p2[i] = -p[i]; q2[i] = -q[i]; break;
                case 2: p2[i] = 0.0; q2[i] = -0.0; break;
                default: p2[i] = noise.normal() * 50.0; q2[i] = noise.normal() * 50.0; break;
            }
        }
    }
    Tape t;
    const Tensor& a = t.val(ssim_map(t, t.leaf(p), t.leaf(q), w));
    const Tensor& b = t.val(ssim_map(t, t.leaf(p2), t.leaf(q2), w));
    for (long i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("cosine_sim_map: oracle agreement, self-similarity, bounded range") {
    Rng rng(105);
    Tensor p = rand_tensor({5, 4, 4}, rng);
    Tensor q = rand_tensor({5, 4, 4}, rng);
    Tape t;
    const Tensor& got = t.val(cosine_sim_map(t, t.leaf(p), t.leaf(q)));
    for (long pos = 0; pos < 16; ++pos) {
        double ca = 0, cb = 0, dot = 0;
        for (int ch = 0; ch < 5; ++ch) {
            ca += p[ch * 16 + pos] * p[ch * 16 + pos];
            cb += q[ch * 16 + pos] * q[ch * 16 + pos];
            dot += p[ch * 16 + pos] * q[ch * 16 + pos];
        }
        double want = std::min(1.0, std::max(-1.0, dot / std::max(std::sqrt(ca * cb), 1e-8)));
        CHECK(got[pos] == doctest::Approx(want).epsilon(1e-13));
    }

    Tensor copy = p;
    const Tensor& self = t.val(cosine_sim_map(t, t.leaf(p), t.leaf(copy)));
    for (long i = 0; i < self.size(); ++i) CHECK(self[i] == 1.0);

    // Large magnitudes and opposite signs stay inside [-1, 1].
    Tensor big = p, neg = p;
    for (long i = 0; i < big.size(); ++i) {
        big[i] *= 1e30;
        neg[i] = -neg[i];
    }
    const Tensor& r = t.val(cosine_sim_map(t, t.leaf(big), t.leaf(neg)));
    for (long i = 0; i < r.size(); ++i) {
        CHECK(r[i] >= -1.0);
        CHECK(r[i] <= 1.0);
    }
}

TEST_CASE("normal_weight inverts the any-rule reduction of the anomaly mask") {
    Mask m(16, 16);
    m.at(5, 7) = 1;  // single anomalous pixel
    for (auto [h, w] : std::vector<std::pair<int, int>>{{8, 8}, {4, 4}, {2, 2}}) {
        CAPTURE(h);
        Tensor nw = normal_weight(m, h, w);
        Mask coarse = downsample_mask(m, h, w);
        long zeros = 0;
        for (long i = 0; i < nw.size(); ++i) {
            CHECK(nw[i] == (coarse.data[size_t(i)] ? 0.0 : 1.0));
            zeros += nw[i] == 0.0;
        }
        CHECK(zeros == 1);  // one anomalous pixel survives every reduction
    }
    CHECK(weight_indices(normal_weight(m, 4, 4)).size() == 15);

    Mask all(4, 4, 1);
    Tensor nw = normal_weight(all, 2, 2);
    CHECK(weight_indices(nw).empty());
}

namespace {

struct TinyStages {
    std::array<Tensor, 3> tea, stu;
    std::array<Tensor, 3> w;
    EncoderFeatures teacher(Tape& t) const {
        return {t.leaf(tea[0]), t.leaf(tea[1]), t.leaf(tea[2])};
    }
    EncoderFeatures student(Tape& t) const {
        return {t.leaf(stu[0]), t.leaf(stu[1]), t.leaf(stu[2])};
    }
};

TinyStages tiny_stages(uint64_t seed) {
    Rng rng(seed);
    TinyStages s;
    const std::array<std::vector<int>, 3> shapes{
        std::vector<int>{3, 8, 8}, {3, 4, 4}, {4, 2, 2}};
    for (int i = 0; i < 3; ++i) {
        s.tea[size_t(i)] = rand_tensor(shapes[size_t(i)], rng);
        s.stu[size_t(i)] = rand_tensor(shapes[size_t(i)], rng);
        s.w[size_t(i)] = random_weight(shapes[size_t(i)][1], shapes[size_t(i)][2], 0.8, seed + i);
    }
    return s;
}

// Smallest distance of any per-position cosine to the clamp boundary. Inputs
// for finite-difference checks must keep a margin well above the probe step,
// or the central difference straddles the kink.
double cos_margin(const Tensor& a, const Tensor& b) {
    Tape t;
    Value c = t.cosine_map(t.leaf(a), t.leaf(b));
    double m = 2.0;
    for (long i = 0; i < t.val(c).size(); ++i) m = std::min(m, 1.0 - std::abs(t.val(c)[i]));
    return m;
}

}  // namespace

TEST_CASE("kd_loss assembles per-stage means of the similarity maps") {
    TinyStages s = tiny_stages(106);
    Tape t;
    auto tf = s.teacher(t);
    auto sf = s.student(t);
    KdLosses kd = kd_loss(t, tf, sf, s.w);

    const std::array<std::pair<Value, Value>, 3> pairs{
        std::pair{tf.s1, sf.s1}, {tf.s2, sf.s2}, {tf.s3, sf.s3}};
    double want_cos = 0, want_ssim = 0;
    for (int i = 0; i < 3; ++i) {
        const Tensor& cm = t.val(cosine_sim_map(t, pairs[size_t(i)].first, pairs[size_t(i)].second));
        const Tensor& sm =
            t.val(ssim_map(t, pairs[size_t(i)].first, pairs[size_t(i)].second, s.w[size_t(i)]));
        double mc = 0, ms = 0;
        auto idx = weight_indices(s.w[size_t(i)]);
        REQUIRE(!idx.empty());
        for (int j : idx) {
            mc += cm[j];
            ms += sm[j];
        }
        want_cos += 1.0 - mc / double(idx.size());
        want_ssim += 1.0 - ms / double(idx.size());
    }
    CHECK(t.val(kd.cos_loss)[0] == doctest::Approx(want_cos).epsilon(1e-12));
    CHECK(t.val(kd.ssim_loss)[0] == doctest::Approx(want_ssim).epsilon(1e-12));
    CHECK(t.val(kd.total)[0] ==
          doctest::Approx(t.val(kd.cos_loss)[0] + t.val(kd.ssim_loss)[0]).epsilon(1e-15));
    CHECK(t.val(kd.cos_loss)[0] > 0.0);
}

TEST_CASE("kd_loss of a perfectly matching student is exactly zero") {
    // Power-of-two channel counts keep the channel-mean scale exact.
    Rng rng(107);
    TinyStages s;
    const std::array<std::vector<int>, 3> shapes{
        std::vector<int>{2, 8, 8}, {4, 4, 4}, {8, 2, 2}};
    for (int i = 0; i < 3; ++i) {
        s.tea[size_t(i)] = rand_tensor(shapes[size_t(i)], rng, -2.0, 2.0);
        s.stu[size_t(i)] = s.tea[size_t(i)];
        s.w[size_t(i)] = random_weight(shapes[size_t(i)][1], shapes[size_t(i)][2], 0.8, 107 + i);
    }
    Tape t;
    KdLosses kd = kd_loss(t, s.teacher(t), s.student(t), s.w);
    CHECK(t.val(kd.cos_loss)[0] == 0.0);
    CHECK(t.val(kd.ssim_loss)[0] == 0.0);
    CHECK(t.val(kd.total)[0] == 0.0);
}

TEST_CASE("kd_loss rejects stages with no normal positions") {
    TinyStages s = tiny_stages(108);
    s.w[1].fill(0.0);
    Tape t;
    CHECK_THROWS_AS((void)kd_loss(t, s.teacher(t), s.student(t), s.w), DegenerateBatchError);
    // A DegenerateBatchError is also a TrainError for coarse handling.
    CHECK_THROWS_AS((void)kd_loss(t, s.teacher(t), s.student(t), s.w), TrainError);
}

TEST_CASE("kd_loss is exactly invariant to features at masked positions") {
    TinyStages s = tiny_stages(109);
    Tape t1;
    KdLosses a = kd_loss(t1, s.teacher(t1), s.student(t1), s.w);

    TinyStages mod = s;
    Rng noise(110);
    for (int i = 0; i < 3; ++i) {
        Tensor& f = mod.stu[size_t(i)];
        const Tensor& w = s.w[size_t(i)];
        const long hw = w.size();
        for (long pos = 0; pos < hw; ++pos) {
            if (w[pos] != 0.0) continue;
            for (int ch = 0; ch < f.c(); ++ch) f[ch * hw + pos] = noise.normal() * 100.0;
        }
    }
    Tape t2;
    KdLosses b = kd_loss(t2, mod.teacher(t2), mod.student(t2), mod.w);
    CHECK(t1.val(a.cos_loss)[0] == t2.val(b.cos_loss)[0]);
    CHECK(t1.val(a.ssim_loss)[0] == t2.val(b.ssim_loss)[0]);
    CHECK(t1.val(a.total)[0] == t2.val(b.total)[0]);
}

TEST_CASE("stage_discrepancy: zero at agreement, bounded in [0,4]") {
    Rng rng(111);
    Tensor p = rand_tensor({4, 5, 5}, rng, -2.0, 2.0);
    Tensor copy = p;
    Tape t;
    const Tensor& zero = t.val(stage_discrepancy(t, t.leaf(p), t.leaf(copy)));
    for (long i = 0; i < zero.size(); ++i) CHECK(zero[i] == 0.0);

    for (uint64_t seed : {112ull, 113ull, 114ull}) {
        Rng r2(seed);
        Tensor a = rand_tensor({3, 6, 6}, r2, -5.0, 5.0);
        Tensor b = rand_tensor({3, 6, 6}, r2, -5.0, 5.0);
        if (seed == 113ull)
            for (long i = 0; i < b.size(); ++i) b[i] = -a[i] * 1e4;  // anti-aligned, huge
        Tape t2;
        const Tensor& d = t2.val(stage_discrepancy(t2, t2.leaf(a), t2.leaf(b)));
        for (long i = 0; i < d.size(); ++i) {
            CHECK(d[i] >= 0.0);
            CHECK(d[i] <= 4.0);
        }
    }
}

TEST_CASE("aggregate_discrepancy: zero for twin encoders, bounded otherwise") {
    ParamStore ps;
    init_encoder(ps, "teacher.encoder", 21);
    init_encoder(ps, "student.encoder", 22);
    copy_prefix(ps, "teacher.encoder", "student.encoder");  // student = teacher, bitwise
    Rng rng(115);
    Tensor img({3, 64, 64});
    for (long i = 0; i < img.size(); ++i) img[i] = rng.uniform();
    Tape t;
    Binder bind(t, ps);
    Value iv = t.leaf(img);
    auto tf = encoder_forward(t, bind, "teacher.encoder", iv);
    auto sf = encoder_forward(t, bind, "student.encoder", iv);
    const Tensor& agg = t.val(aggregate_discrepancy(t, tf, sf, 64, 64));
    REQUIRE(agg.shape == std::vector<int>{1, 64, 64});
    for (long i = 0; i < agg.size(); ++i) CHECK(agg[i] == 0.0);

    ParamStore other;
    init_encoder(other, "student.encoder", 99);
    Tape t2;
    Binder bt(t2, ps), bs(t2, other);
    auto tf2 = encoder_forward(t2, bt, "teacher.encoder", t2.leaf(img));
    auto sf2 = encoder_forward(t2, bs, "student.encoder", t2.leaf(img));
    const Tensor& agg2 = t2.val(aggregate_discrepancy(t2, tf2, sf2, 32, 48));
    REQUIRE(agg2.shape == std::vector<int>{1, 32, 48});
    double peak = 0;
    for (long i = 0; i < agg2.size(); ++i) {
        CHECK(agg2[i] >= 0.0);
        CHECK(agg2[i] <= 12.0);
        peak = std::max(peak, agg2[i]);
    }
    CHECK(peak > 0.0);  // unrelated encoders must disagree somewhere
}

TEST_CASE("distillation gradients pass central-difference checks") {
    Rng rng(122);
    Tensor p = rand_tensor({3, 5, 5}, rng);
    Tensor q = rand_tensor({3, 5, 5}, rng);
    REQUIRE(cos_margin(p, q) > 0.02);  // keep the probe step off the clamp kink
    Tensor w = random_weight(5, 5, 0.7, 117);
    check_grads([&](Tape& t, const std::vector<Value>& v) {
        return weighted_sum(t, ssim_map(t, v[0], v[1], w));
    }, {p, q});
    check_grads([&](Tape& t, const std::vector<Value>& v) {
        return weighted_sum(t, stage_discrepancy(t, v[0], v[1]));
    }, {p, q});

    TinyStages s = tiny_stages(222);
    for (int i = 0; i < 3; ++i) REQUIRE(cos_margin(s.tea[size_t(i)], s.stu[size_t(i)]) > 0.02);
    check_grads([&](Tape& t, const std::vector<Value>& v) {
        EncoderFeatures tf{v[0], v[1], v[2]};
        EncoderFeatures sf{v[3], v[4], v[5]};
        return kd_loss(t, tf, sf, s.w).total;
    }, {s.tea[0], s.tea[1], s.tea[2], s.stu[0], s.stu[1], s.stu[2]});

    check_grads([&](Tape& t, const std::vector<Value>& v) {
        EncoderFeatures tf{v[0], v[1], v[2]};
        EncoderFeatures sf{v[3], v[4], v[5]};
        return weighted_sum(t, aggregate_discrepancy(t, tf, sf, 8, 8));
    }, {s.tea[0], s.tea[1], s.tea[2], s.stu[0], s.stu[1], s.stu[2]});
}
