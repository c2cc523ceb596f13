#include "daf/distill.hpp"

#include <cmath>

#include "daf/error.hpp"
#include "daf/rasterops.hpp"

namespace daf::nn {

namespace {

// Mean over channels of a (C,H,W) value via a fixed all-ones 1x1 summing
// kernel. Stage widths are powers of two, so the 1/C scale is exact.
Value channel_mean(Tape& t, Value x) {
    const int c = t.val(x).c();
    Tensor ones({1, c, 1, 1});
    ones.fill(1.0);
    Value summed = t.conv2d(x, t.leaf(std::move(ones)), t.leaf(Tensor({1})), 1, 0);
    return t.affine(summed, 1.0 / double(c), 0.0);
}

// Window population per position: reflect-padded window sum of the weight
// raster, floored at one so empty windows divide safely. Constant w.r.t. the
// tape.
Tensor window_inverse(const Tensor& weight) {
    const int h = weight.h(), w = weight.w(), r = kSsimWindow / 2;
    Tensor inv({h, w});
    std::vector<double> tmp(size_t(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int d = -r; d <= r; ++d) acc += weight[size_t(y) * w + reflect_index(x + d, w)];
            tmp[size_t(y) * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int d = -r; d <= r; ++d) acc += tmp[size_t(reflect_index(y + d, h)) * w + x];
            inv[size_t(y) * w + x] = 1.0 / std::max(acc, 1.0);
        }
    return inv;
}

}  // namespace

Value cosine_sim_map(Tape& t, Value p, Value q) {
    return t.clamp(t.cosine_map(p, q), -1.0, 1.0);
}

Value ssim_map(Tape& t, Value p, Value q, const Tensor& weight) {
    const Tensor& tp = t.val(p);
    if (weight.h() != tp.h() || weight.w() != tp.w() || long(weight.v.size()) != long(tp.h()) * tp.w())
        throw ShapeError("ssim weight raster does not match the feature extent");
    const Tensor inv = window_inverse(weight);

    // Weighted window means. The p and q paths use identical op sequences so
    // bitwise-equal inputs produce bitwise-equal statistics.
    auto wmean = [&](Value x) {
        return t.mul_raster(t.box_sum(t.mul_raster(x, weight), kSsimWindow), inv);
    };
    Value mu_p = wmean(p);
    Value mu_q = wmean(q);
    Value e_pq = wmean(t.mul(p, q));
    Value e_pp = wmean(t.mul(p, p));
    Value e_qq = wmean(t.mul(q, q));

    Value sig_pq = t.sub(e_pq, t.mul(mu_p, mu_q));
    Value sig_pp = t.sub(e_pp, t.mul(mu_p, mu_p));
    Value sig_qq = t.sub(e_qq, t.mul(mu_q, mu_q));

    Value num = t.mul(t.affine(t.mul(mu_p, mu_q), 2.0, kSsimC1),
                      t.affine(sig_pq, 2.0, kSsimC2));
    Value den = t.mul(t.affine(t.add(t.mul(mu_p, mu_p), t.mul(mu_q, mu_q)), 1.0, kSsimC1),
                      t.affine(t.add(sig_pp, sig_qq), 1.0, kSsimC2));
    return t.clamp(channel_mean(t, t.div(num, den)), -1.0, 1.0);
}

Tensor normal_weight(const Mask& anomaly, int h, int w) {
    Mask coarse = downsample_mask(anomaly, h, w);
    Tensor t({h, w});
    for (long i = 0; i < t.size(); ++i) t[i] = coarse.data[size_t(i)] ? 0.0 : 1.0;
    return t;
}

std::vector<int> weight_indices(const Tensor& weight) {
    std::vector<int> idx;
    for (long i = 0; i < weight.size(); ++i)
        if (weight[i] == 1.0) idx.push_back(int(i));
    return idx;
}

KdLosses kd_loss(Tape& t, const EncoderFeatures& teacher, const EncoderFeatures& student,
                 const std::array<Tensor, 3>& normal_weights) {
    const std::array<std::pair<Value, Value>, 3> stages{
        std::pair{teacher.s1, student.s1}, {teacher.s2, student.s2}, {teacher.s3, student.s3}};
    Value cos_total, ssim_total;
    for (int i = 0; i < 3; ++i) {
        const Tensor& w = normal_weights[size_t(i)];
        std::vector<int> idx = weight_indices(w);
        if (idx.empty())
            throw DegenerateBatchError("no normal positions at stage " + std::to_string(i + 1));
        Value cos = cosine_sim_map(t, stages[size_t(i)].first, stages[size_t(i)].second);
        Value ssim = ssim_map(t, stages[size_t(i)].first, stages[size_t(i)].second, w);
        Value c_i = t.affine(t.mean_subset(cos, idx), -1.0, 1.0);
        Value s_i = t.affine(t.mean_subset(ssim, std::move(idx)), -1.0, 1.0);
        cos_total = i == 0 ? c_i : t.add(cos_total, c_i);
        ssim_total = i == 0 ? s_i : t.add(ssim_total, s_i);
    }
    return {cos_total, ssim_total, t.add(cos_total, ssim_total)};
}

std::array<Tensor, 3> normal_weights_for(Tape& t, const Mask& anomaly,
                                         const EncoderFeatures& f) {
    return {normal_weight(anomaly, t.val(f.s1).h(), t.val(f.s1).w()),
            normal_weight(anomaly, t.val(f.s2).h(), t.val(f.s2).w()),
            normal_weight(anomaly, t.val(f.s3).h(), t.val(f.s3).w())};
}

Value stage_discrepancy(Tape& t, Value p, Value q) {
    Tensor ones({t.val(p).h(), t.val(p).w()});
    ones.fill(1.0);
    Value agree = t.add(cosine_sim_map(t, p, q), ssim_map(t, p, q, ones));
    return t.affine(agree, -1.0, 2.0);
}

Value aggregate_discrepancy(Tape& t, const EncoderFeatures& teacher,
                            const EncoderFeatures& student, int h, int w) {
    Value total = t.resize_bl(stage_discrepancy(t, teacher.s1, student.s1), h, w);
    total = t.add(total, t.resize_bl(stage_discrepancy(t, teacher.s2, student.s2), h, w));
    return t.add(total, t.resize_bl(stage_discrepancy(t, teacher.s3, student.s3), h, w));
}

}  // namespace daf::nn
