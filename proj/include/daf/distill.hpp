#pragma once

#include <array>
#include <utility>
#include <vector>

#include "daf/image.hpp"
#include "daf/model.hpp"
#include "daf/tape.hpp"

namespace daf::nn {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimC1 = 0.1;
inline constexpr double kSsimC2 = 9e-4;

// Per-position cosine similarity of two (C,H,W) feature tensors along the
// channel axis, clamped to [-1,1] -> (1,H,W). Comparing a tensor against
// bitwise-identical values yields exactly 1 everywhere.
Value cosine_sim_map(Tape& t, Value p, Value q);

// Windowed structural similarity of two (C,H,W) feature tensors: uniform
// 11x11 windows with reflect padding, per-channel similarity, channel mean,
// clamped to [-1,1] -> (1,H,W). The constant 0/1 `weight` raster (H x W)
// confines every window statistic to weight-1 positions, so values at
// weight-0 positions cannot influence the output at all. An all-ones weight
// gives plain windows.
Value ssim_map(Tape& t, Value p, Value q, const Tensor& weight);

// 0/1 raster marking NORMAL positions at a coarse stage: the full-resolution
// anomaly mask is reduced with the any rule (a cell is anomalous if any
// covered pixel is), then inverted.
Tensor normal_weight(const Mask& anomaly, int h, int w);

// Flat indices of weight-1 positions.
std::vector<int> weight_indices(const Tensor& weight);

// Teacher/student agreement over normal positions of all three stages:
//   cos_loss  = sum_i (1 - mean over normal positions of cosine map_i)
//   ssim_loss = sum_i (1 - mean over normal positions of ssim map_i)
//   total     = cos_loss + ssim_loss
// Throws DegenerateBatchError when any stage has no normal position.
struct KdLosses {
    Value cos_loss;
    Value ssim_loss;
    Value total;
};
KdLosses kd_loss(Tape& t, const EncoderFeatures& teacher, const EncoderFeatures& student,
                 const std::array<Tensor, 3>& normal_weights);

// Convenience: per-stage normal weights matching the feature extents.
std::array<Tensor, 3> normal_weights_for(Tape& t, const Mask& anomaly,
                                         const EncoderFeatures& f);

// Per-stage discrepancy 2 - cos - ssim with plain (all-ones) windows; every
// value lies in [0,4], and identical inputs give exactly 0.
Value stage_discrepancy(Tape& t, Value p, Value q);

// Sum of the three per-stage discrepancies, each bilinearly upsampled to
// (h,w); values lie in [0,12].
Value aggregate_discrepancy(Tape& t, const EncoderFeatures& teacher,
                            const EncoderFeatures& student, int h, int w);

}  // namespace daf::nn
