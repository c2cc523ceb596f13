#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "daf/image.hpp"
#include "daf/model.hpp"
#include "daf/optim.hpp"
#include "daf/synth.hpp"
#include "daf/tape.hpp"
#include "daf/tensor.hpp"

namespace daf::nn {

inline constexpr int kHardNegativeRatio = 3;
inline constexpr double kSegScoreWeight = 3.0;
inline constexpr double kScoreBlurSigma = 4.0;
inline constexpr int kScoreTopK = 50;

// Model variants: the full system, the teacher-student branch alone, the
// segmentation branch alone, and the full system trained without the
// auxiliary per-stage heads. Variants select which parameters exist and
// which loss terms are active; `full` and `wo_aux` share one inference path.
enum class Variant { full, only_ts, only_seg, wo_aux };
Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

// Flat {0,1} raster (1,H,W) from a mask.
Tensor mask_to_raster(const Mask& m);

// Pixel subset for class-imbalanced BCE: every positive of the target plus
// the min(ratio * max(n_pos,1), n_neg) negatives with the highest predicted
// probability. Returns flat indices, positives first in ascending order,
// then the selected negatives ordered by (probability desc, index asc) so
// the subset and any reduction over it are deterministic.
std::vector<int> mine_hard_negatives(const Tensor& pred, const Tensor& target,
                                     int ratio = kHardNegativeRatio);

// Mean binary cross-entropy over the mined subset; probabilities are clamped
// to [1e-7, 1 - 1e-7]. Differentiable w.r.t. pred.
Value seg_loss(Tape& t, Value pred, const Tensor& target, int ratio = kHardNegativeRatio);

// Deep-supervision objective: one auxiliary head per encoder stage scored
// against the any-rule-reduced mask at that stage's resolution, summed over
// the three stages. Head parameters live under "aux1", "aux2", "aux3".
Value aux_loss(Tape& t, Binder& bind, const EncoderFeatures& f, const Mask& mask,
               int ratio = kHardNegativeRatio);

// Exact k*90-degree counterclockwise rotation of a (C,H,W) tensor (pure
// permutation, no interpolation).
Tensor rotate_quarter(const Tensor& chw, int k);

// FNV-1a checksum over entries whose name starts with `prefix`, hashing the
// remainder of each name plus the value bits, in insertion order. Stores
// holding the same tensors under different prefixes compare equal.
uint64_t prefix_checksum(const ParamStore& ps, const std::string& prefix);

// Effective worker count: `requested` clamped to at least 1 and capped by
// the DAF_THREADS environment variable when set.
int thread_cap(int requested);

// ------------------------------------------------------------- pretraining

struct PretrainConfig {
    int epochs = 30;
    int batch_size = 8;
    int image_size = 128;  // multiple of 16
    double lr = 1e-3;
    uint64_t seed = 0;
    int threads = 1;
};

struct PretrainResult {
    ParamStore params;            // "encoder.*" tensors plus meta.role
    double holdout_accuracy = 0;  // 4-way rotation accuracy on the held-out tenth
};

// Self-supervised encoder warm-up on normal images only: every image
// contributes all four quarter-turn rotations per epoch and a linear head
// over globally pooled coarse features predicts the rotation. Requires at
// least 50 images (ConfigError otherwise). The head is dropped from the
// returned store; deterministic in (corpus, config).
PretrainResult pretrain_teacher(const std::vector<Image>& normals, const PretrainConfig& cfg,
                                std::ostream* progress = nullptr);

// ----------------------------------------------------------------- training

struct TrainConfig {
    int epochs = 60;
    int warmup_epochs = 5;
    std::vector<int> decay_epochs{35, 50};
    double base_lr = 2e-4;
    int batch_size = 8;
    int image_size = 256;  // multiple of 16; inputs are resized to this
    int checkpoint_every = 10;
    uint64_t seed = 0;
    int threads = 1;
    Variant variant = Variant::full;
    bool student_copy_teacher = false;  // default: random student init
    daf::synth::StrategySpec strategy = daf::synth::strategy_preset("dra");
    std::string out_dir;  // checkpoints + log live here; empty = no artifacts
    std::string resume;   // optional checkpoint to continue from
};

struct EpochStats {
    int epoch = 0;
    double lr = 0;
    double l_cos = 0, l_ssim = 0, l_seg = 0, l_dis = 0, total = 0;
    long wall_ms = 0;
};

struct TrainResult {
    ParamStore params;  // final state (f32-quantized)
    std::vector<EpochStats> history;
    std::string final_checkpoint;  // "" when out_dir is empty
    std::string log_path;          // "" when out_dir is empty
};

// End-to-end training. Per sample: synthesize a defect on the normal image,
// run the frozen teacher on the clean input and the student on the corrupted
// one, assemble the variant's loss terms, and take one AdamW step per batch
// over student/decoder/aux parameters only. Teacher weights are checksummed
// every epoch. Emits a line-delimited JSON log and periodic checkpoints;
// after each checkpoint the live state is rounded to f32 so resuming from
// the file reproduces the continuation bitwise. A non-finite loss term
// aborts with a TrainError naming the term and the last checkpoint.
// Per-item work is spread over thread_cap(cfg.threads) workers; gradients
// are reduced in a fixed item order, so results do not depend on the
// worker count.
TrainResult train(const std::vector<Image>& normals, const std::vector<Image>& donors,
                  const ParamStore& teacher, const TrainConfig& cfg,
                  std::ostream* progress = nullptr);

// ---------------------------------------------------------------- inference

struct InferResult {
    Tensor aggregate;    // (1,H,W) summed stage discrepancies (zero for only_seg)
    Tensor seg;          // (1,H,W) decoder probabilities (zero for only_ts)
    Tensor score_map;    // (1,H,W) blur(aggregate + 3*seg, sigma 4)
    double image_score = 0;  // mean of the 50 largest score-map values
};

// Runs teacher and student on the same image, fuses the discrepancy map with
// the decoder probabilities, and smooths. Auxiliary heads are never
// evaluated (aux_eval_count() stays put). Deterministic in (params, image).
InferResult infer(const ParamStore& params, const Image& image, Variant variant);

// Mean of the k largest values (all of them when fewer).
double top_k_mean(const std::vector<double>& vals, int k = kScoreTopK);

// Fuses an aggregated discrepancy raster with a segmentation probability
// raster: blur(aggregate + lambda * seg, sigma), image score per top_k_mean.
// This is the single scoring path; infer() routes through it. Increasing any
// input pixel never decreases image_score (blur weights are positive).
struct FusedScore {
    std::vector<double> map;
    double image_score = 0;
};
FusedScore fuse_score_map(const std::vector<double>& aggregate, const std::vector<double>& seg,
                          int h, int w, double lambda = kSegScoreWeight,
                          double sigma = kScoreBlurSigma);

// One-file checkpoint: parameters plus optimizer moments ("opt.m.*",
// "opt.v.*", "opt.step") and the next epoch index ("meta.epoch").
void save_checkpoint(const std::string& path, const ParamStore& ps, const OptState& st,
                     int next_epoch);
int load_checkpoint(const std::string& path, ParamStore& ps, OptState& st);

}  // namespace daf::nn
