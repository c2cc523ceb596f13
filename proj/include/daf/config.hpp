#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "daf/eval.hpp"
#include "daf/segtrain.hpp"
#include "daf/synth.hpp"

namespace daf::config {

// Complete description of one run: dataset locations, artifact paths, the
// training schedule, the synthesis strategy, and command-specific inputs.
// Serialized as JSON with a schema_version marker. Parsing is strict:
// unknown keys are rejected with their paths, so a typo cannot silently
// fall back to a default. Every command writes the fully-resolved form
// next to its outputs; re-running from that file reproduces the run.
struct RunConfig {
    std::string profile = "desk";  // schedule defaults: "desk" or "paper"

    uint64_t seed = 0;
    int threads = 1;
    int image_size = 128;  // train/eval resolution (multiple of 16)
    nn::Variant variant = nn::Variant::full;
    bool student_copy_teacher = false;

    std::string data_dir;         // MVTec-style root
    std::string category;         // "" = the only/first category in data_dir
    std::string donor_dir;        // texture folder for splice strategies
    std::string out_dir = "out";  // artifacts land here
    std::string teacher_weights;  // pretrained encoder (train)
    std::string weights;          // checkpoint for eval / infer
    std::string input_image;      // infer input
    std::string resume;           // checkpoint to continue training from
    int synth_count = 8;          // preview triptychs written by synth

    // training schedule
    int epochs = 60;
    int warmup_epochs = 5;
    std::vector<int> decay_epochs = {35, 50};
    double base_lr = 2e-4;
    int batch_size = 8;
    int checkpoint_every = 10;

    // teacher pretraining
    int pretrain_epochs = 10;
    int pretrain_batch_size = 8;
    int pretrain_image_size = 128;
    double pretrain_lr = 1e-3;

    synth::StrategySpec strategy = synth::strategy_preset("dra");
};

// Applies a profile's schedule defaults. "desk" is the laptop-scale setup
// (60 epochs, warmup 5, decay at 35/50, 128 px, 10 pretraining epochs);
// "paper" is the long schedule (1200 epochs, warmup 50, decay at 700/1000,
// 256 px, 30 pretraining epochs). Unknown names -> SchemaError.
void apply_profile(RunConfig& cfg, const std::string& name);

// Strict parse of the JSON text (see the schema in to_json's output).
// Unknown keys, wrong types, bad enum strings, or a missing/unsupported
// schema_version throw SchemaError naming the key path; out-of-range
// values throw ConfigError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);  // IoError when unreadable

// Fully-resolved JSON: every field explicit, fixed key order, so equal
// configs serialize to equal bytes.
std::string to_json(const RunConfig& cfg);

// FNV-1a over to_json, rendered as 16 hex digits; embedded in reports so
// any metric value can be traced back to the exact configuration.
std::string config_hash(const RunConfig& cfg);

// Projections onto the module-level configs.
nn::TrainConfig train_config(const RunConfig& cfg);
nn::PretrainConfig pretrain_config(const RunConfig& cfg);
eval::EvalConfig eval_config(const RunConfig& cfg);

}  // namespace daf::config
