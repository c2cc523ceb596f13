#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "daf/image.hpp"
#include "daf/tape.hpp"
#include "daf/tensor.hpp"

namespace daf::nn {

// Named tensors with stable insertion order. The order defines both the
// checksum and the on-disk layout, so two stores built by the same code path
// are directly comparable.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return map_.count(name) != 0; }
    const std::vector<std::string>& names() const { return names_; }
    size_t size() const { return names_.size(); }
    long value_count() const;

    // FNV-1a over each name's bytes followed by its values as little-endian
    // f64 bit patterns, in insertion order. Any bit flip changes the sum.
    uint64_t checksum() const;

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, Tensor> map_;
};

// Places store tensors onto a tape on demand, one leaf per name per forward
// pass; trainable(name) decides whether the leaf collects gradients.
class Binder {
public:
    Binder(Tape& tape, const ParamStore& store,
           std::function<bool(const std::string&)> trainable = nullptr)
        : tape_(&tape), store_(&store), trainable_(std::move(trainable)) {}

    Value operator()(const std::string& name);

    // name -> bound leaf, for harvesting gradients after backward().
    const std::unordered_map<std::string, Value>& bound() const { return cache_; }

private:
    Tape* tape_;
    const ParamStore* store_;
    std::function<bool(const std::string&)> trainable_;
    std::unordered_map<std::string, Value> cache_;
};

// Channel widths of the three encoder stages, finest to coarsest.
inline constexpr std::array<int, 3> kStageChannels{16, 32, 64};
inline constexpr int kGnGroups = 8;
inline constexpr double kGnEps = 1e-5;

// Single-tensor initializers. Conv/linear weights are He fan-in normal,
// biases zero, norm scales one / shifts zero. The weight stream is derived
// from the tensor's full name so layouts stay stable across call order.
void init_conv(ParamStore& ps, const std::string& name, int cout, int cin, int k, uint64_t seed);
void init_gn(ParamStore& ps, const std::string& name, int c);
void init_linear(ParamStore& ps, const std::string& name, int out_n, int in_n, uint64_t seed);

// Composite initializers for the three network pieces. `prefix` namespaces
// the tensors (e.g. "teacher.encoder", "student.encoder", "decoder", "aux1").
void init_encoder(ParamStore& ps, const std::string& prefix, uint64_t seed);
void init_decoder(ParamStore& ps, const std::string& prefix, uint64_t seed);
void init_aux(ParamStore& ps, const std::string& prefix, int channels, uint64_t seed);

struct EncoderFeatures {
    Value s1;  // (16, H/4,  W/4)
    Value s2;  // (32, H/8,  W/8)
    Value s3;  // (64, H/16, W/16)
};

// Three-stage residual encoder over a (3,H,W) image; H and W must be
// multiples of 16.
EncoderFeatures encoder_forward(Tape& t, Binder& bind, const std::string& prefix, Value image);

// Coarse-to-fine segmentation head: concatenates the aggregate map with the
// coarsest features, refines and upsamples through the skip connections, and
// emits a (1,H,W) probability raster.
Value decoder_forward(Tape& t, Binder& bind, const std::string& prefix, Value aggregate,
                      const EncoderFeatures& f);

// Per-stage auxiliary probability head over one feature tensor -> (1,h,w).
Value aux_forward(Tape& t, Binder& bind, const std::string& prefix, Value feature);

// Diagnostic counter for aux_forward invocations; inference paths are
// required to leave it untouched.
long aux_eval_count();
void reset_aux_eval_count();

// Copies every "<from>.<suffix>" tensor onto "<to>.<suffix>", creating
// destination entries as needed (e.g. seeding a student encoder from the
// teacher's weights).
void copy_prefix(ParamStore& ps, const std::string& from, const std::string& to);

// Layout conversions between HWC images and CHW tensors.
Tensor image_to_chw(const Image& img);
Image chw_to_image(const Tensor& t);

}  // namespace daf::nn
