#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "daf/image.hpp"
#include "daf/poisson.hpp"

namespace daf::synth {

enum class ShapeSource { perlin, rectangle };
enum class TextureSource { external_folder, random_color, self_patch };
enum class BlendMode { opacity, poisson };

// Parameters for one defect-synthesis strategy. Presets for the six named
// strategies come from strategy_preset().
struct StrategySpec {
    std::string tag = "custom";
    ShapeSource shape_source = ShapeSource::perlin;
    TextureSource texture_source = TextureSource::external_folder;
    BlendMode blend = BlendMode::opacity;

    double beta = 1.0;          // opacity when beta_sampled is false
    bool beta_sampled = false;  // true: beta drawn from U[0.1, 1) per image

    std::vector<int> perlin_cells = {16, 32, 64};
    double perlin_threshold = 0.6;  // applied to |noise| normalized to [0,1]

    int rect_side_min = 16;
    int rect_side_max = 64;
    int rect_count_min = 1;
    int rect_count_max = 3;

    uint64_t seed = 0;  // folded into every derived stream
};

// name: dra | nsa_b | cutp | simple_texture | simple_shape | simple_texture_shape
StrategySpec strategy_preset(const std::string& name);
const std::vector<std::string>& strategy_names();

struct SynthSample {
    Image normal;     // the untouched input
    Image corrupted;  // input with a synthetic defect
    Mask mask;        // defect support
    std::string strategy;
};

// Draws a defect mask: thresholded normalized |perlin| or 1-3 random
// rectangles. Resamples up to 10 times to land in the area band
// [0.1%, 40%] of the raster, then falls back to one forced minimal rectangle.
Mask make_mask(const StrategySpec& spec, int h, int w, uint64_t seed);

// Produces the defect texture raster matching `source`'s size and channels:
// random-color (one constant color per mask component), external-folder
// (random donor crop resized to full size) or self-patch (source shifted by a
// random nonzero offset, reflect-padded).
Image texture_fill(const StrategySpec& spec, const std::vector<Image>& donor_pool,
                   const Image& source, const Mask& mask, uint64_t seed);

// out = normal outside mask, (1-beta)*normal + beta*fill inside, clamped to
// [0,1]. beta must lie in (0,1].
Image blend_opacity(const Image& normal, const Image& fill, const Mask& mask, double beta);

// Full pipeline: mask, texture, blend according to spec. Deterministic in
// (img, spec, donor_pool, seed).
SynthSample synthesize(const Image& img, const StrategySpec& spec,
                       const std::vector<Image>& donor_pool, uint64_t seed);

}  // namespace daf::synth
