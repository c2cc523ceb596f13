#include "daf/synth.hpp"

#include <algorithm>
#include <cmath>

#include "daf/error.hpp"
#include "daf/perlin.hpp"
#include "daf/rasterops.hpp"
#include "daf/rng.hpp"

namespace daf::synth {

namespace {

Image to_channels(const Image& img, int c) {
    if (img.c == c) return img;
    Image out(img.h, img.w, c);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            if (img.c == 1) {
                for (int ch = 0; ch < c; ++ch) out.at(y, x, ch) = img.at(y, x, 0);
            } else {
                double m = 0;
                for (int ch = 0; ch < img.c; ++ch) m += img.at(y, x, ch);
                out.at(y, x, 0) = m / img.c;
            }
        }
    return out;
}

Image crop(const Image& img, int y0, int x0, int ch_, int cw_) {
    Image out(ch_, cw_, img.c);
    for (int y = 0; y < ch_; ++y)
        for (int x = 0; x < cw_; ++x)
            for (int ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = img.at(y0 + y, x0 + x, ch);
    return out;
}

void stamp_rect(Mask& m, Rng& rng, int side_min, int side_max) {
    int sh = std::min(m.h, rng.range(side_min, side_max));
    int sw = std::min(m.w, rng.range(side_min, side_max));
    int y0 = int(rng.below(uint64_t(m.h - sh + 1)));
    int x0 = int(rng.below(uint64_t(m.w - sw + 1)));
    for (int y = y0; y < y0 + sh; ++y)
        for (int x = x0; x < x0 + sw; ++x) m.at(y, x) = 1;
}

Mask rect_attempt(const StrategySpec& spec, int h, int w, Rng& rng) {
    Mask m(h, w);
    int count = rng.range(spec.rect_count_min, spec.rect_count_max);
    for (int i = 0; i < count; ++i) stamp_rect(m, rng, spec.rect_side_min, spec.rect_side_max);
    return m;
}

Mask perlin_attempt(const StrategySpec& spec, int h, int w, Rng& rng) {
    std::vector<int> cells;
    for (int c : spec.perlin_cells)
        if (c > 0 && h % c == 0 && w % c == 0) cells.push_back(c);
    if (cells.empty()) return rect_attempt(spec, h, w, rng);

    int cell = cells[size_t(rng.below(cells.size()))];
    auto noise = perlin_noise(h, w, cell, rng.next_u64());
    double maxabs = 0;
    for (double v : noise) maxabs = std::max(maxabs, std::abs(v));
    Mask m(h, w);
    if (maxabs > 0)
        for (size_t i = 0; i < noise.size(); ++i)
            m.data[i] = std::abs(noise[i]) / maxabs > spec.perlin_threshold ? 1 : 0;
    return m;
}

}  // namespace

StrategySpec strategy_preset(const std::string& name) {
    StrategySpec s;
    s.tag = name;
    if (name == "dra") {
        s.shape_source = ShapeSource::perlin;
        s.texture_source = TextureSource::external_folder;
        s.blend = BlendMode::opacity;
        s.beta_sampled = true;
    } else if (name == "nsa_b") {
        s.shape_source = ShapeSource::perlin;
        s.texture_source = TextureSource::self_patch;
        s.blend = BlendMode::poisson;
    } else if (name == "cutp") {
        s.shape_source = ShapeSource::rectangle;
        s.texture_source = TextureSource::self_patch;
        s.blend = BlendMode::opacity;
        s.beta = 1.0;
    } else if (name == "simple_texture") {
        s.shape_source = ShapeSource::perlin;
        s.texture_source = TextureSource::random_color;
        s.blend = BlendMode::opacity;
        s.beta = 1.0;
    } else if (name == "simple_shape") {
        s.shape_source = ShapeSource::rectangle;
        s.texture_source = TextureSource::external_folder;
        s.blend = BlendMode::opacity;
        s.beta = 1.0;
    } else if (name == "simple_texture_shape") {
        s.shape_source = ShapeSource::rectangle;
        s.texture_source = TextureSource::random_color;
        s.blend = BlendMode::opacity;
        s.beta = 1.0;
    } else {
        throw ConfigError("unknown synthesis strategy: " + name);
    }
    return s;
}

const std::vector<std::string>& strategy_names() {
    static const std::vector<std::string> names = {
        "dra", "nsa_b", "cutp", "simple_texture", "simple_shape", "simple_texture_shape"};
    return names;
}

Mask make_mask(const StrategySpec& spec, int h, int w, uint64_t seed) {
    if (h <= 0 || w <= 0) throw ParamError("mask extent must be positive");
    const uint64_t base = Rng::derive(spec.seed, seed);
    const long lo = std::max(1L, long(std::ceil(0.001 * h * w)));
    const long hi = long(0.4 * h * w);

    for (uint64_t attempt = 0; attempt < 10; ++attempt) {
        Rng rng(Rng::derive(base, 11, attempt));
        Mask m = spec.shape_source == ShapeSource::perlin ? perlin_attempt(spec, h, w, rng)
                                                          : rect_attempt(spec, h, w, rng);
        long area = m.area();
        if (area >= lo && area <= hi) return m;
    }

    // Forced fallback: one rectangle just big enough for the area band.
    Rng rng(Rng::derive(base, 12));
    int side = std::max(1, int(std::ceil(std::sqrt(0.001 * h * w))));
    side = std::min({side, h, w});
    Mask m(h, w);
    int y0 = int(rng.below(uint64_t(h - side + 1)));
    int x0 = int(rng.below(uint64_t(w - side + 1)));
    for (int y = y0; y < y0 + side; ++y)
        for (int x = x0; x < x0 + side; ++x) m.at(y, x) = 1;
    return m;
}

Image texture_fill(const StrategySpec& spec, const std::vector<Image>& donor_pool,
                   const Image& source, const Mask& mask, uint64_t seed) {
    if (source.h != mask.h || source.w != mask.w) throw ShapeError("texture mask dims differ");
    Rng rng(Rng::derive(Rng::derive(spec.seed, seed), 21));

    switch (spec.texture_source) {
        case TextureSource::random_color: {
            Components cc = connected_components(mask);
            std::vector<double> colors(size_t(cc.count) * source.c);
            for (double& v : colors) v = rng.uniform();
            Image fill(source.h, source.w, source.c);
            for (int y = 0; y < source.h; ++y)
                for (int x = 0; x < source.w; ++x) {
                    int label = cc.labels[size_t(y) * source.w + x];
                    if (!label) continue;
                    for (int ch = 0; ch < source.c; ++ch)
                        fill.at(y, x, ch) = colors[size_t(label - 1) * source.c + ch];
                }
            return fill;
        }
        case TextureSource::external_folder: {
            if (donor_pool.empty())
                throw ConfigError("external texture source needs a nonempty donor pool");
            Image donor = to_channels(donor_pool[size_t(rng.below(donor_pool.size()))], source.c);
            double f = rng.uniform(0.3, 1.0);
            int ch_ = std::max(1, int(std::lround(f * donor.h)));
            int cw_ = std::max(1, int(std::lround(f * donor.w)));
            ch_ = std::min(ch_, donor.h);
            cw_ = std::min(cw_, donor.w);
            int y0 = int(rng.below(uint64_t(donor.h - ch_ + 1)));
            int x0 = int(rng.below(uint64_t(donor.w - cw_ + 1)));
            return resize_bilinear(crop(donor, y0, x0, ch_, cw_), source.h, source.w);
        }
        case TextureSource::self_patch: {
            int dy = 0, dx = 0;
            for (int tries = 0; tries < 10 && dy == 0 && dx == 0; ++tries) {
                dy = rng.range(-source.h / 2, source.h / 2);
                dx = rng.range(-source.w / 2, source.w / 2);
            }
            if (dy == 0 && dx == 0) dy = std::max(1, source.h / 4);
            Image fill(source.h, source.w, source.c);
            for (int y = 0; y < source.h; ++y)
                for (int x = 0; x < source.w; ++x)
                    for (int ch = 0; ch < source.c; ++ch)
                        fill.at(y, x, ch) =
                            source.at(reflect_index(y + dy, source.h), reflect_index(x + dx, source.w), ch);
            return fill;
        }
    }
    throw ParamError("unhandled texture source");
}

Image blend_opacity(const Image& normal, const Image& fill, const Mask& mask, double beta) {
    if (!(beta > 0.0 && beta <= 1.0)) throw ParamError("blend opacity must lie in (0,1]");
    if (!normal.same_dims(fill)) throw ShapeError("blend fill dims differ");
    if (normal.h != mask.h || normal.w != mask.w) throw ShapeError("blend mask dims differ");

    Image out = normal;
    for (int y = 0; y < normal.h; ++y)
        for (int x = 0; x < normal.w; ++x) {
            if (!mask.at(y, x)) continue;
            for (int ch = 0; ch < normal.c; ++ch) {
                double v = (1.0 - beta) * normal.at(y, x, ch) + beta * fill.at(y, x, ch);
                out.at(y, x, ch) = std::min(1.0, std::max(0.0, v));
            }
        }
    return out;
}

SynthSample synthesize(const Image& img, const StrategySpec& spec,
                       const std::vector<Image>& donor_pool, uint64_t seed) {
    if (img.h <= 0 || img.w <= 0) throw ParamError("synthesize needs a nonempty image");
    if (spec.texture_source == TextureSource::external_folder && donor_pool.empty())
        throw ConfigError("strategy " + spec.tag + " needs donor textures");

    const uint64_t base = Rng::derive(spec.seed, seed);
    SynthSample s;
    s.normal = img;
    s.strategy = spec.tag;
    s.mask = make_mask(spec, img.h, img.w, seed);

    if (spec.blend == BlendMode::opacity) {
        Image fill = texture_fill(spec, donor_pool, img, s.mask, seed);
        double beta = spec.beta_sampled ? Rng(Rng::derive(base, 31)).uniform(0.1, 1.0) : spec.beta;
        s.corrupted = blend_opacity(img, fill, s.mask, beta);
        return s;
    }

    // Poisson blend: paste a rescaled random patch over the mask's bounding
    // box, then solve for a seamless interior.
    Rng rng(Rng::derive(base, 41));
    const Image* src = &img;
    if (!donor_pool.empty() && rng.uniform() < 0.5)
        src = &donor_pool[size_t(rng.below(donor_pool.size()))];
    Image source = to_channels(*src, img.c);

    int y0 = img.h, y1 = -1, x0 = img.w, x1 = -1;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            if (s.mask.at(y, x)) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
    const int bh = y1 - y0 + 1, bw = x1 - x0 + 1;

    double r = rng.uniform(0.5, 1.5);
    int ch_ = std::min(source.h, std::max(1, int(std::lround(bh * r))));
    int cw_ = std::min(source.w, std::max(1, int(std::lround(bw * r))));
    int cy0 = int(rng.below(uint64_t(source.h - ch_ + 1)));
    int cx0 = int(rng.below(uint64_t(source.w - cw_ + 1)));
    Image patch = resize_bilinear(crop(source, cy0, cx0, ch_, cw_), bh, bw);

    Image donor = img;
    for (int y = 0; y < bh; ++y)
        for (int x = 0; x < bw; ++x)
            for (int ch = 0; ch < img.c; ++ch) donor.at(y0 + y, x0 + x, ch) = patch.at(y, x, ch);

    s.corrupted = poisson_blend(img, donor, s.mask, 1e-4, 5000, PoissonSolver::cg).image;
    return s;
}

}  // namespace daf::synth
