#include "daf/perlin.hpp"

#include <cmath>

#include "daf/error.hpp"
#include "daf/rng.hpp"

namespace daf::synth {

std::vector<double> perlin_noise(int h, int w, int cell, uint64_t seed) {
    if (h <= 0 || w <= 0) throw ParamError("perlin extent must be positive");
    if (cell <= 0 || h % cell != 0 || w % cell != 0)
        throw ParamError("perlin cell must divide both dimensions");

    const int gy = h / cell + 1, gx = w / cell + 1;
    std::vector<double> grad(size_t(gy) * gx * 2);
    Rng rng(seed);
    for (int i = 0; i < gy * gx; ++i) {
        double a = rng.uniform() * 6.283185307179586;
        grad[size_t(i) * 2 + 0] = std::cos(a);
        grad[size_t(i) * 2 + 1] = std::sin(a);
    }

    auto fade = [](double t) { return t * t * t * (t * (t * 6 - 15) + 10); };
    auto dot_from = [&](int cy, int cx, double dy, double dx) {
        const double* g = &grad[(size_t(cy) * gx + cx) * 2];
        return g[0] * dy + g[1] * dx;
    };

    std::vector<double> out(size_t(h) * w);
    for (int y = 0; y < h; ++y) {
        const int cy = y / cell;
        const double fy = double(y % cell) / cell;
        const double uy = fade(fy);
        for (int x = 0; x < w; ++x) {
            const int cx = x / cell;
            const double fx = double(x % cell) / cell;
            const double ux = fade(fx);
            double n00 = dot_from(cy, cx, fy, fx);
            double n01 = dot_from(cy, cx + 1, fy, fx - 1);
            double n10 = dot_from(cy + 1, cx, fy - 1, fx);
            double n11 = dot_from(cy + 1, cx + 1, fy - 1, fx - 1);
            double top = n00 + ux * (n01 - n00);
            double bot = n10 + ux * (n11 - n10);
            out[size_t(y) * w + x] = top + uy * (bot - top);
        }
    }
    return out;
}

}  // namespace daf::synth
