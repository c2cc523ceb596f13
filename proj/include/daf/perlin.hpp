#pragma once

#include <cstdint>
#include <vector>

namespace daf::synth {

// Classic 2-D gradient-lattice noise with quintic fade 6t^5 - 15t^4 + 10t^3.
// cell is the lattice spacing in pixels and must divide h and w. Values lie in
// [-1, 1] and are exactly 0 at lattice corners. Deterministic in seed.
std::vector<double> perlin_noise(int h, int w, int cell, uint64_t seed);

}  // namespace daf::synth
