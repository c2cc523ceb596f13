#pragma once

#include <vector>

#include "daf/image.hpp"
#include "daf/tensor.hpp"

namespace daf {

// Mirrors an out-of-range index into [0, n) with symmetric (edge-inclusive)
// reflection: for n=4, indices ... b a | a b c d | d c ... Works for any
// distance, not just pad < n.
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    int j = i % period;
    if (j < 0) j += period;
    return j < n ? j : period - 1 - j;
}

// Bilinear resample with half-pixel-center alignment:
//   src_x = (dst_x + 0.5) * sw / tw - 0.5, clamped to the valid range.
void resize_bilinear(const double* src, int sh, int sw, double* dst, int th, int tw);
std::vector<double> resize_bilinear(const std::vector<double>& src, int sh, int sw, int th, int tw);
Image resize_bilinear(const Image& img, int th, int tw);
Tensor resize_bilinear(const Tensor& chw, int th, int tw);

// Normalized 1-D Gaussian taps over radius ceil(3*sigma).
std::vector<double> gaussian_kernel_1d(double sigma);

// Separable Gaussian, kernel radius ceil(3*sigma), kernel normalized to sum 1,
// symmetric reflect padding.
void gaussian_blur(const double* src, int h, int w, double sigma, double* dst);
std::vector<double> gaussian_blur(const std::vector<double>& src, int h, int w, double sigma);
Image gaussian_blur(const Image& img, double sigma);

// 8-connectivity labeling. Labels are 1..count, assigned in raster-scan order
// of each component's first pixel; 0 is background.
struct Components {
    int count = 0;
    std::vector<int> labels;  // h*w, row-major
};
Components connected_components(const Mask& m);

// Downsamples with the "any" rule: a target cell is 1 iff any covered source
// pixel is 1. Cell (ty,tx) covers source rows [ty*h/th, (ty+1)*h/th) etc.,
// so anomalous pixels are never lost at coarse scale.
Mask downsample_mask(const Mask& m, int th, int tw);

}  // namespace daf
