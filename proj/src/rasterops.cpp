#include "daf/rasterops.hpp"

#include <cmath>

namespace daf {

void resize_bilinear(const double* src, int sh, int sw, double* dst, int th, int tw) {
    if (sh <= 0 || sw <= 0 || th <= 0 || tw <= 0) throw ShapeError("resize with empty extent");
    if (sh == th && sw == tw) {
        std::copy(src, src + size_t(sh) * sw, dst);
        return;
    }
    const double sy = double(sh) / th, sx = double(sw) / tw;
    for (int y = 0; y < th; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), double(sh - 1));
        int y0 = int(fy);
        int y1 = std::min(y0 + 1, sh - 1);
        double wy = fy - y0;
        for (int x = 0; x < tw; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), double(sw - 1));
            int x0 = int(fx);
            int x1 = std::min(x0 + 1, sw - 1);
            double wx = fx - x0;
            double top = src[size_t(y0) * sw + x0] * (1 - wx) + src[size_t(y0) * sw + x1] * wx;
            double bot = src[size_t(y1) * sw + x0] * (1 - wx) + src[size_t(y1) * sw + x1] * wx;
            dst[size_t(y) * tw + x] = top * (1 - wy) + bot * wy;
        }
    }
}

std::vector<double> resize_bilinear(const std::vector<double>& src, int sh, int sw, int th, int tw) {
    if (src.size() != size_t(sh) * sw) throw ShapeError("resize source size mismatch");
    std::vector<double> dst(size_t(th) * tw);
    resize_bilinear(src.data(), sh, sw, dst.data(), th, tw);
    return dst;
}

Image resize_bilinear(const Image& img, int th, int tw) {
    Image out(th, tw, img.c);
    // Planar pass per channel keeps the kernel a plain 2-D resize.
    std::vector<double> plane(size_t(img.h) * img.w), rplane(size_t(th) * tw);
    for (int ch = 0; ch < img.c; ++ch) {
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) plane[size_t(y) * img.w + x] = img.at(y, x, ch);
        resize_bilinear(plane.data(), img.h, img.w, rplane.data(), th, tw);
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x) out.at(y, x, ch) = rplane[size_t(y) * tw + x];
    }
    return out;
}

Tensor resize_bilinear(const Tensor& t, int th, int tw) {
    if (t.shape.size() != 3) throw ShapeError("resize expects a rank-3 tensor");
    Tensor out({t.c(), th, tw});
    for (int ch = 0; ch < t.c(); ++ch)
        resize_bilinear(t.data() + size_t(ch) * t.h() * t.w(), t.h(), t.w(),
                        out.data() + size_t(ch) * th * tw, th, tw);
    return out;
}

std::vector<double> gaussian_kernel_1d(double sigma) {
    if (!(sigma > 0)) throw ParamError("gaussian sigma must be positive");
    const int r = int(std::ceil(3.0 * sigma));
    std::vector<double> k(size_t(2 * r + 1));
    double sum = 0;
    for (int i = -r; i <= r; ++i) {
        k[size_t(i + r)] = std::exp(-0.5 * (double(i) * i) / (sigma * sigma));
        sum += k[size_t(i + r)];
    }
    for (double& v : k) v /= sum;
    return k;
}

void gaussian_blur(const double* src, int h, int w, double sigma, double* dst) {
    const std::vector<double> k = gaussian_kernel_1d(sigma);
    const int r = int(k.size() / 2);
    std::vector<double> tmp(size_t(h) * w);
    // Horizontal then vertical pass, symmetric reflection at edges.
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int i = -r; i <= r; ++i) acc += k[size_t(i + r)] * src[size_t(y) * w + reflect_index(x + i, w)];
            tmp[size_t(y) * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int i = -r; i <= r; ++i) acc += k[size_t(i + r)] * tmp[size_t(reflect_index(y + i, h)) * w + x];
            dst[size_t(y) * w + x] = acc;
        }
}

std::vector<double> gaussian_blur(const std::vector<double>& src, int h, int w, double sigma) {
    if (src.size() != size_t(h) * w) throw ShapeError("blur source size mismatch");
    std::vector<double> dst(src.size());
    gaussian_blur(src.data(), h, w, sigma, dst.data());
    return dst;
}

Image gaussian_blur(const Image& img, double sigma) {
    Image out(img.h, img.w, img.c);
    std::vector<double> plane(size_t(img.h) * img.w), bplane(plane.size());
    for (int ch = 0; ch < img.c; ++ch) {
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) plane[size_t(y) * img.w + x] = img.at(y, x, ch);
        gaussian_blur(plane.data(), img.h, img.w, sigma, bplane.data());
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) out.at(y, x, ch) = bplane[size_t(y) * img.w + x];
    }
    return out;
}

Components connected_components(const Mask& m) {
    Components out;
    out.labels.assign(m.data.size(), 0);
    out.count = 0;
    std::vector<int> stack;
    for (int y0 = 0; y0 < m.h; ++y0)
        for (int x0 = 0; x0 < m.w; ++x0) {
            size_t i0 = size_t(y0) * m.w + x0;
            if (!m.data[i0] || out.labels[i0]) continue;
            // New component: flood from the first pixel met in raster order.
            const int label = ++out.count;
            out.labels[i0] = label;
            stack.assign(1, int(i0));
            while (!stack.empty()) {
                int i = stack.back();
                stack.pop_back();
                int y = i / m.w, x = i % m.w;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dy == 0 && dx == 0) continue;
                        int ny = y + dy, nx = x + dx;
                        if (ny < 0 || ny >= m.h || nx < 0 || nx >= m.w) continue;
                        size_t ni = size_t(ny) * m.w + nx;
                        if (m.data[ni] && !out.labels[ni]) {
                            out.labels[ni] = label;
                            stack.push_back(int(ni));
                        }
                    }
            }
        }
    return out;
}

Mask downsample_mask(const Mask& m, int th, int tw) {
    if (th <= 0 || tw <= 0) throw ShapeError("mask resize with empty extent");
    Mask out(th, tw);
    for (int ty = 0; ty < th; ++ty) {
        int y0 = int(size_t(ty) * m.h / th);
        int y1 = std::max(y0 + 1, int(size_t(ty + 1) * m.h / th));
        for (int tx = 0; tx < tw; ++tx) {
            int x0 = int(size_t(tx) * m.w / tw);
            int x1 = std::max(x0 + 1, int(size_t(tx + 1) * m.w / tw));
            uint8_t any = 0;
            for (int y = y0; y < y1 && !any; ++y)
                for (int x = x0; x < x1; ++x)
                    if (m.at(y, x)) {
                        any = 1;
                        break;
                    }
            out.at(ty, tx) = any;
        }
    }
    return out;
}

}  // namespace daf
