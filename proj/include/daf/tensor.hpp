#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "daf/error.hpp"

namespace daf {

// Dense row-major tensor of doubles. Rank is arbitrary but the library uses
// rank 1 (vectors), rank 2 (H x W rasters) and rank 3 (C x H x W features).
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(numel(shape), 0.0) {}
    Tensor(std::vector<int> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
        if (v.size() != size_t(numel(shape))) throw ShapeError("tensor data does not match shape");
    }

    static long numel(const std::vector<int>& s) {
        long n = 1;
        for (int d : s) n *= d;
        return n;
    }

    long size() const { return long(v.size()); }
    bool empty() const { return v.empty(); }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }

    double& operator[](long i) { return v[size_t(i)]; }
    double operator[](long i) const { return v[size_t(i)]; }

    // rank-3 accessors (C, H, W)
    int c() const { return shape.size() == 3 ? shape[0] : 1; }
    int h() const { return shape.size() == 3 ? shape[1] : (shape.size() == 2 ? shape[0] : 1); }
    int w() const { return shape.size() == 3 ? shape[2] : (shape.size() == 2 ? shape[1] : int(v.size())); }

    double& at(int ch, int y, int x) { return v[size_t((long(ch) * h() + y) * w() + x)]; }
    double at(int ch, int y, int x) const { return v[size_t((long(ch) * h() + y) * w() + x)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

}  // namespace daf
