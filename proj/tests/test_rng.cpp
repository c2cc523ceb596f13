#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "daf/rng.hpp"

using namespace daf;

TEST_CASE("rng streams are reproducible and seed-sensitive") {
    Rng a(42), b(42), c(43);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        uint64_t x = a.next_u64();
        all_equal &= (x == b.next_u64());
        any_diff |= (x != c.next_u64());
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("derive gives distinct independent stream seeds per tag") {
    std::set<uint64_t> seen;
    for (uint64_t a = 0; a < 20; ++a)
        for (uint64_t b = 0; b < 20; ++b) seen.insert(Rng::derive(7, a, b));
    CHECK(seen.size() == 400);
    CHECK(Rng::derive(7, 1, 2, 3) != Rng::derive(8, 1, 2, 3));
}

TEST_CASE("uniform and integer draws respect their ranges") {
    Rng rng(5);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);

    std::set<uint64_t> ints;
    for (int i = 0; i < 1000; ++i) {
        uint64_t v = rng.below(7);
        CHECK(v < 7);
        ints.insert(v);
    }
    CHECK(ints.size() == 7);

    std::set<int> rr;
    for (int i = 0; i < 500; ++i) rr.insert(rng.range(-2, 2));
    CHECK(rr == std::set<int>{-2, -1, 0, 1, 2});

    for (int i = 0; i < 100; ++i) {
        double v = rng.uniform(-3.0, 5.0);
        CHECK(v >= -3.0);
        CHECK(v < 5.0);
    }
}

TEST_CASE("normal draws have roughly standard moments") {
    Rng rng(77);
    const int n = 100000;
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
        double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    double mean = sum / n;
    double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("shuffle is a deterministic permutation") {
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[size_t(i)] = i;
    std::vector<int> w = v;
    Rng(123).shuffle(v);
    Rng(123).shuffle(w);
    CHECK(v == w);
    CHECK(v != std::vector<int>(v.size(), 0));
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) CHECK(sorted[size_t(i)] == i);
    std::vector<int> u = sorted;
    Rng(124).shuffle(u);
    CHECK(u != v);
}
