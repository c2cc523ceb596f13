#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "daf/poisson.hpp"
#include "daf/rng.hpp"

using namespace daf;
using namespace daf::synth;

namespace {

Mask box_mask(int h, int w, int y0, int y1, int x0, int x1) {
    Mask m(h, w);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) m.at(y, x) = 1;
    return m;
}

// Assembles the same reduced-degree Dirichlet system densely and solves it
// with an LU factorization, independent of the iterative code under test.
Image dense_solution(const Image& normal, const Image& donor, const Mask& mask) {
    const int h = normal.h, w = normal.w;
    std::vector<int> index(size_t(h) * w, -1);
    std::vector<int> pixel;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask.at(y, x)) {
                index[size_t(y) * w + x] = int(pixel.size());
                pixel.push_back(int(size_t(y) * w + x));
            }
    const int n = int(pixel.size());
    const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};

    Image out = normal;
    for (int ch = 0; ch < normal.c; ++ch) {
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < n; ++i) {
            int y = pixel[size_t(i)] / w, x = pixel[size_t(i)] % w;
            double rhs = 0;
            int deg = 0;
            for (int k = 0; k < 4; ++k) {
                int ny = y + dy[k], nx = x + dx[k];
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                ++deg;
                rhs -= donor.at(ny, nx, ch);
                int j = index[size_t(ny) * w + nx];
                if (j >= 0)
                    A(i, j) -= 1.0;
                else
                    rhs += normal.at(ny, nx, ch);
            }
            A(i, i) = deg;
            b(i) = rhs + deg * donor.at(y, x, ch);
        }
        Eigen::VectorXd u = A.fullPivLu().solve(b);
        for (int i = 0; i < n; ++i) {
            int y = pixel[size_t(i)] / w, x = pixel[size_t(i)] % w;
            out.at(y, x, ch) = std::min(1.0, std::max(0.0, u(i)));
        }
    }
    return out;
}

}  // namespace

TEST_CASE("constant donor interpolates a constant boundary exactly") {
    Image normal(10, 10, 1, 0.3);
    Image donor(10, 10, 1, 0.9);
    Mask m = box_mask(10, 10, 3, 6, 2, 7);
    for (auto solver : {PoissonSolver::jacobi, PoissonSolver::cg}) {
        auto res = poisson_blend(normal, donor, m, 1e-8, 20000, solver);
        CHECK(res.converged);
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 10; ++x)
                CHECK(res.image.at(y, x, 0) == doctest::Approx(0.3).epsilon(1e-5));
    }
}

TEST_CASE("donor equal to the base image is a fixed point") {
    Rng rng(4);
    Image normal(8, 9, 3);
    for (auto& v : normal.data) v = rng.uniform();
    Mask m = box_mask(8, 9, 2, 5, 3, 6);
    auto res = poisson_blend(normal, normal, m, 1e-4, 100, PoissonSolver::jacobi);
    CHECK(res.converged);
    CHECK(res.iterations == 0);
    CHECK(res.image.data == normal.data);
}

TEST_CASE("iterative solvers match a dense direct solve") {
    Rng rng(17);
    Image normal(12, 12, 3);
    Image donor(12, 12, 3);
    for (auto& v : normal.data) v = rng.uniform();
    for (auto& v : donor.data) v = rng.uniform();
    Mask m = box_mask(12, 12, 2, 9, 2, 9);  // 8x8 unknown block
    Image want = dense_solution(normal, donor, m);

    for (auto solver : {PoissonSolver::jacobi, PoissonSolver::cg}) {
        auto res = poisson_blend(normal, donor, m, 1e-7, 50000, solver);
        CHECK(res.converged);
        for (size_t i = 0; i < want.data.size(); ++i)
            CHECK(res.image.data[i] == doctest::Approx(want.data[i]).epsilon(1e-4));
    }
}

TEST_CASE("converged interior satisfies the Poisson equation residual bound") {
    // Mild data keeps the solution inside [0,1] so output clamping is inert.
    Image normal(14, 14, 1, 0.5);
    Image donor(14, 14, 1);
    for (int y = 0; y < 14; ++y)
        for (int x = 0; x < 14; ++x)
            donor.at(y, x, 0) = 0.5 + 0.05 * std::sin(0.8 * y) * std::cos(1.1 * x);
    Mask m = box_mask(14, 14, 3, 10, 3, 10);
    const double tol = 1e-6;
    auto res = poisson_blend(normal, donor, m, tol, 50000, PoissonSolver::cg);
    REQUIRE(res.converged);

    const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
    double worst = 0;
    for (int y = 3; y <= 10; ++y)
        for (int x = 3; x <= 10; ++x) {
            double lu = 0, ld = 0;
            int deg = 0;
            for (int k = 0; k < 4; ++k) {
                ++deg;
                lu -= res.image.at(y + dy[k], x + dx[k], 0);
                ld -= donor.at(y + dy[k], x + dx[k], 0);
            }
            lu += deg * res.image.at(y, x, 0);
            ld += deg * donor.at(y, x, 0);
            worst = std::max(worst, std::abs(lu - ld));
        }
    CHECK(worst <= 10 * tol);
}

TEST_CASE("masks touching the image border use reduced-degree equations") {
    Rng rng(5);
    Image normal(8, 8, 1);
    Image donor(8, 8, 1);
    for (auto& v : normal.data) v = rng.uniform();
    for (auto& v : donor.data) v = rng.uniform();
    Mask m = box_mask(8, 8, 0, 3, 0, 3);  // includes the (0,0) corner
    Image want = dense_solution(normal, donor, m);
    auto res = poisson_blend(normal, donor, m, 1e-7, 50000, PoissonSolver::cg);
    CHECK(res.converged);
    for (size_t i = 0; i < want.data.size(); ++i)
        CHECK(res.image.data[i] == doctest::Approx(want.data[i]).epsilon(1e-4));
    for (double v : res.image.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("hitting max_iter reports non-convergence but returns an iterate") {
    Image normal(64, 64, 1, 0.2);
    Image donor(64, 64, 1, 0.8);
    Mask m = box_mask(64, 64, 8, 55, 8, 55);
    auto res = poisson_blend(normal, donor, m, 1e-10, 3, PoissonSolver::jacobi);
    CHECK_FALSE(res.converged);
    CHECK(res.iterations == 3);
    for (double v : res.image.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("poisson blend validates its inputs") {
    Image a(4, 4, 1), b(5, 4, 1);
    Mask empty(4, 4), m(4, 4);
    m.at(1, 1) = 1;
    CHECK_THROWS_AS(poisson_blend(a, b, m), ShapeError);
    CHECK_THROWS_AS(poisson_blend(a, a, empty), ParamError);
    CHECK_THROWS_AS(poisson_blend(a, a, m, -1.0), ParamError);
}
