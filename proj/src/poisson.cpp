#include "daf/poisson.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "daf/error.hpp"

namespace daf::synth {

namespace {

struct System {
    // Per unknown: degree, up to 4 unknown-neighbour indices, constant term.
    std::vector<int> degree;
    std::vector<std::array<int, 4>> nbr;
    std::vector<int> nbr_count;
    std::vector<int> pixel;  // flat pixel index of each unknown
};

double residual_max(const System& s, const std::vector<double>& b, const std::vector<double>& u) {
    double worst = 0;
    for (size_t i = 0; i < u.size(); ++i) {
        double ax = s.degree[i] * u[i];
        for (int k = 0; k < s.nbr_count[i]; ++k) ax -= u[size_t(s.nbr[i][size_t(k)])];
        worst = std::max(worst, std::abs(b[i] - ax));
    }
    return worst;
}

}  // namespace

PoissonResult poisson_blend(const Image& normal, const Image& donor, const Mask& mask,
                            double tol, int max_iter, PoissonSolver solver) {
    if (!normal.same_dims(donor)) throw ShapeError("poisson donor dims differ from base image");
    if (normal.h != mask.h || normal.w != mask.w) throw ShapeError("poisson mask dims differ");
    if (mask.area() == 0) throw ParamError("poisson blend needs a nonempty mask");
    if (!(tol > 0) || max_iter <= 0) throw ParamError("poisson tol and max_iter must be positive");

    const int h = normal.h, w = normal.w;
    std::vector<int> index(size_t(h) * w, -1);
    System sys;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask.at(y, x)) {
                index[size_t(y) * w + x] = int(sys.pixel.size());
                sys.pixel.push_back(int(size_t(y) * w + x));
            }
    const size_t n = sys.pixel.size();
    sys.degree.assign(n, 0);
    sys.nbr.assign(n, {});
    sys.nbr_count.assign(n, 0);

    const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
    // Boundary contributions depend only on geometry; per-channel constants
    // are assembled below.
    for (size_t i = 0; i < n; ++i) {
        int y = sys.pixel[i] / w, x = sys.pixel[i] % w;
        for (int k = 0; k < 4; ++k) {
            int ny = y + dy[k], nx = x + dx[k];
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            ++sys.degree[i];
            int j = index[size_t(ny) * w + nx];
            if (j >= 0) sys.nbr[i][size_t(sys.nbr_count[i]++)] = j;
        }
    }

    PoissonResult out;
    out.image = normal;
    out.converged = true;
    out.iterations = 0;

    std::vector<double> b(n), u(n), unew(n);
    for (int ch = 0; ch < normal.c; ++ch) {
        for (size_t i = 0; i < n; ++i) {
            int y = sys.pixel[i] / w, x = sys.pixel[i] % w;
            // b = reduced-degree Laplacian of donor plus known Dirichlet terms.
            double acc = sys.degree[i] * donor.at(y, x, ch);
            for (int k = 0; k < 4; ++k) {
                int ny = y + dy[k], nx = x + dx[k];
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                acc -= donor.at(ny, nx, ch);
                if (index[size_t(ny) * w + nx] < 0) acc += normal.at(ny, nx, ch);
            }
            b[i] = acc;
            u[i] = donor.at(y, x, ch);  // donor == normal is then an exact fixed point
        }

        int iters = 0;
        bool ok = residual_max(sys, b, u) < tol;
        if (!ok && solver == PoissonSolver::jacobi) {
            while (iters < max_iter) {
                for (size_t i = 0; i < n; ++i) {
                    double acc = b[i];
                    for (int k = 0; k < sys.nbr_count[i]; ++k) acc += u[size_t(sys.nbr[i][size_t(k)])];
                    unew[i] = sys.degree[i] > 0 ? acc / sys.degree[i] : b[i];
                }
                u.swap(unew);
                ++iters;
                if (residual_max(sys, b, u) < tol) {
                    ok = true;
                    break;
                }
            }
        } else if (!ok) {
            // Conjugate gradients; the reduced-degree graph Laplacian with at
            // least one Dirichlet attachment per component is SPD.
            std::vector<double> r(n), p(n), ap(n);
            for (size_t i = 0; i < n; ++i) {
                double ax = sys.degree[i] * u[i];
                for (int k = 0; k < sys.nbr_count[i]; ++k) ax -= u[size_t(sys.nbr[i][size_t(k)])];
                r[i] = b[i] - ax;
            }
            p = r;
            double rs = 0;
            for (double v : r) rs += v * v;
            while (iters < max_iter) {
                double pap = 0;
                for (size_t i = 0; i < n; ++i) {
                    double ax = sys.degree[i] * p[i];
                    for (int k = 0; k < sys.nbr_count[i]; ++k) ax -= p[size_t(sys.nbr[i][size_t(k)])];
                    ap[i] = ax;
                    pap += p[i] * ax;
                }
                if (pap <= 0) break;
                double alpha = rs / pap;
                double rmax = 0, rs_new = 0;
                for (size_t i = 0; i < n; ++i) {
                    u[i] += alpha * p[i];
                    r[i] -= alpha * ap[i];
                    rs_new += r[i] * r[i];
                    rmax = std::max(rmax, std::abs(r[i]));
                }
                ++iters;
                if (rmax < tol) {
                    ok = true;
                    break;
                }
                double beta = rs_new / rs;
                rs = rs_new;
                for (size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
            }
        }

        out.converged = out.converged && ok;
        out.iterations = std::max(out.iterations, iters);
        for (size_t i = 0; i < n; ++i) {
            int y = sys.pixel[i] / w, x = sys.pixel[i] % w;
            out.image.at(y, x, ch) = std::min(1.0, std::max(0.0, u[i]));
        }
    }
    return out;
}

}  // namespace daf::synth
