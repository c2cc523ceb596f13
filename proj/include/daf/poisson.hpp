#pragma once

#include "daf/image.hpp"

namespace daf::synth {

enum class PoissonSolver { jacobi, cg };

struct PoissonResult {
    Image image;
    bool converged = false;
    int iterations = 0;
};

// Seamless cloning: per channel, solves the discrete Poisson equation
// (Laplacian of u = Laplacian of donor) over the masked pixels with Dirichlet
// boundary values taken from `normal` on the ring just outside the mask.
// Pixels on the image edge use a reduced-degree Laplacian. Iterates until the
// residual max-norm drops below tol or max_iter is reached; a miss returns the
// best iterate with converged=false. Output is clamped to [0,1] and equals
// `normal` outside the mask.
PoissonResult poisson_blend(const Image& normal, const Image& donor, const Mask& mask,
                            double tol = 1e-4, int max_iter = 5000,
                            PoissonSolver solver = PoissonSolver::jacobi);

}  // namespace daf::synth
