#pragma once

#include "liparch/matrix.hpp"

namespace liparch {

struct SpectralNormInfo {
  double value = 0.0;      // largest singular value estimate; a lower bound by construction
  int iterations = 0;
  bool converged = false;
  bool restarted = false;
};

// Power iteration on M^T M with a seeded start vector, restarted once from an
// independent start if the first run fails to converge. Never throws on
// non-convergence: the info carries the last estimate and iteration count.
SpectralNormInfo spectral_norm_info(const Matrix& m, double tol = 1e-10, int max_iters = 1000);
double spectral_norm(const Matrix& m, double tol = 1e-10, int max_iters = 1000);

double norm_21(const Matrix& m);    // sum of column Euclidean norms
double norm_2inf(const Matrix& m);  // max column Euclidean norm
double frobenius(const Matrix& m);

}  // namespace liparch
