#include "liparch/norms.hpp"

#include <cmath>

#include "liparch/errors.hpp"

namespace liparch {

namespace {

// Fixed internal root so that repeated calls on the same matrix are bit-identical.
constexpr std::uint64_t kStartRoot = 0x4C49504152434831ull;

struct RunResult {
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

// One power-iteration run on m^T m. The returned value is ||m v|| for a unit
// v, hence always a lower bound on the true spectral norm.
RunResult run_power(const Matrix& m, double tol, int max_iters, std::uint64_t stream) {
  Rng rng(Seed{kStartRoot, stream});
  std::vector<double> v(static_cast<std::size_t>(m.cols));
  double vn = 0.0;
  for (double& x : v) {
    x = rng.normal();
    vn += x * x;
  }
  vn = std::sqrt(vn);
  if (vn == 0.0) {
    v[0] = 1.0;
    vn = 1.0;
  }
  for (double& x : v) x /= vn;

  std::vector<double> w(static_cast<std::size_t>(m.rows));
  std::vector<double> z(static_cast<std::size_t>(m.cols));
  RunResult out;
  double prev = -1.0;
  for (int it = 1; it <= max_iters; ++it) {
    out.iterations = it;
    for (int i = 0; i < m.rows; ++i) {
      double s = 0.0;
      const double* row = &m.data[static_cast<std::size_t>(i) * m.cols];
      for (int j = 0; j < m.cols; ++j) s += row[j] * v[j];
      w[i] = s;
    }
    double sigma = 0.0;
    for (double x : w) sigma += x * x;
    sigma = std::sqrt(sigma);
    out.value = sigma;
    if (sigma == 0.0) {
      out.converged = true;
      return out;
    }
    std::fill(z.begin(), z.end(), 0.0);
    for (int i = 0; i < m.rows; ++i) {
      const double wi = w[i];
      const double* row = &m.data[static_cast<std::size_t>(i) * m.cols];
      for (int j = 0; j < m.cols; ++j) z[j] += wi * row[j];
    }
    double zn = 0.0;
    for (double x : z) zn += x * x;
    zn = std::sqrt(zn);
    for (std::size_t j = 0; j < z.size(); ++j) v[j] = z[j] / zn;
    if (prev >= 0.0 && std::abs(sigma - prev) <= tol * std::max(sigma, 1e-300)) {
      out.converged = true;
      return out;
    }
    prev = sigma;
  }
  return out;
}

}  // namespace

SpectralNormInfo spectral_norm_info(const Matrix& m, double tol, int max_iters) {
  if (m.rows <= 0 || m.cols <= 0) throw ValidationError("spectral_norm: empty matrix");
  bool zero = true;
  for (double x : m.data)
    if (x != 0.0) {
      zero = false;
      break;
    }
  if (zero) return SpectralNormInfo{0.0, 0, true, false};

  RunResult first = run_power(m, tol, max_iters, 0);
  if (first.converged && first.value > 0.0)
    return SpectralNormInfo{first.value, first.iterations, true, false};

  RunResult second = run_power(m, tol, max_iters, 1);
  SpectralNormInfo info;
  info.value = std::max(first.value, second.value);
  info.iterations = first.iterations + second.iterations;
  info.converged = second.converged;
  info.restarted = true;
  return info;
}

double spectral_norm(const Matrix& m, double tol, int max_iters) {
  return spectral_norm_info(m, tol, max_iters).value;
}

double norm_21(const Matrix& m) {
  double total = 0.0;
  for (int j = 0; j < m.cols; ++j) {
    double s = 0.0;
    for (int i = 0; i < m.rows; ++i) s += m.at(i, j) * m.at(i, j);
    total += std::sqrt(s);
  }
  return total;
}

double norm_2inf(const Matrix& m) {
  double best = 0.0;
  for (int j = 0; j < m.cols; ++j) {
    double s = 0.0;
    for (int i = 0; i < m.rows; ++i) s += m.at(i, j) * m.at(i, j);
    best = std::max(best, std::sqrt(s));
  }
  return best;
}

double frobenius(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data) s += v * v;
  return std::sqrt(s);
}

}  // namespace liparch
