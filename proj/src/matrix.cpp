#include "liparch/matrix.hpp"

#include <cmath>
#include <numbers>

#include "liparch/errors.hpp"

namespace liparch {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

Seed derive(Seed s, std::uint64_t index) {
  return Seed{s.root, splitmix64(s.stream ^ ((index + 1) * 0x9E3779B97F4A7C15ull))};
}

Rng::Rng(Seed s) : eng_(splitmix64(s.root) ^ splitmix64(splitmix64(s.stream))) {}

std::uint64_t Rng::next_u64() { return eng_(); }

double Rng::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double a, double b) { return a + (b - a) * uniform01(); }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  const double u2 = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double t = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(t);
  has_spare_ = true;
  return r * std::cos(t);
}

Matrix::Matrix(int r, int c) : rows(r), cols(c) {
  if (r < 0 || c < 0) throw ValidationError("matrix: negative dimension");
  data.assign(static_cast<std::size_t>(r) * c, 0.0);
}

bool Matrix::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix Matrix::zeros(int r, int c) { return Matrix(r, c); }

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Matrix Matrix::diag(const std::vector<double>& d) {
  Matrix m(static_cast<int>(d.size()), static_cast<int>(d.size()));
  for (int i = 0; i < m.rows; ++i) m.at(i, i) = d[i];
  return m;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw ValidationError("matmul: inner dimensions differ");
  Matrix c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    double* ci = &c.data[static_cast<std::size_t>(i) * c.cols];
    for (int j = 0; j < a.cols; ++j) {
      const double aij = a.at(i, j);
      if (aij == 0.0) continue;
      const double* bj = &b.data[static_cast<std::size_t>(j) * b.cols];
      for (int k = 0; k < b.cols; ++k) ci[k] += aij * bj[k];
    }
  }
  return c;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ValidationError("add: shapes differ");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
  return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ValidationError("sub: shapes differ");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
  return c;
}

Matrix scale(const Matrix& a, double c) {
  Matrix m = a;
  for (double& v : m.data) v *= c;
  return m;
}

double frobenius_dot(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ValidationError("frobenius_dot: shapes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

Matrix gaussian_matrix(Rng& rng, int rows, int cols) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.normal();
  return m;
}

Matrix sample_frobenius_ball(Rng& rng, int rows, int cols, double radius) {
  if (radius < 0.0 || !std::isfinite(radius))
    throw ValidationError("sample_frobenius_ball: radius must be finite and >= 0");
  Matrix g = gaussian_matrix(rng, rows, cols);
  double nrm = 0.0;
  for (double v : g.data) nrm += v * v;
  nrm = std::sqrt(nrm);
  const double u = rng.uniform01();
  if (nrm == 0.0) return Matrix::zeros(rows, cols);
  const double r = radius * std::pow(u, 1.0 / static_cast<double>(g.data.size()));
  return scale(g, r / nrm);
}

}  // namespace liparch
