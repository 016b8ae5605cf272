#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace liparch {

// (root, stream) fully determines every draw; derive() spawns independent
// sub-streams so that sample k never depends on how samples <k were consumed.
struct Seed {
  std::uint64_t root = 0;
  std::uint64_t stream = 0;

  friend bool operator==(const Seed&, const Seed&) = default;
};

std::uint64_t splitmix64(std::uint64_t x);
Seed derive(Seed s, std::uint64_t index);

// mt19937_64 with hand-rolled value mappings. The engine's output sequence is
// fixed by the standard; std::uniform_real_distribution and friends are not,
// so they must not appear anywhere bit-exact reproducibility is promised.
class Rng {
 public:
  explicit Rng(Seed s);

  std::uint64_t next_u64();
  double uniform01();                    // [0, 1), 53-bit resolution
  double uniform(double a, double b);
  double normal();                       // Box-Muller, spare cached

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Dense row-major doubles. Small and value-semantic on purpose; everything in
// this library works at desk scale.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c);

  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool all_finite() const;

  static Matrix zeros(int r, int c);
  static Matrix identity(int n);
  static Matrix diag(const std::vector<double>& d);

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

Matrix transpose(const Matrix& a);
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double c);
double frobenius_dot(const Matrix& a, const Matrix& b);

Matrix gaussian_matrix(Rng& rng, int rows, int cols);

// Uniform draw from the closed Frobenius ball of the given radius: Gaussian
// direction, radius scaled by u^(1/(rows*cols)). Draw order is part of the
// determinism contract: entries row-major first, then the radius variate.
Matrix sample_frobenius_ball(Rng& rng, int rows, int cols, double radius);

}  // namespace liparch
