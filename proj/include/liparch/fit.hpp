#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "liparch/errors.hpp"

namespace liparch {

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

// Ordinary least squares y ~ intercept + slope * x. r_squared is computed in
// the same coordinates; a constant y sequence fits perfectly (r_squared 1)
// unless the residuals fail to vanish, which can only happen with a
// degenerate x spread.
inline LineFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw ValidationError("fit_line: need at least two matching points");
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  LineFit f;
  f.slope = sxx > 0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = ys[i] - (f.intercept + f.slope * xs[i]);
    ss_res += e * e;
    ss_tot += (ys[i] - my) * (ys[i] - my);
  }
  if (ss_tot > 0)
    f.r_squared = 1.0 - ss_res / ss_tot;
  else
    f.r_squared = ss_res <= 1e-24 ? 1.0 : 0.0;
  if (f.r_squared < 0) f.r_squared = 0;
  return f;
}

}  // namespace liparch
