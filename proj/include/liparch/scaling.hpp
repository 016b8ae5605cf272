#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "liparch/block.hpp"
#include "liparch/json_io.hpp"
#include "liparch/lipnum.hpp"
#include "liparch/matrix.hpp"

namespace liparch {

// Least-squares fit of a positive series in log space: exponential fits
// log y against x (y = prefactor * parameter^x), power fits log y against
// log x (y = prefactor * x^parameter; decays carry a negative exponent).
struct ScalingFit {
  std::string law;  // "exponential" or "power"
  double parameter = 0.0;
  double prefactor = 0.0;
  double r_squared = 0.0;
  std::vector<std::pair<double, double>> series;
  std::vector<std::string> flags;

  double evaluate(double x) const;
};

ScalingFit fit_power_law(const std::vector<std::pair<double, double>>& series);
ScalingFit fit_exponential(const std::vector<std::pair<double, double>>& series);

// Gradient descent on a diagonal quadratic with eigenvalues spanning [mu, G]
// and step 1/G. The distance to the minimizer contracts per coordinate by
// 1 - lambda/G, so the fitted base approaches 1 - mu/G once the burn-in has
// let the slowest mode dominate. series holds (k, ||W_k - W*||) for every
// step; the fit uses k >= 10. A sequence at the floating-point floor (the
// mu = G case) reports parameter 0 with the "residuals-at-floor" flag.
ScalingFit gd_rate_experiment(double mu, double g, int dim, int k, Seed seed);

struct ModelSizeOpts {
  double alpha = 0.5;                 // T = (1 - alpha) I + alpha F
  std::optional<Matrix> fixed_point;  // else settled by long iteration
  int settle_cap = 200000;
  DomainSpec domain;                  // nonexpansiveness check on F
  Seed seed{0x4d4f44454c535a45ULL, 0};
};

struct ModelSizeResult {
  std::vector<double> residuals;  // ||T f_k - f_k||, k = 0..Kmax
  bool bound_ok = true;
  int first_violation = -1;       // index of the first envelope violation
  double gamma = 1.0;             // alpha / (1 - alpha)
  double dist0 = 0.0;             // ||f0 - f*||
  ScalingFit fit;                 // power law of residual vs k + 1
  std::vector<std::string> assumptions;
};

// Runs f_{k+1} = T f_k for the averaged operator and checks the envelope
// residual_k <= dist0 / sqrt(gamma * (k + 1)) as a hard inequality at every
// k <= kmax. F must pass the empirical nonexpansiveness check
// (sup-Jacobian <= 1 + 1e-3 on the configured domain).
ModelSizeResult model_size_experiment(const Block& f, const Matrix& f0, int kmax,
                                      const ModelSizeOpts& opts = {});

enum class LossDistribution { uniform, two_point, constant };

// Mean absolute gap between the empirical and true mean of n i.i.d. bounded
// losses, averaged over trials, fitted as a power law in n. Bounded on
// [0, G]; the constant distribution yields zero gaps and a degenerate fit
// with the "degenerate-zero-gaps" flag.
ScalingFit data_size_experiment(const std::vector<int>& ns, int trials, double bound_g,
                                LossDistribution dist, Seed seed);

struct CoveringSpec {
  // One entry per layer, deepest last. MLP mode reads bounds[0] and
  // bounds[1]; transformer mode reads all three.
  std::vector<std::array<double, 3>> layer_bounds;
  double l_sigma = 1.0;
  double b_z = 1.0;  // input bound (MLP mode)
  // Generates layer_bounds[k] = C_W * rho^(k+1) for every slot when set.
  std::optional<std::pair<double, double>> decay;
  int truncation_k = 200;
  double tail_tolerance = 1e-9;
  std::optional<double> gamma;  // explicit contraction constant (MLP mode)
};

struct CoveringResult {
  double c_f = 0.0;
  double tail_bound = 0.0;  // bound on every deeper partial constant
  std::vector<double> per_layer_terms;  // MLP: S_k; transformer: T_k
  std::vector<double> gammas;           // transformer: gamma_j
  std::vector<std::string> flags;
};

// Uniform-contraction MLP constant: the depth-K' class has
//   C(K') = sum_k gamma^(2(K'-k)/3) * S_k,
// S_k the two-branch layer term, and the reported constant is the max over
// K' <= truncation (the union-over-depth class). Rejects any layer with
// L_sigma * B1 * B2 above the contraction constant.
CoveringResult mlp_covering_constant(const CoveringSpec& spec);

// Transformer constant via C(K') = gamma_{K'} C(K'-1) + T_{K'}. Throws
// DivergenceDiagnostic when the series is certifiably divergent (gamma_j
// >= 1 across the deep half with T_k bounded away from 0); an undecidable
// tail is reported with the "tail-inconclusive" flag instead.
CoveringResult transformer_covering_constant(const CoveringSpec& spec);

struct JointPoint {
  double k = 0, p = 0, n = 0;
  double value = 0;  // g(beta^k + p^(-1/2) + n^(-1/2))
};

struct JointLawReport {
  double beta = 0.0;
  std::string link;  // "identity" or "exp-neg"
  std::vector<JointPoint> points;
  ScalingFit gd, model, data;
};

// Composite bound beta^K + P^(-1/2) + N^(-1/2) on the supplied grid, with
// beta taken from the GD fit; the model/data fits ride along for reporting.
JointLawReport joint_law_report(const ScalingFit& gd, const ScalingFit& model,
                                const ScalingFit& data,
                                const std::vector<std::array<double, 3>>& grid,
                                const std::string& link = "identity");

// Artifact emission shared by the CLI: CSV rows (x, y, fit, residual) and a
// JSON summary of the fit parameters.
std::string fit_csv(const ScalingFit& fit);
json fit_summary_json(const ScalingFit& fit);

}  // namespace liparch
