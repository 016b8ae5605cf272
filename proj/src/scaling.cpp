#include "liparch/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "liparch/csv.hpp"
#include "liparch/errors.hpp"
#include "liparch/fit.hpp"
#include "liparch/norms.hpp"

namespace liparch {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_fittable(const std::vector<std::pair<double, double>>& series, bool log_x,
                      const char* who) {
  if (series.size() < 3)
    throw ValidationError(std::string(who) + ": need at least 3 points");
  for (const auto& [x, y] : series) {
    if (!(y > 0.0) || !std::isfinite(y))
      throw ValidationError(std::string(who) + ": values must be positive and finite");
    if (log_x && (!(x > 0.0) || !std::isfinite(x)))
      throw ValidationError(std::string(who) + ": abscissae must be positive and finite");
  }
}

double vec_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

double ScalingFit::evaluate(double x) const {
  if (law == "power") return prefactor * std::pow(x, parameter);
  return prefactor * std::pow(parameter, x);
}

ScalingFit fit_power_law(const std::vector<std::pair<double, double>>& series) {
  require_fittable(series, true, "fit_power_law");
  std::vector<double> xs, ys;
  xs.reserve(series.size());
  ys.reserve(series.size());
  for (const auto& [x, y] : series) {
    xs.push_back(std::log(x));
    ys.push_back(std::log(y));
  }
  const LineFit f = fit_line(xs, ys);
  ScalingFit out;
  out.law = "power";
  out.parameter = f.slope;
  out.prefactor = std::exp(f.intercept);
  out.r_squared = f.r_squared;
  out.series = series;
  return out;
}

ScalingFit fit_exponential(const std::vector<std::pair<double, double>>& series) {
  require_fittable(series, false, "fit_exponential");
  std::vector<double> xs, ys;
  xs.reserve(series.size());
  ys.reserve(series.size());
  for (const auto& [x, y] : series) {
    xs.push_back(x);
    ys.push_back(std::log(y));
  }
  const LineFit f = fit_line(xs, ys);
  ScalingFit out;
  out.law = "exponential";
  out.parameter = std::exp(f.slope);
  out.prefactor = std::exp(f.intercept);
  out.r_squared = f.r_squared;
  out.series = series;
  return out;
}

ScalingFit gd_rate_experiment(double mu, double g, int dim, int k, Seed seed) {
  if (!(mu > 0.0) || !std::isfinite(mu) || !std::isfinite(g))
    throw ValidationError("gd_rate_experiment: mu must be positive and finite");
  if (mu > g) throw ValidationError("gd_rate_experiment: mu exceeds G");
  if (dim < 1) throw ValidationError("gd_rate_experiment: dim must be >= 1");
  if (k < 1) throw ValidationError("gd_rate_experiment: K must be >= 1");

  std::vector<double> lambda(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim; ++i)
    lambda[static_cast<std::size_t>(i)] =
        dim == 1 ? mu : mu + (g - mu) * i / (dim - 1.0);

  // Deviations from the minimizer; GD with step 1/G scales each coordinate
  // by 1 - lambda_i/G per step.
  Rng rng(derive(seed, 1));
  std::vector<double> dev(static_cast<std::size_t>(dim));
  for (auto& d : dev) d = rng.normal();

  ScalingFit out;
  out.series.emplace_back(0.0, vec_norm(dev));
  for (int step = 1; step <= k; ++step) {
    for (int i = 0; i < dim; ++i)
      dev[static_cast<std::size_t>(i)] *= 1.0 - lambda[static_cast<std::size_t>(i)] / g;
    out.series.emplace_back(static_cast<double>(step), vec_norm(dev));
  }

  const double floor = 1e-14 * (1.0 + out.series.front().second);
  const int burn_in = std::min(10, k);
  std::vector<std::pair<double, double>> tail;
  bool any_above_floor = false;
  for (int step = burn_in; step <= k; ++step) {
    const double e = out.series[static_cast<std::size_t>(step)].second;
    if (e > floor) {
      any_above_floor = true;
      tail.emplace_back(static_cast<double>(step), e);
    }
  }
  if (!any_above_floor) {
    out.law = "exponential";
    out.parameter = 0.0;
    out.prefactor = 0.0;
    out.r_squared = 1.0;
    out.flags.push_back("residuals-at-floor");
    return out;
  }
  if (tail.size() < 3) {
    out.law = "exponential";
    out.flags.push_back("degenerate-fit");
    return out;
  }
  ScalingFit fitted = fit_exponential(tail);
  fitted.series = std::move(out.series);
  return fitted;
}

ModelSizeResult model_size_experiment(const Block& f, const Matrix& f0, int kmax,
                                      const ModelSizeOpts& opts) {
  if (!(opts.alpha > 0.0) || !(opts.alpha < 1.0))
    throw ValidationError("model_size_experiment: alpha must be in (0, 1)");
  if (kmax < 0) throw ValidationError("model_size_experiment: Kmax must be >= 0");
  if (!f0.all_finite()) throw ValidationError("model_size_experiment: f0 is not finite");

  const double lip = empirical_sup_jacobian(f, opts.domain, derive(opts.seed, 1));
  if (lip > 1.0 + 1e-3)
    throw ValidationError("model_size_experiment: F fails the nonexpansiveness check");

  const double a = opts.alpha;
  auto t_apply = [&](const Matrix& x) { return add(scale(x, 1.0 - a), scale(f.apply(x), a)); };

  ModelSizeResult res;
  res.gamma = a / (1.0 - a);
  res.assumptions.push_back(
      "bounded linear regularity near the fixed-point set is assumed, not checked");

  Matrix fstar;
  if (opts.fixed_point) {
    fstar = *opts.fixed_point;
    if (!fstar.same_shape(f0))
      throw ValidationError("model_size_experiment: fixed point shape differs from f0");
  } else {
    // The settled point is the earlier state of the first pair whose forward
    // step falls below the floor, so its own residual is at the floor too.
    Matrix cur = f0;
    bool settled = false;
    for (int i = 0; i < opts.settle_cap; ++i) {
      Matrix next = t_apply(cur);
      if (frobenius(sub(next, cur)) <= 1e-15 * (1.0 + frobenius(cur))) {
        settled = true;
        break;
      }
      cur = std::move(next);
    }
    if (!settled)
      throw EstimatorError("model_size_experiment: fixed-point iteration did not settle");
    fstar = std::move(cur);
  }

  res.dist0 = frobenius(sub(f0, fstar));
  res.residuals.reserve(static_cast<std::size_t>(kmax) + 1);
  Matrix cur = f0;
  for (int k = 0; k <= kmax; ++k) {
    Matrix next = t_apply(cur);
    const double r = frobenius(sub(next, cur));
    res.residuals.push_back(r);
    const double envelope = res.dist0 / std::sqrt(res.gamma * (k + 1.0));
    if (!(r <= envelope) && res.first_violation < 0) {
      res.bound_ok = false;
      res.first_violation = k;
    }
    cur = std::move(next);
  }

  std::vector<std::pair<double, double>> pts;
  for (int k = 0; k <= kmax; ++k) {
    const double r = res.residuals[static_cast<std::size_t>(k)];
    if (r > 0.0) pts.emplace_back(k + 1.0, r);
  }
  if (pts.size() >= 3) {
    res.fit = fit_power_law(pts);
  } else {
    res.fit.law = "power";
    res.fit.flags.push_back("degenerate-fit");
    res.fit.series = std::move(pts);
  }
  return res;
}

ScalingFit data_size_experiment(const std::vector<int>& ns, int trials, double bound_g,
                                LossDistribution dist, Seed seed) {
  if (ns.empty()) throw ValidationError("data_size_experiment: empty N list");
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (ns[i] < 1) throw ValidationError("data_size_experiment: N must be >= 1");
    if (i > 0 && ns[i] <= ns[i - 1])
      throw ValidationError("data_size_experiment: Ns must be increasing");
  }
  if (trials < 30) throw ValidationError("data_size_experiment: need at least 30 trials");
  if (!(bound_g > 0.0) || !std::isfinite(bound_g))
    throw ValidationError("data_size_experiment: G must be positive and finite");

  const double true_mean = dist == LossDistribution::constant ? bound_g : bound_g / 2.0;
  ScalingFit out;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    double gap_sum = 0.0;
    for (int t = 0; t < trials; ++t) {
      Rng rng(derive(derive(seed, static_cast<std::uint64_t>(i)), static_cast<std::uint64_t>(t)));
      double sum = 0.0;
      for (int j = 0; j < ns[i]; ++j) {
        switch (dist) {
          case LossDistribution::uniform: sum += bound_g * rng.uniform01(); break;
          case LossDistribution::two_point: sum += (rng.next_u64() >> 63) ? bound_g : 0.0; break;
          case LossDistribution::constant: sum += bound_g; break;
        }
      }
      gap_sum += std::abs(sum / ns[i] - true_mean);
    }
    out.series.emplace_back(static_cast<double>(ns[i]), gap_sum / trials);
  }

  bool all_zero = true;
  for (const auto& [x, y] : out.series)
    if (y != 0.0) all_zero = false;
  if (all_zero) {
    out.law = "power";
    out.flags.push_back("degenerate-zero-gaps");
    return out;
  }
  ScalingFit fitted = fit_power_law(out.series);
  return fitted;
}

namespace {

std::vector<std::array<double, 3>> effective_bounds(const CoveringSpec& spec,
                                                    const char* who) {
  std::vector<std::array<double, 3>> bounds = spec.layer_bounds;
  if (spec.decay) {
    const auto [cw, rho] = *spec.decay;
    if (!(cw > 0.0) || !(rho > 0.0) || !(rho < 1.0))
      throw ValidationError(std::string(who) + ": decay needs C_W > 0 and rho in (0, 1)");
    if (spec.truncation_k < 1)
      throw ValidationError(std::string(who) + ": truncation must be >= 1");
    bounds.assign(static_cast<std::size_t>(spec.truncation_k), {});
    for (int kk = 0; kk < spec.truncation_k; ++kk) {
      const double b = cw * std::pow(rho, kk + 1);
      bounds[static_cast<std::size_t>(kk)] = {b, b, b};
    }
  }
  if (bounds.empty()) throw ValidationError(std::string(who) + ": no layer bounds");
  for (const auto& b : bounds)
    for (double v : b)
      if (v < 0.0 || !std::isfinite(v))
        throw ValidationError(std::string(who) + ": bounds must be finite and nonnegative");
  if (!(spec.l_sigma >= 0.0) || !std::isfinite(spec.l_sigma))
    throw ValidationError(std::string(who) + ": L_sigma must be finite and nonnegative");
  return bounds;
}

double cbrt_pos(double v) { return std::cbrt(v); }

}  // namespace

CoveringResult mlp_covering_constant(const CoveringSpec& spec) {
  const auto bounds = effective_bounds(spec, "mlp_covering_constant");
  if (!(spec.b_z >= 0.0) || !std::isfinite(spec.b_z))
    throw ValidationError("mlp_covering_constant: B_Z must be finite and nonnegative");

  double gamma;
  if (spec.gamma) {
    gamma = *spec.gamma;
    if (!(gamma > 0.0) || !(gamma < 1.0))
      throw ValidationError("mlp_covering_constant: gamma must be in (0, 1)");
  } else {
    gamma = 0.0;
    for (const auto& b : bounds) gamma = std::max(gamma, spec.l_sigma * b[0] * b[1]);
    if (!(gamma < 1.0))
      throw ValidationError("mlp_covering_constant: layers are not uniformly contractive");
  }
  for (std::size_t kk = 0; kk < bounds.size(); ++kk)
    if (spec.l_sigma * bounds[kk][0] * bounds[kk][1] > gamma)
      throw ValidationError("mlp_covering_constant: contraction violated at layer " +
                            std::to_string(kk + 1));

  CoveringResult res;
  const double damp = std::pow(gamma, 2.0 / 3.0);
  const double m1 = std::pow(spec.l_sigma, 2.0 / 3.0);
  double s_max = 0.0;
  double depth_sum = 0.0;  // C(K') for the current depth K'
  for (std::size_t kk = 0; kk < bounds.size(); ++kk) {
    const double b1 = bounds[kk][0], b2 = bounds[kk][1];
    const double s = m1 * (cbrt_pos(spec.b_z * b1 * (spec.b_z * b2) * (spec.b_z * b2)) +
                           cbrt_pos(spec.b_z * b2 * b1 * b1));
    res.per_layer_terms.push_back(s);
    s_max = std::max(s_max, s);
    depth_sum = damp * depth_sum + s;
    res.c_f = std::max(res.c_f, depth_sum);
  }
  const double limit = damp < 1.0 ? s_max / (1.0 - damp) : kInf;
  res.tail_bound = std::max(0.0, limit - res.c_f);
  if (res.tail_bound > spec.tail_tolerance) res.flags.push_back("tail-above-tolerance");
  return res;
}

CoveringResult transformer_covering_constant(const CoveringSpec& spec) {
  const auto bounds = effective_bounds(spec, "transformer_covering_constant");
  const double ls = spec.l_sigma;

  CoveringResult res;
  const std::size_t depth = bounds.size();
  for (std::size_t j = 0; j < depth; ++j) {
    const double b1 = bounds[j][0], b2 = bounds[j][1], b3 = bounds[j][2];
    res.gammas.push_back(std::pow(ls, 2.0 / 3.0) *
                         std::pow(b2 * b3 * (1.0 + 4.0 * b1), 2.0 / 3.0));
    res.per_layer_terms.push_back(cbrt_pos(b1) * std::pow(2.0 * ls * b2 * b3, 2.0 / 3.0) +
                                  cbrt_pos(b2) * std::pow(ls * b3, 2.0 / 3.0) +
                                  cbrt_pos(ls * b3));
  }

  // Certified divergence: factors at or above 1 across the deep half while
  // the additive terms stay bounded away from zero.
  const std::size_t half = depth / 2;
  bool gammas_ge_1 = depth - half >= 1;
  double t_min = kInf;
  for (std::size_t j = half; j < depth; ++j) {
    if (res.gammas[j] < 1.0) gammas_ge_1 = false;
    t_min = std::min(t_min, res.per_layer_terms[j]);
  }
  if (gammas_ge_1 && t_min > 0.0)
    throw DivergenceDiagnostic("transformer_covering_constant",
                               "layer factors stay >= 1 with nonvanishing terms; "
                               "the depth series diverges");

  double c = 0.0;
  for (std::size_t kk = 0; kk < depth; ++kk) {
    c = res.gammas[kk] * c + res.per_layer_terms[kk];
    res.c_f = std::max(res.c_f, c);
  }

  const double gbar = res.gammas.back();
  const double tbar = res.per_layer_terms.back();
  if (gbar < 1.0) {
    res.tail_bound = std::max(0.0, gbar * c + tbar / (1.0 - gbar) - res.c_f);
    if (res.tail_bound > spec.tail_tolerance) res.flags.push_back("tail-above-tolerance");
  } else {
    res.tail_bound = kInf;
    res.flags.push_back("tail-inconclusive");
  }
  return res;
}

JointLawReport joint_law_report(const ScalingFit& gd, const ScalingFit& model,
                                const ScalingFit& data,
                                const std::vector<std::array<double, 3>>& grid,
                                const std::string& link) {
  if (link != "identity" && link != "exp-neg")
    throw ValidationError("joint_law_report: link must be identity or exp-neg");
  JointLawReport rep;
  rep.beta = gd.parameter;
  rep.link = link;
  rep.gd = gd;
  rep.model = model;
  rep.data = data;
  rep.points.reserve(grid.size());
  for (const auto& [k, p, n] : grid) {
    JointPoint pt;
    pt.k = k;
    pt.p = p;
    pt.n = n;
    double v = std::pow(rep.beta, k) + 1.0 / std::sqrt(p) + 1.0 / std::sqrt(n);
    pt.value = link == "exp-neg" ? std::exp(-v) : v;
    rep.points.push_back(pt);
  }
  return rep;
}

std::string fit_csv(const ScalingFit& fit) {
  std::string out = "x,y,fit,residual\n";
  for (const auto& [x, y] : fit.series) {
    const double f = fit.evaluate(x);
    out += csv_line({format_double(x), format_double(y), format_double(f),
                     format_double(y - f)});
  }
  return out;
}

json fit_summary_json(const ScalingFit& fit) {
  json j;
  j["law"] = fit.law;
  j["parameter"] = fit.parameter;
  j["prefactor"] = fit.prefactor;
  j["r_squared"] = fit.r_squared;
  j["points"] = fit.series.size();
  j["flags"] = fit.flags;
  return j;
}

}  // namespace liparch
