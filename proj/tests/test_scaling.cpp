#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "liparch/block.hpp"
#include "liparch/errors.hpp"
#include "liparch/scaling.hpp"

using namespace liparch;

namespace {

Matrix matrix2(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m.at(0, 0) = a;
  m.at(0, 1) = b;
  m.at(1, 0) = c;
  m.at(1, 1) = d;
  return m;
}

Matrix row2(double x, double y) {
  Matrix m(1, 2);
  m.at(0, 0) = x;
  m.at(0, 1) = y;
  return m;
}

CoveringSpec uniform_mlp_spec(double b, int depth, double gamma) {
  CoveringSpec spec;
  spec.layer_bounds.assign(static_cast<std::size_t>(depth), {b, b, 0.0});
  spec.gamma = gamma;
  return spec;
}

bool has_flag(const std::vector<std::string>& flags, const std::string& f) {
  for (const auto& g : flags)
    if (g == f) return true;
  return false;
}

}  // namespace

TEST_CASE("power law fit recovers an exact decay") {
  std::vector<std::pair<double, double>> series;
  for (double x : {1.0, 4.0, 9.0, 16.0, 25.0}) series.emplace_back(x, 2.0 / std::sqrt(x));
  const ScalingFit fit = fit_power_law(series);
  CHECK(fit.law == "power");
  CHECK(fit.parameter == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(fit.prefactor == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(fit.evaluate(4.0) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("exponential fit recovers an exact geometric series") {
  std::vector<std::pair<double, double>> series;
  for (int k = 0; k <= 6; ++k) series.emplace_back(k, 3.0 * std::pow(0.9, k));
  const ScalingFit fit = fit_exponential(series);
  CHECK(fit.law == "exponential");
  CHECK(fit.parameter == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(fit.prefactor == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(fit.evaluate(3.0) == doctest::Approx(3.0 * 0.729).epsilon(1e-10));
}

TEST_CASE("power law fit tolerates small multiplicative noise") {
  std::vector<std::pair<double, double>> series;
  for (int i = 1; i <= 12; ++i) {
    const double wobble = (i % 2 == 0) ? 1.01 : 0.99;
    series.emplace_back(i, wobble / std::sqrt(static_cast<double>(i)));
  }
  const ScalingFit fit = fit_power_law(series);
  CHECK(fit.parameter == doctest::Approx(-0.5).epsilon(0.04));
  CHECK(fit.r_squared > 0.99);
}

TEST_CASE("fit validation rejects short and nonpositive input") {
  CHECK_THROWS_AS(fit_power_law({{1.0, 1.0}, {2.0, 0.5}}), ValidationError);
  CHECK_THROWS_AS(fit_exponential({{0.0, 1.0}, {1.0, 0.5}}), ValidationError);
  CHECK_THROWS_AS(fit_power_law({{1.0, 1.0}, {2.0, -0.5}, {3.0, 0.2}}), ValidationError);
  CHECK_THROWS_AS(fit_power_law({{-1.0, 1.0}, {2.0, 0.5}, {3.0, 0.2}}), ValidationError);
  // Exponential fits accept nonpositive abscissae; only values are logged.
  CHECK_NOTHROW(fit_exponential({{-1.0, 1.0}, {0.0, 0.5}, {1.0, 0.25}}));
}

TEST_CASE("gradient descent rate matches 1 - mu/G") {
  struct Case {
    double mu, g;
  };
  for (const Case c : {Case{1.0, 10.0}, Case{1.0, 100.0}, Case{5.0, 10.0}}) {
    const ScalingFit fit = gd_rate_experiment(c.mu, c.g, 6, 500, Seed{11, 0});
    const double expected = 1.0 - c.mu / c.g;
    INFO("mu=", c.mu, " G=", c.g);
    CHECK(fit.law == "exponential");
    CHECK(fit.parameter == doctest::Approx(expected).epsilon(0.02));
    CHECK(fit.series.size() == 501);
    CHECK(fit.series.front().first == 0.0);
  }
}

TEST_CASE("gradient descent with mu = G hits the floor in one step") {
  const ScalingFit fit = gd_rate_experiment(10.0, 10.0, 4, 500, Seed{12, 0});
  CHECK(fit.parameter == 0.0);
  CHECK(fit.prefactor == 0.0);
  CHECK(has_flag(fit.flags, "residuals-at-floor"));

  const ScalingFit one = gd_rate_experiment(10.0, 10.0, 4, 1, Seed{12, 0});
  CHECK(one.series.back().second <= 1e-12);
  CHECK(has_flag(one.flags, "residuals-at-floor"));
}

TEST_CASE("gradient descent experiment validates its arguments") {
  CHECK_THROWS_AS(gd_rate_experiment(11.0, 10.0, 4, 100, Seed{1, 0}), ValidationError);
  CHECK_THROWS_AS(gd_rate_experiment(0.0, 10.0, 4, 100, Seed{1, 0}), ValidationError);
  CHECK_THROWS_AS(gd_rate_experiment(1.0, 10.0, 0, 100, Seed{1, 0}), ValidationError);
  CHECK_THROWS_AS(gd_rate_experiment(1.0, 10.0, 4, 0, Seed{1, 0}), ValidationError);
}

TEST_CASE("gradient descent series is deterministic") {
  const ScalingFit a = gd_rate_experiment(1.0, 10.0, 6, 200, Seed{7, 3});
  const ScalingFit b = gd_rate_experiment(1.0, 10.0, 6, 200, Seed{7, 3});
  REQUIRE(a.series.size() == b.series.size());
  for (std::size_t i = 0; i < a.series.size(); ++i)
    CHECK(a.series[i].second == b.series[i].second);
  CHECK(a.parameter == b.parameter);
}

TEST_CASE("averaged iteration of the identity has zero residuals") {
  const Dims d{1, 2};
  ModelSizeOpts opts;
  const ModelSizeResult res =
      model_size_experiment(Block::identity(d), row2(3.0, 4.0), 20, opts);
  CHECK(res.dist0 == 0.0);
  CHECK(res.bound_ok);
  CHECK(res.first_violation == -1);
  for (double r : res.residuals) CHECK(r == 0.0);
  CHECK(has_flag(res.fit.flags, "degenerate-fit"));
  REQUIRE(res.assumptions.size() == 1);
  CHECK(res.assumptions.front().find("regularity") != std::string::npos);
}

TEST_CASE("averaging a reflection projects and meets the envelope exactly") {
  // T = (I + R)/2 with R = diag(1, -1) is the projection onto the first
  // axis: the k = 0 residual equals dist0 and the envelope holds with
  // equality there, zero afterwards.
  const Dims d{1, 2};
  const Block reflect = Block::linear(d, matrix2(1.0, 0.0, 0.0, -1.0));
  const ModelSizeResult res = model_size_experiment(reflect, row2(3.0, 4.0), 50, {});
  CHECK(res.gamma == 1.0);
  CHECK(res.dist0 == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(res.bound_ok);
  CHECK(res.residuals.front() == doctest::Approx(4.0).epsilon(1e-12));
  for (std::size_t k = 1; k < res.residuals.size(); ++k) CHECK(res.residuals[k] == 0.0);
}

TEST_CASE("averaging a small rotation decays inside the envelope") {
  const Dims d{1, 2};
  const double th = 0.1;
  const Block rot = Block::linear(d, matrix2(std::cos(th), std::sin(th),
                                             -std::sin(th), std::cos(th)));
  const ModelSizeResult res = model_size_experiment(rot, row2(3.0, 4.0), 10000, {});
  CHECK(res.bound_ok);
  CHECK(res.first_violation == -1);
  REQUIRE(res.residuals.size() == 10001);
  // Strictly inside the envelope away from k = 0: geometric beats k^{-1/2}.
  for (int k : {10, 100, 1000, 10000}) {
    const double envelope = res.dist0 / std::sqrt(res.gamma * (k + 1.0));
    CHECK(res.residuals[static_cast<std::size_t>(k)] < envelope);
  }
  CHECK(res.fit.law == "power");
}

TEST_CASE("model size experiment rejects expansive operators") {
  const Dims d{1, 2};
  const Block expand = Block::linear(d, matrix2(2.0, 0.0, 0.0, 2.0));
  CHECK_THROWS_AS(model_size_experiment(expand, row2(1.0, 0.0), 10, {}), ValidationError);
}

TEST_CASE("model size experiment validates options") {
  const Dims d{1, 2};
  ModelSizeOpts opts;
  opts.alpha = 1.0;
  CHECK_THROWS_AS(model_size_experiment(Block::identity(d), row2(1.0, 0.0), 10, opts),
                  ValidationError);
  opts.alpha = 0.5;
  opts.fixed_point = Matrix(2, 2);
  CHECK_THROWS_AS(model_size_experiment(Block::identity(d), row2(1.0, 0.0), 10, opts),
                  ValidationError);
}

TEST_CASE("a supplied fixed point is used verbatim") {
  const Dims d{1, 2};
  ModelSizeOpts opts;
  opts.fixed_point = row2(0.0, 0.0);
  const double th = 0.1;
  const Block rot = Block::linear(d, matrix2(std::cos(th), std::sin(th),
                                             -std::sin(th), std::cos(th)));
  const ModelSizeResult res = model_size_experiment(rot, row2(3.0, 4.0), 100, opts);
  CHECK(res.dist0 == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(res.bound_ok);
}

TEST_CASE("empirical mean gap decays like N^{-1/2}") {
  const std::vector<int> ns{16, 64, 256, 1024};
  for (const LossDistribution dist : {LossDistribution::uniform, LossDistribution::two_point}) {
    const ScalingFit fit = data_size_experiment(ns, 200, 1.0, dist, Seed{21, 0});
    INFO("dist=", static_cast<int>(dist));
    CHECK(fit.law == "power");
    CHECK(fit.parameter > -0.6);
    CHECK(fit.parameter < -0.4);
    CHECK(fit.r_squared > 0.98);
  }
}

TEST_CASE("mean gap prefactor scales linearly with the loss bound") {
  const std::vector<int> ns{16, 64, 256};
  const ScalingFit one = data_size_experiment(ns, 100, 1.0, LossDistribution::uniform, Seed{22, 0});
  const ScalingFit three =
      data_size_experiment(ns, 100, 3.0, LossDistribution::uniform, Seed{22, 0});
  // Identical draws scale every gap by exactly G.
  CHECK(three.prefactor / one.prefactor == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(three.parameter == doctest::Approx(one.parameter).epsilon(1e-12));
}

TEST_CASE("mean gap tracks the half-normal oracle for uniform losses") {
  // E|mean - mu| -> sigma * sqrt(2 / (pi N)) with sigma = G / sqrt(12).
  const std::vector<int> ns{256, 1024, 4096};
  const ScalingFit fit = data_size_experiment(ns, 300, 1.0, LossDistribution::uniform, Seed{23, 0});
  const double sigma = 1.0 / std::sqrt(12.0);
  for (const auto& [n, gap] : fit.series) {
    const double oracle = sigma * std::sqrt(2.0 / (3.14159265358979323846 * n));
    CHECK(gap == doctest::Approx(oracle).epsilon(0.15));
  }
}

TEST_CASE("constant losses give zero gaps and a degenerate fit") {
  const ScalingFit fit =
      data_size_experiment({16, 64, 256}, 50, 2.5, LossDistribution::constant, Seed{24, 0});
  CHECK(has_flag(fit.flags, "degenerate-zero-gaps"));
  CHECK(fit.parameter == 0.0);
  for (const auto& [n, gap] : fit.series) CHECK(gap == 0.0);
}

TEST_CASE("data size experiment validates its arguments") {
  CHECK_THROWS_AS(data_size_experiment({}, 100, 1.0, LossDistribution::uniform, Seed{1, 0}),
                  ValidationError);
  CHECK_THROWS_AS(
      data_size_experiment({16, 16}, 100, 1.0, LossDistribution::uniform, Seed{1, 0}),
      ValidationError);
  CHECK_THROWS_AS(data_size_experiment({16, 64}, 10, 1.0, LossDistribution::uniform, Seed{1, 0}),
                  ValidationError);
  CHECK_THROWS_AS(
      data_size_experiment({16, 64}, 100, 0.0, LossDistribution::uniform, Seed{1, 0}),
      ValidationError);
}

TEST_CASE("uniform MLP covering constant matches the closed form") {
  // S_k = 1 at every layer for B = 0.5, L_sigma = 1, B_Z = 1, so the
  // depth-K' constant is a geometric sum with ratio gamma^{2/3} and the
  // union over depth converges to 1 / (1 - 2^{-2/3}).
  const CoveringResult res = mlp_covering_constant(uniform_mlp_spec(0.5, 200, 0.5));
  const double closed_form = 1.0 / (1.0 - std::pow(2.0, -2.0 / 3.0));
  CHECK(res.c_f == doctest::Approx(closed_form).epsilon(1e-9));
  CHECK(res.tail_bound < 1e-9);
  CHECK(res.flags.empty());
  REQUIRE(res.per_layer_terms.size() == 200);
  CHECK(res.per_layer_terms.front() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("MLP covering constant of all-zero bounds is zero") {
  const CoveringResult res = mlp_covering_constant(uniform_mlp_spec(0.0, 10, 0.5));
  CHECK(res.c_f == 0.0);
  CHECK(res.tail_bound == 0.0);
}

TEST_CASE("a contraction constant near 1 leaves the tail above tolerance") {
  CoveringSpec spec = uniform_mlp_spec(0.9, 50, 0.999);
  const CoveringResult res = mlp_covering_constant(spec);
  CHECK(std::isfinite(res.c_f));
  CHECK(res.c_f > 0.0);
  CHECK(has_flag(res.flags, "tail-above-tolerance"));
  CHECK(res.tail_bound > 1.0);
}

TEST_CASE("MLP covering rejects a layer that violates the contraction") {
  CoveringSpec spec;
  spec.layer_bounds = {{0.5, 0.5, 0.0}, {2.0, 2.0, 0.0}, {0.5, 0.5, 0.0}};
  spec.gamma = 0.5;
  CHECK_THROWS_WITH_AS(mlp_covering_constant(spec),
                       doctest::Contains("layer 2"), ValidationError);
  spec.gamma = 1.5;
  CHECK_THROWS_AS(mlp_covering_constant(spec), ValidationError);
}

TEST_CASE("MLP covering constant is monotone in the weight bounds") {
  const CoveringResult base = mlp_covering_constant(uniform_mlp_spec(0.5, 10, 0.5));
  CoveringSpec bumped = uniform_mlp_spec(0.5, 10, 0.5);
  bumped.layer_bounds[4][0] = 0.6;
  const CoveringResult more = mlp_covering_constant(bumped);
  CHECK(more.c_f >= base.c_f);
  CHECK(more.per_layer_terms[4] > base.per_layer_terms[4]);
}

TEST_CASE("transformer covering constant is depth-stable under decaying bounds") {
  CoveringSpec spec;
  spec.decay = std::pair<double, double>{1.0, 0.5};
  spec.truncation_k = 100;
  const CoveringResult a = transformer_covering_constant(spec);
  spec.truncation_k = 200;
  const CoveringResult b = transformer_covering_constant(spec);
  CHECK(std::abs(a.c_f - b.c_f) < 1e-9);
  // The max is attained at depth 1 where every bound is 1/2.
  const double t1 = std::cbrt(0.5) * std::pow(2.0 * 0.5 * 0.5, 2.0 / 3.0) +
                    std::cbrt(0.5) * std::pow(0.5, 2.0 / 3.0) + std::cbrt(0.5);
  CHECK(a.c_f == doctest::Approx(t1).epsilon(1e-12));
  CHECK(a.tail_bound < 1e-9);
  CHECK(a.flags.empty());
  CHECK(a.gammas.front() == doctest::Approx(std::pow(0.75, 2.0 / 3.0)).epsilon(1e-12));
}

TEST_CASE("transformer covering of all-zero bounds is zero") {
  CoveringSpec spec;
  spec.layer_bounds.assign(5, {0.0, 0.0, 0.0});
  const CoveringResult res = transformer_covering_constant(spec);
  CHECK(res.c_f == 0.0);
  CHECK(res.tail_bound == 0.0);
  CHECK(res.flags.empty());
}

TEST_CASE("constant unit bounds certify a divergent transformer series") {
  // gamma_j = 5^{2/3} > 1 at every depth with T_k bounded away from zero.
  CoveringSpec spec;
  spec.layer_bounds.assign(4, {1.0, 1.0, 1.0});
  CHECK_THROWS_AS(transformer_covering_constant(spec), DivergenceDiagnostic);
}

TEST_CASE("a non-contractive tail that cannot be certified is flagged") {
  // Only the last layer is expansive, so the deep half is not uniformly
  // at gamma >= 1: no divergence certificate, but the tail is undecidable.
  CoveringSpec spec;
  spec.layer_bounds.assign(4, {0.1, 0.1, 0.1});
  spec.layer_bounds[3] = {1.0, 1.0, 1.0};
  const CoveringResult res = transformer_covering_constant(spec);
  CHECK(has_flag(res.flags, "tail-inconclusive"));
  CHECK(std::isinf(res.tail_bound));
}

TEST_CASE("covering specs validate their inputs") {
  CoveringSpec spec;
  CHECK_THROWS_AS(mlp_covering_constant(spec), ValidationError);  // no bounds
  spec.layer_bounds = {{-1.0, 0.5, 0.0}};
  CHECK_THROWS_AS(mlp_covering_constant(spec), ValidationError);
  CoveringSpec decayed;
  decayed.decay = std::pair<double, double>{1.0, 1.5};
  CHECK_THROWS_AS(transformer_covering_constant(decayed), ValidationError);
}

TEST_CASE("joint law combines the three regimes") {
  ScalingFit gd;
  gd.law = "exponential";
  gd.parameter = 0.9;
  ScalingFit stub;
  const JointLawReport rep = joint_law_report(gd, stub, stub, {{10.0, 100.0, 100.0}});
  REQUIRE(rep.points.size() == 1);
  CHECK(rep.beta == 0.9);
  CHECK(rep.link == "identity");
  CHECK(rep.points.front().value == doctest::Approx(0.5486784401).epsilon(1e-10));
}

TEST_CASE("joint law supports a vanishing optimization term and the exp link") {
  ScalingFit gd;
  gd.parameter = 0.0;
  ScalingFit stub;
  const JointLawReport ident = joint_law_report(gd, stub, stub, {{5.0, 4.0, 16.0}});
  CHECK(ident.points.front().value == doctest::Approx(0.75).epsilon(1e-12));
  const JointLawReport damped =
      joint_law_report(gd, stub, stub, {{5.0, 4.0, 16.0}}, "exp-neg");
  CHECK(damped.points.front().value == doctest::Approx(std::exp(-0.75)).epsilon(1e-12));
  CHECK_THROWS_AS(joint_law_report(gd, stub, stub, {}, "sigmoid"), ValidationError);
}

TEST_CASE("fit artifacts are deterministic and well formed") {
  std::vector<std::pair<double, double>> series;
  for (double x : {1.0, 2.0, 4.0, 8.0}) series.emplace_back(x, 2.0 / x);
  const ScalingFit fit = fit_power_law(series);

  const std::string csv = fit_csv(fit);
  CHECK(csv == fit_csv(fit));
  CHECK(csv.rfind("x,y,fit,residual\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

  const json j = fit_summary_json(fit);
  CHECK(j["law"] == "power");
  CHECK(j["points"] == 4);
  CHECK(j.dump() == fit_summary_json(fit).dump());
}
