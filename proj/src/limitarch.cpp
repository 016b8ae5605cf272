#include "liparch/limitarch.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "liparch/errors.hpp"
#include "liparch/fit.hpp"
#include "liparch/norms.hpp"
#include "liparch/parallel.hpp"

namespace liparch {

namespace {

constexpr double kRunawayNorm = 1e12;

Matrix embed_width(const Matrix& x, int w) {
  if (x.cols == w) return x;
  Matrix out = Matrix::zeros(x.rows, w);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) out.at(i, j) = x.at(i, j);
  return out;
}

// Shared orbit loop; stage(k) supplies the operator for step k.
template <typename StageFn>
Trajectory run_orbit(int k_steps, const Matrix& f0, StageFn stage) {
  if (k_steps < 1) throw ValidationError("iterate: K must be >= 1");
  if (!f0.all_finite()) throw ValidationError("iterate: f0 is not finite");
  Trajectory t;
  t.states.reserve(static_cast<std::size_t>(k_steps) + 1);
  t.states.push_back(f0);
  if (frobenius(f0) > kRunawayNorm) {
    t.diverged_at = 0;
    return t;
  }
  for (int k = 0; k < k_steps; ++k) {
    Matrix next;
    try {
      next = stage(k).apply(t.states.back());
    } catch (const DivergenceDiagnostic&) {
      // The state that would sit at this index cannot be represented.
      t.diverged_at = static_cast<int>(t.states.size());
      break;
    }
    const double delta = frobenius(sub(next, t.states.back()));
    t.states.push_back(std::move(next));
    t.cauchy_deltas.push_back(delta);
    if (!t.states.back().all_finite() || frobenius(t.states.back()) > kRunawayNorm) {
      t.diverged_at = static_cast<int>(t.states.size()) - 1;
      break;
    }
  }
  t.residuals = t.cauchy_deltas;
  return t;
}

bool has_diverged_flag(const LipReport& r) {
  for (const auto& f : r.flags)
    if (f.rfind("diverged-at-n", 0) == 0) return true;
  return false;
}

// The analytic bound equals the true constant for these kinds, so a bound
// above 1 is a certificate, not mere failure to certify the converse.
bool analytic_is_exact(const Block& b) {
  return b.kind() == BlockKind::linear || b.kind() == BlockKind::post_ln_transformer;
}

bool violates(const LipReport& r, double tol) {
  return r.analytic_upper > 1.0 + tol || r.empirical_lip > 1.0 + tol || has_diverged_flag(r);
}

bool certified_violation(const LipReport& r, const Block& b, double tol) {
  if (r.empirical_lip > 1.0 + tol || has_diverged_flag(r)) return true;
  return r.analytic_upper > 1.0 + tol && analytic_is_exact(b);
}

}  // namespace

double Trajectory::max_delta_tail(double fraction) const {
  if (cauchy_deltas.empty()) return 0.0;
  const int steps = static_cast<int>(cauchy_deltas.size());
  int count = static_cast<int>(std::ceil(fraction * steps));
  count = std::clamp(count, 1, steps);
  double m = 0.0;
  for (int i = steps - count; i < steps; ++i) m = std::max(m, cauchy_deltas[static_cast<std::size_t>(i)]);
  return m;
}

Trajectory iterate(const Block& t, const Matrix& f0, int k) {
  const Dims d = t.dims();
  if (f0.rows != d.s || f0.cols > d.n)
    throw ValidationError("iterate: f0 shape does not fit the block");
  const Matrix start = embed_width(f0, d.n);
  return run_orbit(k, start, [&](int) -> const Block& { return t; });
}

Trajectory iterate(const std::vector<Block>& stages, const Matrix& f0) {
  if (stages.empty()) throw ValidationError("iterate: stage list is empty");
  int w = f0.cols;
  for (const auto& s : stages) {
    if (s.dims().s != f0.rows)
      throw ValidationError("iterate: stage row count does not match f0");
    w = std::max(w, s.dims().n);
  }
  std::vector<Block> padded;
  padded.reserve(stages.size());
  for (const auto& s : stages) padded.push_back(s.pad_to_width(w));
  const Matrix start = embed_width(f0, w);
  return run_orbit(static_cast<int>(stages.size()), start,
                   [&](int k) -> const Block& { return padded[static_cast<std::size_t>(k)]; });
}

const char* to_string(TailVerdict v) {
  switch (v) {
    case TailVerdict::summable: return "summable";
    case TailVerdict::divergent: return "divergent";
    case TailVerdict::inconclusive: return "inconclusive";
  }
  return "inconclusive";
}

const char* to_string(StackMode m) {
  switch (m) {
    case StackMode::single_operator: return "single-operator";
    case StackMode::finite_collection: return "finite-collection";
    case StackMode::countable: return "countable";
  }
  return "countable";
}

const char* to_string(Classification c) {
  switch (c) {
    case Classification::stable: return "StableArchitecture";
    case Classification::unstable: return "UnstableArchitecture";
    case Classification::inconclusive: return "Inconclusive";
  }
  return "Inconclusive";
}

namespace {

CondensingProfile profile_impl(const std::vector<Block>& blocks, const Block& candidate,
                               const std::vector<Matrix>& probe_set, std::string kind_label) {
  if (blocks.empty()) throw ValidationError("condensing_profile: block list is empty");
  if (probe_set.empty()) throw ValidationError("condensing_profile: probe set is empty");
  for (const auto& x : probe_set)
    if (!x.all_finite()) throw ValidationError("condensing_profile: probe matrix is not finite");

  const int nb = static_cast<int>(blocks.size());
  const int np = static_cast<int>(probe_set.size());
  std::vector<Matrix> cand_out;
  cand_out.reserve(probe_set.size());
  for (const auto& x : probe_set) cand_out.push_back(candidate.apply(x));

  std::vector<double> dev(static_cast<std::size_t>(nb) * np);
  parallel_for(nb * np, [&](int idx) {
    const int i = idx / np, j = idx % np;
    dev[static_cast<std::size_t>(idx)] = frobenius(
        sub(blocks[static_cast<std::size_t>(i)].apply(probe_set[static_cast<std::size_t>(j)]),
            cand_out[static_cast<std::size_t>(j)]));
  });

  CondensingProfile p;
  p.candidate_kind = std::move(kind_label);
  p.epsilons.resize(static_cast<std::size_t>(nb));
  for (int i = 0; i < nb; ++i) {
    double m = 0.0;
    for (int j = 0; j < np; ++j) m = std::max(m, dev[static_cast<std::size_t>(i) * np + j]);
    p.epsilons[static_cast<std::size_t>(i)] = m;
  }

  const auto& eps = p.epsilons;
  const double peak = *std::max_element(eps.begin(), eps.end());
  if (peak == 0.0) {
    p.tail_fit = {"geometric", 0.0, 0.0, 1.0};
    p.summable_verdict = TailVerdict::summable;
    return p;
  }

  const int tail_start = nb / 2;
  double tail_peak = 0.0;
  for (int i = tail_start; i < nb; ++i)
    tail_peak = std::max(tail_peak, eps[static_cast<std::size_t>(i)]);
  if (tail_peak == 0.0) {
    // The deviations vanish (to the last bit) within the sampled depth.
    p.tail_fit = {"geometric", 0.0, 0.0, 1.0};
    p.summable_verdict = TailVerdict::summable;
    return p;
  }
  bool non_decreasing = nb - tail_start >= 2;
  for (int i = tail_start + 1; i < nb; ++i)
    if (eps[static_cast<std::size_t>(i)] <
        eps[static_cast<std::size_t>(i) - 1] - 1e-12 * peak)
      non_decreasing = false;
  if (non_decreasing) {
    p.summable_verdict = TailVerdict::divergent;
    return p;
  }

  std::vector<double> is, logis, logeps;
  for (int i = tail_start; i < nb; ++i) {
    const double e = eps[static_cast<std::size_t>(i)];
    if (e <= 0.0) continue;  // zeros carry no tail-model information
    is.push_back(static_cast<double>(i + 1));
    logis.push_back(std::log(static_cast<double>(i + 1)));
    logeps.push_back(std::log(e));
  }
  if (is.size() < 3) {
    p.summable_verdict = TailVerdict::inconclusive;
    return p;
  }
  const LineFit geo = fit_line(is, logeps);
  const LineFit pow = fit_line(logis, logeps);
  if (pow.r_squared > geo.r_squared) {
    p.tail_fit = {"power", -pow.slope, std::exp(pow.intercept), pow.r_squared};
    p.summable_verdict = (pow.r_squared >= 0.95 && -pow.slope > 1.05)
                             ? TailVerdict::summable
                             : TailVerdict::inconclusive;
  } else {
    p.tail_fit = {"geometric", std::exp(geo.slope), std::exp(geo.intercept), geo.r_squared};
    p.summable_verdict = (geo.r_squared >= 0.95 && std::exp(geo.slope) < 0.99)
                             ? TailVerdict::summable
                             : TailVerdict::inconclusive;
  }
  return p;
}

}  // namespace

CondensingProfile condensing_profile(const std::vector<Block>& blocks, const Block& candidate,
                                     const std::vector<Matrix>& probe_set) {
  return profile_impl(blocks, candidate, probe_set, "supplied");
}

CondensingProfile condensing_profile(const std::vector<Block>& blocks,
                                     const std::vector<Matrix>& probe_set) {
  if (blocks.empty()) throw ValidationError("condensing_profile: block list is empty");
  return profile_impl(blocks, Block::identity(blocks.front().dims()), probe_set, "identity");
}

std::vector<Matrix> default_probe_set(Dims d, int count, double radius, Seed seed) {
  if (count < 1) throw ValidationError("default_probe_set: count must be >= 1");
  if (!(radius > 0.0) || !std::isfinite(radius))
    throw ValidationError("default_probe_set: radius must be positive and finite");
  std::vector<Matrix> probes;
  probes.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(derive(seed, static_cast<std::uint64_t>(i)));
    probes.push_back(sample_frobenius_ball(rng, d.s, d.n, radius));
  }
  return probes;
}

TrajectorySummary summarize(const Trajectory& t) {
  TrajectorySummary s;
  s.steps = static_cast<int>(t.cauchy_deltas.size());
  s.final_delta = t.cauchy_deltas.empty() ? 0.0 : t.cauchy_deltas.back();
  s.max_delta_last_tenth = t.max_delta_tail(0.1);
  s.diverged_at = t.diverged_at;
  return s;
}

StackDiagnosis classify(const std::vector<Block>& blocks, StackMode mode,
                        const StackEvidence& evidence, double tol) {
  if (blocks.empty()) throw ValidationError("classify: block list is empty");
  if (evidence.per_block_lip.size() != blocks.size())
    throw ValidationError("classify: need one Lip report per block");
  if (mode == StackMode::countable && !evidence.profile.has_value())
    throw ValidationError("classify: countable mode needs a condensing profile");

  StackDiagnosis d;
  d.per_block_lip = evidence.per_block_lip;
  d.profile = evidence.profile;
  if (evidence.trajectory) d.trajectory_summary = *evidence.trajectory;

  const int nb = static_cast<int>(blocks.size());
  int last_certified = -1;
  bool all_analytic_ok = true;
  for (int i = 0; i < nb; ++i) {
    const auto& r = evidence.per_block_lip[static_cast<std::size_t>(i)];
    if (violates(r, tol)) d.k0_violations.push_back(i);
    if (certified_violation(r, blocks[static_cast<std::size_t>(i)], tol)) last_certified = i;
    if (!(r.analytic_upper <= 1.0 + tol)) all_analytic_ok = false;
  }
  const int k0 = d.k0_violations.empty() ? -1 : d.k0_violations.back();

  const bool orbit_diverged =
      evidence.trajectory && evidence.trajectory->diverged_at.has_value();

  if (mode == StackMode::finite_collection)
    d.assumptions.push_back("the distinct operators are assumed to share a fixed point; not checked");

  if (orbit_diverged) {
    d.classification = Classification::unstable;
    return d;
  }

  if (mode == StackMode::single_operator || mode == StackMode::finite_collection) {
    if (last_certified >= 0)
      d.classification = Classification::unstable;
    else if (all_analytic_ok)
      d.classification = Classification::stable;
    else
      d.classification = Classification::inconclusive;
    return d;
  }

  // Countable mode: violations must stop before the end, and every block past
  // K0 must carry an analytic certificate.
  bool tail_certified = k0 < nb - 1;
  for (int i = k0 + 1; i < nb && tail_certified; ++i)
    if (!(evidence.per_block_lip[static_cast<std::size_t>(i)].analytic_upper <= 1.0 + tol))
      tail_certified = false;
  const bool summable = evidence.profile->summable_verdict == TailVerdict::summable;
  const bool divergent_profile = evidence.profile->summable_verdict == TailVerdict::divergent;

  if ((last_certified == nb - 1 && last_certified >= 0) ||
      (divergent_profile && last_certified >= 0))
    d.classification = Classification::unstable;
  else if (tail_certified && summable)
    d.classification = Classification::stable;
  else
    d.classification = Classification::inconclusive;
  return d;
}

StackDiagnosis diagnose_stack(const std::vector<Block>& blocks, const DiagnoseOpts& opts) {
  if (blocks.empty()) throw ValidationError("diagnose_stack: block list is empty");
  const Dims d0 = blocks.front().dims();
  for (const auto& b : blocks)
    if (!(b.dims() == d0))
      throw ValidationError("diagnose_stack: blocks must share dims; pad them first");

  StackEvidence ev;
  ev.per_block_lip.reserve(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i)
    ev.per_block_lip.push_back(lip_report(blocks[i], opts.lip_n, opts.domain,
                                          derive(opts.seed, 100 + static_cast<std::uint64_t>(i))));

  if (opts.mode == StackMode::countable) {
    const auto probes =
        default_probe_set(d0, opts.probe_samples, opts.domain.radius, derive(opts.seed, 7));
    ev.profile = opts.candidate
                     ? condensing_profile(blocks, *opts.candidate, probes)
                     : condensing_profile(blocks, probes);
  }

  if (opts.trajectory_steps > 0) {
    Matrix f0;
    if (opts.f0) {
      f0 = *opts.f0;
    } else {
      Rng rng(derive(opts.seed, 9));
      f0 = sample_frobenius_ball(rng, d0.s, d0.n, opts.domain.radius);
    }
    const Block composed = blocks.size() == 1 ? blocks.front() : Block::stack(blocks);
    ev.trajectory = summarize(iterate(composed, f0, opts.trajectory_steps));
  }

  return classify(blocks, opts.mode, ev, opts.tol);
}

}  // namespace liparch
