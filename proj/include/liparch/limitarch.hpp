#pragma once

#include <optional>
#include <string>
#include <vector>

#include "liparch/block.hpp"
#include "liparch/lipnum.hpp"
#include "liparch/matrix.hpp"

namespace liparch {

// Orbit f_{k+1} = T_{k+1} f_k (or a fixed T applied K times). residuals holds
// ||T_{k+1} f_k - f_k||_F, which coincides with cauchy_deltas because each
// state is produced by its own stage; both are kept because consumers read
// them under different names. diverged_at is the index of the first state
// that tripped the runaway guard (||f||_F > 1e12) or could not be produced
// because a sub-block went non-finite; states before it are all finite.
struct Trajectory {
  std::vector<Matrix> states;
  std::vector<double> cauchy_deltas;
  std::vector<double> residuals;
  std::optional<int> diverged_at;

  // Max delta over the trailing ceil(fraction * steps) steps; 0 if empty.
  double max_delta_tail(double fraction) const;
};

Trajectory iterate(const Block& t, const Matrix& f0, int k);
Trajectory iterate(const std::vector<Block>& stages, const Matrix& f0);

enum class TailVerdict { summable, divergent, inconclusive };
const char* to_string(TailVerdict v);

struct TailFit {
  std::string model;       // "geometric" (C * rho^i) or "power" (C * i^-p)
  double parameter = 0.0;  // rho, or p
  double prefactor = 0.0;
  double r_squared = 0.0;
};

// epsilons[i] = max over the probe set of ||T_i X - candidate(X)||_F, the
// computable surrogate for the operator deviation on a bounded domain.
struct CondensingProfile {
  std::vector<double> epsilons;
  std::string candidate_kind;  // "identity" or "supplied"
  TailFit tail_fit;
  TailVerdict summable_verdict = TailVerdict::inconclusive;
};

// Verdict rules, applied in order to the last half of the profile:
//   1. every epsilon exactly 0 -> summable (degenerate perfect fit);
//   2. non-decreasing tail with a positive maximum -> divergent;
//   3. fit C*rho^i and C*i^-p by least squares on logs over the positive
//      tail entries, keep the better r_squared; summable when the winner has
//      r_squared >= 0.95 and (rho < 0.99 or p > 1.05);
//   4. otherwise inconclusive.
CondensingProfile condensing_profile(const std::vector<Block>& blocks, const Block& candidate,
                                     const std::vector<Matrix>& probe_set);
// Identity candidate.
CondensingProfile condensing_profile(const std::vector<Block>& blocks,
                                     const std::vector<Matrix>& probe_set);

// Seeded probe matrices in the Frobenius ball of the given radius.
std::vector<Matrix> default_probe_set(Dims d, int count, double radius, Seed seed);

enum class StackMode { single_operator, finite_collection, countable };
enum class Classification { stable, unstable, inconclusive };
const char* to_string(StackMode m);
const char* to_string(Classification c);  // "StableArchitecture" etc.

struct TrajectorySummary {
  int steps = 0;
  double final_delta = 0.0;
  double max_delta_last_tenth = 0.0;
  std::optional<int> diverged_at;
};
TrajectorySummary summarize(const Trajectory& t);

struct StackEvidence {
  std::vector<LipReport> per_block_lip;
  std::optional<CondensingProfile> profile;      // required in countable mode
  std::optional<TrajectorySummary> trajectory;   // optional in every mode
};

struct StackDiagnosis {
  std::vector<LipReport> per_block_lip;
  std::vector<int> k0_violations;  // indices whose Lip evidence exceeds 1 + tol
  std::optional<CondensingProfile> profile;
  Classification classification = Classification::inconclusive;
  TrajectorySummary trajectory_summary;
  // Hypotheses the theory needs but this module cannot check (e.g. the
  // common fixed point of a finite collection).
  std::vector<std::string> assumptions;
};

// Classification rules (tol defaults to 1e-3 for estimator noise):
//   - a trajectory that diverged certifies UnstableArchitecture in any mode;
//   - a block violation is empirical_lip > 1 + tol, a diverged Lip sequence,
//     or analytic_upper > 1 + tol; the violation is *certified* when the
//     empirical evidence itself exceeds the threshold or the analytic bound
//     is exact for the block kind (linear, post-LN);
//   - single-operator / finite-collection: StableArchitecture when every
//     analytic bound is <= 1 + tol, UnstableArchitecture on any certified
//     violation, Inconclusive otherwise. Finite collections additionally
//     record the unchecked common-fixed-point assumption;
//   - countable: StableArchitecture when the violations stop before the last
//     block, every block past the last violation K0 is analytically
//     <= 1 + tol, and the condensing profile is summable;
//     UnstableArchitecture when a certified violation reaches the final
//     block (no nonexpansive tail exists) or the profile is divergent with
//     at least one certified violation.
StackDiagnosis classify(const std::vector<Block>& blocks, StackMode mode,
                        const StackEvidence& evidence, double tol = 1e-3);

struct DiagnoseOpts {
  StackMode mode = StackMode::countable;
  double tol = 1e-3;
  DomainSpec domain;        // shared by Lip reports and the probe set
  int lip_n = 2;            // composition depth for empirical Lip numbers
  int probe_samples = 32;
  int trajectory_steps = 0;  // > 0 iterates the composed stack from f0
  std::optional<Matrix> f0;  // default: seeded sample in the domain ball
  std::optional<Block> candidate;  // condensing candidate; default identity
  Seed seed{0x4c494d4954415243ULL, 0};
};

// Gathers per-block Lip reports, the condensing profile (countable mode),
// and optionally an orbit of the composed stack, then classifies.
StackDiagnosis diagnose_stack(const std::vector<Block>& blocks, const DiagnoseOpts& opts);

}  // namespace liparch
