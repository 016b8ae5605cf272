#pragma once

#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "liparch/block.hpp"
#include "liparch/matrix.hpp"

namespace liparch {

// Sampling domain for the empirical estimators: a Frobenius ball of
// `radius` around `center` (origin when `center` is empty).
struct DomainSpec {
    double radius = 10.0;
    int n_samples = 64;
    Matrix center;  // empty => origin

    Matrix center_for(const Dims& dims) const;
};

// Knobs for the per-sample power iteration on v -> J^T J v.
struct PowerOpts {
    double tol = 1e-10;
    int max_iters = 1000;
    double jvp_h = 0.0;  // <= 0 => h = 1e-5 * (1 + ||x||_F)
};

struct LipReport {
    double analytic_upper = std::numeric_limits<double>::infinity();
    double empirical_sup_jacobian = 0.0;
    double empirical_lip = 0.0;
    int n_used = 1;
    int samples = 0;
    double domain_radius = 0.0;
    // (n, [L(T^n)]^{1/n}) for n = 1, 2, 4, ... as produced by
    // empirical_lip_number.
    std::vector<std::pair<int, double>> lip_sequence;
    std::vector<std::string> flags;
    // glb constant estimate; filled only when requested.
    double empirical_inf_jacobian = std::numeric_limits<double>::quiet_NaN();
};

struct AccretivityReport {
    double margin = 0.0;
    std::vector<double> h_schedule;
    std::vector<double> raw_margins;  // (1 - L_hat(I + hF)) / h per h
    bool extrapolated = false;
};

// Options for analytic_lip_bound when it needs empirical accretivity
// margins (PreLN blocks).
struct AnalyticOpts {
    double margin_tol = 1e-3;
    DomainSpec domain;
    Seed seed{0x414e414c59544943ull, 0};
};

// Closed-form upper bound on Lip for the block's kind; +inf is a value.
// B is the domain radius the bound is valid on (attention kinds need it
// finite). Stacks propagate an image-radius bound through the blocks.
double analytic_lip_bound(const Block& b, double B);
double analytic_lip_bound(const Block& b, double B, const AnalyticOpts& opts);

// Upper bound on sup_{||X||_F <= B} ||b(X)||_F, used to propagate domain
// radii through stacks. May be +inf.
double image_radius_bound(const Block& b, double B);

struct SupJacobianResult {
    double sup = 0.0;
    double inf = std::numeric_limits<double>::infinity();
    int used = 0;
    int excluded = 0;
    bool all_converged = true;
};

// Max (and min) over sampled X of the dominant singular value of the
// finite-difference Jacobian of b at X. Deterministic given the seed;
// samples near ReLU kinks are excluded and counted.
SupJacobianResult empirical_sup_jacobian_info(const Block& b,
                                              const DomainSpec& domain,
                                              Seed seed,
                                              const PowerOpts& opts = {});
double empirical_sup_jacobian(const Block& b, const DomainSpec& domain,
                              Seed seed, const PowerOpts& opts = {});

struct LipSequenceResult {
    double value = 0.0;  // [L_hat(T^n)]^{1/n} at the final n
    std::vector<std::pair<int, double>> sequence;
    std::vector<std::string> flags;
    bool diverged = false;
};

// [L_hat(T^n)]^{1/n} via the n-fold composed block, with the sequence for
// n in {1, 2, 4, ...} up to n. Composition overflow is reported as a
// divergence flag with value +inf, not an exception. If a composed power
// loses every sample to the relu kink exclusion the sequence is truncated
// at the last measurable n and flagged.
LipSequenceResult empirical_lip_number(const Block& b, int n,
                                       const DomainSpec& domain, Seed seed,
                                       const PowerOpts& opts = {});

// Estimate of m(-F) = lim_{h->0+} (1 - L(I + hF))/h over a fixed
// decreasing h-schedule with one Richardson step when the sequence is
// monotone enough to trust.
AccretivityReport accretivity_margin(const Block& f, const DomainSpec& domain,
                                     Seed seed, const PowerOpts& opts = {});

// Bundles the analytic bound and both empirical estimators.
LipReport lip_report(const Block& b, int n, const DomainSpec& domain,
                     Seed seed, bool want_inf_jacobian = false,
                     const PowerOpts& opts = {});

}  // namespace liparch
