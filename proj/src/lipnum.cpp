#include "liparch/lipnum.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

#include "liparch/errors.hpp"
#include "liparch/norms.hpp"
#include "liparch/parallel.hpp"

namespace liparch {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Product that treats a zero factor as absorbing: a constant map composed
// with anything is still constant, so 0 beats inf.
double mul_bound(double a, double b) {
    if (a == 0.0 || b == 0.0) return 0.0;
    return a * b;
}

double jvp_step(const Matrix& x, double h) {
    if (h > 0.0) return h;
    return 1e-5 * (1.0 + frobenius(x));
}

// Seeds for the power-iteration start vectors. Fixed constants: the start
// direction only needs to be generic, not sample-dependent.
constexpr Seed kJacStart{0x4c49504a41433031ull, 0};
constexpr Seed kJacRestart{0x4c49504a41433031ull, 1};

struct JacNormResult {
    double value = 0.0;
    bool converged = false;
};

// Dominant singular value of the finite-difference Jacobian of b at x.
// Forward action is jvp with pinned step h; the adjoint action differences
// the inner products <b(x +- h e_c), u>, which only needs the 2*s*n forward
// evaluations b(x +- h e_c). Those do not depend on u, so they are computed
// once and reused across power steps; the per-step numbers are identical to
// re-differencing every time.
JacNormResult jacobian_norm_at(const Block& b, const Matrix& x, double h,
                               const PowerOpts& opts) {
    const int dim = x.rows * x.cols;
    // cols[c*dim + r]: output coordinate r of d b(x) / d x_c.
    std::vector<double> cols(static_cast<std::size_t>(dim) * dim);
    {
        Matrix xp = x;
        const double inv2h = 1.0 / (2.0 * h);
        for (int c = 0; c < dim; ++c) {
            const double saved = xp.data[static_cast<std::size_t>(c)];
            xp.data[static_cast<std::size_t>(c)] = saved + h;
            const Matrix fp = b.apply(xp);
            xp.data[static_cast<std::size_t>(c)] = saved - h;
            const Matrix fm = b.apply(xp);
            xp.data[static_cast<std::size_t>(c)] = saved;
            double* out = cols.data() + static_cast<std::size_t>(c) * dim;
            for (int r = 0; r < dim; ++r)
                out[r] = (fp.data[static_cast<std::size_t>(r)] -
                          fm.data[static_cast<std::size_t>(r)]) *
                         inv2h;
        }
    }

    const auto run = [&](Seed start_seed) {
        JacNormResult res;
        Rng rng(start_seed);
        Matrix v = gaussian_matrix(rng, x.rows, x.cols);
        double vn = frobenius(v);
        if (vn == 0.0) {
            v = Matrix::zeros(x.rows, x.cols);
            v.data[0] = 1.0;
            vn = 1.0;
        }
        v = scale(v, 1.0 / vn);

        double sigma = 0.0;
        double prev = -1.0;
        for (int it = 0; it < opts.max_iters; ++it) {
            const Matrix u = b.jvp(x, v, h);
            sigma = frobenius(u);
            if (sigma == 0.0) {
                res.converged = true;
                break;
            }
            if (prev >= 0.0 &&
                std::fabs(sigma - prev) <= opts.tol * std::max(sigma, 1e-300)) {
                res.converged = true;
                break;
            }
            prev = sigma;
            // w = J^T u via the cached difference columns.
            Matrix w = Matrix::zeros(x.rows, x.cols);
            const double* cd = cols.data();
            for (int c = 0; c < dim; ++c) {
                double acc = 0.0;
                const double* col = cd + static_cast<std::size_t>(c) * dim;
                for (int r = 0; r < dim; ++r)
                    acc += col[r] * u.data[static_cast<std::size_t>(r)];
                w.data[static_cast<std::size_t>(c)] = acc;
            }
            const double wn = frobenius(w);
            if (wn == 0.0) {
                res.converged = true;
                break;
            }
            v = scale(w, 1.0 / wn);
        }
        res.value = sigma;
        return res;
    };

    JacNormResult first = run(kJacStart);
    if (first.converged) return first;
    JacNormResult second = run(kJacRestart);
    second.value = std::max(first.value, second.value);
    return second;
}

}  // namespace

Matrix DomainSpec::center_for(const Dims& dims) const {
    if (center.rows == 0 && center.cols == 0)
        return Matrix::zeros(dims.s, dims.n);
    if (center.rows != dims.s || center.cols != dims.n)
        throw ValidationError("domain center shape does not match block dims");
    return center;
}

SupJacobianResult empirical_sup_jacobian_info(const Block& b,
                                              const DomainSpec& domain,
                                              Seed seed,
                                              const PowerOpts& opts) {
    if (!(domain.radius > 0.0) || !std::isfinite(domain.radius))
        throw ValidationError("empirical_sup_jacobian needs a finite positive radius");
    if (domain.n_samples < 1)
        throw ValidationError("empirical_sup_jacobian needs n_samples >= 1");

    const Matrix center = domain.center_for(b.dims());
    const int n = domain.n_samples;

    std::vector<double> values(static_cast<std::size_t>(n), -1.0);  // -1: excluded
    std::vector<char> converged(static_cast<std::size_t>(n), 1);

    parallel_for(n, [&](int i) {
        Rng rng(derive(seed, static_cast<std::uint64_t>(i)));
        const Matrix x = add(
            center, sample_frobenius_ball(rng, center.rows, center.cols, domain.radius));
        const double h = jvp_step(x, opts.jvp_h);
        if (b.relu_kink_margin(x) < 10.0 * h) return;  // stays excluded
        const JacNormResult r = jacobian_norm_at(b, x, h, opts);
        values[static_cast<std::size_t>(i)] = r.value;
        converged[static_cast<std::size_t>(i)] = r.converged ? 1 : 0;
    });

    SupJacobianResult out;
    for (int i = 0; i < n; ++i) {
        if (values[static_cast<std::size_t>(i)] < 0.0) {
            ++out.excluded;
            continue;
        }
        ++out.used;
        out.sup = std::max(out.sup, values[static_cast<std::size_t>(i)]);
        out.inf = std::min(out.inf, values[static_cast<std::size_t>(i)]);
        if (!converged[static_cast<std::size_t>(i)]) out.all_converged = false;
    }
    if (out.used == 0)
        throw EstimatorError(
            "empirical_sup_jacobian: every sample fell within the relu kink "
            "exclusion zone");
    return out;
}

double empirical_sup_jacobian(const Block& b, const DomainSpec& domain,
                              Seed seed, const PowerOpts& opts) {
    return empirical_sup_jacobian_info(b, domain, seed, opts).sup;
}

LipSequenceResult empirical_lip_number(const Block& b, int n,
                                       const DomainSpec& domain, Seed seed,
                                       const PowerOpts& opts) {
    if (n < 1) throw ValidationError("empirical_lip_number needs n >= 1");

    std::vector<int> ns;
    for (int m = 1; m <= n; m *= 2) ns.push_back(m);
    if (ns.back() != n) ns.push_back(n);

    LipSequenceResult out;
    for (std::size_t k = 0; k < ns.size(); ++k) {
        const int m = ns[k];
        const Block composed = (m == 1) ? b : Block::repeat(b, m);
        const Seed sm = derive(seed, 1000 + static_cast<std::uint64_t>(m));
        try {
            const SupJacobianResult info =
                empirical_sup_jacobian_info(composed, domain, sm, opts);
            const double value = std::pow(info.sup, 1.0 / static_cast<double>(m));
            out.sequence.emplace_back(m, value);
            out.value = value;
            if (info.excluded > 0) out.flags.push_back("relu-kink-excluded");
            if (!info.all_converged)
                out.flags.push_back("power-iteration-nonconverged");
        } catch (const DivergenceDiagnostic&) {
            // Blowup while composing is itself evidence of Lip > 1.
            out.sequence.emplace_back(m, kInf);
            out.value = kInf;
            out.diverged = true;
            out.flags.push_back("diverged-at-n-" + std::to_string(m));
            break;
        } catch (const EstimatorError&) {
            // Contracting relu blocks drive every composed sample into the
            // kink exclusion zone; the sequence ends where measurability
            // does. At m = 1 there is nothing to report, so propagate.
            if (m == 1) throw;
            out.flags.push_back("kink-saturated-at-n-" + std::to_string(m));
            break;
        }
    }
    return out;
}

AccretivityReport accretivity_margin(const Block& f, const DomainSpec& domain,
                                     Seed seed, const PowerOpts& opts) {
    AccretivityReport rep;
    rep.h_schedule = {1e-2, 1e-3, 1e-4};
    // Same seed for every h: the three estimates must differ only through h,
    // not through the sample set.
    for (double h : rep.h_schedule) {
        const Block th = Block::residual(f, h);
        const double lhat = empirical_sup_jacobian(th, domain, seed, opts);
        rep.raw_margins.push_back((1.0 - lhat) / h);
    }
    const double m1 = rep.raw_margins[0];
    const double m2 = rep.raw_margins[1];
    const double m3 = rep.raw_margins[2];
    const double d1 = m2 - m1;
    const double d2 = m3 - m2;
    const double tiny = 1e-9 * (1.0 + std::fabs(m3));
    if (d1 * d2 < 0.0 && std::min(std::fabs(d1), std::fabs(d2)) > tiny) {
        rep.extrapolated = false;
        rep.margin = m3;  // smallest h, closest to the limit
    } else {
        // One Richardson step for an O(h) error with a ratio-10 schedule:
        // m(h) = m + c h  =>  m = m3 + (m3 - m2) * h3 / (h2 - h3).
        rep.extrapolated = true;
        rep.margin = m3 + (m3 - m2) / 9.0;
    }
    return rep;
}

double image_radius_bound(const Block& b, double B) {
    switch (b.kind()) {
        case BlockKind::linear:
            return mul_bound(B, spectral_norm(b.linear_weight()));
        case BlockKind::mlp2: {
            const double s1 = spectral_norm(b.mlp_w1());
            const double s2 = spectral_norm(b.mlp_w2());
            const ActivationSpec act = activation_spec(b.mlp_activation());
            const double lip = act.lipschitz_constant;
            if (act.zero_at_zero) return mul_bound(B, mul_bound(lip, s1 * s2));
            // sigmoid: the hidden activations live in (0, 1), so both the
            // saturation bound and the affine growth bound hold.
            const double hidden = std::sqrt(
                static_cast<double>(b.dims().s) * b.mlp_w1().cols);
            const double affine = 0.5 * hidden + mul_bound(lip * s1, B);
            return mul_bound(s2, std::min(hidden, affine));
        }
        case BlockKind::layer_norm: {
            const Matrix& g = b.ln_gamma();
            const Matrix& beta = b.ln_beta();
            double gmax = 0.0;
            for (double v : g.data) gmax = std::max(gmax, std::fabs(v));
            const double s = static_cast<double>(b.dims().s);
            const double n = static_cast<double>(b.dims().n);
            return std::sqrt(s) * (gmax * std::sqrt(n) + frobenius(beta));
        }
        case BlockKind::self_attention:
            // Row-stochastic P has ||P||_2 <= sqrt(s).
            return mul_bound(std::sqrt(static_cast<double>(b.dims().s)),
                             mul_bound(B, spectral_norm(b.attn_wv())));
        case BlockKind::multi_head_self_attention: {
            double sq = 0.0;
            for (const AttentionHead& head : b.msa_heads()) {
                const double sv = spectral_norm(head.wv);
                sq += sv * sv;
            }
            return mul_bound(std::sqrt(static_cast<double>(b.dims().s)),
                             mul_bound(B, mul_bound(std::sqrt(sq),
                                                    spectral_norm(b.msa_wo()))));
        }
        case BlockKind::residual:
            return B + std::fabs(b.alpha()) *
                           image_radius_bound(b.children()[0], B);
        case BlockKind::padded:
            return image_radius_bound(b.children()[0], B);
        case BlockKind::pre_ln_transformer: {
            const double a = std::fabs(b.alpha());
            const double r1 = B + a * image_radius_bound(b.pre_ln_f1(), B);
            return r1 + a * image_radius_bound(b.pre_ln_f2(), r1);
        }
        case BlockKind::post_ln_transformer: {
            const auto& ch = b.children();  // [attn, ln1, mlp, ln2]
            const double a = std::fabs(b.alpha());
            const double r1 = B + a * image_radius_bound(ch[0], B);
            const double r2 = image_radius_bound(ch[1], r1);
            const double r3 = r2 + a * image_radius_bound(ch[2], r2);
            return image_radius_bound(ch[3], r3);
        }
        case BlockKind::stack: {
            double r = B;
            for (const Block& child : b.children())
                r = image_radius_bound(child, r);
            return r;
        }
    }
    throw ValidationError("image_radius_bound: unknown block kind");
}

namespace {

double analytic_bound_impl(const Block& b, double B, const AnalyticOpts& opts);

double attention_bound(const Matrix& wq, const Matrix& wk, const Matrix& wv,
                       int width, double B) {
    if (!std::isfinite(B)) return kInf;
    const double sv = spectral_norm(wv);
    const double sk = spectral_norm(wk);
    const double sq = spectral_norm(wq);
    return sv * (1.0 + B * B / std::sqrt(static_cast<double>(width)) * sk * sq);
}

double pre_ln_fallback(const Block& b, double B, const AnalyticOpts& opts) {
    const double a = std::fabs(b.alpha());
    const Block f1 = b.pre_ln_f1();
    const Block f2 = b.pre_ln_f2();
    const double bound1 = 1.0 + a * analytic_bound_impl(f1, B, opts);
    const double r1 = B + a * image_radius_bound(f1, B);
    const double bound2 = 1.0 + a * analytic_bound_impl(f2, r1, opts);
    return mul_bound(bound1, bound2);
}

double analytic_bound_impl(const Block& b, double B, const AnalyticOpts& opts) {
    switch (b.kind()) {
        case BlockKind::linear:
            return spectral_norm(b.linear_weight());
        case BlockKind::mlp2:
            return activation_spec(b.mlp_activation()).lipschitz_constant *
                   spectral_norm(b.mlp_w1()) * spectral_norm(b.mlp_w2());
        case BlockKind::layer_norm: {
            double gmax = 0.0;
            for (double v : b.ln_gamma().data) gmax = std::max(gmax, std::fabs(v));
            return gmax / std::sqrt(b.ln_epsilon());
        }
        case BlockKind::self_attention:
            return attention_bound(b.attn_wq(), b.attn_wk(), b.attn_wv(),
                                   b.dims().n, B);
        case BlockKind::multi_head_self_attention: {
            if (!std::isfinite(B)) return kInf;
            double sq = 0.0;
            for (const AttentionHead& head : b.msa_heads()) {
                const double hb =
                    attention_bound(head.wq, head.wk, head.wv, b.dims().n, B);
                sq += hb * hb;
            }
            return spectral_norm(b.msa_wo()) * std::sqrt(sq);
        }
        case BlockKind::residual:
            return 1.0 + std::fabs(b.alpha()) *
                             analytic_bound_impl(b.children()[0], B, opts);
        case BlockKind::padded:
            return analytic_bound_impl(b.children()[0], B, opts);
        case BlockKind::post_ln_transformer:
            return kInf;
        case BlockKind::pre_ln_transformer: {
            const AccretivityReport m1 = accretivity_margin(
                b.pre_ln_f1(), opts.domain, derive(opts.seed, 1));
            const AccretivityReport m2 = accretivity_margin(
                b.pre_ln_f2(), opts.domain, derive(opts.seed, 2));
            if (m1.margin >= -opts.margin_tol && m2.margin >= -opts.margin_tol)
                return 1.0;
            return pre_ln_fallback(b, B, opts);
        }
        case BlockKind::stack: {
            bool saw_zero = false;
            bool saw_inf = false;
            double prod = 1.0;
            double r = B;
            for (const Block& child : b.children()) {
                const double f = analytic_bound_impl(child, r, opts);
                if (f == 0.0) {
                    // A constant map freezes everything downstream.
                    saw_zero = true;
                    break;
                }
                if (std::isinf(f))
                    saw_inf = true;
                else
                    prod *= f;
                r = image_radius_bound(child, r);
            }
            if (saw_zero) return 0.0;
            if (saw_inf) return kInf;
            return prod;
        }
    }
    throw ValidationError("analytic_lip_bound: unknown block kind");
}

}  // namespace

double analytic_lip_bound(const Block& b, double B, const AnalyticOpts& opts) {
    if (!(B > 0.0)) throw ValidationError("analytic_lip_bound needs B > 0");
    return analytic_bound_impl(b, B, opts);
}

double analytic_lip_bound(const Block& b, double B) {
    AnalyticOpts opts;
    opts.domain.radius = std::isfinite(B) ? B : 10.0;
    return analytic_lip_bound(b, B, opts);
}

LipReport lip_report(const Block& b, int n, const DomainSpec& domain,
                     Seed seed, bool want_inf_jacobian, const PowerOpts& opts) {
    LipReport rep;
    rep.domain_radius = domain.radius;
    rep.samples = domain.n_samples;
    rep.n_used = n;
    rep.flags.push_back("supremum-by-sampling-lower-bound");

    AnalyticOpts aopts;
    aopts.domain = domain;
    aopts.seed = derive(seed, 3);
    rep.analytic_upper = analytic_lip_bound(b, domain.radius, aopts);

    const SupJacobianResult info =
        empirical_sup_jacobian_info(b, domain, derive(seed, 1), opts);
    rep.empirical_sup_jacobian = info.sup;
    if (want_inf_jacobian) rep.empirical_inf_jacobian = info.inf;
    if (info.excluded > 0) rep.flags.push_back("relu-kink-excluded");
    if (!info.all_converged) rep.flags.push_back("power-iteration-nonconverged");

    LipSequenceResult seq =
        empirical_lip_number(b, n, domain, derive(seed, 2), opts);
    rep.empirical_lip = seq.value;
    rep.lip_sequence = std::move(seq.sequence);
    for (std::string& f : seq.flags) {
        if (std::find(rep.flags.begin(), rep.flags.end(), f) == rep.flags.end())
            rep.flags.push_back(std::move(f));
    }
    return rep;
}

}  // namespace liparch
