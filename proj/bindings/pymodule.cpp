#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "liparch/block.hpp"
#include "liparch/errors.hpp"
#include "liparch/limitarch.hpp"
#include "liparch/lipnum.hpp"
#include "liparch/matrix.hpp"
#include "liparch/norms.hpp"
#include "liparch/probe.hpp"
#include "liparch/scaling.hpp"
#include "liparch/weightfile.hpp"

namespace py = pybind11;
using namespace liparch;

namespace {

using Rows = std::vector<std::vector<double>>;

Matrix mat_from(const Rows& rows) {
  if (rows.empty()) throw ValidationError("matrix needs at least one row");
  const int r = static_cast<int>(rows.size());
  const int c = static_cast<int>(rows.front().size());
  if (c == 0) throw ValidationError("matrix needs at least one column");
  Matrix m(r, c);
  for (int i = 0; i < r; ++i) {
    if (static_cast<int>(rows[static_cast<std::size_t>(i)].size()) != c)
      throw ValidationError("matrix rows must all have the same length");
    for (int j = 0; j < c; ++j) m.at(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return m;
}

Rows mat_to(const Matrix& m) {
  Rows rows(static_cast<std::size_t>(m.rows));
  for (int i = 0; i < m.rows; ++i) {
    rows[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(m.cols));
    for (int j = 0; j < m.cols; ++j) rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m.at(i, j);
  }
  return rows;
}

Matrix row_vector(const std::vector<double>& values) {
  Matrix m(1, static_cast<int>(values.size()));
  for (std::size_t j = 0; j < values.size(); ++j) m.at(0, static_cast<int>(j)) = values[j];
  return m;
}

Seed seed_from(const std::pair<std::uint64_t, std::uint64_t>& s) {
  return Seed{s.first, s.second};
}

DomainSpec domain_from(double radius, int n_samples) {
  DomainSpec d;
  d.radius = radius;
  d.n_samples = n_samples;
  return d;
}

py::dict fit_dict(const ScalingFit& fit) {
  py::dict d;
  d["law"] = fit.law;
  d["parameter"] = fit.parameter;
  d["prefactor"] = fit.prefactor;
  d["r_squared"] = fit.r_squared;
  d["points"] = fit.series.size();
  d["flags"] = fit.flags;
  return d;
}

py::dict lip_dict(const LipReport& r) {
  py::dict d;
  d["analytic_upper"] = r.analytic_upper;
  d["empirical_sup_jacobian"] = r.empirical_sup_jacobian;
  d["empirical_lip"] = r.empirical_lip;
  d["n_used"] = r.n_used;
  d["samples"] = r.samples;
  d["domain_radius"] = r.domain_radius;
  d["lip_sequence"] = r.lip_sequence;
  d["flags"] = r.flags;
  return d;
}

StackMode mode_from(const std::string& name) {
  if (name == "single_operator") return StackMode::single_operator;
  if (name == "finite_collection") return StackMode::finite_collection;
  if (name == "countable") return StackMode::countable;
  throw ValidationError("unknown stack mode '" + name + "'");
}

py::dict diagnosis_dict(const StackDiagnosis& diag) {
  py::dict d;
  d["classification"] = std::string(to_string(diag.classification));
  d["k0_violations"] = diag.k0_violations;
  py::list per;
  for (const LipReport& r : diag.per_block_lip) per.append(lip_dict(r));
  d["per_block_lip"] = std::move(per);
  if (diag.profile) {
    py::dict p;
    p["verdict"] = std::string(to_string(diag.profile->summable_verdict));
    p["candidate"] = diag.profile->candidate_kind;
    p["epsilons"] = diag.profile->epsilons;
    py::dict fitd;
    fitd["model"] = diag.profile->tail_fit.model;
    fitd["parameter"] = diag.profile->tail_fit.parameter;
    fitd["prefactor"] = diag.profile->tail_fit.prefactor;
    fitd["r_squared"] = diag.profile->tail_fit.r_squared;
    p["fit"] = std::move(fitd);
    d["profile"] = std::move(p);
  } else {
    d["profile"] = py::none();
  }
  py::dict t;
  t["steps"] = diag.trajectory_summary.steps;
  t["final_delta"] = diag.trajectory_summary.final_delta;
  t["max_delta_last_tenth"] = diag.trajectory_summary.max_delta_last_tenth;
  if (diag.trajectory_summary.diverged_at)
    t["diverged_at"] = *diag.trajectory_summary.diverged_at;
  else
    t["diverged_at"] = py::none();
  d["trajectory"] = std::move(t);
  d["assumptions"] = diag.assumptions;
  return d;
}

CoveringSpec covering_spec(const std::vector<std::vector<double>>& layer_bounds,
                           double l_sigma, double b_z,
                           std::optional<std::pair<double, double>> decay,
                           int truncation_k, double tail_tolerance,
                           std::optional<double> gamma) {
  CoveringSpec spec;
  for (const auto& row : layer_bounds) {
    if (row.empty() || row.size() > 3)
      throw ValidationError("layer_bounds rows must list 1 to 3 bounds");
    std::array<double, 3> b{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < row.size(); ++i) b[i] = row[i];
    spec.layer_bounds.push_back(b);
  }
  spec.l_sigma = l_sigma;
  spec.b_z = b_z;
  spec.decay = decay;
  spec.truncation_k = truncation_k;
  spec.tail_tolerance = tail_tolerance;
  spec.gamma = gamma;
  return spec;
}

py::dict covering_dict(const CoveringResult& res) {
  py::dict d;
  d["c_f"] = res.c_f;
  d["tail_bound"] = res.tail_bound;
  d["per_layer_terms"] = res.per_layer_terms;
  d["gammas"] = res.gammas;
  d["flags"] = res.flags;
  return d;
}

constexpr char kSeedDoc[] = "(root, stream) pair feeding the deterministic generator";

}  // namespace

PYBIND11_MODULE(_liparch, m) {
  m.doc() = "Lipschitz architecture toolkit: Lip numbers, limit diagnosis, "
            "scaling laws, and condensing probes over small dense blocks.";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<EstimatorError>(m, "EstimatorError", PyExc_RuntimeError);
  py::register_exception<DivergenceDiagnostic>(m, "DivergenceError", PyExc_RuntimeError);

  py::class_<Block>(m, "Block", "Immutable operator on s-by-n states")
      .def("apply",
           [](const Block& b, const Rows& x) { return mat_to(b.apply(mat_from(x))); },
           py::arg("x"))
      .def("describe", &Block::describe)
      .def_property_readonly("dims",
                             [](const Block& b) {
                               return std::make_pair(b.dims().s, b.dims().n);
                             })
      .def("__repr__",
           [](const Block& b) { return "<liparch.Block " + b.describe() + ">"; });

  m.def("identity",
        [](int s, int n) { return Block::identity(Dims{s, n}); },
        py::arg("s"), py::arg("n"));
  m.def("linear",
        [](const Rows& w, int s) { return Block::linear(Dims{s, static_cast<int>(w.size())}, mat_from(w)); },
        py::arg("w"), py::arg("s") = 1, "State map X -> X @ w");
  m.def("layer_norm",
        [](const std::vector<double>& gamma, const std::vector<double>& beta,
           double epsilon, int s) {
          return Block::layer_norm(Dims{s, static_cast<int>(gamma.size())},
                                   row_vector(gamma), row_vector(beta), epsilon);
        },
        py::arg("gamma"), py::arg("beta"), py::arg("epsilon") = 1e-5, py::arg("s") = 1);
  m.def("mlp2",
        [](const Rows& w1, const Rows& w2, const std::string& activation, int s) {
          return Block::mlp2(Dims{s, static_cast<int>(w1.size())}, mat_from(w1),
                             mat_from(w2), activation_from_string(activation));
        },
        py::arg("w1"), py::arg("w2"), py::arg("activation") = "relu", py::arg("s") = 1);
  m.def("self_attention",
        [](const Rows& wq, const Rows& wk, const Rows& wv, int s) {
          return Block::self_attention(Dims{s, static_cast<int>(wq.size())}, mat_from(wq),
                                       mat_from(wk), mat_from(wv));
        },
        py::arg("wq"), py::arg("wk"), py::arg("wv"), py::arg("s"));
  m.def("multi_head_self_attention",
        [](const std::vector<std::tuple<Rows, Rows, Rows>>& heads, const Rows& wo, int s) {
          std::vector<AttentionHead> hs;
          for (const auto& [wq, wk, wv] : heads)
            hs.push_back(AttentionHead{mat_from(wq), mat_from(wk), mat_from(wv)});
          return Block::multi_head_self_attention(
              Dims{s, static_cast<int>(wo.size())}, std::move(hs), mat_from(wo));
        },
        py::arg("heads"), py::arg("wo"), py::arg("s"));
  m.def("residual",
        [](const Block& inner, double alpha) { return Block::residual(inner, alpha); },
        py::arg("inner"), py::arg("alpha") = 1.0, "x + alpha * inner(x)");
  m.def("pre_ln_transformer",
        [](const Block& ln1, const Block& mlp, const Block& ln2, const Block& attn,
           double alpha) {
          return Block::pre_ln_transformer(ln1, mlp, ln2, attn, alpha);
        },
        py::arg("ln1"), py::arg("mlp"), py::arg("ln2"), py::arg("attn"),
        py::arg("alpha") = 1.0);
  m.def("post_ln_transformer",
        [](const Block& attn, const Block& ln1, const Block& mlp, const Block& ln2,
           double alpha) {
          return Block::post_ln_transformer(attn, ln1, mlp, ln2, alpha);
        },
        py::arg("attn"), py::arg("ln1"), py::arg("mlp"), py::arg("ln2"),
        py::arg("alpha") = 1.0);
  m.def("stack",
        [](std::vector<Block> children) { return Block::stack(std::move(children)); },
        py::arg("children"));

  m.def("analytic_lip_bound",
        [](const Block& b, double radius) { return analytic_lip_bound(b, radius); },
        py::arg("block"), py::arg("radius") = 10.0,
        "Closed-form upper bound on the local Lipschitz constant; may be inf");
  m.def("empirical_sup_jacobian",
        [](const Block& b, double radius, int n_samples,
           const std::pair<std::uint64_t, std::uint64_t>& seed) {
          return empirical_sup_jacobian(b, domain_from(radius, n_samples), seed_from(seed));
        },
        py::arg("block"), py::arg("radius") = 10.0, py::arg("n_samples") = 64,
        py::arg("seed") = std::make_pair(std::uint64_t{1}, std::uint64_t{0}), kSeedDoc);
  m.def("lip_report",
        [](const Block& b, int n, double radius, int n_samples,
           const std::pair<std::uint64_t, std::uint64_t>& seed) {
          return lip_dict(lip_report(b, n, domain_from(radius, n_samples), seed_from(seed)));
        },
        py::arg("block"), py::arg("n") = 2, py::arg("radius") = 10.0,
        py::arg("n_samples") = 64,
        py::arg("seed") = std::make_pair(std::uint64_t{1}, std::uint64_t{0}));
  m.def("accretivity_margin",
        [](const Block& f, double radius, int n_samples,
           const std::pair<std::uint64_t, std::uint64_t>& seed) {
          const AccretivityReport r =
              accretivity_margin(f, domain_from(radius, n_samples), seed_from(seed));
          py::dict d;
          d["margin"] = r.margin;
          d["h_schedule"] = r.h_schedule;
          d["raw_margins"] = r.raw_margins;
          d["extrapolated"] = r.extrapolated;
          return d;
        },
        py::arg("block"), py::arg("radius") = 10.0, py::arg("n_samples") = 64,
        py::arg("seed") = std::make_pair(std::uint64_t{1}, std::uint64_t{0}));

  m.def("diagnose_stack",
        [](const std::vector<Block>& blocks, const std::string& mode, double tol,
           double radius, int n_samples, int lip_n, int probe_samples,
           int trajectory_steps, const std::pair<std::uint64_t, std::uint64_t>& seed) {
          DiagnoseOpts opts;
          opts.mode = mode_from(mode);
          opts.tol = tol;
          opts.domain = domain_from(radius, n_samples);
          opts.lip_n = lip_n;
          opts.probe_samples = probe_samples;
          opts.trajectory_steps = trajectory_steps;
          opts.seed = seed_from(seed);
          return diagnosis_dict(diagnose_stack(blocks, opts));
        },
        py::arg("blocks"), py::arg("mode") = "countable", py::arg("tol") = 1e-3,
        py::arg("radius") = 10.0, py::arg("n_samples") = 16, py::arg("lip_n") = 2,
        py::arg("probe_samples") = 32, py::arg("trajectory_steps") = 0,
        py::arg("seed") = std::make_pair(std::uint64_t{1}, std::uint64_t{0}),
        "Classify a block stack as a limit architecture");

  m.def("gd_rate_experiment",
        [](double mu, double g, int dim, int k,
           const std::pair<std::uint64_t, std::uint64_t>& seed) {
          return fit_dict(gd_rate_experiment(mu, g, dim, k, seed_from(seed)));
        },
        py::arg("mu"), py::arg("g"), py::arg("dim") = 8, py::arg("k") = 500,
        py::arg("seed") = std::make_pair(std::uint64_t{1}, std::uint64_t{0}));
  m.def("model_size_experiment",
        [](const Block& f, const Rows& f0, int kmax, double alpha) {
          ModelSizeOpts opts;
          opts.alpha = alpha;
          const ModelSizeResult res = model_size_experiment(f, mat_from(f0), kmax, opts);
          py::dict d;
          d["residuals"] = res.residuals;
          d["bound_ok"] = res.bound_ok;
          d["first_violation"] = res.first_violation;
          d["gamma"] = res.gamma;
          d["dist0"] = res.dist0;
          d["fit"] = fit_dict(res.fit);
          d["assumptions"] = res.assumptions;
          return d;
        },
        py::arg("f"), py::arg("f0"), py::arg("kmax") = 1000, py::arg("alpha") = 0.5);
  m.def("data_size_experiment",
        [](const std::vector<int>& ns, int trials, double g, const std::string& dist,
           const std::pair<std::uint64_t, std::uint64_t>& seed) {
          LossDistribution d;
          if (dist == "uniform") d = LossDistribution::uniform;
          else if (dist == "two_point") d = LossDistribution::two_point;
          else if (dist == "constant") d = LossDistribution::constant;
          else throw ValidationError("unknown distribution '" + dist + "'");
          return fit_dict(data_size_experiment(ns, trials, g, d, seed_from(seed)));
        },
        py::arg("ns"), py::arg("trials") = 100, py::arg("g") = 1.0,
        py::arg("distribution") = "uniform",
        py::arg("seed") = std::make_pair(std::uint64_t{1}, std::uint64_t{0}));
  m.def("mlp_covering_constant",
        [](const std::vector<std::vector<double>>& layer_bounds, double l_sigma, double b_z,
           std::optional<double> gamma, int truncation_k, double tail_tolerance) {
          return covering_dict(mlp_covering_constant(covering_spec(
              layer_bounds, l_sigma, b_z, std::nullopt, truncation_k, tail_tolerance,
              gamma)));
        },
        py::arg("layer_bounds"), py::arg("l_sigma") = 1.0, py::arg("b_z") = 1.0,
        py::arg("gamma") = std::nullopt, py::arg("truncation_k") = 200,
        py::arg("tail_tolerance") = 1e-9);
  m.def("transformer_covering_constant",
        [](const std::vector<std::vector<double>>& layer_bounds,
           std::optional<std::pair<double, double>> decay, double l_sigma, int truncation_k,
           double tail_tolerance) {
          return covering_dict(transformer_covering_constant(covering_spec(
              layer_bounds, l_sigma, 1.0, decay, truncation_k, tail_tolerance,
              std::nullopt)));
        },
        py::arg("layer_bounds") = std::vector<std::vector<double>>{},
        py::arg("decay") = std::nullopt, py::arg("l_sigma") = 1.0,
        py::arg("truncation_k") = 200, py::arg("tail_tolerance") = 1e-9,
        "decay=(c_w, rho) generates layer bounds c_w * rho^(k+1)");

  m.def("run_probe",
        [](const std::vector<Block>& layers, const std::vector<double>& relative_depths,
           int samples, double radius, const std::pair<std::uint64_t, std::uint64_t>& seed) {
          ProbeConfig config;
          if (!relative_depths.empty()) config.relative_depths = relative_depths;
          config.generated_samples = samples;
          config.sample_radius = radius;
          const ProbeResult res = run_probe(layers, config, seed_from(seed));
          py::dict d;
          d["depths"] = res.depths;
          py::list cells;
          for (const ProbeCell& cell : res.cells) {
            py::dict cd;
            cd["k"] = cell.k;
            cd["i"] = cell.i;
            cd["mean_d"] = cell.mean_d;
            cd["var_d"] = cell.var_d;
            cd["mean_s"] = cell.mean_s;
            cd["var_s"] = cell.var_s;
            cd["sample_count"] = cell.sample_count;
            cd["flags"] = cell.flags;
            cells.append(std::move(cd));
          }
          d["cells"] = std::move(cells);
          d["csv"] = probe_csv(res);
          return d;
        },
        py::arg("layers"), py::arg("relative_depths") = std::vector<double>{},
        py::arg("samples") = 8, py::arg("radius") = 10.0,
        py::arg("seed") = std::make_pair(std::uint64_t{1}, std::uint64_t{0}),
        "Inject hidden states at every layer and measure identity deviation");
  m.def("spearman_rank_correlation", &spearman_rank_correlation, py::arg("xs"),
        py::arg("ys"));

  m.def("save_weights",
        [](const std::string& path, const std::vector<Block>& blocks) {
          save_weights(path, model_from_blocks(blocks));
        },
        py::arg("path"), py::arg("blocks"));
  m.def("load_blocks",
        [](const std::string& path) { return build_blocks(load_weights(path)); },
        py::arg("path"));
  m.def("validate_weights",
        [](const std::string& path) {
          const auto report = validate_weights(path);
          py::dict d;
          d["valid"] = report.at("valid").get<bool>();
          d["tensors"] = report.at("tensors").get<std::size_t>();
          d["blocks"] = report.at("blocks").get<std::size_t>();
          d["payload_bytes"] = report.at("payload_bytes").get<std::uint64_t>();
          d["kinds"] = report.at("kinds").get<std::vector<std::string>>();
          return d;
        },
        py::arg("path"));
}
