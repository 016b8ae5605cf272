#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "liparch/csv.hpp"
#include "liparch/errors.hpp"
#include "liparch/json_io.hpp"
#include "liparch/limitarch.hpp"
#include "liparch/lipnum.hpp"
#include "liparch/probe.hpp"
#include "liparch/scaling.hpp"
#include "liparch/weightfile.hpp"

using namespace liparch;

namespace {

constexpr const char* kUsage =
    "usage: liparch lip|stack|limit|scaling|covering|probe --config <file>"
    " [--seed N] [--out DIR]\n"
    "       liparch scaling --experiment gd --mu M --G G --K K [--dim D]"
    " [--seed N] [--out DIR]\n";

struct Args {
  std::string command;
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  json direct = json::object();  // scaling flags given on the command line
};

bool is_command(const std::string& s) {
  return s == "lip" || s == "stack" || s == "limit" || s == "scaling" ||
         s == "covering" || s == "probe";
}

Args parse_args(int argc, char** argv) {
  if (argc < 2) throw ValidationError(std::string("missing command\n") + kUsage);
  Args args;
  args.command = argv[1];
  if (!is_command(args.command))
    throw ValidationError("unknown command '" + args.command + "'\n" + kUsage);
  for (int i = 2; i < argc; ++i) {
    const std::string flag = argv[i];
    auto next = [&]() -> std::string {
      if (i + 1 >= argc) throw ValidationError(flag + " needs a value");
      return argv[++i];
    };
    if (flag == "--config") {
      args.config_path = next();
    } else if (flag == "--seed") {
      args.seed = std::stoull(next());
    } else if (flag == "--out") {
      args.out_dir = next();
    } else if (args.command == "scaling" && flag == "--experiment") {
      args.direct["experiment"] = next();
    } else if (args.command == "scaling" &&
               (flag == "--mu" || flag == "--G" || flag == "--K" || flag == "--dim" ||
                flag == "--trials" || flag == "--alpha" || flag == "--kmax")) {
      const std::string key = flag.substr(2);
      const double v = std::stod(next());
      if (flag == "--K" || flag == "--dim" || flag == "--trials" || flag == "--kmax")
        args.direct[key] = static_cast<int>(v);
      else
        args.direct[key] = v;
    } else {
      throw ValidationError("unknown flag '" + flag + "'\n" + kUsage);
    }
  }
  return args;
}

// Finite values as numbers; infinities and NaN as strings, since JSON has
// no literal for them and a silent null would hide the finding.
json num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

std::string brief(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct Ctx {
  json config;
  Seed seed{1, 0};
  std::filesystem::path out = ".";

  std::string artifact(const std::string& name) const { return (out / name).string(); }
};

Ctx make_ctx(const Args& args) {
  Ctx ctx;
  if (args.config_path) ctx.config = parse_json_file(*args.config_path);
  if (!ctx.config.is_null() && !ctx.config.is_object())
    throw ValidationError("config must be a JSON object");
  if (ctx.config.is_null()) ctx.config = json::object();
  for (const auto& [k, v] : args.direct.items()) ctx.config[k] = v;

  if (ctx.config.contains("command")) {
    if (ctx.config.at("command") != args.command)
      throw ValidationError("config command does not match the subcommand");
    ctx.config.erase("command");
  }
  if (ctx.config.contains("seed")) {
    const json& s = ctx.config.at("seed");
    if (!s.is_array() || s.size() != 2)
      throw ValidationError("config seed must be [root, stream]");
    ctx.seed = Seed{s.at(0).get<std::uint64_t>(), s.at(1).get<std::uint64_t>()};
    ctx.config.erase("seed");
  }
  if (args.seed) ctx.seed = Seed{*args.seed, 0};
  if (ctx.config.contains("output_dir")) {
    ctx.out = ctx.config.at("output_dir").get<std::string>();
    ctx.config.erase("output_dir");
  }
  if (args.out_dir) ctx.out = *args.out_dir;
  std::filesystem::create_directories(ctx.out);
  return ctx;
}

DomainSpec domain_from(const json& config) {
  DomainSpec d;
  d.radius = config.value("radius", 10.0);
  d.n_samples = config.value("n_samples", 64);
  if (!(d.radius > 0.0)) throw ValidationError("radius must be positive");
  if (d.n_samples < 1) throw ValidationError("n_samples must be >= 1");
  return d;
}

std::vector<Block> blocks_from(const json& config) {
  if (!config.contains("weights") || !config.at("weights").is_string())
    throw ValidationError("config needs a 'weights' path");
  std::vector<Block> blocks =
      build_blocks(load_weights(config.at("weights").get<std::string>()));
  if (blocks.empty()) throw ValidationError("weight file describes no blocks");
  return blocks;
}

json lip_report_json(const LipReport& r) {
  json j;
  j["analytic_upper"] = num(r.analytic_upper);
  j["empirical_sup_jacobian"] = num(r.empirical_sup_jacobian);
  j["empirical_lip"] = num(r.empirical_lip);
  j["n_used"] = r.n_used;
  j["samples"] = r.samples;
  j["domain_radius"] = r.domain_radius;
  json seq = json::array();
  for (const auto& [n, v] : r.lip_sequence) seq.push_back({{"n", n}, {"value", num(v)}});
  j["lip_sequence"] = std::move(seq);
  j["flags"] = r.flags;
  return j;
}

json divergence_json(const DivergenceDiagnostic& e) {
  json j;
  j["divergence"] = {{"block_path", e.block_path()}, {"message", e.what()}};
  return j;
}

int cmd_lip(const Ctx& ctx) {
  reject_unknown_keys(ctx.config, {"weights", "n", "radius", "n_samples"}, "lip config");
  std::vector<Block> blocks = blocks_from(ctx.config);
  const Block target = blocks.size() == 1 ? blocks.front() : Block::stack(std::move(blocks));
  const int n = ctx.config.value("n", 2);
  try {
    const LipReport r = lip_report(target, n, domain_from(ctx.config), ctx.seed);
    write_json_atomic(ctx.artifact("lip_report.json"), lip_report_json(r));
    std::cout << "lip: analytic_upper=" << brief(r.analytic_upper)
              << " empirical_sup_jacobian=" << brief(r.empirical_sup_jacobian)
              << " empirical_lip=" << brief(r.empirical_lip) << " n=" << r.n_used << "\n";
  } catch (const DivergenceDiagnostic& e) {
    write_json_atomic(ctx.artifact("lip_report.json"), divergence_json(e));
    std::cout << "lip: divergence finding at " << e.block_path() << "\n";
  }
  return 0;
}

int cmd_stack(const Ctx& ctx) {
  reject_unknown_keys(ctx.config, {"weights", "n", "radius", "n_samples", "tol"},
                      "stack config");
  const std::vector<Block> blocks = blocks_from(ctx.config);
  const int n = ctx.config.value("n", 2);
  const double tol = ctx.config.value("tol", 1e-3);
  const DomainSpec domain = domain_from(ctx.config);

  json out;
  out["blocks"] = json::array();
  json violations = json::array();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    json entry;
    entry["index"] = i;
    entry["kind"] = blocks[i].describe();
    try {
      const LipReport r =
          lip_report(blocks[i], n, domain, derive(ctx.seed, 100 + i));
      entry["report"] = lip_report_json(r);
      const bool violated = r.analytic_upper > 1.0 + tol || r.empirical_lip > 1.0 + tol;
      if (violated) violations.push_back(i);
      std::cout << "block[" << i << "] " << blocks[i].describe()
                << ": analytic=" << brief(r.analytic_upper)
                << " sup_jacobian=" << brief(r.empirical_sup_jacobian)
                << " lip=" << brief(r.empirical_lip) << (violated ? " violation" : "")
                << "\n";
    } catch (const DivergenceDiagnostic& e) {
      entry["report"] = divergence_json(e);
      violations.push_back(i);
      std::cout << "block[" << i << "] " << blocks[i].describe()
                << ": divergence finding at " << e.block_path() << "\n";
    }
    out["blocks"].push_back(std::move(entry));
  }
  out["violations"] = std::move(violations);
  out["tol"] = tol;
  write_json_atomic(ctx.artifact("stack_report.json"), out);
  return 0;
}

StackMode mode_from(const std::string& s) {
  if (s == "single_operator") return StackMode::single_operator;
  if (s == "finite_collection") return StackMode::finite_collection;
  if (s == "countable") return StackMode::countable;
  throw ValidationError("unknown stack mode '" + s + "'");
}

int cmd_limit(const Ctx& ctx) {
  reject_unknown_keys(ctx.config,
                      {"weights", "mode", "tol", "lip_n", "probe_samples",
                       "trajectory_steps", "radius", "n_samples", "candidate_weights"},
                      "limit config");
  const std::vector<Block> blocks = blocks_from(ctx.config);
  DiagnoseOpts opts;
  opts.mode = mode_from(ctx.config.value("mode", "countable"));
  opts.tol = ctx.config.value("tol", 1e-3);
  opts.lip_n = ctx.config.value("lip_n", 2);
  opts.probe_samples = ctx.config.value("probe_samples", 32);
  opts.trajectory_steps = ctx.config.value("trajectory_steps", 0);
  opts.domain = domain_from(ctx.config);
  opts.seed = ctx.seed;
  if (ctx.config.contains("candidate_weights")) {
    std::vector<Block> cand =
        build_blocks(load_weights(ctx.config.at("candidate_weights").get<std::string>()));
    opts.candidate = cand.size() == 1 ? cand.front() : Block::stack(std::move(cand));
  }

  try {
    const StackDiagnosis d = diagnose_stack(blocks, opts);
    json j;
    j["classification"] = to_string(d.classification);
    j["mode"] = to_string(opts.mode);
    j["tol"] = opts.tol;
    j["k0_violations"] = d.k0_violations;
    json per = json::array();
    for (const LipReport& r : d.per_block_lip) per.push_back(lip_report_json(r));
    j["per_block_lip"] = std::move(per);
    if (d.profile) {
      json p;
      p["verdict"] = to_string(d.profile->summable_verdict);
      p["candidate"] = d.profile->candidate_kind;
      p["fit"] = {{"model", d.profile->tail_fit.model},
                  {"parameter", num(d.profile->tail_fit.parameter)},
                  {"prefactor", num(d.profile->tail_fit.prefactor)},
                  {"r_squared", num(d.profile->tail_fit.r_squared)}};
      json eps = json::array();
      for (double e : d.profile->epsilons) eps.push_back(num(e));
      p["epsilons"] = std::move(eps);
      j["profile"] = std::move(p);
    }
    json t;
    t["steps"] = d.trajectory_summary.steps;
    t["final_delta"] = num(d.trajectory_summary.final_delta);
    t["max_delta_last_tenth"] = num(d.trajectory_summary.max_delta_last_tenth);
    if (d.trajectory_summary.diverged_at)
      t["diverged_at"] = *d.trajectory_summary.diverged_at;
    j["trajectory"] = std::move(t);
    j["assumptions"] = d.assumptions;
    write_json_atomic(ctx.artifact("limit_diagnosis.json"), j);

    std::cout << "limit: " << to_string(d.classification) << " (mode="
              << to_string(opts.mode) << ", lip_violations=" << d.k0_violations.size();
    if (d.profile)
      std::cout << ", profile=" << to_string(d.profile->summable_verdict);
    if (d.trajectory_summary.diverged_at)
      std::cout << ", trajectory diverged at step " << *d.trajectory_summary.diverged_at;
    std::cout << ")\n";
  } catch (const DivergenceDiagnostic& e) {
    write_json_atomic(ctx.artifact("limit_diagnosis.json"), divergence_json(e));
    std::cout << "limit: divergence finding at " << e.block_path() << "\n";
  }
  return 0;
}

void write_fit_artifacts(const Ctx& ctx, const std::string& stem, const ScalingFit& fit) {
  write_text_atomic(ctx.artifact(stem + ".csv"), fit_csv(fit));
  write_json_atomic(ctx.artifact(stem + ".json"), fit_summary_json(fit));
}

int cmd_scaling(const Ctx& ctx) {
  if (!ctx.config.contains("experiment"))
    throw ValidationError("scaling config needs an 'experiment'");
  const std::string experiment = ctx.config.at("experiment").get<std::string>();

  if (experiment == "gd") {
    reject_unknown_keys(ctx.config, {"experiment", "mu", "G", "K", "dim"}, "gd config");
    const ScalingFit fit =
        gd_rate_experiment(ctx.config.value("mu", 1.0), ctx.config.value("G", 10.0),
                           ctx.config.value("dim", 8), ctx.config.value("K", 500), ctx.seed);
    write_fit_artifacts(ctx, "scaling_gd", fit);
    std::cout << "scaling gd: parameter=" << brief(fit.parameter)
              << " prefactor=" << brief(fit.prefactor)
              << " r_squared=" << brief(fit.r_squared) << "\n";
    return 0;
  }
  if (experiment == "model_size") {
    reject_unknown_keys(ctx.config,
                        {"experiment", "weights", "alpha", "kmax", "f0_radius",
                         "radius", "n_samples"},
                        "model_size config");
    std::vector<Block> blocks = blocks_from(ctx.config);
    const Block f = blocks.size() == 1 ? blocks.front() : Block::stack(std::move(blocks));
    ModelSizeOpts opts;
    opts.alpha = ctx.config.value("alpha", 0.5);
    opts.domain = domain_from(ctx.config);
    opts.seed = ctx.seed;
    Rng rng(derive(ctx.seed, 17));
    const Matrix f0 = sample_frobenius_ball(rng, f.dims().s, f.dims().n,
                                            ctx.config.value("f0_radius", 1.0));
    const ModelSizeResult res =
        model_size_experiment(f, f0, ctx.config.value("kmax", 1000), opts);

    std::string csv = "k,residual,envelope\n";
    for (std::size_t k = 0; k < res.residuals.size(); ++k)
      csv += csv_line({std::to_string(k), format_double(res.residuals[k]),
                       format_double(res.dist0 / std::sqrt(res.gamma * (k + 1.0)))});
    write_text_atomic(ctx.artifact("scaling_model_size.csv"), csv);
    json j;
    j["gamma"] = res.gamma;
    j["dist0"] = num(res.dist0);
    j["bound_ok"] = res.bound_ok;
    j["first_violation"] = res.first_violation;
    j["fit"] = fit_summary_json(res.fit);
    j["assumptions"] = res.assumptions;
    write_json_atomic(ctx.artifact("scaling_model_size.json"), j);
    std::cout << "scaling model_size: bound_ok=" << (res.bound_ok ? "true" : "false")
              << " dist0=" << brief(res.dist0) << " steps=" << res.residuals.size() << "\n";
    return 0;
  }
  if (experiment == "data_size") {
    reject_unknown_keys(ctx.config, {"experiment", "ns", "trials", "G", "distribution"},
                        "data_size config");
    std::vector<int> ns{4, 16, 64, 256, 1024};
    if (ctx.config.contains("ns")) ns = ctx.config.at("ns").get<std::vector<int>>();
    const std::string dist_name = ctx.config.value("distribution", "uniform");
    LossDistribution dist;
    if (dist_name == "uniform") dist = LossDistribution::uniform;
    else if (dist_name == "two_point") dist = LossDistribution::two_point;
    else if (dist_name == "constant") dist = LossDistribution::constant;
    else throw ValidationError("unknown distribution '" + dist_name + "'");
    const ScalingFit fit =
        data_size_experiment(ns, ctx.config.value("trials", 100),
                             ctx.config.value("G", 1.0), dist, ctx.seed);
    write_fit_artifacts(ctx, "scaling_data_size", fit);
    std::cout << "scaling data_size: exponent=" << brief(fit.parameter)
              << " r_squared=" << brief(fit.r_squared) << "\n";
    return 0;
  }
  if (experiment == "joint") {
    reject_unknown_keys(ctx.config, {"experiment", "gd", "grid", "link"}, "joint config");
    if (!ctx.config.contains("gd") || !ctx.config.contains("grid"))
      throw ValidationError("joint config needs 'gd' parameters and a 'grid'");
    const json& g = ctx.config.at("gd");
    reject_unknown_keys(g, {"mu", "G", "K", "dim"}, "joint gd config");
    const ScalingFit gd =
        gd_rate_experiment(g.value("mu", 1.0), g.value("G", 10.0), g.value("dim", 8),
                           g.value("K", 500), ctx.seed);
    std::vector<std::array<double, 3>> grid;
    for (const json& p : ctx.config.at("grid")) {
      if (!p.is_array() || p.size() != 3)
        throw ValidationError("joint grid entries must be [K, P, N]");
      grid.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
    }
    const JointLawReport rep =
        joint_law_report(gd, {}, {}, grid, ctx.config.value("link", "identity"));

    std::string csv = "k,p,n,value\n";
    for (const JointPoint& pt : rep.points)
      csv += csv_line({format_double(pt.k), format_double(pt.p), format_double(pt.n),
                       format_double(pt.value)});
    write_text_atomic(ctx.artifact("scaling_joint.csv"), csv);
    json j;
    j["beta"] = num(rep.beta);
    j["link"] = rep.link;
    j["gd"] = fit_summary_json(rep.gd);
    json pts = json::array();
    for (const JointPoint& pt : rep.points)
      pts.push_back({{"k", pt.k}, {"p", pt.p}, {"n", pt.n}, {"value", num(pt.value)}});
    j["points"] = std::move(pts);
    write_json_atomic(ctx.artifact("scaling_joint.json"), j);
    std::cout << "scaling joint: beta=" << brief(rep.beta) << " points=" << rep.points.size()
              << " link=" << rep.link << "\n";
    return 0;
  }
  throw ValidationError("unknown scaling experiment '" + experiment + "'");
}

int cmd_covering(const Ctx& ctx) {
  reject_unknown_keys(ctx.config,
                      {"family", "layer_bounds", "decay", "l_sigma", "b_z",
                       "truncation_k", "tail_tolerance", "gamma"},
                      "covering config");
  const std::string family = ctx.config.value("family", "");
  if (family != "mlp" && family != "transformer")
    throw ValidationError("covering config needs family 'mlp' or 'transformer'");

  CoveringSpec spec;
  if (ctx.config.contains("layer_bounds")) {
    for (const json& row : ctx.config.at("layer_bounds")) {
      if (!row.is_array() || row.empty() || row.size() > 3)
        throw ValidationError("layer_bounds rows must list 1 to 3 bounds");
      std::array<double, 3> b{0.0, 0.0, 0.0};
      for (std::size_t i = 0; i < row.size(); ++i) b[i] = row.at(i).get<double>();
      spec.layer_bounds.push_back(b);
    }
  }
  if (ctx.config.contains("decay")) {
    const json& d = ctx.config.at("decay");
    reject_unknown_keys(d, {"c_w", "rho"}, "covering decay");
    spec.decay = std::pair<double, double>{d.value("c_w", 1.0), d.value("rho", 0.5)};
  }
  spec.l_sigma = ctx.config.value("l_sigma", 1.0);
  spec.b_z = ctx.config.value("b_z", 1.0);
  spec.truncation_k = ctx.config.value("truncation_k", 200);
  spec.tail_tolerance = ctx.config.value("tail_tolerance", 1e-9);
  if (ctx.config.contains("gamma")) spec.gamma = ctx.config.at("gamma").get<double>();

  const CoveringResult res =
      family == "mlp" ? mlp_covering_constant(spec) : transformer_covering_constant(spec);

  std::string csv = family == "mlp" ? "layer,term\n" : "layer,term,gamma\n";
  for (std::size_t k = 0; k < res.per_layer_terms.size(); ++k) {
    std::vector<std::string> cells{std::to_string(k + 1),
                                   format_double(res.per_layer_terms[k])};
    if (family == "transformer") cells.push_back(format_double(res.gammas[k]));
    csv += csv_line(cells);
  }
  write_text_atomic(ctx.artifact("covering.csv"), csv);
  json j;
  j["family"] = family;
  j["c_f"] = num(res.c_f);
  j["tail_bound"] = num(res.tail_bound);
  j["layers"] = res.per_layer_terms.size();
  j["flags"] = res.flags;
  write_json_atomic(ctx.artifact("covering.json"), j);
  std::cout << "covering " << family << ": c_f=" << brief(res.c_f)
            << " tail_bound=" << brief(res.tail_bound) << "\n";
  return 0;
}

int cmd_probe(const Ctx& ctx) {
  reject_unknown_keys(ctx.config,
                      {"weights", "relative_depths", "samples", "radius", "heatmap"},
                      "probe config");
  const std::vector<Block> layers = blocks_from(ctx.config);
  ProbeConfig config;
  if (ctx.config.contains("relative_depths"))
    config.relative_depths = ctx.config.at("relative_depths").get<std::vector<double>>();
  config.generated_samples = ctx.config.value("samples", 8);
  config.sample_radius = ctx.config.value("radius", 10.0);
  config.heatmap = ctx.config.value("heatmap", false);

  const ProbeResult res = run_probe(layers, config, ctx.seed);
  write_text_atomic(ctx.artifact("probe.csv"), probe_csv(res));
  if (config.heatmap)
    for (int depth : res.depths)
      write_text_atomic(ctx.artifact("probe_depth" + std::to_string(depth) + ".svg"),
                        probe_heatmap_svg(res, depth));

  std::vector<double> idx, mean_d;
  for (const ProbeCell& c : res.cells)
    if (c.k == res.depths.back()) {
      idx.push_back(c.i);
      mean_d.push_back(c.mean_d);
    }
  const double rho = idx.size() >= 2 ? spearman_rank_correlation(idx, mean_d) : 0.0;
  std::cout << "probe: layers=" << layers.size() << " depths=" << res.depths.size()
            << " spearman_deepest=" << brief(rho) << "\n";
  return 0;
}

int dispatch(const Args& args) {
  const Ctx ctx = make_ctx(args);
  if (args.command == "lip") return cmd_lip(ctx);
  if (args.command == "stack") return cmd_stack(ctx);
  if (args.command == "limit") return cmd_limit(ctx);
  if (args.command == "scaling") return cmd_scaling(ctx);
  if (args.command == "covering") return cmd_covering(ctx);
  return cmd_probe(ctx);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(parse_args(argc, argv));
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceDiagnostic& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
