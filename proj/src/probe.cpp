#include "liparch/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <utility>

#include "liparch/csv.hpp"
#include "liparch/errors.hpp"
#include "liparch/norms.hpp"
#include "liparch/parallel.hpp"

namespace liparch {

namespace {

void require_uniform_layers(const std::vector<Block>& layers, const char* who) {
  if (layers.empty()) throw ValidationError(std::string(who) + ": no layers");
  const Dims d0 = layers.front().dims();
  for (const Block& b : layers)
    if (!(b.dims() == d0))
      throw ValidationError(std::string(who) + ": layers must share dimensions");
}

void require_state_shape(const Matrix& x, Dims d, const char* who) {
  if (x.rows != d.s || x.cols != d.n)
    throw ValidationError(std::string(who) + ": state shape does not match the layers");
  if (!x.all_finite()) throw ValidationError(std::string(who) + ": state is not finite");
}

struct CellStats {
  double mean = 0.0, var = 0.0;
};

// Population mean/variance, summed in sample order.
CellStats two_pass(const std::vector<double>& xs) {
  CellStats st;
  if (xs.empty()) return st;
  double sum = 0.0;
  for (double x : xs) sum += x;
  st.mean = sum / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - st.mean) * (x - st.mean);
  st.var = sq / static_cast<double>(xs.size());
  return st;
}

void add_flag(std::vector<std::string>& flags, const std::string& f) {
  if (std::find(flags.begin(), flags.end(), f) == flags.end()) flags.push_back(f);
}

}  // namespace

ProbeMetrics probe_metrics(const Matrix& a, const Matrix& o) {
  if (!a.same_shape(o)) throw ValidationError("probe_metrics: shape mismatch");
  ProbeMetrics m;
  m.d = frobenius(sub(a, o));
  const double na = frobenius(a);
  const double no = frobenius(o);
  if (na == 0.0 || no == 0.0) {
    m.similarity_defined = false;
    return m;
  }
  m.s = std::clamp(frobenius_dot(a, o) / (na * no), -1.0, 1.0);
  return m;
}

Matrix extract_hidden(const std::vector<Block>& layers, const Matrix& x, int k) {
  require_uniform_layers(layers, "extract_hidden");
  if (k < 1 || k > static_cast<int>(layers.size()))
    throw ValidationError("extract_hidden: depth out of range");
  require_state_shape(x, layers.front().dims(), "extract_hidden");
  Matrix state = x;
  for (int i = 0; i + 1 < k; ++i) state = layers[static_cast<std::size_t>(i)].apply(state);
  return state;
}

std::vector<Matrix> inject_all(const std::vector<Block>& layers, const Matrix& a) {
  require_uniform_layers(layers, "inject_all");
  require_state_shape(a, layers.front().dims(), "inject_all");
  std::vector<Matrix> out;
  out.reserve(layers.size());
  for (const Block& b : layers) out.push_back(b.apply(a));
  return out;
}

ProbeResult run_probe(const std::vector<Block>& layers, const ProbeConfig& config, Seed seed) {
  require_uniform_layers(layers, "run_probe");
  if (config.relative_depths.empty()) throw ValidationError("run_probe: no depths");
  for (double f : config.relative_depths)
    if (!(f > 0.0) || !(f < 1.0))
      throw ValidationError("run_probe: relative depths must lie in (0, 1)");

  const int layer_count = static_cast<int>(layers.size());
  const Dims d0 = layers.front().dims();

  std::vector<Matrix> samples = config.sample_inputs;
  if (samples.empty()) {
    if (config.generated_samples < 1)
      throw ValidationError("run_probe: need at least one sample");
    Rng rng(derive(seed, 1));
    for (int j = 0; j < config.generated_samples; ++j)
      samples.push_back(sample_frobenius_ball(rng, d0.s, d0.n, config.sample_radius));
  }
  for (const Matrix& x : samples) require_state_shape(x, d0, "run_probe");

  ProbeResult result;
  for (double f : config.relative_depths) {
    const int k = std::clamp(static_cast<int>(std::lround(f * layer_count)), 1, layer_count);
    result.depths.push_back(k);
  }

  // One forward pass per sample covers every injection depth; a mid-stack
  // divergence leaves the deeper hidden states missing, flagged per cell.
  const std::size_t n_samples = samples.size();
  std::vector<std::vector<std::optional<Matrix>>> hidden(
      n_samples, std::vector<std::optional<Matrix>>(static_cast<std::size_t>(layer_count)));
  std::vector<std::string> forward_errors(n_samples);
  for (std::size_t m = 0; m < n_samples; ++m) {
    hidden[m][0] = samples[m];
    Matrix state = samples[m];
    for (int i = 0; i + 1 < layer_count; ++i) {
      try {
        state = layers[static_cast<std::size_t>(i)].apply(state);
      } catch (const std::exception& e) {
        forward_errors[m] = e.what();
        break;
      }
      hidden[m][static_cast<std::size_t>(i) + 1] = state;
    }
  }

  const std::size_t n_cells = result.depths.size() * static_cast<std::size_t>(layer_count);
  result.cells.assign(n_cells, ProbeCell{});
  parallel_for(n_cells, [&](std::size_t idx) {
    const std::size_t depth_idx = idx / static_cast<std::size_t>(layer_count);
    const int i = static_cast<int>(idx % static_cast<std::size_t>(layer_count));
    const int k = result.depths[depth_idx];
    ProbeCell& cell = result.cells[idx];
    cell.k = k;
    cell.i = i + 1;

    std::vector<double> ds, ss;
    for (std::size_t m = 0; m < n_samples; ++m) {
      const std::optional<Matrix>& a = hidden[m][static_cast<std::size_t>(k) - 1];
      if (!a) {
        add_flag(cell.flags, "cell-failed: " + forward_errors[m]);
        continue;
      }
      try {
        const ProbeMetrics mt = probe_metrics(*a, layers[static_cast<std::size_t>(i)].apply(*a));
        if (!mt.similarity_defined) add_flag(cell.flags, "undefined-similarity");
        ds.push_back(mt.d);
        ss.push_back(mt.s);
      } catch (const std::exception& e) {
        add_flag(cell.flags, std::string("cell-failed: ") + e.what());
      }
    }
    const CellStats dstat = two_pass(ds);
    const CellStats sstat = two_pass(ss);
    cell.mean_d = dstat.mean;
    cell.var_d = dstat.var;
    cell.mean_s = sstat.mean;
    cell.var_s = sstat.var;
    cell.sample_count = static_cast<int>(ds.size());
  });
  return result;
}

std::string probe_csv(const ProbeResult& result) {
  std::string out = "# d and s computed on row-major flattened states\n";
  out += "k,i,mean_d,var_d,mean_s,var_s,n\n";
  for (const ProbeCell& c : result.cells)
    out += csv_line({std::to_string(c.k), std::to_string(c.i), format_double(c.mean_d),
                     format_double(c.var_d), format_double(c.mean_s), format_double(c.var_s),
                     std::to_string(c.sample_count)});
  return out;
}

std::string probe_heatmap_svg(const ProbeResult& result, int depth) {
  std::vector<const ProbeCell*> row;
  for (const ProbeCell& c : result.cells)
    if (c.k == depth) row.push_back(&c);
  if (row.empty()) throw ValidationError("probe_heatmap_svg: depth not in the result");

  double peak = 0.0;
  for (const ProbeCell* c : row) peak = std::max(peak, c->mean_d);

  const int cell_w = 18, cell_h = 30, margin = 10;
  const int width = margin * 2 + cell_w * static_cast<int>(row.size());
  const int height = margin * 2 + cell_h + 24;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                    std::to_string(width) + "\" height=\"" + std::to_string(height) + "\">\n";
  for (std::size_t j = 0; j < row.size(); ++j) {
    const double t = peak > 0.0 ? row[j]->mean_d / peak : 0.0;
    const int shade = 255 - static_cast<int>(std::lround(t * 205.0));
    svg += "  <rect x=\"" + std::to_string(margin + cell_w * static_cast<int>(j)) +
           "\" y=\"" + std::to_string(margin) + "\" width=\"" + std::to_string(cell_w) +
           "\" height=\"" + std::to_string(cell_h) + "\" fill=\"rgb(" + std::to_string(shade) +
           "," + std::to_string(shade) + ",255)\" stroke=\"#444\"/>\n";
  }
  svg += "  <text x=\"" + std::to_string(margin) + "\" y=\"" +
         std::to_string(margin + cell_h + 18) + "\" font-size=\"12\">depth " +
         std::to_string(depth) + ", linear mean_d scale 0 to " + format_double(peak) +
         "</text>\n</svg>\n";
  return svg;
}

double spearman_rank_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size())
    throw ValidationError("spearman_rank_correlation: length mismatch");
  const std::size_t n = xs.size();
  if (n < 2) throw ValidationError("spearman_rank_correlation: need at least 2 points");

  auto ranks = [](const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double shared = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t t = i; t <= j; ++t) r[order[t]] = shared;
      i = j + 1;
    }
    return r;
  };

  const std::vector<double> rx = ranks(xs);
  const std::vector<double> ry = ranks(ys);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace liparch
