#pragma once

#include <optional>
#include <string>
#include <vector>

#include "liparch/block.hpp"
#include "liparch/matrix.hpp"

namespace liparch {

// Layer-injection probe: take the hidden state entering layer k, feed it to
// every layer independently, and summarize per-layer distance and cosine
// similarity across samples. A condensing stack shows mean_d falling with
// the layer index; a stack of rotations does not.

struct ProbeConfig {
  std::vector<double> relative_depths{0.05, 0.2, 0.4, 0.6, 0.8};
  std::vector<Matrix> sample_inputs;  // empty selects seeded ball samples
  int generated_samples = 8;
  double sample_radius = 10.0;
  bool heatmap = false;  // adds one SVG per injection depth to the artifacts
};

struct ProbeMetrics {
  double d = 0.0;
  double s = 0.0;
  bool similarity_defined = true;  // false when either state has zero norm
};

// Distance and cosine of the row-major flattened states. An undefined
// cosine (zero-norm operand) reports s = 0 with the flag cleared rather
// than NaN; d is always valid.
ProbeMetrics probe_metrics(const Matrix& a, const Matrix& o);

// Input to layer k (1-based): the first k - 1 layers applied to x.
Matrix extract_hidden(const std::vector<Block>& layers, const Matrix& x, int k);

// o_i = T_i(a) for every layer, each fed the same state independently.
std::vector<Matrix> inject_all(const std::vector<Block>& layers, const Matrix& a);

struct ProbeCell {
  int k = 0;  // injection depth
  int i = 0;  // probed layer, 1-based
  double mean_d = 0.0, var_d = 0.0;
  double mean_s = 0.0, var_s = 0.0;
  int sample_count = 0;
  std::vector<std::string> flags;
};

struct ProbeResult {
  std::vector<int> depths;       // resolved injection depths, one per fraction
  std::vector<ProbeCell> cells;  // depth-major, then layer index
};

// Full (depth, layer) grid. Failed cells are flagged and skipped, never
// fatal; population statistics use a two-pass sum in sample order.
ProbeResult run_probe(const std::vector<Block>& layers, const ProbeConfig& config, Seed seed);

// CSV with columns k,i,mean_d,var_d,mean_s,var_s,n. The leading comment
// records the flattening convention the metrics used.
std::string probe_csv(const ProbeResult& result);

// One heatmap of mean_d per injection depth, linear color scale with the
// range printed in the legend.
std::string probe_heatmap_svg(const ProbeResult& result, int depth);

// Rank correlation of two equal-length series; ties share averaged ranks.
double spearman_rank_correlation(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace liparch
