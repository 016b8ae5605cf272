#pragma once

#include <vector>

#include "liparch/block.hpp"
#include "liparch/matrix.hpp"

// Seeded fixtures shared across test suites. "Unit scale" below means
// Gaussian entries scaled by 1/sqrt(fan-in), so products of many factors
// neither explode nor vanish by construction.
namespace fixtures {

inline liparch::Matrix random_matrix(liparch::Seed seed, int r, int c, double s = 1.0) {
  liparch::Rng rng(seed);
  return liparch::scale(liparch::gaussian_matrix(rng, r, c), s);
}

inline liparch::Matrix unit_scale(liparch::Seed seed, int r, int c) {
  return random_matrix(seed, r, c, 1.0 / std::sqrt(static_cast<double>(r)));
}

inline liparch::Block random_linear(liparch::Dims d, liparch::Seed seed) {
  return liparch::Block::linear(d, unit_scale(seed, d.n, d.n));
}

inline liparch::Block random_mlp2(liparch::Dims d, liparch::Seed seed,
                                  liparch::Activation act, int hidden = 0) {
  const int h = hidden > 0 ? hidden : d.n;
  return liparch::Block::mlp2(d, unit_scale(derive(seed, 1), d.n, h),
                              unit_scale(derive(seed, 2), h, d.n), act);
}

inline liparch::Block random_layer_norm(liparch::Dims d, liparch::Seed seed,
                                        double epsilon = 1e-5) {
  liparch::Rng rng(seed);
  liparch::Matrix gamma(1, d.n), beta(1, d.n);
  for (int j = 0; j < d.n; ++j) {
    gamma.at(0, j) = 1.0 + 0.1 * rng.normal();
    beta.at(0, j) = 0.1 * rng.normal();
  }
  return liparch::Block::layer_norm(d, gamma, beta, epsilon);
}

inline liparch::Block random_self_attention(liparch::Dims d, liparch::Seed seed) {
  return liparch::Block::self_attention(d, unit_scale(derive(seed, 1), d.n, d.n),
                                        unit_scale(derive(seed, 2), d.n, d.n),
                                        unit_scale(derive(seed, 3), d.n, d.n));
}

inline liparch::Block random_msa(liparch::Dims d, liparch::Seed seed, int heads = 2) {
  const int dk = std::max(1, d.n / heads);
  const int dv = std::max(1, d.n / heads);
  std::vector<liparch::AttentionHead> hs;
  for (int h = 0; h < heads; ++h) {
    liparch::Seed s = derive(seed, static_cast<std::uint64_t>(h) + 10);
    hs.push_back({unit_scale(derive(s, 1), d.n, dk), unit_scale(derive(s, 2), d.n, dk),
                  unit_scale(derive(s, 3), d.n, dv)});
  }
  return liparch::Block::multi_head_self_attention(
      d, std::move(hs), unit_scale(derive(seed, 4), heads * dv, d.n));
}

inline liparch::Block random_pre_ln(liparch::Dims d, liparch::Seed seed, double alpha = 1.0,
                                    double epsilon = 1e-5) {
  return liparch::Block::pre_ln_transformer(
      random_layer_norm(d, derive(seed, 1), epsilon),
      random_mlp2(d, derive(seed, 2), liparch::Activation::tanh_fn),
      random_layer_norm(d, derive(seed, 3), epsilon),
      random_msa(d, derive(seed, 4)), alpha);
}

inline liparch::Block random_post_ln(liparch::Dims d, liparch::Seed seed, double alpha = 1.0,
                                     double epsilon = 1e-5) {
  return liparch::Block::post_ln_transformer(
      random_msa(d, derive(seed, 1)), random_layer_norm(d, derive(seed, 2), epsilon),
      random_mlp2(d, derive(seed, 3), liparch::Activation::tanh_fn),
      random_layer_norm(d, derive(seed, 4), epsilon), alpha);
}

inline liparch::Block plain_layer_norm(liparch::Dims d, double epsilon) {
  liparch::Matrix gamma(1, d.n), beta(1, d.n);
  for (int j = 0; j < d.n; ++j) {
    gamma.at(0, j) = 1.0;
    beta.at(0, j) = 0.0;
  }
  return liparch::Block::layer_norm(d, gamma, beta, epsilon);
}

// PreLN block that provably clears the accretivity margin test. The MLP
// branch evaluates to -c * LN1(x), whose negation has a symmetric PSD
// Jacobian (margin exactly 0: the constant direction is untouched). The
// attention branch is a uniform row mix of strength `mix`; zero query/key
// weights keep its Jacobian an exact constant, so the sampled margin is
// noise-free. epsilon = 1 keeps the LayerNorm Jacobian spectrum in [0, 1].
inline liparch::Block stable_pre_ln(liparch::Dims d, double c, double mix = 2e-4) {
  liparch::Block mlp = liparch::Block::mlp2(
      d, liparch::Matrix::identity(d.n),
      liparch::scale(liparch::Matrix::identity(d.n), -c), liparch::Activation::identity);
  liparch::Block attn = liparch::Block::self_attention(
      d, liparch::Matrix::zeros(d.n, d.n), liparch::Matrix::zeros(d.n, d.n),
      liparch::scale(liparch::Matrix::identity(d.n), -mix));
  return liparch::Block::pre_ln_transformer(plain_layer_norm(d, 1.0), mlp,
                                            plain_layer_norm(d, 1.0), attn, 1.0);
}

inline liparch::Block stable_pre_ln_stack(liparch::Dims d, liparch::Seed seed, int count) {
  liparch::Rng rng(seed);
  std::vector<liparch::Block> blocks;
  for (int i = 0; i < count; ++i) blocks.push_back(stable_pre_ln(d, rng.uniform(0.2, 0.5)));
  return liparch::Block::stack(std::move(blocks));
}

// PostLN block whose sampled local Lipschitz estimate grows with the domain
// radius: the large LayerNorm epsilon keeps the normalization denominators
// nearly flat out to radius ~100, and the query/key scale is tuned so that
// samples with near-tied softmax rows keep turning up there, where the
// score-derivative term of the attention Jacobian (the B^2 term of the
// analytic bound) dominates. Measured growth from B=1 to B=100 is ~100x.
inline liparch::Block growing_post_ln(liparch::Dims d, liparch::Seed seed,
                                      double qk_scale = 0.7, double epsilon = 1e4) {
  liparch::Block attn = liparch::Block::self_attention(
      d, random_matrix(derive(seed, 1), d.n, d.n, qk_scale / std::sqrt(static_cast<double>(d.n))),
      random_matrix(derive(seed, 2), d.n, d.n, qk_scale / std::sqrt(static_cast<double>(d.n))),
      unit_scale(derive(seed, 3), d.n, d.n));
  liparch::Block mlp =
      liparch::Block::mlp2(d, random_matrix(derive(seed, 4), d.n, d.n, 0.3 / std::sqrt(static_cast<double>(d.n))),
                           random_matrix(derive(seed, 5), d.n, d.n, 0.3 / std::sqrt(static_cast<double>(d.n))),
                           liparch::Activation::tanh_fn);
  return liparch::Block::post_ln_transformer(attn, plain_layer_norm(d, epsilon), mlp,
                                             plain_layer_norm(d, epsilon), 1.0);
}

// PostLN block with every weight at unit scale. epsilon = 1000 keeps the
// normalization denominators from masking the attention curvature out to
// radius 100; with the 1e-5 default the sampled estimates dip between
// B = 1 and B = 10 before the score-derivative growth takes over.
inline liparch::Block unit_post_ln(liparch::Dims d, liparch::Seed seed,
                                   double epsilon = 1000.0) {
  liparch::Block attn = liparch::Block::self_attention(
      d, unit_scale(derive(seed, 1), d.n, d.n), unit_scale(derive(seed, 2), d.n, d.n),
      unit_scale(derive(seed, 3), d.n, d.n));
  liparch::Block mlp =
      liparch::Block::mlp2(d, unit_scale(derive(seed, 4), d.n, d.n),
                           unit_scale(derive(seed, 5), d.n, d.n), liparch::Activation::relu);
  return liparch::Block::post_ln_transformer(attn, plain_layer_norm(d, epsilon), mlp,
                                             plain_layer_norm(d, epsilon), 1.0);
}

inline liparch::Block unit_post_ln_stack(liparch::Dims d, liparch::Seed seed, int count) {
  std::vector<liparch::Block> blocks;
  for (int i = 0; i < count; ++i)
    blocks.push_back(unit_post_ln(d, derive(seed, static_cast<std::uint64_t>(i))));
  return liparch::Block::stack(std::move(blocks));
}

}  // namespace fixtures
