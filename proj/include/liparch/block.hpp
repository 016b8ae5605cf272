#pragma once

#include <memory>
#include <string>
#include <vector>

#include "liparch/activation.hpp"
#include "liparch/matrix.hpp"

namespace liparch {

enum class BlockKind {
  linear,
  mlp2,
  layer_norm,
  self_attention,
  multi_head_self_attention,
  residual,
  pre_ln_transformer,
  post_ln_transformer,
  stack,
  padded,
};

const char* to_string(BlockKind k);
BlockKind block_kind_from_string(const std::string& s);

// s = sequence length (rows), n = width (columns). Every block maps
// R^{s x n} to itself, so stacks compose without shape bookkeeping.
struct Dims {
  int s = 1;
  int n = 1;
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct AttentionHead {
  Matrix wq, wk, wv;
};

// Immutable value type over a shared node; copying is cheap, and composed
// blocks (stacks, residuals) share their children.
class Block {
 public:
  static Block linear(Dims d, Matrix w);
  static Block identity(Dims d);
  static Block mlp2(Dims d, Matrix w1, Matrix w2, Activation act = Activation::relu);
  static Block layer_norm(Dims d, Matrix gamma, Matrix beta, double epsilon = 1e-5);
  static Block self_attention(Dims d, Matrix wq, Matrix wk, Matrix wv);
  static Block multi_head_self_attention(Dims d, std::vector<AttentionHead> heads, Matrix wo);
  static Block residual(Block inner, double alpha = 1.0);  // x + alpha * inner(x)
  // ln1/ln2 must be layer_norm blocks; mlp/attn may be any block of the same dims.
  static Block pre_ln_transformer(Block ln1, Block mlp, Block ln2, Block attn, double alpha = 1.0);
  static Block post_ln_transformer(Block attn, Block ln1, Block mlp, Block ln2, double alpha = 1.0);
  static Block stack(std::vector<Block> children);
  static Block repeat(const Block& b, int copies);

  BlockKind kind() const;
  Dims dims() const;
  std::string describe() const;  // kind name, with child count for composites

  // Throws ValidationError on a shape mismatch and DivergenceDiagnostic (with
  // the offending sub-block path) when any intermediate output is non-finite.
  Matrix apply(const Matrix& x) const;

  // Central-difference directional derivative. h <= 0 selects the default
  // step 1e-5 * (1 + ||x||_F).
  Matrix jvp(const Matrix& x, const Matrix& v, double h = 0.0) const;
  double jvp_step(const Matrix& x, double h = 0.0) const;

  // Smallest |pre-activation| over every ReLU layer reached from x;
  // +infinity when the block contains no ReLU.
  double relu_kink_margin(const Matrix& x) const;

  // Widens to n_target columns: inputs are sliced to the original width,
  // outputs re-embedded with the extra coordinates fixed at zero.
  Block pad_to_width(int n_target) const;

  const std::vector<Block>& children() const;
  double alpha() const;  // residual / transformer blocks

  const Matrix& linear_weight() const;
  const Matrix& mlp_w1() const;
  const Matrix& mlp_w2() const;
  Activation mlp_activation() const;
  const Matrix& ln_gamma() const;
  const Matrix& ln_beta() const;
  double ln_epsilon() const;
  const Matrix& attn_wq() const;
  const Matrix& attn_wk() const;
  const Matrix& attn_wv() const;
  const std::vector<AttentionHead>& msa_heads() const;
  const Matrix& msa_wo() const;

  // Residual branches of a pre-LN block, as standalone operators:
  // f1 = mlp ∘ ln1 and f2 = attn ∘ ln2.
  Block pre_ln_f1() const;
  Block pre_ln_f2() const;

 private:
  struct Impl;
  explicit Block(std::shared_ptr<const Impl> impl);
  Matrix apply_margin(const Matrix& x, double* margin) const;
  static Matrix apply_guarded(const Block& child, const Matrix& x, double* margin,
                              const std::string& label);
  std::shared_ptr<const Impl> impl_;
};

Matrix softmax_rows(const Matrix& scores);

}  // namespace liparch
