#include "liparch/block.hpp"

#include <cmath>
#include <limits>

#include "liparch/errors.hpp"
#include "liparch/norms.hpp"

namespace liparch {

const char* to_string(BlockKind k) {
  switch (k) {
    case BlockKind::linear: return "linear";
    case BlockKind::mlp2: return "mlp2";
    case BlockKind::layer_norm: return "layer_norm";
    case BlockKind::self_attention: return "self_attention";
    case BlockKind::multi_head_self_attention: return "multi_head_self_attention";
    case BlockKind::residual: return "residual";
    case BlockKind::pre_ln_transformer: return "pre_ln_transformer";
    case BlockKind::post_ln_transformer: return "post_ln_transformer";
    case BlockKind::stack: return "stack";
    case BlockKind::padded: return "padded";
  }
  return "linear";
}

BlockKind block_kind_from_string(const std::string& s) {
  for (BlockKind k : {BlockKind::linear, BlockKind::mlp2, BlockKind::layer_norm,
                      BlockKind::self_attention, BlockKind::multi_head_self_attention,
                      BlockKind::residual, BlockKind::pre_ln_transformer,
                      BlockKind::post_ln_transformer, BlockKind::stack, BlockKind::padded}) {
    if (s == to_string(k)) return k;
  }
  throw ValidationError("unknown block kind: " + s);
}

struct Block::Impl {
  BlockKind kind = BlockKind::linear;
  Dims dims;
  double alpha = 1.0;
  double epsilon = 1e-5;
  int inner_width = 0;  // padded: width of the wrapped block
  Activation act = Activation::relu;
  Matrix w, w1, w2, gamma, beta, wq, wk, wv, wo;
  std::vector<AttentionHead> heads;
  std::vector<Block> children;
};

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

Matrix concat_cols(const std::vector<Matrix>& parts) {
  int cols = 0;
  for (const auto& p : parts) cols += p.cols;
  Matrix out(parts.front().rows, cols);
  int at = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < p.rows; ++i)
      for (int j = 0; j < p.cols; ++j) out.at(i, at + j) = p.at(i, j);
    at += p.cols;
  }
  return out;
}

Matrix attention_once(const Matrix& x, const Matrix& wq, const Matrix& wk, const Matrix& wv,
                      double scale_width) {
  Matrix scores = matmul(matmul(x, wq), transpose(matmul(x, wk)));
  scores = scale(scores, 1.0 / std::sqrt(scale_width));
  return matmul(softmax_rows(scores), matmul(x, wv));
}

}  // namespace

Matrix softmax_rows(const Matrix& scores) {
  Matrix out(scores.rows, scores.cols);
  for (int i = 0; i < scores.rows; ++i) {
    double m = scores.at(i, 0);
    for (int j = 1; j < scores.cols; ++j) m = std::max(m, scores.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < scores.cols; ++j) {
      const double e = std::exp(scores.at(i, j) - m);
      out.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < scores.cols; ++j) out.at(i, j) /= sum;
  }
  return out;
}

Block::Block(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}

BlockKind Block::kind() const { return impl_->kind; }
Dims Block::dims() const { return impl_->dims; }

std::string Block::describe() const {
  if (impl_->kind == BlockKind::linear && impl_->w == Matrix::identity(impl_->dims.n))
    return "identity";
  if (impl_->kind == BlockKind::stack)
    return "stack[" + std::to_string(impl_->children.size()) + "]";
  return to_string(impl_->kind);
}

Block Block::linear(Dims d, Matrix w) {
  require(d.s >= 1 && d.n >= 1, "linear: dims must be positive");
  require(w.rows == d.n && w.cols == d.n, "linear: W must be n x n");
  auto im = std::make_shared<Impl>();
  im->kind = BlockKind::linear;
  im->dims = d;
  im->w = std::move(w);
  return Block(im);
}

Block Block::identity(Dims d) { return linear(d, Matrix::identity(d.n)); }

Block Block::mlp2(Dims d, Matrix w1, Matrix w2, Activation act) {
  require(d.s >= 1 && d.n >= 1, "mlp2: dims must be positive");
  require(w1.rows == d.n, "mlp2: W1 must have n rows");
  require(w1.cols >= 1 && w1.cols == w2.rows, "mlp2: W1 cols must equal W2 rows");
  require(w2.cols == d.n, "mlp2: W2 must have n cols");
  auto im = std::make_shared<Impl>();
  im->kind = BlockKind::mlp2;
  im->dims = d;
  im->w1 = std::move(w1);
  im->w2 = std::move(w2);
  im->act = act;
  return Block(im);
}

Block Block::layer_norm(Dims d, Matrix gamma, Matrix beta, double epsilon) {
  require(d.s >= 1 && d.n >= 1, "layer_norm: dims must be positive");
  require(gamma.rows == 1 && gamma.cols == d.n, "layer_norm: gamma must be 1 x n");
  require(beta.rows == 1 && beta.cols == d.n, "layer_norm: beta must be 1 x n");
  require(epsilon > 0.0 && std::isfinite(epsilon), "layer_norm: epsilon must be positive");
  auto im = std::make_shared<Impl>();
  im->kind = BlockKind::layer_norm;
  im->dims = d;
  im->gamma = std::move(gamma);
  im->beta = std::move(beta);
  im->epsilon = epsilon;
  return Block(im);
}

Block Block::self_attention(Dims d, Matrix wq, Matrix wk, Matrix wv) {
  require(d.s >= 1 && d.n >= 1, "self_attention: dims must be positive");
  require(wq.rows == d.n && wk.rows == d.n, "self_attention: WQ/WK must have n rows");
  require(wq.cols >= 1 && wq.cols == wk.cols, "self_attention: WQ/WK key widths must match");
  require(wv.rows == d.n && wv.cols == d.n, "self_attention: WV must be n x n");
  auto im = std::make_shared<Impl>();
  im->kind = BlockKind::self_attention;
  im->dims = d;
  im->wq = std::move(wq);
  im->wk = std::move(wk);
  im->wv = std::move(wv);
  return Block(im);
}

Block Block::multi_head_self_attention(Dims d, std::vector<AttentionHead> heads, Matrix wo) {
  require(d.s >= 1 && d.n >= 1, "multi_head_self_attention: dims must be positive");
  require(!heads.empty(), "multi_head_self_attention: needs at least one head");
  const int dk = heads.front().wq.cols;
  const int dv = heads.front().wv.cols;
  for (const auto& h : heads) {
    require(h.wq.rows == d.n && h.wk.rows == d.n && h.wv.rows == d.n,
            "multi_head_self_attention: head projections must have n rows");
    require(h.wq.cols == dk && h.wk.cols == dk,
            "multi_head_self_attention: all heads must share the key width");
    require(h.wv.cols == dv, "multi_head_self_attention: all heads must share the value width");
  }
  require(wo.rows == static_cast<int>(heads.size()) * dv && wo.cols == d.n,
          "multi_head_self_attention: WO must be (heads*dv) x n");
  auto im = std::make_shared<Impl>();
  im->kind = BlockKind::multi_head_self_attention;
  im->dims = d;
  im->heads = std::move(heads);
  im->wo = std::move(wo);
  return Block(im);
}

Block Block::residual(Block inner, double alpha) {
  require(std::isfinite(alpha), "residual: alpha must be finite");
  auto im = std::make_shared<Impl>();
  im->kind = BlockKind::residual;
  im->dims = inner.dims();
  im->alpha = alpha;
  im->children.push_back(std::move(inner));
  return Block(im);
}

Block Block::pre_ln_transformer(Block ln1, Block mlp, Block ln2, Block attn, double alpha) {
  require(ln1.kind() == BlockKind::layer_norm && ln2.kind() == BlockKind::layer_norm,
          "pre_ln_transformer: ln slots must be layer_norm blocks");
  const Dims d = ln1.dims();
  require(mlp.dims() == d && ln2.dims() == d && attn.dims() == d,
          "pre_ln_transformer: all sub-blocks must share dims");
  require(std::isfinite(alpha), "pre_ln_transformer: alpha must be finite");
  auto im = std::make_shared<Impl>();
  im->kind = BlockKind::pre_ln_transformer;
  im->dims = d;
  im->alpha = alpha;
  im->children = {std::move(ln1), std::move(mlp), std::move(ln2), std::move(attn)};
  return Block(im);
}

Block Block::post_ln_transformer(Block attn, Block ln1, Block mlp, Block ln2, double alpha) {
  require(ln1.kind() == BlockKind::layer_norm && ln2.kind() == BlockKind::layer_norm,
          "post_ln_transformer: ln slots must be layer_norm blocks");
  const Dims d = attn.dims();
  require(ln1.dims() == d && mlp.dims() == d && ln2.dims() == d,
          "post_ln_transformer: all sub-blocks must share dims");
  require(std::isfinite(alpha), "post_ln_transformer: alpha must be finite");
  auto im = std::make_shared<Impl>();
  im->kind = BlockKind::post_ln_transformer;
  im->dims = d;
  im->alpha = alpha;
  im->children = {std::move(attn), std::move(ln1), std::move(mlp), std::move(ln2)};
  return Block(im);
}

Block Block::stack(std::vector<Block> children) {
  require(!children.empty(), "stack: needs at least one block");
  const Dims d = children.front().dims();
  for (const auto& c : children)
    require(c.dims() == d, "stack: all blocks must share dims");
  auto im = std::make_shared<Impl>();
  im->kind = BlockKind::stack;
  im->dims = d;
  im->children = std::move(children);
  return Block(im);
}

Block Block::repeat(const Block& b, int copies) {
  require(copies >= 1, "repeat: copies must be >= 1");
  return stack(std::vector<Block>(static_cast<std::size_t>(copies), b));
}

Block Block::pad_to_width(int n_target) const {
  const Dims d = dims();
  require(n_target >= d.n, "pad_to_width: target narrower than block");
  if (n_target == d.n) return *this;
  auto im = std::make_shared<Impl>();
  im->kind = BlockKind::padded;
  im->dims = Dims{d.s, n_target};
  im->inner_width = d.n;
  im->children.push_back(*this);
  return Block(im);
}

const std::vector<Block>& Block::children() const { return impl_->children; }
double Block::alpha() const { return impl_->alpha; }

namespace {
const Matrix& named(const Matrix& m, BlockKind have, BlockKind want, const char* role) {
  require(have == want, std::string("block has no ") + role + " parameter");
  return m;
}
}  // namespace

const Matrix& Block::linear_weight() const {
  return named(impl_->w, impl_->kind, BlockKind::linear, "W");
}
const Matrix& Block::mlp_w1() const { return named(impl_->w1, impl_->kind, BlockKind::mlp2, "W1"); }
const Matrix& Block::mlp_w2() const { return named(impl_->w2, impl_->kind, BlockKind::mlp2, "W2"); }
Activation Block::mlp_activation() const {
  require(impl_->kind == BlockKind::mlp2, "block has no activation");
  return impl_->act;
}
const Matrix& Block::ln_gamma() const {
  return named(impl_->gamma, impl_->kind, BlockKind::layer_norm, "gamma");
}
const Matrix& Block::ln_beta() const {
  return named(impl_->beta, impl_->kind, BlockKind::layer_norm, "beta");
}
double Block::ln_epsilon() const {
  require(impl_->kind == BlockKind::layer_norm, "block has no epsilon");
  return impl_->epsilon;
}
const Matrix& Block::attn_wq() const {
  return named(impl_->wq, impl_->kind, BlockKind::self_attention, "WQ");
}
const Matrix& Block::attn_wk() const {
  return named(impl_->wk, impl_->kind, BlockKind::self_attention, "WK");
}
const Matrix& Block::attn_wv() const {
  return named(impl_->wv, impl_->kind, BlockKind::self_attention, "WV");
}
const std::vector<AttentionHead>& Block::msa_heads() const {
  require(impl_->kind == BlockKind::multi_head_self_attention, "block has no heads");
  return impl_->heads;
}
const Matrix& Block::msa_wo() const {
  return named(impl_->wo, impl_->kind, BlockKind::multi_head_self_attention, "WO");
}

Block Block::pre_ln_f1() const {
  require(impl_->kind == BlockKind::pre_ln_transformer, "pre_ln_f1: not a pre_ln block");
  return stack({impl_->children[0], impl_->children[1]});
}

Block Block::pre_ln_f2() const {
  require(impl_->kind == BlockKind::pre_ln_transformer, "pre_ln_f2: not a pre_ln block");
  return stack({impl_->children[2], impl_->children[3]});
}

Matrix Block::apply_guarded(const Block& child, const Matrix& x, double* margin,
                            const std::string& label) {
  try {
    return child.apply_margin(x, margin);
  } catch (const DivergenceDiagnostic& d) {
    throw d.with_parent(label);
  }
}

Matrix Block::apply_margin(const Matrix& x, double* margin) const {
  const Impl& im = *impl_;
  const auto apply_child = [&](const Block& child, const Matrix& cx, const std::string& label) {
    return apply_guarded(child, cx, margin, label);
  };
  Matrix out = [&]() -> Matrix {
    switch (im.kind) {
    case BlockKind::linear:
      return matmul(x, im.w);
    case BlockKind::mlp2: {
      Matrix z = matmul(x, im.w1);
      if (im.act == Activation::relu && margin) {
        for (double v : z.data) *margin = std::min(*margin, std::abs(v));
      }
      if (im.act != Activation::identity)
        for (double& v : z.data) v = apply_activation(im.act, v);
      return matmul(z, im.w2);
    }
    case BlockKind::layer_norm: {
      Matrix out(x.rows, x.cols);
      const int n = x.cols;
      for (int i = 0; i < x.rows; ++i) {
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += x.at(i, j);
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
          const double d = x.at(i, j) - mean;
          var += d * d;
        }
        var /= n;
        const double sd = std::sqrt(var + im.epsilon);
        for (int j = 0; j < n; ++j)
          out.at(i, j) = im.gamma.at(0, j) * (x.at(i, j) - mean) / sd + im.beta.at(0, j);
      }
      return out;
    }
    case BlockKind::self_attention:
      return attention_once(x, im.wq, im.wk, im.wv, static_cast<double>(im.dims.n));
    case BlockKind::multi_head_self_attention: {
      std::vector<Matrix> parts;
      parts.reserve(im.heads.size());
      for (const auto& h : im.heads)
        parts.push_back(attention_once(x, h.wq, h.wk, h.wv, static_cast<double>(im.dims.n)));
      return matmul(concat_cols(parts), im.wo);
    }
    case BlockKind::residual: {
      Matrix y = apply_child(im.children[0], x, "residual");
      return add(x, scale(y, im.alpha));
    }
    case BlockKind::pre_ln_transformer: {
      const std::string label = "pre_ln_transformer";
      Matrix b1 = apply_child(im.children[1], apply_child(im.children[0], x, label), label);
      Matrix x1 = add(x, scale(b1, im.alpha));
      Matrix b2 = apply_child(im.children[3], apply_child(im.children[2], x1, label), label);
      return add(x1, scale(b2, im.alpha));
    }
    case BlockKind::post_ln_transformer: {
      const std::string label = "post_ln_transformer";
      Matrix t = add(x, scale(apply_child(im.children[0], x, label), im.alpha));
      if (!t.all_finite()) throw DivergenceDiagnostic(label, "non-finite values in output");
      Matrix y = apply_child(im.children[1], t, label);
      Matrix u = add(y, scale(apply_child(im.children[2], y, label), im.alpha));
      if (!u.all_finite()) throw DivergenceDiagnostic(label, "non-finite values in output");
      return apply_child(im.children[3], u, label);
    }
    case BlockKind::stack: {
      Matrix cur = x;
      for (std::size_t i = 0; i < im.children.size(); ++i)
        cur = apply_child(im.children[i], cur, "stack[" + std::to_string(i) + "]");
      return cur;
    }
    case BlockKind::padded: {
      Matrix xs(x.rows, im.inner_width);
      for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < im.inner_width; ++j) xs.at(i, j) = x.at(i, j);
      Matrix y = apply_child(im.children[0], xs, "padded");
      Matrix out(x.rows, im.dims.n);
      for (int i = 0; i < y.rows; ++i)
        for (int j = 0; j < y.cols; ++j) out.at(i, j) = y.at(i, j);
      return out;
    }
    }
    throw ValidationError("apply: unknown block kind");
  }();
  if (!out.all_finite())
    throw DivergenceDiagnostic(to_string(im.kind), "non-finite values in output");
  return out;
}

Matrix Block::apply(const Matrix& x) const {
  const Dims d = dims();
  if (x.rows != d.s || x.cols != d.n)
    throw ValidationError("apply: input is " + std::to_string(x.rows) + "x" +
                          std::to_string(x.cols) + ", block expects " + std::to_string(d.s) +
                          "x" + std::to_string(d.n));
  return apply_margin(x, nullptr);
}

double Block::jvp_step(const Matrix& x, double h) const {
  return h > 0.0 ? h : 1e-5 * (1.0 + frobenius(x));
}

Matrix Block::jvp(const Matrix& x, const Matrix& v, double h) const {
  if (!x.same_shape(v)) throw ValidationError("jvp: direction shape differs from input");
  const double hh = jvp_step(x, h);
  Matrix plus = apply(add(x, scale(v, hh)));
  Matrix minus = apply(sub(x, scale(v, hh)));
  return scale(sub(plus, minus), 1.0 / (2.0 * hh));
}

double Block::relu_kink_margin(const Matrix& x) const {
  double margin = std::numeric_limits<double>::infinity();
  apply_margin(x, &margin);
  return margin;
}

}  // namespace liparch
