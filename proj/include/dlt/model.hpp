#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dlt/adam.hpp"
#include "dlt/rng.hpp"
#include "dlt/tying.hpp"

namespace dlt {

struct ModelConfig {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_ffn = 256;
  int vocab_size = 256;
  int context_length = 64;
  std::uint64_t seed = 0;
  bool tie_embedding_to_head = false;

  void validate() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ffn < 1 ||
        vocab_size < 1 || context_length < 1)
      throw std::invalid_argument("model: all dimensions must be >= 1");
    if (d_model % n_heads != 0)
      throw std::invalid_argument("model: d_model must be divisible by n_heads");
  }
};

// Offsets of one decoder block's parameter slices inside its flat vector.
// Order: wq bq wk bk wv bv wo bo wu bu wd bd ln1_g ln1_b ln2_g ln2_b.
struct LayerLayout {
  int d = 0, dff = 0;
  long wq = 0, bq = 0, wk = 0, bk = 0, wv = 0, bv = 0, wo = 0, bo = 0;
  long wu = 0, bu = 0, wd = 0, bd = 0;
  long ln1_g = 0, ln1_b = 0, ln2_g = 0, ln2_b = 0;
  long total = 0;

  static LayerLayout make(int d, int dff) {
    LayerLayout lo;
    lo.d = d;
    lo.dff = dff;
    long off = 0;
    auto take = [&off](long n) {
      const long at = off;
      off += n;
      return at;
    };
    lo.wq = take(long(d) * d);
    lo.bq = take(d);
    lo.wk = take(long(d) * d);
    lo.bk = take(d);
    lo.wv = take(long(d) * d);
    lo.bv = take(d);
    lo.wo = take(long(d) * d);
    lo.bo = take(d);
    lo.wu = take(long(d) * dff);
    lo.bu = take(dff);
    lo.wd = take(long(dff) * d);
    lo.bd = take(d);
    lo.ln1_g = take(d);
    lo.ln1_b = take(d);
    lo.ln2_g = take(d);
    lo.ln2_b = take(d);
    lo.total = off;
    return lo;
  }
};

// Final-norm plus output projection. When the head is tied to the embedding
// the projection matrix is not stored here at all; logits use the embedding
// transposed.
struct HeadLayout {
  int d = 0, vocab = 0;
  bool tied = false;
  long ln_g = 0, ln_b = 0, w = 0, b = 0;
  long total = 0;

  static HeadLayout make(int d, int vocab, bool tied) {
    HeadLayout lo;
    lo.d = d;
    lo.vocab = vocab;
    lo.tied = tied;
    lo.ln_g = 0;
    lo.ln_b = d;
    lo.w = 2L * d;
    lo.b = tied ? 2L * d : 2L * d + long(d) * vocab;
    lo.total = lo.b + vocab;
    return lo;
  }
};

template <class S, bool IsConst>
struct LayerViewT {
  using Ptr = std::conditional_t<IsConst, const S*, S*>;
  using MapM = Eigen::Map<std::conditional_t<IsConst, const MatX<S>, MatX<S>>>;
  using MapV = Eigen::Map<std::conditional_t<IsConst, const VecX<S>, VecX<S>>>;

  Ptr p = nullptr;
  const LayerLayout* lo = nullptr;

  MapM wq() const { return MapM(p + lo->wq, lo->d, lo->d); }
  MapV bq() const { return MapV(p + lo->bq, lo->d); }
  MapM wk() const { return MapM(p + lo->wk, lo->d, lo->d); }
  MapV bk() const { return MapV(p + lo->bk, lo->d); }
  MapM wv() const { return MapM(p + lo->wv, lo->d, lo->d); }
  MapV bv() const { return MapV(p + lo->bv, lo->d); }
  MapM wo() const { return MapM(p + lo->wo, lo->d, lo->d); }
  MapV bo() const { return MapV(p + lo->bo, lo->d); }
  MapM wu() const { return MapM(p + lo->wu, lo->d, lo->dff); }
  MapV bu() const { return MapV(p + lo->bu, lo->dff); }
  MapM wd() const { return MapM(p + lo->wd, lo->dff, lo->d); }
  MapV bd() const { return MapV(p + lo->bd, lo->d); }
  MapV ln1_gain() const { return MapV(p + lo->ln1_g, lo->d); }
  MapV ln1_bias() const { return MapV(p + lo->ln1_b, lo->d); }
  MapV ln2_gain() const { return MapV(p + lo->ln2_g, lo->d); }
  MapV ln2_bias() const { return MapV(p + lo->ln2_b, lo->d); }
};
template <class S>
using LayerView = LayerViewT<S, false>;
template <class S>
using ConstLayerView = LayerViewT<S, true>;

template <class S, bool IsConst>
struct HeadViewT {
  using Ptr = std::conditional_t<IsConst, const S*, S*>;
  using MapM = Eigen::Map<std::conditional_t<IsConst, const MatX<S>, MatX<S>>>;
  using MapV = Eigen::Map<std::conditional_t<IsConst, const VecX<S>, VecX<S>>>;

  Ptr p = nullptr;
  const HeadLayout* lo = nullptr;

  MapV ln_gain() const { return MapV(p + lo->ln_g, lo->d); }
  MapV ln_bias() const { return MapV(p + lo->ln_b, lo->d); }
  MapM w() const { return MapM(p + lo->w, lo->d, lo->vocab); }  // untied only
  MapV b() const { return MapV(p + lo->b, lo->vocab); }
};
template <class S>
using HeadView = HeadViewT<S, false>;
template <class S>
using ConstHeadView = HeadViewT<S, true>;

// One physical parameter set with its optimizer moments. Tied layers hold
// shared_ptrs to the same block.
template <class S>
struct ParamBlock {
  VecX<S> w, m, v;
  long adam_t = 0;

  explicit ParamBlock(long n)
      : w(VecX<S>::Zero(n)), m(VecX<S>::Zero(n)), v(VecX<S>::Zero(n)) {}

  void reset_moments() {
    m.setZero();
    v.setZero();
    adam_t = 0;
  }
};

// Tying-aware container for the whole network. blocks[i] is layer i's
// storage; aliasing between entries is the tying structure, so grouped
// layers are bit-identical by construction. Embeddings, positions and the
// head are never tied to decoder blocks.
template <class S>
struct ParameterStore {
  ModelConfig cfg;
  LayerLayout block_layout;
  HeadLayout head_layout;
  std::vector<std::shared_ptr<ParamBlock<S>>> blocks;
  ParamBlock<S> embedding{0}, position{0}, head{0};
  std::vector<char> frozen;
  std::uint64_t version = 0;  // bumped on every structural change

  LayerView<S> layer(int i) { return {blocks[i]->w.data(), &block_layout}; }
  ConstLayerView<S> layer(int i) const {
    return {blocks[i]->w.data(), &block_layout};
  }
  HeadView<S> head_view() { return {head.w.data(), &head_layout}; }
  ConstHeadView<S> head_view() const { return {head.w.data(), &head_layout}; }

  Eigen::Map<MatX<S>> embedding_matrix() {
    return {embedding.w.data(), cfg.vocab_size, cfg.d_model};
  }
  Eigen::Map<const MatX<S>> embedding_matrix() const {
    return {embedding.w.data(), cfg.vocab_size, cfg.d_model};
  }
  Eigen::Map<MatX<S>> position_matrix() {
    return {position.w.data(), cfg.context_length, cfg.d_model};
  }
  Eigen::Map<const MatX<S>> position_matrix() const {
    return {position.w.data(), cfg.context_length, cfg.d_model};
  }

  // Physical grouping implied by block aliasing, as a canonical state.
  TyingState tying() const {
    TyingState s;
    s.entries.resize(cfg.n_layers);
    for (int i = 0; i < cfg.n_layers; ++i) {
      int rep = i;
      for (int j = 0; j < i; ++j) {
        if (blocks[j] == blocks[i]) {
          rep = j;
          break;
        }
      }
      s.entries[i] = rep;
    }
    return s;
  }

  bool is_rep(int i) const {
    for (int j = 0; j < i; ++j)
      if (blocks[j] == blocks[i]) return false;
    return true;
  }
};

namespace detail {

template <class S>
void fill_normal(Eigen::Ref<VecX<S>> dst, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < dst.size(); ++i)
    dst[i] = static_cast<S>(rng.normal() * stddev);
}

}  // namespace detail

// Fresh store: every layer holds its own randomly initialized block, and
// layers 1..L-1 start frozen so that only layer 0 (plus embeddings and the
// head) trains until the first tying transition is applied.
template <class S>
ParameterStore<S> init_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ParameterStore<S> store;
  store.cfg = cfg;
  store.block_layout = LayerLayout::make(cfg.d_model, cfg.d_ffn);
  store.head_layout =
      HeadLayout::make(cfg.d_model, cfg.vocab_size, cfg.tie_embedding_to_head);

  const double init_std = 0.02;

  store.embedding = ParamBlock<S>(long(cfg.vocab_size) * cfg.d_model);
  detail::fill_normal<S>(store.embedding.w, rng, init_std);
  store.position = ParamBlock<S>(long(cfg.context_length) * cfg.d_model);
  detail::fill_normal<S>(store.position.w, rng, init_std);

  const LayerLayout& lo = store.block_layout;
  for (int i = 0; i < cfg.n_layers; ++i) {
    auto blk = std::make_shared<ParamBlock<S>>(lo.total);
    LayerView<S> view{blk->w.data(), &lo};
    detail::fill_normal<S>(blk->w.segment(lo.wq, long(lo.d) * lo.d), rng, init_std);
    detail::fill_normal<S>(blk->w.segment(lo.wk, long(lo.d) * lo.d), rng, init_std);
    detail::fill_normal<S>(blk->w.segment(lo.wv, long(lo.d) * lo.d), rng, init_std);
    detail::fill_normal<S>(blk->w.segment(lo.wo, long(lo.d) * lo.d), rng, init_std);
    detail::fill_normal<S>(blk->w.segment(lo.wu, long(lo.d) * lo.dff), rng, init_std);
    detail::fill_normal<S>(blk->w.segment(lo.wd, long(lo.dff) * lo.d), rng, init_std);
    view.ln1_gain().setOnes();
    view.ln2_gain().setOnes();
    store.blocks.push_back(std::move(blk));
  }

  store.head = ParamBlock<S>(store.head_layout.total);
  HeadView<S> hv{store.head.w.data(), &store.head_layout};
  hv.ln_gain().setOnes();
  if (!cfg.tie_embedding_to_head) {
    detail::fill_normal<S>(
        store.head.w.segment(store.head_layout.w, long(cfg.d_model) * cfg.vocab_size),
        rng, init_std);
  }

  store.frozen.assign(cfg.n_layers, 1);
  store.frozen[0] = 0;
  return store;
}

template <class S>
void set_all_trainable(ParameterStore<S>& store) {
  bool changed = false;
  for (auto& f : store.frozen)
    if (f) {
      f = 0;
      changed = true;
    }
  if (changed) ++store.version;
}

// Applies a tying transition to the physical storage. Processed layers:
// those whose entry changed, or every layer when first_transition and
// forced_full_first are both set (the bookkeeping state starts all-zero
// while the storage is still independent, so the first transition must
// materialize the whole state). Unties copy the layer's current weights
// into a fresh block with zeroed moments; ties alias the representative's
// block. Every processed layer is unfrozen.
template <class S>
EventDiff apply_state(ParameterStore<S>& store, const TyingState& s_old,
                      const TyingState& s_new, bool first_transition,
                      bool forced_full_first = true) {
  validate(s_old);
  validate(s_new);
  const int n = store.cfg.n_layers;
  if (s_old.size() != n || s_new.size() != n)
    throw std::invalid_argument("apply_state: state length does not match model");

  const EventDiff diff = diff_events(s_old, s_new);
  const bool full = first_transition && forced_full_first;
  bool structural = false;
  for (int i = 0; i < n; ++i) {
    if (!full && s_new[i] == s_old[i]) continue;
    if (s_new[i] == i) {
      auto fresh = std::make_shared<ParamBlock<S>>(store.block_layout.total);
      fresh->w = store.blocks[i]->w;
      store.blocks[i] = std::move(fresh);
    } else {
      store.blocks[i] = store.blocks[s_new[i]];
    }
    store.frozen[i] = 0;
    structural = true;
  }
  if (structural) ++store.version;
  return diff;
}

// Variant for runs where grouping is bookkeeping-only: transitions copy
// weights across blocks but never alias storage, so layers drift apart
// again after the copy.
template <class S>
EventDiff apply_state_copy_only(ParameterStore<S>& store, const TyingState& s_old,
                                const TyingState& s_new, bool first_transition,
                                bool forced_full_first = true) {
  validate(s_old);
  validate(s_new);
  const int n = store.cfg.n_layers;
  if (s_old.size() != n || s_new.size() != n)
    throw std::invalid_argument("apply_state: state length does not match model");

  const EventDiff diff = diff_events(s_old, s_new);
  const bool full = first_transition && forced_full_first;
  bool structural = false;
  for (int i = 0; i < n; ++i) {
    if (!full && s_new[i] == s_old[i]) continue;
    if (s_new[i] != i) {
      store.blocks[i]->w = store.blocks[s_new[i]]->w;
      store.blocks[i]->reset_moments();
    }
    store.frozen[i] = 0;
    structural = true;
  }
  if (structural) ++store.version;
  return diff;
}

struct Batch {
  Eigen::MatrixXi inputs;   // batch x time
  Eigen::MatrixXi targets;  // inputs shifted left by one token
};

template <class S>
void validate_batch(const ParameterStore<S>& store, const Batch& batch) {
  if (batch.inputs.rows() < 1 || batch.inputs.cols() < 1)
    throw std::invalid_argument("batch: empty");
  if (batch.inputs.rows() != batch.targets.rows() ||
      batch.inputs.cols() != batch.targets.cols())
    throw std::invalid_argument("batch: inputs/targets shape mismatch");
  if (batch.inputs.cols() > store.cfg.context_length)
    throw std::invalid_argument("batch: sequence length " +
                                std::to_string(batch.inputs.cols()) +
                                " exceeds context_length " +
                                std::to_string(store.cfg.context_length));
  const int v = store.cfg.vocab_size;
  for (Eigen::Index b = 0; b < batch.inputs.rows(); ++b) {
    for (Eigen::Index t = 0; t < batch.inputs.cols(); ++t) {
      const int x = batch.inputs(b, t), y = batch.targets(b, t);
      if (x < 0 || x >= v || y < 0 || y >= v)
        throw std::invalid_argument("batch: token id out of range");
    }
  }
}

namespace detail {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

template <class S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x * S(kInvSqrt2)));
}

template <class S>
S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x * S(kInvSqrt2)));
  const S pdf = S(kInvSqrt2Pi) * std::exp(S(-0.5) * x * x);
  return cdf + x * pdf;
}

// Row-wise layer norm; caches per-row mean and inverse std for backward.
template <class S, class GainT, class BiasT>
void layer_norm_forward(const MatX<S>& x, const GainT& gain, const BiasT& bias,
                        MatX<S>& y, VecX<S>& mu, VecX<S>& inv_std) {
  const Eigen::Index rows = x.rows(), d = x.cols();
  y.resize(rows, d);
  mu.resize(rows);
  inv_std.resize(rows);
  for (Eigen::Index t = 0; t < rows; ++t) {
    const S m = x.row(t).mean();
    const S var = (x.row(t).array() - m).square().mean();
    const S inv = S(1) / std::sqrt(var + S(kLnEps));
    mu[t] = m;
    inv_std[t] = inv;
    y.row(t) = (((x.row(t).array() - m) * inv) * gain.transpose().array() +
                bias.transpose().array())
                   .matrix();
  }
}

// Returns dx; accumulates dgain/dbias.
template <class S, class GainT, class GGainT, class GBiasT>
MatX<S> layer_norm_backward(const MatX<S>& x, const VecX<S>& mu,
                            const VecX<S>& inv_std, const GainT& gain,
                            const MatX<S>& dy, GGainT&& dgain, GBiasT&& dbias) {
  const Eigen::Index rows = x.rows(), d = x.cols();
  MatX<S> dx(rows, d);
  for (Eigen::Index t = 0; t < rows; ++t) {
    const auto xhat = ((x.row(t).array() - mu[t]) * inv_std[t]).eval();
    const auto dxhat = (dy.row(t).array() * gain.transpose().array()).eval();
    const S m1 = dxhat.mean();
    const S m2 = (dxhat * xhat).mean();
    dx.row(t) = (inv_std[t] * (dxhat - m1 - xhat * m2)).matrix();
    dbias += dy.row(t).transpose();
    dgain += (dy.row(t).array() * xhat).matrix().transpose();
  }
  return dx;
}

template <class S>
struct LayerCache {
  MatX<S> x_in, n1, q, k, v, ctx, x_mid, n2, u_pre, u;
  VecX<S> ln1_mu, ln1_inv, ln2_mu, ln2_inv;
  std::vector<MatX<S>> attn;  // per head, rows past the diagonal zeroed
};

template <class S>
struct ItemCache {
  MatX<S> x0, x_final, nf, logits;
  VecX<S> lnf_mu, lnf_inv;
  std::vector<LayerCache<S>> layers;
};

// Causal multi-head attention + FFN block with pre-norm residuals.
template <class S>
MatX<S> block_forward_cached(const ConstLayerView<S>& view, int n_heads,
                             const MatX<S>& x, LayerCache<S>& c) {
  const Eigen::Index t_len = x.rows(), d = x.cols();
  const Eigen::Index dh = d / n_heads;
  const S scale = S(1) / std::sqrt(S(dh));

  c.x_in = x;
  layer_norm_forward<S>(c.x_in, view.ln1_gain(), view.ln1_bias(), c.n1, c.ln1_mu,
                        c.ln1_inv);
  c.q = (c.n1 * view.wq()).rowwise() + view.bq().transpose();
  c.k = (c.n1 * view.wk()).rowwise() + view.bk().transpose();
  c.v = (c.n1 * view.wv()).rowwise() + view.bv().transpose();

  c.attn.assign(n_heads, MatX<S>());
  c.ctx.resize(t_len, d);
  for (int h = 0; h < n_heads; ++h) {
    const auto qh = c.q.middleCols(h * dh, dh);
    const auto kh = c.k.middleCols(h * dh, dh);
    const auto vh = c.v.middleCols(h * dh, dh);
    MatX<S>& a = c.attn[h];
    a.noalias() = qh * kh.transpose();
    a *= scale;
    for (Eigen::Index t = 0; t < t_len; ++t) {
      auto row = a.row(t).head(t + 1);
      const S mx = row.maxCoeff();
      row = (row.array() - mx).exp();
      row /= row.sum();
      if (t + 1 < t_len) a.row(t).tail(t_len - t - 1).setZero();
    }
    c.ctx.middleCols(h * dh, dh).noalias() = a * vh;
  }

  c.x_mid = c.x_in + ((c.ctx * view.wo()).rowwise() + view.bo().transpose());

  layer_norm_forward<S>(c.x_mid, view.ln2_gain(), view.ln2_bias(), c.n2, c.ln2_mu,
                        c.ln2_inv);
  c.u_pre = (c.n2 * view.wu()).rowwise() + view.bu().transpose();
  c.u = c.u_pre.unaryExpr([](S z) { return gelu(z); });
  return c.x_mid + ((c.u * view.wd()).rowwise() + view.bd().transpose());
}

// Backward through one block. dW accumulation goes into grad_view when
// grad_base is non-null; dx propagation always happens.
template <class S>
MatX<S> block_backward(const ConstLayerView<S>& view, int n_heads,
                       const LayerCache<S>& c, const MatX<S>& d_out,
                       S* grad_base, const LayerLayout& lo) {
  const Eigen::Index t_len = c.x_in.rows(), d = c.x_in.cols();
  const Eigen::Index dh = d / n_heads;
  const S scale = S(1) / std::sqrt(S(dh));
  const bool acc = grad_base != nullptr;
  LayerView<S> g{grad_base, &lo};

  // FFN sublayer: x_out = x_mid + u * wd + bd
  MatX<S> d_mid = d_out;
  MatX<S> du = d_out * view.wd().transpose();
  if (acc) {
    g.wd().noalias() += c.u.transpose() * d_out;
    g.bd() += d_out.colwise().sum().transpose();
  }
  MatX<S> du_pre =
      du.cwiseProduct(c.u_pre.unaryExpr([](S z) { return gelu_grad(z); }));
  if (acc) {
    g.wu().noalias() += c.n2.transpose() * du_pre;
    g.bu() += du_pre.colwise().sum().transpose();
  }
  MatX<S> dn2 = du_pre * view.wu().transpose();
  if (acc) {
    d_mid += layer_norm_backward<S>(c.x_mid, c.ln2_mu, c.ln2_inv, view.ln2_gain(),
                                    dn2, g.ln2_gain(), g.ln2_bias());
  } else {
    VecX<S> sink_g = VecX<S>::Zero(d), sink_b = VecX<S>::Zero(d);
    d_mid += layer_norm_backward<S>(c.x_mid, c.ln2_mu, c.ln2_inv, view.ln2_gain(),
                                    dn2, sink_g, sink_b);
  }

  // Attention sublayer: x_mid = x_in + ctx * wo + bo
  MatX<S> d_ctx = d_mid * view.wo().transpose();
  if (acc) {
    g.wo().noalias() += c.ctx.transpose() * d_mid;
    g.bo() += d_mid.colwise().sum().transpose();
  }

  MatX<S> dq(t_len, d), dk(t_len, d), dv(t_len, d);
  for (int h = 0; h < n_heads; ++h) {
    const auto qh = c.q.middleCols(h * dh, dh);
    const auto kh = c.k.middleCols(h * dh, dh);
    const auto vh = c.v.middleCols(h * dh, dh);
    const MatX<S>& a = c.attn[h];
    const auto d_ctx_h = d_ctx.middleCols(h * dh, dh);

    MatX<S> da = d_ctx_h * vh.transpose();
    dv.middleCols(h * dh, dh).noalias() = a.transpose() * d_ctx_h;
    // softmax rows; masked entries have a == 0, so they contribute nothing
    const VecX<S> rd = (a.array() * da.array()).rowwise().sum();
    MatX<S> ds =
        (a.array() * (da.array().colwise() - rd.array())).matrix() * scale;
    dq.middleCols(h * dh, dh).noalias() = ds * kh;
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * qh;
  }

  if (acc) {
    g.wq().noalias() += c.n1.transpose() * dq;
    g.bq() += dq.colwise().sum().transpose();
    g.wk().noalias() += c.n1.transpose() * dk;
    g.bk() += dk.colwise().sum().transpose();
    g.wv().noalias() += c.n1.transpose() * dv;
    g.bv() += dv.colwise().sum().transpose();
  }
  MatX<S> dn1 = dq * view.wq().transpose() + dk * view.wk().transpose() +
                dv * view.wv().transpose();
  MatX<S> dx = d_mid;
  if (acc) {
    dx += layer_norm_backward<S>(c.x_in, c.ln1_mu, c.ln1_inv, view.ln1_gain(), dn1,
                                 g.ln1_gain(), g.ln1_bias());
  } else {
    VecX<S> sink_g = VecX<S>::Zero(d), sink_b = VecX<S>::Zero(d);
    dx += layer_norm_backward<S>(c.x_in, c.ln1_mu, c.ln1_inv, view.ln1_gain(), dn1,
                                 sink_g, sink_b);
  }
  return dx;
}

// Token cross-entropy of one logit row; optionally materializes the softmax
// for the backward pass. Both the loss path and the perplexity path go
// through here so the two agree bit for bit.
template <class S, class RowT>
double ce_row(const RowT& row, int target, VecX<S>* softmax_out) {
  const S mx = row.maxCoeff();
  VecX<S> p = (row.array() - mx).exp().matrix().transpose();
  const S z = p.sum();
  const double ce = double(std::log(z) - (row[target] - mx));
  if (softmax_out) {
    p /= z;
    *softmax_out = std::move(p);
  }
  return ce;
}

// Full cached forward for one sequence; logits land in cache.logits (T x V).
template <class S>
void item_forward(const ParameterStore<S>& store,
                  const Eigen::Ref<const Eigen::VectorXi>& tokens,
                  ItemCache<S>& cache) {
  const int t_len = static_cast<int>(tokens.size());
  const int d = store.cfg.d_model;
  const auto emb = store.embedding_matrix();
  const auto pos = store.position_matrix();

  cache.x0.resize(t_len, d);
  for (int t = 0; t < t_len; ++t)
    cache.x0.row(t) = emb.row(tokens[t]) + pos.row(t);

  cache.layers.resize(store.cfg.n_layers);
  MatX<S> x = cache.x0;
  for (int l = 0; l < store.cfg.n_layers; ++l)
    x = block_forward_cached<S>(store.layer(l), store.cfg.n_heads, x,
                                cache.layers[l]);
  cache.x_final = std::move(x);

  const auto hv = store.head_view();
  layer_norm_forward<S>(cache.x_final, hv.ln_gain(), hv.ln_bias(), cache.nf,
                        cache.lnf_mu, cache.lnf_inv);
  if (store.head_layout.tied) {
    cache.logits.noalias() = cache.nf * store.embedding_matrix().transpose();
  } else {
    cache.logits.noalias() = cache.nf * hv.w();
  }
  cache.logits.rowwise() += hv.b().transpose();
}

}  // namespace detail

// Per-layer gradient buffers keyed by physical representative; frozen
// groups get no entry. version must match the store the gradients were
// computed against.
template <class S>
struct Gradients {
  std::uint64_t version = 0;
  std::vector<VecX<S>> blocks;
  VecX<S> embedding, position, head;

  bool has_block(int i) const {
    return i < static_cast<int>(blocks.size()) && blocks[i].size() > 0;
  }
};

// Logits for a whole batch, flattened to (batch*time) x vocab with row
// b*time + t. Causal masking guarantees row (b, t) depends only on
// inputs (b, <= t).
template <class S>
MatX<S> forward(const ParameterStore<S>& store, const Eigen::MatrixXi& inputs) {
  Batch probe{inputs, inputs};
  validate_batch(store, probe);
  const int b_sz = static_cast<int>(inputs.rows());
  const int t_len = static_cast<int>(inputs.cols());
  MatX<S> out(long(b_sz) * t_len, store.cfg.vocab_size);
  detail::ItemCache<S> cache;
  for (int b = 0; b < b_sz; ++b) {
    detail::item_forward<S>(store, inputs.row(b).transpose(), cache);
    out.middleRows(long(b) * t_len, t_len) = cache.logits;
  }
  return out;
}

// Exposed for stack-equivalence checks: one decoder block applied to a raw
// activation matrix.
template <class S>
MatX<S> block_forward(const ParameterStore<S>& store, int layer_index,
                      const MatX<S>& x) {
  detail::LayerCache<S> scratch;
  return detail::block_forward_cached<S>(store.layer(layer_index),
                                         store.cfg.n_heads, x, scratch);
}

// Companion to block_forward: final norm plus output projection on raw
// activations.
template <class S>
MatX<S> head_forward(const ParameterStore<S>& store, const MatX<S>& x) {
  const auto hv = store.head_view();
  MatX<S> nf;
  VecX<S> mu, inv;
  detail::layer_norm_forward<S>(x, hv.ln_gain(), hv.ln_bias(), nf, mu, inv);
  MatX<S> logits;
  if (store.head_layout.tied) {
    logits.noalias() = nf * store.embedding_matrix().transpose();
  } else {
    logits.noalias() = nf * hv.w();
  }
  logits.rowwise() += hv.b().transpose();
  return logits;
}

// Token embedding plus learned positions for one sequence.
template <class S>
MatX<S> embed_tokens(const ParameterStore<S>& store,
                     const Eigen::Ref<const Eigen::VectorXi>& tokens) {
  const auto emb = store.embedding_matrix();
  const auto pos = store.position_matrix();
  MatX<S> x(tokens.size(), store.cfg.d_model);
  for (Eigen::Index t = 0; t < tokens.size(); ++t)
    x.row(t) = emb.row(tokens[t]) + pos.row(t);
  return x;
}

// Mean token cross-entropy and parameter gradients. Gradients of tied
// layers accumulate across every stack position of the group; frozen
// layers contribute activation gradients only.
template <class S>
std::pair<S, Gradients<S>> loss_and_grads(const ParameterStore<S>& store,
                                          const Batch& batch) {
  validate_batch(store, batch);
  const int b_sz = static_cast<int>(batch.inputs.rows());
  const int t_len = static_cast<int>(batch.inputs.cols());
  const int n_layers = store.cfg.n_layers;
  const int d = store.cfg.d_model;

  Gradients<S> g;
  g.version = store.version;
  g.blocks.resize(n_layers);
  const TyingState phys = store.tying();
  for (int i = 0; i < n_layers; ++i) {
    const int rep = phys[i];
    if (!store.frozen[i] && g.blocks[rep].size() == 0)
      g.blocks[rep] = VecX<S>::Zero(store.block_layout.total);
  }
  g.embedding = VecX<S>::Zero(store.embedding.w.size());
  g.position = VecX<S>::Zero(store.position.w.size());
  g.head = VecX<S>::Zero(store.head.w.size());

  auto emb_grad = Eigen::Map<MatX<S>>(g.embedding.data(), store.cfg.vocab_size, d);
  auto pos_grad =
      Eigen::Map<MatX<S>>(g.position.data(), store.cfg.context_length, d);
  HeadView<S> hg{g.head.data(), &store.head_layout};
  const auto hv = store.head_view();

  const S dscale = S(1) / S(long(b_sz) * t_len);
  double loss_sum = 0.0;

  detail::ItemCache<S> cache;
  for (int b = 0; b < b_sz; ++b) {
    detail::item_forward<S>(store, batch.inputs.row(b).transpose(), cache);

    // softmax cross-entropy over each row
    MatX<S> dlogits(t_len, store.cfg.vocab_size);
    VecX<S> p;
    for (int t = 0; t < t_len; ++t) {
      const int y = batch.targets(b, t);
      loss_sum += detail::ce_row<S>(cache.logits.row(t), y, &p);
      p[y] -= S(1);
      dlogits.row(t) = p.transpose() * dscale;
    }
    if (!std::isfinite(loss_sum))
      throw std::runtime_error("loss_and_grads: non-finite loss");

    // head backward
    MatX<S> dnf;
    if (store.head_layout.tied) {
      dnf.noalias() = dlogits * store.embedding_matrix();
      emb_grad.noalias() += dlogits.transpose() * cache.nf;
    } else {
      dnf.noalias() = dlogits * hv.w().transpose();
      hg.w().noalias() += cache.nf.transpose() * dlogits;
    }
    hg.b() += dlogits.colwise().sum().transpose();
    MatX<S> dx = detail::layer_norm_backward<S>(
        cache.x_final, cache.lnf_mu, cache.lnf_inv, hv.ln_gain(), dnf,
        hg.ln_gain(), hg.ln_bias());

    for (int l = n_layers - 1; l >= 0; --l) {
      S* grad_base = nullptr;
      if (!store.frozen[l]) grad_base = g.blocks[phys[l]].data();
      dx = detail::block_backward<S>(store.layer(l), store.cfg.n_heads,
                                     cache.layers[l], dx, grad_base,
                                     store.block_layout);
    }

    for (int t = 0; t < t_len; ++t) {
      emb_grad.row(batch.inputs(b, t)) += dx.row(t);
      pos_grad.row(t) += dx.row(t);
    }
  }

  // same arithmetic as perplexity() so exp(loss) reproduces it exactly
  return {S(loss_sum / double(long(b_sz) * t_len)), std::move(g)};
}

// Adam update applied once per physical group and to the shared tensors.
// Rejects gradients computed against a different tying structure.
template <class S>
void optimizer_step(ParameterStore<S>& store, const Gradients<S>& g, S lr) {
  if (g.version != store.version)
    throw std::runtime_error(
        "optimizer_step: stale gradients (structure changed since computation)");
  const AdamConfig<S> cfg{lr};
  for (int i = 0; i < store.cfg.n_layers; ++i) {
    if (!g.has_block(i)) continue;
    if (!store.is_rep(i))
      throw std::logic_error("optimizer_step: gradient on non-representative");
    ParamBlock<S>& blk = *store.blocks[i];
    blk.adam_t += 1;
    adam_step<S>(blk.w, g.blocks[i], blk.m, blk.v, blk.adam_t, cfg);
  }
  auto shared_step = [&cfg](ParamBlock<S>& blk, const VecX<S>& grad) {
    blk.adam_t += 1;
    adam_step<S>(blk.w, grad, blk.m, blk.v, blk.adam_t, cfg);
  };
  shared_step(store.embedding, g.embedding);
  shared_step(store.position, g.position);
  shared_step(store.head, g.head);
}

// exp(mean token cross-entropy); clamped at ceiling on overflow.
template <class S>
S perplexity(const ParameterStore<S>& store, const Batch& batch,
             S ceiling = S(1e12)) {
  validate_batch(store, batch);
  const int b_sz = static_cast<int>(batch.inputs.rows());
  const int t_len = static_cast<int>(batch.inputs.cols());
  double ce_sum = 0.0;
  detail::ItemCache<S> cache;
  VecX<S> p;
  for (int b = 0; b < b_sz; ++b) {
    detail::item_forward<S>(store, batch.inputs.row(b).transpose(), cache);
    for (int t = 0; t < t_len; ++t)
      ce_sum += detail::ce_row<S>(cache.logits.row(t), batch.targets(b, t), &p);
  }
  const double mean_ce = ce_sum / double(long(b_sz) * t_len);
  const double ppl = std::exp(mean_ce);
  if (!std::isfinite(ppl) || ppl > double(ceiling)) return ceiling;
  return S(ppl);
}

inline long layer_param_count(const ModelConfig& cfg) {
  return LayerLayout::make(cfg.d_model, cfg.d_ffn).total;
}

// Parameters receiving optimizer updates right now: one copy per unfrozen
// physical group plus embeddings, positions and the head.
template <class S>
long trainable_block_params(const ParameterStore<S>& store) {
  long n = 0;
  for (int i = 0; i < store.cfg.n_layers; ++i)
    if (store.is_rep(i) && !store.frozen[i]) n += store.block_layout.total;
  return n;
}

template <class S>
long trainable_param_count(const ParameterStore<S>& store) {
  return trainable_block_params(store) + store.embedding.w.size() +
         store.position.w.size() + store.head.w.size();
}

}  // namespace dlt
