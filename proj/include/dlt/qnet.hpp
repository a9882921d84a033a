#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

#include "dlt/adam.hpp"
#include "dlt/rng.hpp"
#include "dlt/tying.hpp"

namespace dlt {

// One-hidden-layer MLP scoring every (layer, choice) pair of the packed
// action layout in a single forward pass. Input is the tying state for
// layers 1..L-1, each entry normalized by 1/(L-1) so the input scale does
// not depend on L.
template <class S>
struct QNet {
  int n_layers = 0;
  int input_dim = 0;   // L-1
  int hidden_dim = 0;
  int output_dim = 0;  // (L+2)(L-1)/2

  MatX<S> w1;  // hidden x input
  VecX<S> b1;
  MatX<S> w2;  // output x hidden
  VecX<S> b2;

  // Adam state over the flattened weights, in w1|b1|w2|b2 order.
  VecX<S> moment1, moment2;
  long adam_t = 0;

  long n_params() const {
    return static_cast<long>(w1.size() + b1.size() + w2.size() + b2.size());
  }
};

struct ControllerConfig {
  double gamma = 0.99;
  double epsilon = 1.0;
  double epsilon_decay = 0.95;
  double epsilon_floor = 0.1;
  double learning_rate = 1e-3;
  int hidden_dim = 128;

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0))
      throw std::invalid_argument("controller.gamma must be in [0,1)");
    if (!(epsilon_floor >= 0.0 && epsilon_floor <= epsilon && epsilon <= 1.0))
      throw std::invalid_argument("controller: need 0 <= epsilon_floor <= epsilon <= 1");
    if (!(epsilon_decay > 0.0 && epsilon_decay < 1.0))
      throw std::invalid_argument("controller.epsilon_decay must be in (0,1)");
    if (!(learning_rate > 0.0))
      throw std::invalid_argument("controller.learning_rate must be positive");
    if (hidden_dim < 1) throw std::invalid_argument("controller.hidden_dim must be >= 1");
  }
};

// Uniform fan-in init, seedable.
template <class S>
QNet<S> make_qnet(int n_layers, Rng& rng, int hidden_dim = 128) {
  if (n_layers < 1) throw std::invalid_argument("make_qnet: n_layers must be >= 1");
  QNet<S> net;
  net.n_layers = n_layers;
  net.input_dim = n_layers - 1;
  net.hidden_dim = hidden_dim;
  net.output_dim = packed_size(n_layers);

  auto fill_uniform = [&rng](auto&& block, double bound) {
    for (Eigen::Index j = 0; j < block.cols(); ++j)
      for (Eigen::Index i = 0; i < block.rows(); ++i)
        block(i, j) = static_cast<S>((rng.uniform() * 2.0 - 1.0) * bound);
  };

  const double bound1 = net.input_dim > 0 ? 1.0 / std::sqrt(double(net.input_dim)) : 0.0;
  const double bound2 = 1.0 / std::sqrt(double(hidden_dim));
  net.w1.resize(hidden_dim, net.input_dim);
  net.b1.resize(hidden_dim);
  net.w2.resize(net.output_dim, hidden_dim);
  net.b2.resize(net.output_dim);
  fill_uniform(net.w1, bound1);
  fill_uniform(net.b1, bound1);
  fill_uniform(net.w2, bound2);
  fill_uniform(net.b2, bound2);

  net.moment1 = VecX<S>::Zero(net.n_params());
  net.moment2 = VecX<S>::Zero(net.n_params());
  return net;
}

// State encoding fed to the net: s[1..L-1] scaled into [0,1].
template <class S>
VecX<S> encode_state(const TyingState& s) {
  const int n = s.size();
  VecX<S> x(n - 1);
  const S scale = n > 1 ? S(1) / S(n - 1) : S(0);
  for (int i = 1; i < n; ++i) x[i - 1] = S(s[i]) * scale;
  return x;
}

template <class S>
void check_compatible(const QNet<S>& net, const TyingState& s) {
  if (s.size() != net.n_layers) {
    throw std::invalid_argument("qnet: state length " + std::to_string(s.size()) +
                                " does not match net layers " +
                                std::to_string(net.n_layers));
  }
}

// Packed Q-values for every per-layer choice; entry flat_offset({i, j}) is
// the value of setting a[i] = j.
template <class S>
VecX<S> q_forward(const QNet<S>& net, const TyingState& s) {
  check_compatible(net, s);
  validate(s);
  const VecX<S> x = encode_state<S>(s);
  const VecX<S> h = (net.w1 * x + net.b1).cwiseMax(S(0));
  return net.w2 * h + net.b2;
}

// Value of a full action vector: the sum of its per-layer packed entries.
template <class S>
S q_value(const QNet<S>& net, const TyingState& s, const ActionVector& a) {
  check_compatible(net, s);
  if (a.size() != net.n_layers)
    throw std::invalid_argument("q_value: action length mismatch");
  validate(a);
  const VecX<S> q = q_forward(net, s);
  S total = S(0);
  for (int i = 1; i < net.n_layers; ++i) total += q[flat_offset({i, a[i]})];
  return total;
}

// Coordinate-wise argmax over each layer's packed row. Because the action
// value is a sum of independent per-layer terms, this equals the joint
// argmax. Ties break toward the lowest choice index.
template <class S>
ActionVector greedy_action(const QNet<S>& net, const TyingState& s) {
  const VecX<S> q = q_forward(net, s);
  ActionVector a;
  a.entries.assign(net.n_layers, 0);
  for (int i = 1; i < net.n_layers; ++i) {
    int best = 0;
    S best_val = q[flat_offset({i, 0})];
    for (int j = 1; j <= i; ++j) {
      const S v = q[flat_offset({i, j})];
      if (v > best_val) {
        best_val = v;
        best = j;
      }
    }
    a.entries[i] = best;
  }
  return a;
}

// Sum of per-layer row maxima; equals the joint maximum of q_value.
template <class S>
S max_q(const QNet<S>& net, const TyingState& s) {
  const VecX<S> q = q_forward(net, s);
  S total = S(0);
  for (int i = 1; i < net.n_layers; ++i) {
    S best = q[flat_offset({i, 0})];
    for (int j = 1; j <= i; ++j) best = std::max(best, q[flat_offset({i, j})]);
    total += best;
  }
  return total;
}

// Epsilon-greedy: uniform action with probability epsilon, greedy otherwise.
template <class S>
ActionVector policy(const QNet<S>& net, const TyingState& s,
                    const ControllerConfig& cfg, Rng& rng) {
  cfg.validate();
  if (rng.uniform() < cfg.epsilon) return uniform_random_action(net.n_layers, rng);
  return greedy_action(net, s);
}

// One-step bootstrapped regression target from the live network.
template <class S>
S bellman_target(S r_step, const ControllerConfig& cfg, const QNet<S>& net,
                 const TyingState& s_next) {
  if (!std::isfinite(double(r_step)))
    throw std::runtime_error("bellman_target: non-finite reward");
  return r_step + S(cfg.gamma) * max_q(net, s_next);
}

// Loss and flat analytic gradient (w1|b1|w2|b2 order) of
// (q_value(net, s, a) - target)^2. Shared by the update step and the
// finite-difference checks.
template <class S>
S q_loss_grads(const QNet<S>& net, const TyingState& s, const ActionVector& a,
               S target, VecX<S>& grad) {
  check_compatible(net, s);
  validate(a);
  const VecX<S> x = encode_state<S>(s);
  const VecX<S> pre = net.w1 * x + net.b1;
  const VecX<S> h = pre.cwiseMax(S(0));
  const VecX<S> q = net.w2 * h + net.b2;

  S pred = S(0);
  for (int i = 1; i < net.n_layers; ++i) pred += q[flat_offset({i, a[i]})];
  const S err = pred - target;
  const S loss = err * err;

  VecX<S> dq = VecX<S>::Zero(net.output_dim);
  for (int i = 1; i < net.n_layers; ++i) dq[flat_offset({i, a[i]})] += S(2) * err;

  VecX<S> dh = net.w2.transpose() * dq;
  for (Eigen::Index i = 0; i < dh.size(); ++i)
    if (pre[i] <= S(0)) dh[i] = S(0);

  grad.resize(net.n_params());
  Eigen::Index off = 0;
  auto put = [&grad, &off](const auto& block) {
    grad.segment(off, block.size()) =
        Eigen::Map<const VecX<S>>(block.data(), block.size());
    off += block.size();
  };
  const MatX<S> dw1 = dh * x.transpose();
  const MatX<S> dw2 = dq * h.transpose();
  put(dw1);
  put(dh);
  put(dw2);
  put(dq);
  return loss;
}

// Single-transition online Adam step toward the target; returns the
// pre-step loss. No replay buffer and no frozen target network: the live
// network both predicts and bootstraps.
template <class S>
S q_update(QNet<S>& net, const TyingState& s, const ActionVector& a, S target,
           S lr) {
  VecX<S> grad;
  const S loss = q_loss_grads(net, s, a, target, grad);
  if (!grad.allFinite())
    throw std::runtime_error("q_update: non-finite gradient, step skipped");
  if (loss == S(0)) return loss;  // prediction already matches the target

  VecX<S> flat(net.n_params());
  Eigen::Index off = 0;
  auto pack = [&flat, &off](const auto& block) {
    flat.segment(off, block.size()) =
        Eigen::Map<const VecX<S>>(block.data(), block.size());
    off += block.size();
  };
  pack(net.w1);
  pack(net.b1);
  pack(net.w2);
  pack(net.b2);

  net.adam_t += 1;
  adam_step<S>(flat, grad, net.moment1, net.moment2, net.adam_t,
               AdamConfig<S>{lr});

  off = 0;
  auto unpack_into = [&flat, &off](auto&& block) {
    Eigen::Map<VecX<S>>(block.data(), block.size()) =
        flat.segment(off, block.size());
    off += block.size();
  };
  unpack_into(net.w1);
  unpack_into(net.b1);
  unpack_into(net.w2);
  unpack_into(net.b2);
  return loss;
}

// epsilon <- max(epsilon * decay, floor), applied once per controller
// invocation.
inline void decay_epsilon(ControllerConfig& cfg) {
  cfg.epsilon = std::max(cfg.epsilon * cfg.epsilon_decay, cfg.epsilon_floor);
}

}  // namespace dlt
