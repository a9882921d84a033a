#pragma once

#include <Eigen/Core>

namespace dlt {

template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <class S>
struct AdamConfig {
  S lr;
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
};

// One Adam step on a flat parameter vector. t is the step count after this
// update (1 on the first call); m and v are the running moment estimates.
template <class S>
void adam_step(Eigen::Ref<VecX<S>> w, const Eigen::Ref<const VecX<S>>& g,
               VecX<S>& m, VecX<S>& v, long t, const AdamConfig<S>& cfg) {
  m = cfg.beta1 * m + (S(1) - cfg.beta1) * g;
  v = cfg.beta2 * v + (S(1) - cfg.beta2) * g.cwiseProduct(g);
  const S c1 = S(1) - std::pow(cfg.beta1, S(t));
  const S c2 = S(1) - std::pow(cfg.beta2, S(t));
  w.array() -= cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
}

}  // namespace dlt
