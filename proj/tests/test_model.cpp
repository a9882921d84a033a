#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "dlt/adam.hpp"
#include "dlt/model.hpp"

using namespace dlt;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ffn = 32;
  cfg.vocab_size = 11;
  cfg.context_length = 8;
  return cfg;
}

Batch random_batch(int b, int t, int vocab, Rng& rng) {
  Batch batch;
  batch.inputs.resize(b, t);
  batch.targets.resize(b, t);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < t; ++j) {
      batch.inputs(i, j) = static_cast<int>(rng.below(vocab));
      batch.targets(i, j) = static_cast<int>(rng.below(vocab));
    }
  return batch;
}

template <class S>
void zero_weights(ParameterStore<S>& store) {
  for (int i = 0; i < store.cfg.n_layers; ++i)
    if (store.is_rep(i)) store.blocks[i]->w.setZero();
  store.embedding.w.setZero();
  store.position.w.setZero();
  store.head.w.setZero();
  // keep norms affine-identity so activations pass through
  for (int i = 0; i < store.cfg.n_layers; ++i) {
    store.layer(i).ln1_gain().setOnes();
    store.layer(i).ln2_gain().setOnes();
  }
  store.head_view().ln_gain().setOnes();
}

// Finite-difference check of every gradient entry against the loss.
template <class PerturbFn>
void fd_check(const std::function<double()>& loss_fn, PerturbFn&& perturb,
              long count, const VecX<double>& analytic, double h = 1e-5) {
  REQUIRE(analytic.size() == count);
  for (long i = 0; i < count; ++i) {
    perturb(i, +h);
    const double up = loss_fn();
    perturb(i, -2 * h);
    const double down = loss_fn();
    perturb(i, +h);
    const double fd = (up - down) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
    CHECK(std::abs(fd - analytic[i]) / denom < 1e-4);
  }
}

}  // namespace

TEST_CASE("init freezes everything but layer 0") {
  Rng rng(1);
  auto store = init_model<float>(tiny_config(), rng);
  CHECK(store.frozen[0] == 0);
  CHECK(store.frozen[1] == 1);
  CHECK(trainable_block_params(store) == layer_param_count(store.cfg));
  CHECK(store.tying().entries == std::vector<int>{0, 1});
}

TEST_CASE("init is deterministic in the seed") {
  Rng rng_a(42), rng_b(42), rng_c(43);
  auto a = init_model<float>(tiny_config(), rng_a);
  auto b = init_model<float>(tiny_config(), rng_b);
  auto c = init_model<float>(tiny_config(), rng_c);
  CHECK(a.embedding.w == b.embedding.w);
  CHECK(a.position.w == b.position.w);
  CHECK(a.head.w == b.head.w);
  for (int i = 0; i < a.cfg.n_layers; ++i)
    CHECK(a.blocks[i]->w == b.blocks[i]->w);
  CHECK(a.embedding.w != c.embedding.w);
}

TEST_CASE("frozen layers never move under training steps") {
  Rng rng(2);
  auto store = init_model<float>(tiny_config(), rng);
  const VecX<float> frozen_before = store.blocks[1]->w;
  Rng data_rng(3);
  for (int step = 0; step < 100; ++step) {
    const Batch batch = random_batch(2, 6, store.cfg.vocab_size, data_rng);
    auto [loss, grads] = loss_and_grads(store, batch);
    CHECK(std::isfinite(loss));
    CHECK(!grads.has_block(1));
    optimizer_step(store, grads, 1e-3f);
  }
  CHECK(store.blocks[1]->w == frozen_before);
  CHECK(store.blocks[0]->w != store.blocks[1]->w);
}

TEST_CASE("per-layer parameter count matches the closed form") {
  ModelConfig cfg;
  cfg.d_model = 64;
  cfg.n_heads = 4;
  cfg.d_ffn = 256;
  cfg.n_layers = 4;
  cfg.vocab_size = 256;
  cfg.context_length = 32;
  CHECK(layer_param_count(cfg) == 49984);

  Rng rng(4);
  auto store = init_model<float>(cfg, rng);
  set_all_trainable(store);
  CHECK(trainable_block_params(store) == 199936);
  const long expect_total = 199936 + 256L * 64 + 32L * 64 + (2L * 64 + 64L * 256 + 256);
  CHECK(trainable_param_count(store) == expect_total);

  // tied head drops the projection matrix from the head block
  cfg.tie_embedding_to_head = true;
  Rng rng2(4);
  auto tied = init_model<float>(cfg, rng2);
  set_all_trainable(tied);
  CHECK(trainable_param_count(tied) == 199936 + 256L * 64 + 32L * 64 + 2L * 64 + 256);
}

TEST_CASE("trainable counts: formula equals store iteration on random states") {
  ModelConfig cfg = tiny_config();
  cfg.n_layers = 7;
  Rng rng(5);
  const long non_block = long(cfg.vocab_size) * cfg.d_model +
                         long(cfg.context_length) * cfg.d_model +
                         (2L * cfg.d_model + long(cfg.d_model) * cfg.vocab_size +
                          cfg.vocab_size);
  for (int trial = 0; trial < 50; ++trial) {
    Rng init_rng(100 + trial);
    auto store = init_model<float>(cfg, init_rng);
    const TyingState s = canonicalize(uniform_random_action(cfg.n_layers, rng));
    apply_state(store, store.tying(), s, true);
    CHECK(store.tying() == s);
    const long groups_n = count_independent(s);
    CHECK(trainable_block_params(store) == groups_n * layer_param_count(cfg));
    CHECK(trainable_param_count(store) ==
          groups_n * layer_param_count(cfg) + non_block);
  }
}

TEST_CASE("apply_state ties by aliasing") {
  Rng rng(6);
  ModelConfig cfg = tiny_config();
  auto store = init_model<float>(cfg, rng);
  set_all_trainable(store);

  const EventDiff diff =
      apply_state(store, TyingState{{0, 1}}, TyingState{{0, 0}}, false);
  CHECK(diff.tied == std::vector<int>{1});
  CHECK(diff.untied.empty());
  CHECK(store.blocks[0] == store.blocks[1]);
  CHECK(store.tying().entries == std::vector<int>{0, 0});

  // both layers now compute the same function
  MatX<float> x = MatX<float>::Random(5, cfg.d_model);
  CHECK(block_forward(store, 0, x) == block_forward(store, 1, x));
}

TEST_CASE("untie copies weights, then the copies drift apart") {
  Rng rng(7);
  ModelConfig cfg = tiny_config();
  auto store = init_model<float>(cfg, rng);
  set_all_trainable(store);
  apply_state(store, TyingState{{0, 1}}, TyingState{{0, 0}}, false);

  const EventDiff diff =
      apply_state(store, TyingState{{0, 0}}, TyingState{{0, 1}}, false);
  CHECK(diff.untied == std::vector<int>{1});
  CHECK(store.blocks[0] != store.blocks[1]);       // separate storage
  CHECK(store.blocks[0]->w == store.blocks[1]->w); // identical weights
  CHECK(store.blocks[1]->adam_t == 0);             // fresh moments

  Rng data_rng(8);
  for (int step = 0; step < 10; ++step) {
    const Batch batch = random_batch(2, 6, cfg.vocab_size, data_rng);
    auto [loss, grads] = loss_and_grads(store, batch);
    optimizer_step(store, grads, 1e-3f);
  }
  CHECK(store.blocks[0]->w != store.blocks[1]->w);  // drifted
}

TEST_CASE("reapplying the same state is a no-op") {
  Rng rng(9);
  auto store = init_model<float>(tiny_config(), rng);
  set_all_trainable(store);
  apply_state(store, TyingState{{0, 1}}, TyingState{{0, 0}}, false);
  const auto version = store.version;
  const EventDiff diff =
      apply_state(store, TyingState{{0, 0}}, TyingState{{0, 0}}, false);
  CHECK(diff.tied.empty());
  CHECK(diff.untied.empty());
  CHECK(store.version == version);
  CHECK(store.blocks[0] == store.blocks[1]);
}

TEST_CASE("first transition materializes the whole state") {
  Rng rng(10);
  ModelConfig cfg = tiny_config();
  cfg.n_layers = 4;
  auto store = init_model<float>(cfg, rng);
  // bookkeeping starts all-zero while storage is still independent
  const TyingState zero{{0, 0, 0, 0}};
  apply_state(store, zero, zero, true);
  CHECK(store.tying().entries == std::vector<int>{0, 0, 0, 0});
  for (int i = 0; i < 4; ++i) CHECK(store.frozen[i] == 0);
}

TEST_CASE("literal first transition keeps untouched layers frozen") {
  Rng rng(11);
  ModelConfig cfg = tiny_config();
  cfg.n_layers = 4;
  auto store = init_model<float>(cfg, rng);
  const VecX<float> layer2_init = store.blocks[2]->w;
  const TyingState zero{{0, 0, 0, 0}};
  const TyingState s_new{{0, 0, 2, 2}};
  apply_state(store, zero, s_new, true, /*forced_full_first=*/false);
  // layer 1 kept its bookkeeping value, so it was skipped: frozen, independent
  CHECK(store.frozen[1] == 1);
  CHECK(store.blocks[1] != store.blocks[0]);
  // layer 2 untied (processed), layer 3 tied to it
  CHECK(store.frozen[2] == 0);
  CHECK(store.frozen[3] == 0);
  CHECK(store.blocks[3] == store.blocks[2]);
  CHECK(store.blocks[2]->w == layer2_init);
}

TEST_CASE("copy-only transitions replicate without tying") {
  Rng rng(12);
  ModelConfig cfg = tiny_config();
  cfg.n_layers = 3;
  auto store = init_model<float>(cfg, rng);
  const TyingState zero{{0, 0, 0}};
  apply_state_copy_only(store, zero, zero, true);
  CHECK(store.blocks[0] != store.blocks[1]);
  CHECK(store.blocks[0]->w == store.blocks[1]->w);  // replicated values
  CHECK(store.tying().entries == std::vector<int>{0, 1, 2});
  CHECK(trainable_block_params(store) == 3 * layer_param_count(cfg));

  Rng data_rng(13);
  for (int step = 0; step < 10; ++step) {
    const Batch batch = random_batch(2, 6, cfg.vocab_size, data_rng);
    auto [loss, grads] = loss_and_grads(store, batch);
    optimizer_step(store, grads, 1e-3f);
  }
  CHECK(store.blocks[0]->w != store.blocks[1]->w);  // independent gradients
}

TEST_CASE("forward shape and causality") {
  Rng rng(14);
  ModelConfig cfg = tiny_config();
  auto store = init_model<float>(cfg, rng);
  Rng data_rng(15);
  Batch batch = random_batch(2, 8, cfg.vocab_size, data_rng);

  const MatX<float> logits = forward<float>(store, batch.inputs);
  CHECK(logits.rows() == 2 * 8);
  CHECK(logits.cols() == cfg.vocab_size);

  // perturb position t: logits strictly before t must not move at all
  for (int t : {2, 5, 7}) {
    Eigen::MatrixXi perturbed = batch.inputs;
    perturbed(0, t) = (perturbed(0, t) + 1) % cfg.vocab_size;
    const MatX<float> logits2 = forward<float>(store, perturbed);
    CHECK(logits.topRows(t) == logits2.topRows(t));
    CHECK(logits.row(t) != logits2.row(t));
  }

  Eigen::MatrixXi bad = batch.inputs;
  bad(0, 0) = cfg.vocab_size;
  CHECK_THROWS_AS(forward<float>(store, bad), std::invalid_argument);

  Eigen::MatrixXi overlong(1, cfg.context_length + 1);
  overlong.setZero();
  CHECK_THROWS_AS(forward<float>(store, overlong), std::invalid_argument);
}

TEST_CASE("stack of tied layers equals one layer applied repeatedly") {
  ModelConfig cfg = tiny_config();
  cfg.n_layers = 3;
  Rng rng(16);
  auto store = init_model<double>(cfg, rng);
  set_all_trainable(store);
  apply_state(store, store.tying(), TyingState{{0, 0, 0}}, true);

  Eigen::VectorXi toks(6);
  toks << 1, 4, 7, 2, 9, 0;
  Eigen::MatrixXi inputs = toks.transpose();
  const MatX<double> logits = forward<double>(store, inputs);

  MatX<double> x = embed_tokens<double>(store, toks);
  for (int rep = 0; rep < 3; ++rep) x = block_forward<double>(store, 0, x);
  const MatX<double> manual = head_forward<double>(store, x);
  CHECK((logits - manual).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("uniform logits give ln(V) loss and PPL == V") {
  ModelConfig cfg = tiny_config();
  cfg.vocab_size = 256;
  Rng rng(17);
  auto store = init_model<double>(cfg, rng);
  set_all_trainable(store);
  zero_weights(store);
  Rng data_rng(18);
  const Batch batch = random_batch(2, 4, cfg.vocab_size, data_rng);
  auto [loss, grads] = loss_and_grads(store, batch);
  CHECK(loss == doctest::Approx(std::log(256.0)).epsilon(1e-12));
  CHECK(perplexity(store, batch) == doctest::Approx(256.0).epsilon(1e-12));
}

TEST_CASE("near-perfect prediction gives PPL near 1") {
  ModelConfig cfg = tiny_config();
  Rng rng(19);
  auto store = init_model<double>(cfg, rng);
  set_all_trainable(store);
  zero_weights(store);
  auto hv = store.head_view();
  hv.b().setConstant(-60.0);
  hv.b()[7] = 60.0;
  Batch batch;
  batch.inputs.setConstant(2, 5, 3);
  batch.targets.setConstant(2, 5, 7);
  CHECK(perplexity(store, batch) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("perplexity equals exp of the training loss bit for bit") {
  Rng rng(20);
  auto store = init_model<double>(tiny_config(), rng);
  Rng data_rng(21);
  const Batch batch = random_batch(3, 7, store.cfg.vocab_size, data_rng);
  auto [loss, grads] = loss_and_grads(store, batch);
  CHECK(perplexity(store, batch) == std::exp(loss));
}

TEST_CASE("perplexity clamps at the ceiling") {
  ModelConfig cfg = tiny_config();
  Rng rng(22);
  auto store = init_model<double>(cfg, rng);
  zero_weights(store);
  auto hv = store.head_view();
  hv.b().setConstant(-400.0);
  hv.b()[0] = 400.0;  // confidently wrong
  Batch batch;
  batch.inputs.setConstant(1, 4, 3);
  batch.targets.setConstant(1, 4, 7);
  CHECK(perplexity(store, batch, 1e12) == 1e12);
}

TEST_CASE("full-model gradients match central finite differences") {
  ModelConfig cfg = tiny_config();  // 2 layers, d_model 16
  Rng rng(23);
  auto store = init_model<double>(cfg, rng);
  set_all_trainable(store);
  // tie both layers into one group: gradient must accumulate across depth
  apply_state(store, store.tying(), TyingState{{0, 0}}, true);

  Rng data_rng(24);
  const Batch batch = random_batch(2, 5, cfg.vocab_size, data_rng);
  auto [loss, grads] = loss_and_grads(store, batch);
  REQUIRE(grads.has_block(0));

  const auto loss_fn = [&]() {
    return double(loss_and_grads(store, batch).first);
  };

  fd_check(
      loss_fn,
      [&](long i, double dh) { store.blocks[0]->w[i] += dh; },
      store.block_layout.total, grads.blocks[0]);
  fd_check(
      loss_fn, [&](long i, double dh) { store.embedding.w[i] += dh; },
      store.embedding.w.size(), grads.embedding);
  fd_check(
      loss_fn, [&](long i, double dh) { store.position.w[i] += dh; },
      store.position.w.size(), grads.position);
  fd_check(
      loss_fn, [&](long i, double dh) { store.head.w[i] += dh; },
      store.head.w.size(), grads.head);
}

TEST_CASE("gradients with a frozen layer cover the trainable remainder") {
  ModelConfig cfg = tiny_config();
  Rng rng(25);
  auto store = init_model<double>(cfg, rng);  // layer 1 frozen
  Rng data_rng(26);
  const Batch batch = random_batch(2, 5, cfg.vocab_size, data_rng);
  auto [loss, grads] = loss_and_grads(store, batch);
  CHECK(grads.has_block(0));
  CHECK(!grads.has_block(1));

  const auto loss_fn = [&]() {
    return double(loss_and_grads(store, batch).first);
  };
  fd_check(
      loss_fn, [&](long i, double dh) { store.blocks[0]->w[i] += dh; },
      store.block_layout.total, grads.blocks[0]);
}

TEST_CASE("tied gradient equals the sum of untied gradients") {
  ModelConfig cfg = tiny_config();
  Rng rng(27);
  auto tied = init_model<double>(cfg, rng);
  set_all_trainable(tied);
  apply_state(tied, tied.tying(), TyingState{{0, 0}}, true);

  Rng rng2(27);
  auto untied = init_model<double>(cfg, rng2);
  set_all_trainable(untied);
  untied.blocks[1]->w = untied.blocks[0]->w;  // same weights, separate storage

  Rng data_rng(28);
  const Batch batch = random_batch(2, 6, cfg.vocab_size, data_rng);
  auto [loss_t, grads_t] = loss_and_grads(tied, batch);
  auto [loss_u, grads_u] = loss_and_grads(untied, batch);
  CHECK(loss_t == doctest::Approx(loss_u).epsilon(1e-12));

  const VecX<double> sum = grads_u.blocks[0] + grads_u.blocks[1];
  const double err = (grads_t.blocks[0] - sum).cwiseAbs().maxCoeff();
  const double scale = sum.cwiseAbs().maxCoeff();
  CHECK(err / scale < 1e-12);
}

TEST_CASE("optimizer ignores zero gradients and keeps tied layers identical") {
  ModelConfig cfg = tiny_config();
  Rng rng(29);
  auto store = init_model<float>(cfg, rng);
  set_all_trainable(store);
  apply_state(store, store.tying(), TyingState{{0, 0}}, true);

  Gradients<float> zeros;
  zeros.version = store.version;
  zeros.blocks.resize(cfg.n_layers);
  zeros.blocks[0] = VecX<float>::Zero(store.block_layout.total);
  zeros.embedding = VecX<float>::Zero(store.embedding.w.size());
  zeros.position = VecX<float>::Zero(store.position.w.size());
  zeros.head = VecX<float>::Zero(store.head.w.size());

  const VecX<float> before = store.blocks[0]->w;
  optimizer_step(store, zeros, 1e-3f);
  CHECK(store.blocks[0]->w == before);

  Rng data_rng(30);
  for (int step = 0; step < 20; ++step) {
    const Batch batch = random_batch(2, 6, cfg.vocab_size, data_rng);
    auto [loss, grads] = loss_and_grads(store, batch);
    optimizer_step(store, grads, 1e-3f);
    CHECK(store.blocks[0] == store.blocks[1]);  // shared storage persists
  }
}

TEST_CASE("optimizer rejects stale gradients") {
  ModelConfig cfg = tiny_config();
  Rng rng(31);
  auto store = init_model<float>(cfg, rng);
  set_all_trainable(store);
  Rng data_rng(32);
  const Batch batch = random_batch(2, 6, cfg.vocab_size, data_rng);
  auto [loss, grads] = loss_and_grads(store, batch);
  apply_state(store, store.tying(), TyingState{{0, 0}}, false);  // structure changed
  CHECK_THROWS_AS(optimizer_step(store, grads, 1e-3f), std::runtime_error);
}

TEST_CASE("adam drives a single-parameter quadratic below 1e-8") {
  VecX<double> w(1), m = VecX<double>::Zero(1), v = VecX<double>::Zero(1);
  w[0] = 0.0;
  const double target = 1.0;
  AdamConfig<double> cfg{0.01};
  double loss = 1.0;
  for (long t = 1; t <= 2000; ++t) {
    const double err = w[0] - target;
    loss = err * err;
    if (loss < 1e-8) break;
    VecX<double> g(1);
    g[0] = 2 * err;
    adam_step<double>(w, g, m, v, t, cfg);
  }
  CHECK(loss < 1e-8);
}

TEST_CASE("invalid configs are rejected") {
  ModelConfig cfg = tiny_config();
  cfg.n_heads = 3;  // does not divide d_model = 16
  Rng rng(33);
  CHECK_THROWS_AS(init_model<float>(cfg, rng), std::invalid_argument);
  cfg = tiny_config();
  cfg.n_layers = 0;
  CHECK_THROWS_AS(init_model<float>(cfg, rng), std::invalid_argument);
}
