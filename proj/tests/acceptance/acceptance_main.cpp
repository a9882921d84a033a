// Acceptance suite: every release criterion in one binary, one line per
// criterion. Exit code 0 only when every criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "dlt/checkpoint.hpp"
#include "dlt/patterns.hpp"
#include "dlt/report.hpp"
#include "dlt/run_io.hpp"
#include "dlt/textgen.hpp"
#include "dlt/trainer.hpp"

namespace fs = std::filesystem;
using namespace dlt;

namespace {

struct check_failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& msg) {
  if (!ok) throw check_failure(msg);
}

std::string scratch_dir() {
  static const std::string dir = [] {
    const std::string d = (fs::temp_directory_path() / "dlt_acceptance").string();
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// ---- shared helpers ------------------------------------------------------

std::vector<ActionVector> enumerate_actions(int n) {
  std::vector<ActionVector> all;
  ActionVector a;
  a.entries.assign(n, 0);
  while (true) {
    all.push_back(a);
    int i = n - 1;
    while (i >= 1) {
      if (a.entries[i] < i) {
        ++a.entries[i];
        break;
      }
      a.entries[i] = 0;
      --i;
    }
    if (i < 1) break;
  }
  return all;
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

std::vector<int> union_find_labels(const ActionVector& a) {
  UnionFind uf(a.size());
  for (int i = 0; i < a.size(); ++i)
    if (a[i] != i) uf.unite(i, a[i]);
  std::vector<int> min_label(a.size(), -1);
  for (int i = 0; i < a.size(); ++i)
    if (min_label[uf.find(i)] < 0) min_label[uf.find(i)] = i;
  std::vector<int> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = min_label[uf.find(i)];
  return out;
}

// Dynamic run shared by criteria 4, 5 and 8.
struct DynamicRunArtifacts {
  std::vector<TrajectoryRecord> records;
  TyingState final_state;
  long bit_identity_checks = 0;
  ModelConfig model_cfg;
  TrainerConfig trainer_cfg;
  std::string corpus_path;
};

const DynamicRunArtifacts& shared_dynamic_run() {
  static const DynamicRunArtifacts artifacts = [] {
    DynamicRunArtifacts out;
    out.corpus_path = scratch_dir() + "/corpus_small.txt";
    write_corpus_file(out.corpus_path, 120000, 21);
    const Corpus corpus = load_corpus(out.corpus_path, 0.1);

    ModelConfig mcfg;
    mcfg.n_layers = 6;
    mcfg.d_model = 64;
    mcfg.n_heads = 4;
    mcfg.d_ffn = 128;
    mcfg.vocab_size = 256;
    mcfg.context_length = 32;
    out.model_cfg = mcfg;

    TrainerConfig tcfg;
    tcfg.mode = RunMode::dynamic;
    tcfg.seed = 404;
    tcfg.total_steps = 2000;
    tcfg.controller_period = 15;
    tcfg.batch_size = 4;
    tcfg.learning_rate = 1e-4;
    out.trainer_cfg = tcfg;

    // byte-equality of grouped layers, checked after every optimizer step
    // and every controller invocation
    auto check_groups = [&out](const ParameterStore<float>& store) {
      const TyingState phys = store.tying();
      for (int i = 0; i < phys.size(); ++i) {
        const int rep = phys[i];
        if (rep == i) continue;
        const auto& a = store.blocks[i]->w;
        const auto& b = store.blocks[rep]->w;
        require(a.size() == b.size() &&
                    std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0,
                "grouped layers " + std::to_string(rep) + " and " +
                    std::to_string(i) + " are not byte-identical");
        ++out.bit_identity_checks;
      }
    };

    TrainSinks sinks;
    sinks.on_record = [&out](const TrajectoryRecord& r) {
      out.records.push_back(r);
    };
    sinks.on_step = [&](long, const ParameterStore<float>& store) {
      check_groups(store);
    };
    sinks.on_invocation = [&](const TrajectoryRecord&,
                              const ParameterStore<float>& store) {
      check_groups(store);
    };
    const RunSummary summary = train(mcfg, tcfg, corpus, sinks);
    out.final_state = summary.traj.final_state;
    return out;
  }();
  return artifacts;
}

// ---- criteria ------------------------------------------------------------

void criterion_canonicalization() {
  for (int n : {5, 6}) {
    const auto all = enumerate_actions(n);
    require(static_cast<long>(all.size()) == (n == 5 ? 120 : 720),
            "action space size mismatch");
    for (const auto& a : all)
      require(canonicalize(a).entries == union_find_labels(a),
              "canonicalize disagrees with the union-find oracle");
  }
}

void criterion_decomposed_argmax() {
  Rng rng(7);
  const auto actions = enumerate_actions(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto net = make_qnet<double>(5, rng, 16);
    const TyingState s = canonicalize(uniform_random_action(5, rng));
    double best = -1e300;
    ActionVector best_a;
    for (const auto& a : actions) {
      const double v = q_value(net, s, a);
      if (v > best) {
        best = v;
        best_a = a;
      }
    }
    require(std::abs(max_q(net, s) - best) < 1e-9 * std::max(1.0, std::abs(best)),
            "max_q disagrees with joint enumeration");
    require(greedy_action(net, s).entries == best_a.entries,
            "greedy_action disagrees with joint enumeration");
    require(q_value(net, s, greedy_action(net, s)) == max_q(net, s),
            "q_value(greedy) != max_q");
  }
}

void criterion_gradient_checks() {
  // Q-network: every weight against central differences
  {
    Rng rng(27);
    auto net = make_qnet<double>(4, rng, 8);
    const TyingState s{{0, 0, 2, 2}};
    const ActionVector a{{0, 0, 2, 3}};
    const double target = 0.37;
    VecX<double> grad;
    q_loss_grads(net, s, a, target, grad);

    double* bases[] = {net.w1.data(), net.b1.data(), net.w2.data(), net.b2.data()};
    const long sizes[] = {net.w1.size(), net.b1.size(), net.w2.size(),
                          net.b2.size()};
    const double h = 1e-6;
    long idx = 0;
    for (int k = 0; k < 4; ++k) {
      for (long i = 0; i < sizes[k]; ++i, ++idx) {
        VecX<double> scratch;
        bases[k][i] += h;
        const double up = q_loss_grads(net, s, a, target, scratch);
        bases[k][i] -= 2 * h;
        const double down = q_loss_grads(net, s, a, target, scratch);
        bases[k][i] += h;
        const double fd = (up - down) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(grad[idx]), 1e-6});
        require(std::abs(fd - grad[idx]) / denom < 1e-4,
                "qnet gradient mismatch at flat index " + std::to_string(idx));
      }
    }
  }
  // transformer: 2 layers tied into 1 group, d_model = 16
  {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ffn = 32;
    cfg.vocab_size = 11;
    cfg.context_length = 8;
    Rng rng(23);
    auto store = init_model<double>(cfg, rng);
    set_all_trainable(store);
    apply_state(store, store.tying(), TyingState{{0, 0}}, true);

    Rng drng(24);
    Batch batch;
    batch.inputs.resize(2, 5);
    batch.targets.resize(2, 5);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 5; ++j) {
        batch.inputs(i, j) = static_cast<int>(drng.below(cfg.vocab_size));
        batch.targets(i, j) = static_cast<int>(drng.below(cfg.vocab_size));
      }
    auto [loss, grads] = loss_and_grads(store, batch);
    const auto loss_fn = [&]() {
      return double(loss_and_grads(store, batch).first);
    };
    const double h = 1e-5;
    auto fd_check = [&](VecX<double>& w, const VecX<double>& g,
                        const char* what) {
      require(w.size() == g.size(), std::string(what) + ": size mismatch");
      for (long i = 0; i < w.size(); ++i) {
        w[i] += h;
        const double up = loss_fn();
        w[i] -= 2 * h;
        const double down = loss_fn();
        w[i] += h;
        const double fd = (up - down) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
        require(std::abs(fd - g[i]) / denom < 1e-4,
                std::string(what) + " gradient mismatch at index " +
                    std::to_string(i));
      }
    };
    fd_check(store.blocks[0]->w, grads.blocks[0], "block");
    fd_check(store.embedding.w, grads.embedding, "embedding");
    fd_check(store.position.w, grads.position, "position");
    fd_check(store.head.w, grads.head, "head");
  }
}

void criterion_bit_identity() {
  const auto& run = shared_dynamic_run();
  require(run.records.size() == 134, "expected 134 controller invocations");
  require(run.bit_identity_checks > 0, "no grouped layers were ever checked");
}

void criterion_epsilon_schedule() {
  const auto& run = shared_dynamic_run();
  require(run.records.size() >= 45, "too few invocations for the schedule check");
  int floor_first = -1;
  for (std::size_t i = 0; i < run.records.size(); ++i) {
    require(run.records[i].epsilon.has_value(), "missing epsilon in record");
    const double expect = std::max(std::pow(0.95, double(i + 1)), 0.1);
    require(std::abs(*run.records[i].epsilon - expect) < 1e-12,
            "epsilon deviates from max(0.95^n, 0.1) at invocation " +
                std::to_string(i + 1));
    if (floor_first < 0 && *run.records[i].epsilon <= 0.1)
      floor_first = static_cast<int>(i + 1);
  }
  require(floor_first == 45, "floor reached at invocation " +
                                 std::to_string(floor_first) + ", expected 45");
}

// Desk-scale analog of the headline comparison; absolute perplexities are
// not reproducible at this scale, so the criterion checks the relative
// properties across three seed pairs.
void criterion_end_to_end() {
  const std::string corpus_path = scratch_dir() + "/shakespeare.txt";
  write_corpus_file(corpus_path, 300000, 1);

  RunConfig base = default_run_config();
  base.data_path = corpus_path;
  base.model.n_layers = 6;
  base.model.d_model = 128;
  base.model.n_heads = 4;
  base.model.d_ffn = 256;
  base.model.context_length = 64;
  base.trainer.batch_size = 8;
  base.trainer.total_steps = 1500;
  base.trainer.controller_period = 15;
  base.trainer.learning_rate = 1e-4;

  const long conventional_blocks = 6 * layer_param_count(base.model);
  for (std::uint64_t seed : {1, 2, 3}) {
    RunConfig dyn = base;
    dyn.trainer.mode = RunMode::dynamic;
    dyn.trainer.seed = seed;
    RunConfig conv = base;
    conv.trainer.mode = RunMode::conventional;
    conv.trainer.seed = seed;

    const RunSummary d = execute_run(
        dyn, scratch_dir() + "/e2e/dynamic_s" + std::to_string(seed));
    const RunSummary c = execute_run(
        conv, scratch_dir() + "/e2e/conventional_s" + std::to_string(seed));

    const double ratio = d.best_val_ppl / c.best_val_ppl;
    std::printf("      seed %llu: dyn best %.3f conv best %.3f ratio %.3f "
                "mean_ind %.2f final_blocks %.0f%%\n",
                static_cast<unsigned long long>(seed), d.best_val_ppl,
                c.best_val_ppl, ratio, d.traj.mean_independent,
                100.0 * double(d.final_trainable_block_params) /
                    double(conventional_blocks));
    require(c.traj.mean_independent == 6.0,
            "conventional run must keep all layers independent");
    require(ratio <= 1.10, "seed " + std::to_string(seed) +
                               ": dynamic best val PPL exceeds 1.10x conventional");
    require(d.traj.mean_independent <= 3.0,
            "seed " + std::to_string(seed) +
                ": mean independent layers above L/2");
    require(double(d.final_trainable_block_params) <=
                0.6 * double(conventional_blocks),
            "seed " + std::to_string(seed) +
                ": final trainable block parameters above 60% of conventional");
  }
}

void criterion_patterns() {
  require(pattern_state({PatternKind::cycle, 4, {}}).entries ==
              std::vector<int>{0, 1, 0, 1},
          "cycle L=4 mismatch");
  require(pattern_state({PatternKind::cycle, 8, {}}).entries ==
              std::vector<int>{0, 1, 2, 3, 0, 1, 2, 3},
          "cycle L=8 mismatch");
  require(pattern_state({PatternKind::cycle_rev, 4, {}}).entries ==
              std::vector<int>{0, 1, 1, 0},
          "cycle_rev L=4 mismatch");
  require(pattern_state({PatternKind::cycle_rev, 8, {}}).entries ==
              std::vector<int>{0, 1, 2, 3, 3, 2, 1, 0},
          "cycle_rev L=8 mismatch");
  require(pattern_state({PatternKind::sequence, 4, {}}).entries ==
              std::vector<int>{0, 0, 2, 2},
          "sequence L=4 mismatch");
  require(pattern_state({PatternKind::sequence, 8, {}}).entries ==
              std::vector<int>{0, 0, 2, 2, 4, 4, 6, 6},
          "sequence L=8 mismatch");
  for (int n : {4, 8}) {
    for (auto kind :
         {PatternKind::cycle, PatternKind::cycle_rev, PatternKind::sequence}) {
      const TyingState s = pattern_state({kind, n, {}});
      validate(s);
      require(count_independent(s) == n / 2, "pattern group count != L/2");
    }
  }
}

void criterion_replay_fidelity() {
  const auto& run = shared_dynamic_run();
  const Corpus corpus = load_corpus(run.corpus_path, 0.1);

  TrainerConfig replay_cfg = run.trainer_cfg;
  replay_cfg.mode = RunMode::replay;
  for (const auto& r : run.records)
    replay_cfg.replay_schedule.push_back({r.step, r.state});
  const RunSummary replayed = train(run.model_cfg, replay_cfg, corpus, {});
  require(replayed.traj.final_state == run.final_state,
          "replay did not reproduce the source run's final tying state");

  Rng rng(31);
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(11));
    const TyingState s = canonicalize(uniform_random_action(n, rng));
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i)
      std::swap(perm[i], perm[rng.below(i + 1)]);
    const TyingState out = permute_partition(s, perm);
    validate(out);  // throws when non-canonical
    require(count_independent(out) == count_independent(s),
            "permutation changed the number of groups");
  }
}

void criterion_reporting_identities() {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(12));
    const TyingState s = canonicalize(uniform_random_action(n, rng));
    int loops = 0;
    for (const auto& [from, to] : replication_map(s)) loops += (from == to);
    require(loops == count_independent(s),
            "self-loop count != independent-layer count");
  }

  ModelConfig cfg;
  cfg.n_layers = 6;
  cfg.d_model = 32;
  cfg.n_heads = 2;
  cfg.d_ffn = 64;
  cfg.vocab_size = 64;
  cfg.context_length = 16;
  Rng mrng(19);
  auto store = init_model<double>(cfg, mrng);
  set_all_trainable(store);
  const MatX<double> corr = ffn_correlation(store);
  for (Eigen::Index i = 0; i < corr.rows(); ++i) {
    require(corr(i, i) == 1.0, "correlation diagonal is not exactly 1");
    for (Eigen::Index j = 0; j < corr.cols(); ++j)
      require(std::abs(corr(i, j) - corr(j, i)) <= 1e-12,
              "correlation matrix asymmetric beyond 1e-12");
  }

  const auto& run = shared_dynamic_run();
  const EventCurves curves = event_curves(run.records);
  long tied = 0, untied = 0;
  for (std::size_t i = 0; i < curves.steps.size(); ++i) {
    tied += curves.tied[i];
    untied += curves.untied[i];
  }
  const TrajectoryAggregates agg = aggregate_trajectory(run.records);
  require(tied == agg.total_tied && untied == agg.total_untied,
          "event curve totals disagree with the run summary");
}

void criterion_determinism() {
  const std::string corpus_path = scratch_dir() + "/corpus_det.txt";
  write_corpus_file(corpus_path, 80000, 33);

  RunConfig cfg = default_run_config();
  cfg.data_path = corpus_path;
  cfg.model.n_layers = 6;
  cfg.model.d_model = 64;
  cfg.model.n_heads = 4;
  cfg.model.d_ffn = 128;
  cfg.model.context_length = 32;
  cfg.trainer.mode = RunMode::dynamic;
  cfg.trainer.seed = 2024;
  cfg.trainer.total_steps = 600;
  cfg.trainer.controller_period = 15;
  cfg.trainer.batch_size = 4;

  const std::string dir_a = scratch_dir() + "/det_a";
  const std::string dir_b = scratch_dir() + "/det_b";
  execute_run(cfg, dir_a);
  execute_run(cfg, dir_b);

  const auto paths_a = run_paths(dir_a);
  const auto paths_b = run_paths(dir_b);
  require(read_text_file(paths_a.trajectory) == read_text_file(paths_b.trajectory),
          "trajectory logs differ between identically seeded runs");
  require(read_text_file(paths_a.final_checkpoint) ==
              read_text_file(paths_b.final_checkpoint),
          "final checkpoints differ between identically seeded runs");
  require(read_text_file(paths_a.qnet_checkpoint) ==
              read_text_file(paths_b.qnet_checkpoint),
          "qnet checkpoints differ between identically seeded runs");
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<void()> fn;
    double time_limit;  // seconds; 0 = unlimited
  };
  const std::vector<Criterion> criteria = {
      {1, "canonicalization matches the union-find oracle (L=5,6 exhaustive)",
       criterion_canonicalization, 1.0},
      {2, "decomposed argmax/max equal exhaustive joint search (100 nets, L=5)",
       criterion_decomposed_argmax, 10.0},
      {3, "analytic gradients match finite differences (qnet + transformer)",
       criterion_gradient_checks, 60.0},
      {4, "grouped layers stay byte-identical across a 2000-step dynamic run",
       criterion_bit_identity, 0.0},
      {5, "epsilon follows max(0.95^n, 0.1) with the floor first hit at n=45",
       criterion_epsilon_schedule, 0.0},
      {6, "desk-scale dynamic vs conventional comparison (3 seeds)",
       criterion_end_to_end, 1800.0},
      {7, "fixed patterns match hand-derived states with L/2 groups",
       criterion_patterns, 0.0},
      {8, "replay reproduces the final tying state; permuted replays stay valid",
       criterion_replay_fidelity, 0.0},
      {9, "reporting identities (self-loops, correlation shape, event totals)",
       criterion_reporting_identities, 0.0},
      {10, "identically seeded runs are byte-identical",
       criterion_determinism, 0.0},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.fn();
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      if (c.time_limit > 0.0 && secs > c.time_limit)
        throw check_failure("runtime " + std::to_string(secs) +
                            " s exceeds the " + std::to_string(c.time_limit) +
                            " s budget");
      std::printf("[PASS] %2d. %s (%.1f s)\n", c.id, c.name, secs);
    } catch (const std::exception& e) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      std::printf("[FAIL] %2d. %s (%.1f s): %s\n", c.id, c.name, secs, e.what());
      ++failures;
    }
    std::fflush(stdout);
  }
  if (failures > 0) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all %zu criteria passed\n", criteria.size());
  return 0;
}
