#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dlt/data.hpp"
#include "dlt/model.hpp"
#include "dlt/patterns.hpp"
#include "dlt/qnet.hpp"
#include "dlt/serde.hpp"

namespace dlt {

enum class RunMode { dynamic, conventional, fixed_pattern, replay };

RunMode run_mode_from_string(const std::string& name);
std::string to_string(RunMode mode);

enum class RewardKind { neg_ppl, neg_log_ppl };

RewardKind reward_kind_from_string(const std::string& name);
std::string to_string(RewardKind kind);

struct ReplayEntry {
  long step = 0;
  TyingState state;
};

struct TrainerConfig {
  long total_steps = 3000;     // K
  int controller_period = 15;  // k
  int batch_size = 16;
  double learning_rate = 1e-4;
  double val_fraction = 0.1;
  long eval_every = 0;  // 0: once per epoch (one pass over the training stream)
  std::uint64_t seed = 1;
  RunMode mode = RunMode::dynamic;
  ControllerConfig controller;

  PatternSpec pattern;                       // fixed_pattern runs
  std::vector<ReplayEntry> replay_schedule;  // replay runs

  bool no_tie = false;                  // replicate weights, never alias
  bool all_trainable_init = false;      // skip the initial freeze
  bool literal_first_transition = false;  // first transition processes diffs only
  RewardKind reward = RewardKind::neg_ppl;
  double ppl_ceiling = 1e12;

  void validate() const;
};

// One controller invocation's log line. Controller fields are absent in
// modes that never run the policy. wall_ms is measured but kept out of the
// serialized record so identically seeded runs produce identical logs.
struct TrajectoryRecord {
  long step = 0;
  TyingState state;      // canonical, after the transition
  ActionVector action;   // raw policy output; canonicalizes to state
  std::optional<double> reward, predicted_q, bellman_target, q_loss, epsilon;
  int tied_count = 0;
  int untied_count = 0;
  int independent_layers = 0;
  long trainable_params = 0;
  double train_ppl = 0.0;  // exp of the latest training-batch loss
  double wall_ms = 0.0;
};

json record_to_json(const TrajectoryRecord& rec);
TrajectoryRecord record_from_json(const json& j);

// Aggregates derivable from the trajectory alone.
struct TrajectoryAggregates {
  long n_records = 0;
  double mean_independent = 0.0;
  int final_independent = 0;
  double mean_trainable_params = 0.0;
  long final_trainable_params = 0;
  long total_tied = 0;
  long total_untied = 0;
  TyingState final_state;
};

TrajectoryAggregates aggregate_trajectory(const std::vector<TrajectoryRecord>& records);

struct RunSummary {
  long total_steps = 0;
  int n_layers = 0;
  TrajectoryAggregates traj;
  long final_trainable_block_params = 0;
  double best_val_ppl = 0.0;
  long best_val_step = -1;
  double final_val_ppl = 0.0;
  double wall_seconds = 0.0;
};

json summary_to_json(const RunSummary& s);

struct TrainSinks {
  std::function<void(const TrajectoryRecord&)> on_record;
  std::function<void(long step, double val_ppl, bool improved)> on_eval;
  std::function<void(const ParameterStore<float>&, const QNet<double>&,
                     long step, double val_ppl)>
      on_best;
  std::function<void(const ParameterStore<float>&, const QNet<double>&,
                     long step)>
      on_final;
  std::function<void(long step, const ParameterStore<float>&)> on_step;
  std::function<void(const TrajectoryRecord&, const ParameterStore<float>&)>
      on_invocation;
};

// Runs the full training loop for any mode and streams records/checkpoints
// through the sinks. Deterministic given (configs, corpus bytes).
RunSummary train(const ModelConfig& model_cfg, const TrainerConfig& trainer_cfg,
                 const Corpus& corpus, const TrainSinks& sinks = {});

// Negative perplexity (or negative cross-entropy) of one batch.
double reward_value(const ParameterStore<float>& store, const Batch& batch,
                    RewardKind kind, double ppl_ceiling);

// Mean perplexity across the validation windows; the model is untouched.
double evaluate(const ParameterStore<float>& store, const Corpus& corpus,
                int batch_size, int context_length);

}  // namespace dlt
