#include "dlt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <stdexcept>

namespace dlt {

RunMode run_mode_from_string(const std::string& name) {
  if (name == "dynamic") return RunMode::dynamic;
  if (name == "conventional") return RunMode::conventional;
  if (name == "fixed_pattern") return RunMode::fixed_pattern;
  if (name == "replay") return RunMode::replay;
  throw std::invalid_argument(
      "unknown mode '" + name +
      "' (expected dynamic, conventional, fixed_pattern or replay)");
}

std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::dynamic: return "dynamic";
    case RunMode::conventional: return "conventional";
    case RunMode::fixed_pattern: return "fixed_pattern";
    case RunMode::replay: return "replay";
  }
  return "?";
}

RewardKind reward_kind_from_string(const std::string& name) {
  if (name == "neg_ppl") return RewardKind::neg_ppl;
  if (name == "neg_log_ppl") return RewardKind::neg_log_ppl;
  throw std::invalid_argument("unknown reward '" + name +
                              "' (expected neg_ppl or neg_log_ppl)");
}

std::string to_string(RewardKind kind) {
  return kind == RewardKind::neg_ppl ? "neg_ppl" : "neg_log_ppl";
}

void TrainerConfig::validate() const {
  if (controller_period < 1)
    throw std::invalid_argument("trainer.controller_period must be >= 1");
  if (total_steps < controller_period)
    throw std::invalid_argument("trainer.total_steps must be >= controller_period");
  if (batch_size < 1) throw std::invalid_argument("trainer.batch_size must be >= 1");
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("trainer.learning_rate must be positive");
  if (val_fraction < 0.0 || val_fraction >= 1.0)
    throw std::invalid_argument("trainer.val_fraction must be in [0,1)");
  if (eval_every < 0) throw std::invalid_argument("trainer.eval_every must be >= 0");
  if (!(ppl_ceiling > 0.0))
    throw std::invalid_argument("trainer.ppl_ceiling must be positive");
  controller.validate();
}

namespace {

json opt_to_json(const std::optional<double>& v) {
  if (v) return *v;
  return nullptr;
}

std::optional<double> opt_from_json(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

json record_to_json(const TrajectoryRecord& rec) {
  return json{{"step", rec.step},
              {"s", rec.state},
              {"a", rec.action},
              {"reward", opt_to_json(rec.reward)},
              {"predicted_q", opt_to_json(rec.predicted_q)},
              {"bellman_target", opt_to_json(rec.bellman_target)},
              {"q_loss", opt_to_json(rec.q_loss)},
              {"epsilon", opt_to_json(rec.epsilon)},
              {"tied", rec.tied_count},
              {"untied", rec.untied_count},
              {"independent_layers", rec.independent_layers},
              {"trainable_params", rec.trainable_params},
              {"train_ppl", rec.train_ppl}};
}

TrajectoryRecord record_from_json(const json& j) {
  TrajectoryRecord rec;
  j.at("step").get_to(rec.step);
  j.at("s").get_to(rec.state);
  j.at("a").get_to(rec.action);
  rec.reward = opt_from_json(j, "reward");
  rec.predicted_q = opt_from_json(j, "predicted_q");
  rec.bellman_target = opt_from_json(j, "bellman_target");
  rec.q_loss = opt_from_json(j, "q_loss");
  rec.epsilon = opt_from_json(j, "epsilon");
  j.at("tied").get_to(rec.tied_count);
  j.at("untied").get_to(rec.untied_count);
  j.at("independent_layers").get_to(rec.independent_layers);
  j.at("trainable_params").get_to(rec.trainable_params);
  j.at("train_ppl").get_to(rec.train_ppl);
  return rec;
}

TrajectoryAggregates aggregate_trajectory(
    const std::vector<TrajectoryRecord>& records) {
  if (records.empty())
    throw std::invalid_argument("aggregate_trajectory: empty trajectory");
  TrajectoryAggregates agg;
  agg.n_records = static_cast<long>(records.size());
  double ind_sum = 0.0, par_sum = 0.0;
  for (const auto& r : records) {
    ind_sum += r.independent_layers;
    par_sum += double(r.trainable_params);
    agg.total_tied += r.tied_count;
    agg.total_untied += r.untied_count;
  }
  agg.mean_independent = ind_sum / double(agg.n_records);
  agg.mean_trainable_params = par_sum / double(agg.n_records);
  const auto& last = records.back();
  agg.final_independent = last.independent_layers;
  agg.final_trainable_params = last.trainable_params;
  agg.final_state = last.state;
  return agg;
}

json summary_to_json(const RunSummary& s) {
  return json{{"total_steps", s.total_steps},
              {"n_layers", s.n_layers},
              {"n_records", s.traj.n_records},
              {"mean_independent_layers", s.traj.mean_independent},
              {"final_independent_layers", s.traj.final_independent},
              {"mean_trainable_params", s.traj.mean_trainable_params},
              {"final_trainable_params", s.traj.final_trainable_params},
              {"final_trainable_block_params", s.final_trainable_block_params},
              {"total_tied_events", s.traj.total_tied},
              {"total_untied_events", s.traj.total_untied},
              {"final_state", s.traj.final_state},
              {"best_val_ppl", s.best_val_ppl},
              {"best_val_step", s.best_val_step},
              {"final_val_ppl", s.final_val_ppl},
              {"wall_seconds", s.wall_seconds}};
}

double reward_value(const ParameterStore<float>& store, const Batch& batch,
                    RewardKind kind, double ppl_ceiling) {
  const double ppl = double(perplexity(store, batch, float(ppl_ceiling)));
  return kind == RewardKind::neg_ppl ? -ppl : -std::log(ppl);
}

double evaluate(const ParameterStore<float>& store, const Corpus& corpus,
                int batch_size, int context_length) {
  const auto batches = validation_batches(corpus, batch_size, context_length);
  double sum = 0.0;
  for (const auto& b : batches) sum += double(perplexity(store, b));
  return sum / double(batches.size());
}

RunSummary train(const ModelConfig& model_cfg0, const TrainerConfig& cfg,
                 const Corpus& corpus, const TrainSinks& sinks) {
  cfg.validate();
  ModelConfig model_cfg = model_cfg0;
  model_cfg.validate();
  if (model_cfg.seed == 0) model_cfg.seed = derive_seed(cfg.seed, 0);

  const int n_layers = model_cfg.n_layers;
  const int t_len = model_cfg.context_length;
  if (corpus.train_end < static_cast<std::size_t>(t_len) + 1)
    throw std::runtime_error("train: corpus training range shorter than one window");

  Rng model_rng(model_cfg.seed);
  Rng qnet_rng(derive_seed(cfg.seed, 1));
  Rng batch_rng(derive_seed(cfg.seed, 2));
  Rng policy_rng(derive_seed(cfg.seed, 3));
  Rng reward_rng(derive_seed(cfg.seed, 4));

  auto store = init_model<float>(model_cfg, model_rng);
  const bool dynamic = cfg.mode == RunMode::dynamic;
  // replay mirrors the dynamic schedule it came from, including the initial
  // freeze; the baselines train everything from step 0
  const bool starts_frozen =
      (dynamic || cfg.mode == RunMode::replay) && !cfg.all_trainable_init;
  if (!starts_frozen) set_all_trainable(store);

  QNet<double> qnet;
  if (dynamic)
    qnet = make_qnet<double>(n_layers, qnet_rng, cfg.controller.hidden_dim);
  ControllerConfig ctrl = cfg.controller;

  // bookkeeping state: all-zero at initialization for controller-driven and
  // replay runs, identity for the baselines
  TyingState state;
  state.entries.assign(n_layers, 0);
  bool first_transition = true;
  if (cfg.mode == RunMode::conventional) {
    for (int i = 0; i < n_layers; ++i) state.entries[i] = i;
    first_transition = false;
  } else if (cfg.mode == RunMode::fixed_pattern) {
    PatternSpec spec = cfg.pattern;
    if (spec.n_layers == 0) spec.n_layers = n_layers;
    const TyingState target = pattern_state(spec);
    if (target.size() != n_layers)
      throw std::invalid_argument("train: pattern state length does not match model");
    apply_state(store, store.tying(), target, true);
    state = target;
    first_transition = false;
  }

  std::vector<ReplayEntry> schedule = cfg.replay_schedule;
  if (cfg.mode == RunMode::replay) {
    if (schedule.empty()) throw std::invalid_argument("train: replay schedule is empty");
    for (const auto& e : schedule) {
      if (e.state.size() != n_layers)
        throw std::invalid_argument(
            "train: replay state length " + std::to_string(e.state.size()) +
            " does not match model layers " + std::to_string(n_layers));
      validate(e.state);
    }
    std::stable_sort(schedule.begin(), schedule.end(),
                     [](const ReplayEntry& a, const ReplayEntry& b) {
                       return a.step < b.step;
                     });
  }
  std::size_t next_replay = 0;

  const long tokens_per_step = long(cfg.batch_size) * t_len;
  const long steps_per_epoch =
      std::max<long>(1, long(corpus.train_end) / tokens_per_step);
  const long eval_every = cfg.eval_every > 0 ? cfg.eval_every : steps_per_epoch;

  std::vector<TrajectoryRecord> records;
  double best_val = std::numeric_limits<double>::infinity();
  long best_val_step = -1;
  double final_val = std::numeric_limits<double>::quiet_NaN();

  const auto run_start = std::chrono::steady_clock::now();
  auto invocation_start = run_start;
  double last_train_loss = std::numeric_limits<double>::quiet_NaN();

  auto emit_record = [&](TrajectoryRecord rec) {
    records.push_back(rec);
    if (sinks.on_record) sinks.on_record(rec);
    if (sinks.on_invocation) sinks.on_invocation(rec, store);
  };

  for (long step = 0; step < cfg.total_steps; ++step) {
    const Batch batch = sample_batch(corpus, cfg.batch_size, t_len, batch_rng);
    float loss = 0.0f;
    try {
      auto [l, grads] = loss_and_grads(store, batch);
      loss = l;
      optimizer_step(store, grads, float(cfg.learning_rate));
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("train: aborted at step " + std::to_string(step) +
                               ": " + e.what());
    }
    last_train_loss = double(loss);
    if (sinks.on_step) sinks.on_step(step, store);

    if (step % cfg.controller_period == 0) {
      const auto now = std::chrono::steady_clock::now();
      const double wall_ms =
          std::chrono::duration<double, std::milli>(now - invocation_start).count();
      invocation_start = now;

      if (dynamic) {
        const ActionVector action = policy(qnet, state, ctrl, policy_rng);
        const TyingState next = canonicalize(action);
        const EventDiff diff =
            cfg.no_tie
                ? apply_state_copy_only(store, state, next, first_transition,
                                        !cfg.literal_first_transition)
                : apply_state(store, state, next, first_transition,
                              !cfg.literal_first_transition);
        first_transition = false;

        const Batch reward_batch =
            sample_batch(corpus, cfg.batch_size, t_len, reward_rng);
        const double r =
            reward_value(store, reward_batch, cfg.reward, cfg.ppl_ceiling);
        if (cfg.reward == RewardKind::neg_ppl && -r >= cfg.ppl_ceiling)
          std::cerr << "[dlt] reward perplexity clamped to ceiling at step "
                    << step << "\n";

        TrajectoryRecord rec;
        rec.step = step;
        rec.state = next;
        rec.action = action;
        rec.reward = r;
        rec.predicted_q = q_value(qnet, state, action);
        try {
          const double target = bellman_target(r, ctrl, qnet, next);
          rec.bellman_target = target;
          rec.q_loss = q_update(qnet, state, action, target,
                                ctrl.learning_rate);
        } catch (const std::runtime_error& e) {
          // controller-step failure: transition stands, update skipped
          std::cerr << "[dlt] controller step skipped at step " << step << ": "
                    << e.what() << "\n";
        }
        state = next;
        decay_epsilon(ctrl);
        rec.epsilon = ctrl.epsilon;
        rec.tied_count = static_cast<int>(diff.tied.size());
        rec.untied_count = static_cast<int>(diff.untied.size());
        rec.independent_layers = count_independent(state);
        rec.trainable_params = trainable_param_count(store);
        rec.train_ppl = std::exp(last_train_loss);
        rec.wall_ms = wall_ms;
        emit_record(std::move(rec));
      } else if (cfg.mode != RunMode::replay) {
        TrajectoryRecord rec;
        rec.step = step;
        rec.state = state;
        rec.action = ActionVector{state.entries};
        rec.tied_count = 0;
        rec.untied_count = 0;
        rec.independent_layers = count_independent(state);
        rec.trainable_params = trainable_param_count(store);
        rec.train_ppl = std::exp(last_train_loss);
        rec.wall_ms = wall_ms;
        emit_record(std::move(rec));
      }
    }

    if (cfg.mode == RunMode::replay) {
      while (next_replay < schedule.size() &&
             schedule[next_replay].step == step) {
        const auto now = std::chrono::steady_clock::now();
        const double wall_ms =
            std::chrono::duration<double, std::milli>(now - invocation_start)
                .count();
        invocation_start = now;

        const TyingState& next = schedule[next_replay].state;
        const EventDiff diff =
            cfg.no_tie
                ? apply_state_copy_only(store, state, next, first_transition,
                                        !cfg.literal_first_transition)
                : apply_state(store, state, next, first_transition,
                              !cfg.literal_first_transition);
        first_transition = false;

        TrajectoryRecord rec;
        rec.step = step;
        rec.state = next;
        rec.action = ActionVector{next.entries};
        rec.tied_count = static_cast<int>(diff.tied.size());
        rec.untied_count = static_cast<int>(diff.untied.size());
        rec.independent_layers = count_independent(next);
        rec.trainable_params = trainable_param_count(store);
        rec.train_ppl = std::exp(last_train_loss);
        rec.wall_ms = wall_ms;
        state = next;
        emit_record(std::move(rec));
        ++next_replay;
      }
    }

    const bool last_step = step + 1 == cfg.total_steps;
    if ((step + 1) % eval_every == 0 || last_step) {
      const double val = evaluate(store, corpus, cfg.batch_size, t_len);
      const bool improved = val < best_val;
      if (improved) {
        best_val = val;
        best_val_step = step;
        if (sinks.on_best) sinks.on_best(store, qnet, step, val);
      }
      if (sinks.on_eval) sinks.on_eval(step, val, improved);
      if (last_step) final_val = val;
    }
  }

  if (sinks.on_final) sinks.on_final(store, qnet, cfg.total_steps - 1);

  RunSummary summary;
  summary.total_steps = cfg.total_steps;
  summary.n_layers = n_layers;
  summary.traj = aggregate_trajectory(records);
  summary.final_trainable_block_params = trainable_block_params(store);
  summary.best_val_ppl = best_val;
  summary.best_val_step = best_val_step;
  summary.final_val_ppl = final_val;
  summary.wall_seconds = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - run_start)
                             .count();
  return summary;
}

}  // namespace dlt
