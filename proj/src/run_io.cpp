#include "dlt/run_io.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "dlt/checkpoint.hpp"
#include "dlt/patterns.hpp"
#include "dlt/report.hpp"

namespace fs = std::filesystem;

namespace dlt {

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.model.n_layers = 6;
  cfg.model.d_model = 128;
  cfg.model.n_heads = 4;
  cfg.model.d_ffn = 256;
  cfg.model.vocab_size = 256;
  cfg.model.context_length = 64;
  cfg.model.seed = 0;  // 0: derive from trainer.seed
  cfg.model.tie_embedding_to_head = false;
  cfg.trainer = TrainerConfig{};
  return cfg;
}

namespace {

template <class T>
T get_as(const json& value, const std::string& key) {
  try {
    return value.get<T>();
  } catch (const json::exception&) {
    throw config_error("config key '" + key + "': cannot read value " +
                       value.dump());
  }
}

}  // namespace

void apply_flat_entry(RunConfig& cfg, const std::string& key, const json& value) {
  if (key == "model.n_layers") cfg.model.n_layers = get_as<int>(value, key);
  else if (key == "model.d_model") cfg.model.d_model = get_as<int>(value, key);
  else if (key == "model.n_heads") cfg.model.n_heads = get_as<int>(value, key);
  else if (key == "model.d_ffn") cfg.model.d_ffn = get_as<int>(value, key);
  else if (key == "model.vocab_size") cfg.model.vocab_size = get_as<int>(value, key);
  else if (key == "model.context_length") cfg.model.context_length = get_as<int>(value, key);
  else if (key == "model.seed") cfg.model.seed = get_as<std::uint64_t>(value, key);
  else if (key == "model.tie_embedding_to_head") cfg.model.tie_embedding_to_head = get_as<bool>(value, key);
  else if (key == "trainer.mode") cfg.trainer.mode = run_mode_from_string(get_as<std::string>(value, key));
  else if (key == "trainer.total_steps") cfg.trainer.total_steps = get_as<long>(value, key);
  else if (key == "trainer.controller_period") cfg.trainer.controller_period = get_as<int>(value, key);
  else if (key == "trainer.batch_size") cfg.trainer.batch_size = get_as<int>(value, key);
  else if (key == "trainer.learning_rate") cfg.trainer.learning_rate = get_as<double>(value, key);
  else if (key == "trainer.val_fraction") cfg.trainer.val_fraction = get_as<double>(value, key);
  else if (key == "trainer.eval_every") cfg.trainer.eval_every = get_as<long>(value, key);
  else if (key == "trainer.seed") cfg.trainer.seed = get_as<std::uint64_t>(value, key);
  else if (key == "trainer.no_tie") cfg.trainer.no_tie = get_as<bool>(value, key);
  else if (key == "trainer.all_trainable_init") cfg.trainer.all_trainable_init = get_as<bool>(value, key);
  else if (key == "trainer.literal_first_transition") cfg.trainer.literal_first_transition = get_as<bool>(value, key);
  else if (key == "trainer.reward") cfg.trainer.reward = reward_kind_from_string(get_as<std::string>(value, key));
  else if (key == "trainer.ppl_ceiling") cfg.trainer.ppl_ceiling = get_as<double>(value, key);
  else if (key == "controller.gamma") cfg.trainer.controller.gamma = get_as<double>(value, key);
  else if (key == "controller.epsilon") cfg.trainer.controller.epsilon = get_as<double>(value, key);
  else if (key == "controller.epsilon_decay") cfg.trainer.controller.epsilon_decay = get_as<double>(value, key);
  else if (key == "controller.epsilon_floor") cfg.trainer.controller.epsilon_floor = get_as<double>(value, key);
  else if (key == "controller.learning_rate") cfg.trainer.controller.learning_rate = get_as<double>(value, key);
  else if (key == "controller.hidden_dim") cfg.trainer.controller.hidden_dim = get_as<int>(value, key);
  else if (key == "pattern.kind") cfg.trainer.pattern.kind = pattern_kind_from_string(get_as<std::string>(value, key));
  else if (key == "pattern.state") cfg.trainer.pattern.custom = TyingState{get_as<std::vector<int>>(value, key)};
  else if (key == "data.path") cfg.data_path = get_as<std::string>(value, key);
  else if (key == "replay.source") cfg.replay_source = get_as<std::string>(value, key);
  else if (key == "replay.permutation") cfg.replay_permutation = get_as<std::string>(value, key);
  else throw config_error("unknown config key '" + key + "'");
}

RunConfig run_config_from_flat(const json& flat) {
  if (!flat.is_object()) throw config_error("config root must be a JSON object");
  RunConfig cfg = default_run_config();
  for (const auto& [key, value] : flat.items()) apply_flat_entry(cfg, key, value);
  return cfg;
}

json run_config_to_flat(const RunConfig& cfg) {
  json flat;
  flat["model.n_layers"] = cfg.model.n_layers;
  flat["model.d_model"] = cfg.model.d_model;
  flat["model.n_heads"] = cfg.model.n_heads;
  flat["model.d_ffn"] = cfg.model.d_ffn;
  flat["model.vocab_size"] = cfg.model.vocab_size;
  flat["model.context_length"] = cfg.model.context_length;
  flat["model.seed"] = cfg.model.seed;
  flat["model.tie_embedding_to_head"] = cfg.model.tie_embedding_to_head;
  flat["trainer.mode"] = to_string(cfg.trainer.mode);
  flat["trainer.total_steps"] = cfg.trainer.total_steps;
  flat["trainer.controller_period"] = cfg.trainer.controller_period;
  flat["trainer.batch_size"] = cfg.trainer.batch_size;
  flat["trainer.learning_rate"] = cfg.trainer.learning_rate;
  flat["trainer.val_fraction"] = cfg.trainer.val_fraction;
  flat["trainer.eval_every"] = cfg.trainer.eval_every;
  flat["trainer.seed"] = cfg.trainer.seed;
  flat["trainer.no_tie"] = cfg.trainer.no_tie;
  flat["trainer.all_trainable_init"] = cfg.trainer.all_trainable_init;
  flat["trainer.literal_first_transition"] = cfg.trainer.literal_first_transition;
  flat["trainer.reward"] = to_string(cfg.trainer.reward);
  flat["trainer.ppl_ceiling"] = cfg.trainer.ppl_ceiling;
  flat["controller.gamma"] = cfg.trainer.controller.gamma;
  flat["controller.epsilon"] = cfg.trainer.controller.epsilon;
  flat["controller.epsilon_decay"] = cfg.trainer.controller.epsilon_decay;
  flat["controller.epsilon_floor"] = cfg.trainer.controller.epsilon_floor;
  flat["controller.learning_rate"] = cfg.trainer.controller.learning_rate;
  flat["controller.hidden_dim"] = cfg.trainer.controller.hidden_dim;
  flat["data.path"] = cfg.data_path;
  if (cfg.trainer.mode == RunMode::fixed_pattern) {
    flat["pattern.kind"] = to_string(cfg.trainer.pattern.kind);
    if (cfg.trainer.pattern.kind == PatternKind::fixed_custom)
      flat["pattern.state"] = cfg.trainer.pattern.custom;
  }
  if (!cfg.replay_source.empty()) flat["replay.source"] = cfg.replay_source;
  if (!cfg.replay_permutation.empty())
    flat["replay.permutation"] = cfg.replay_permutation;
  return flat;
}

RunPaths run_paths(const std::string& run_dir) {
  RunPaths p;
  p.dir = run_dir;
  p.config = run_dir + "/config.json";
  p.trajectory = run_dir + "/trajectory.jsonl";
  p.timing = run_dir + "/timing.csv";
  p.summary = run_dir + "/summary.json";
  p.best_checkpoint = run_dir + "/checkpoint_best.dlt";
  p.final_checkpoint = run_dir + "/checkpoint_final.dlt";
  p.qnet_checkpoint = run_dir + "/qnet_final.dlt";
  return p;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw config_error("cannot parse " + path + ": " + e.what());
  }
  return j;
}

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

std::vector<TrajectoryRecord> read_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<TrajectoryRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(record_from_json(json::parse(line)));
  }
  return records;
}

RunSummary execute_run(const RunConfig& cfg, const std::string& run_dir,
                       bool echo) {
  if (cfg.data_path.empty()) throw config_error("data.path is not set");
  cfg.model.validate();
  cfg.trainer.validate();

  fs::create_directories(run_dir);
  const RunPaths paths = run_paths(run_dir);
  write_text_file(paths.config, run_config_to_flat(cfg).dump(2) + "\n");

  const Corpus corpus =
      load_corpus(cfg.data_path, cfg.trainer.val_fraction,
                  static_cast<std::size_t>(cfg.model.context_length) + 1);

  std::ofstream trajectory(paths.trajectory, std::ios::binary);
  std::ofstream timing(paths.timing, std::ios::binary);
  timing << "# schema: timing.v1\nstep,wall_ms\n";

  TrainSinks sinks;
  sinks.on_record = [&](const TrajectoryRecord& rec) {
    trajectory << record_to_json(rec).dump() << "\n";
    timing << rec.step << ',' << rec.wall_ms << "\n";
  };
  sinks.on_eval = [&](long step, double val, bool improved) {
    if (echo)
      std::cout << "[dlt] step " << step << " val_ppl " << val
                << (improved ? " *" : "") << "\n";
  };
  sinks.on_best = [&](const ParameterStore<float>& store, const QNet<double>&,
                      long step, double) {
    save_model_checkpoint(paths.best_checkpoint, store, step);
  };
  sinks.on_final = [&](const ParameterStore<float>& store,
                       const QNet<double>& qnet, long step) {
    save_model_checkpoint(paths.final_checkpoint, store, step);
    if (cfg.trainer.mode == RunMode::dynamic)
      save_qnet_checkpoint(paths.qnet_checkpoint, qnet,
                           derive_seed(cfg.trainer.seed, 1), step);
  };

  const RunSummary summary = train(cfg.model, cfg.trainer, corpus, sinks);
  write_text_file(paths.summary, summary_to_json(summary).dump(2) + "\n");
  if (echo)
    std::cout << "[dlt] run complete: best val_ppl " << summary.best_val_ppl
              << " at step " << summary.best_val_step << ", "
              << summary.traj.final_independent << "/" << summary.n_layers
              << " independent layers at end\n";
  return summary;
}

std::vector<std::string> write_reports(const std::string& run_dir,
                                       const std::string& which,
                                       const std::string& checkpoint_choice) {
  const RunPaths paths = run_paths(run_dir);
  const std::string run_id = fs::path(run_dir).filename().string();
  const bool all = which == "all";
  if (!all && which != "map" && which != "events" && which != "hist" &&
      which != "corr" && which != "summary")
    throw config_error("unknown report '" + which +
                       "' (expected map, events, hist, corr, summary or all)");

  std::vector<std::string> written;
  auto emit = [&](const std::string& kind, const std::string& ext,
                  const std::string& contents) {
    const std::string path = run_dir + "/" + run_id + "." + kind + "." + ext;
    write_text_file(path, contents);
    written.push_back(path);
  };

  if (all || which == "events" || which == "hist" || which == "summary" ||
      which == "map") {
    const auto records = read_trajectory(paths.trajectory);
    if (all || which == "map") {
      const json summary = load_json_file(paths.summary);
      const TyingState final_state = summary.at("final_state").get<TyingState>();
      emit("map", "json", replication_map_json(final_state) + "\n");
    }
    if (all || which == "events") emit("events", "csv", event_curves_csv(records));
    if (all || which == "hist") {
      const json config = load_json_file(paths.config);
      const long period = config.at("trainer.controller_period").get<long>();
      emit("hist", "csv", trainability_histogram_csv(records, period));
    }
    if (all || which == "summary")
      emit("summary", "json", trajectory_summary_json(records) + "\n");
  }
  if (all || which == "corr") {
    const std::string ckpt = checkpoint_choice == "best"
                                 ? paths.best_checkpoint
                                 : paths.final_checkpoint;
    const auto loaded = load_model_checkpoint<float>(ckpt);
    emit("corr", "json", ffn_correlation_json(loaded.store) + "\n");
  }
  return written;
}

}  // namespace dlt
