#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "dlt/serde.hpp"
#include "dlt/trainer.hpp"

namespace dlt {

// Invalid or inconsistent configuration; the CLI maps this to exit code 1.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Everything a run needs, loadable from a flat JSON object with dotted keys
// ("model.n_layers", "trainer.mode", ...).
struct RunConfig {
  ModelConfig model;
  TrainerConfig trainer;
  std::string data_path;
  std::string replay_source;       // provenance only
  std::string replay_permutation;  // provenance only
};

RunConfig default_run_config();

// Parses one dotted key; unknown keys and wrong value types raise
// config_error naming the field.
void apply_flat_entry(RunConfig& cfg, const std::string& key, const json& value);
RunConfig run_config_from_flat(const json& flat);
json run_config_to_flat(const RunConfig& cfg);

struct RunPaths {
  std::string dir;
  std::string config;
  std::string trajectory;
  std::string timing;
  std::string summary;
  std::string best_checkpoint;
  std::string final_checkpoint;
  std::string qnet_checkpoint;
};

RunPaths run_paths(const std::string& run_dir);

json load_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& contents);
std::string read_text_file(const std::string& path);

std::vector<TrajectoryRecord> read_trajectory(const std::string& path);

// Full run: creates run_dir, snapshots the config, streams the trajectory
// log and timing sidecar, saves best/final checkpoints and the summary.
RunSummary execute_run(const RunConfig& cfg, const std::string& run_dir,
                       bool echo = false);

// Emits `<run-id>.<report>.{csv,json}` files inside the run directory.
// which: map, events, hist, corr, summary or all. checkpoint_choice picks
// the weights for the correlation report (final or best).
std::vector<std::string> write_reports(const std::string& run_dir,
                                       const std::string& which,
                                       const std::string& checkpoint_choice = "final");

}  // namespace dlt
