// dlt: train decoder-only byte transformers whose layer tying is driven by a
// deep Q-learning controller, replay or permute recorded tying trajectories,
// and emit plot-ready reports from finished runs.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dlt/patterns.hpp"
#include "dlt/run_io.hpp"
#include "dlt/textgen.hpp"

namespace {

using dlt::json;

// --set key=value; the value is JSON when it parses, a bare string otherwise.
void apply_set_overrides(dlt::RunConfig& cfg, const std::vector<std::string>& sets) {
  for (const auto& entry : sets) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos)
      throw dlt::config_error("--set expects key=value, got '" + entry + "'");
    const std::string key = entry.substr(0, eq);
    const std::string raw = entry.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    dlt::apply_flat_entry(cfg, key, value);
  }
}

struct TrainArgs {
  std::string config_path;
  std::string data;
  std::string mode;
  std::string pattern;
  std::string pattern_file;
  std::string out_root = "runs";
  std::string run_id;
  std::uint64_t seed = 0;
  bool have_seed = false;
  long steps = 0;
  std::vector<std::string> sets;
  bool quiet = false;
};

int cmd_train(const TrainArgs& args) {
  dlt::RunConfig cfg = dlt::default_run_config();
  if (!args.config_path.empty())
    cfg = dlt::run_config_from_flat(dlt::load_json_file(args.config_path));
  if (!args.data.empty()) cfg.data_path = args.data;
  if (!args.mode.empty())
    cfg.trainer.mode = dlt::run_mode_from_string(args.mode);
  if (args.have_seed) cfg.trainer.seed = args.seed;
  if (args.steps > 0) cfg.trainer.total_steps = args.steps;
  if (!args.pattern.empty()) {
    cfg.trainer.pattern.kind = dlt::pattern_kind_from_string(args.pattern);
    if (args.mode.empty()) cfg.trainer.mode = dlt::RunMode::fixed_pattern;
  }
  if (!args.pattern_file.empty()) {
    cfg.trainer.pattern.kind = dlt::PatternKind::fixed_custom;
    cfg.trainer.pattern.custom =
        dlt::TyingState{dlt::load_json_file(args.pattern_file).get<std::vector<int>>()};
  }
  apply_set_overrides(cfg, args.sets);
  cfg.trainer.pattern.n_layers = cfg.model.n_layers;
  if (cfg.trainer.mode == dlt::RunMode::replay)
    throw dlt::config_error("use the replay subcommand for replay runs");

  const std::string run_id =
      args.run_id.empty()
          ? to_string(cfg.trainer.mode) + "_s" + std::to_string(cfg.trainer.seed)
          : args.run_id;
  const std::string run_dir = args.out_root + "/" + run_id;
  dlt::execute_run(cfg, run_dir, !args.quiet);
  std::cout << run_dir << "\n";
  return 0;
}

struct ReplayArgs {
  std::string source;
  std::string permutation;
  std::string out_root = "runs";
  std::string run_id;
  std::uint64_t seed = 0;
  bool have_seed = false;
  std::vector<std::string> sets;
  bool quiet = false;
};

int cmd_replay(const ReplayArgs& args) {
  const dlt::RunPaths source_paths = dlt::run_paths(args.source);
  dlt::RunConfig cfg =
      dlt::run_config_from_flat(dlt::load_json_file(source_paths.config));
  cfg.trainer.mode = dlt::RunMode::replay;
  cfg.replay_source = args.source;

  std::vector<int> perm;
  if (!args.permutation.empty()) {
    perm = dlt::load_json_file(args.permutation).get<std::vector<int>>();
    cfg.replay_permutation = args.permutation;
  }

  const auto records = dlt::read_trajectory(source_paths.trajectory);
  cfg.trainer.replay_schedule.clear();
  for (const auto& rec : records) {
    dlt::TyingState state = rec.state;
    if (!perm.empty()) state = dlt::permute_partition(state, perm);
    cfg.trainer.replay_schedule.push_back({rec.step, std::move(state)});
  }

  if (args.have_seed) cfg.trainer.seed = args.seed;
  apply_set_overrides(cfg, args.sets);

  const std::string run_id =
      args.run_id.empty()
          ? std::string("replay_s") + std::to_string(cfg.trainer.seed)
          : args.run_id;
  const std::string run_dir = args.out_root + "/" + run_id;
  dlt::execute_run(cfg, run_dir, !args.quiet);
  std::cout << run_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynamic layer tying trainer"};
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", train_args.config_path, "flat JSON config");
  train->add_option("--data", train_args.data, "corpus file (bytes)");
  train->add_option("--mode", train_args.mode,
                    "dynamic | conventional | fixed_pattern");
  train->add_option("--pattern", train_args.pattern,
                    "cycle | cycle_rev | sequence (implies fixed_pattern)");
  train->add_option("--pattern-file", train_args.pattern_file,
                    "JSON integer array with a custom tying state");
  train->add_option("--steps", train_args.steps, "total training steps");
  train->add_option("--seed", train_args.seed, "master seed")
      ->each([&](const std::string&) { train_args.have_seed = true; });
  train->add_option("--out", train_args.out_root, "output root directory");
  train->add_option("--run-id", train_args.run_id, "run directory name");
  train->add_option("--set", train_args.sets,
                    "config override key=value (repeatable)");
  train->add_flag("--quiet", train_args.quiet, "suppress progress output");

  ReplayArgs replay_args;
  CLI::App* replay = app.add_subcommand(
      "replay", "re-apply a recorded tying trajectory without the controller");
  replay->add_option("--source", replay_args.source, "source run directory")
      ->required();
  replay->add_option("--permutation", replay_args.permutation,
                     "JSON integer array permuting the layers");
  replay->add_option("--seed", replay_args.seed, "master seed override")
      ->each([&](const std::string&) { replay_args.have_seed = true; });
  replay->add_option("--out", replay_args.out_root, "output root directory");
  replay->add_option("--run-id", replay_args.run_id, "run directory name");
  replay->add_option("--set", replay_args.sets,
                     "config override key=value (repeatable)");
  replay->add_flag("--quiet", replay_args.quiet, "suppress progress output");

  std::string report_run, report_which = "all", report_ckpt = "final";
  CLI::App* report = app.add_subcommand("report", "emit plot-ready artifacts");
  report->add_option("--run", report_run, "run directory")->required();
  report->add_option("--which", report_which,
                     "map | events | hist | corr | summary | all");
  report->add_option("--checkpoint", report_ckpt,
                     "weights for the correlation report: final | best");

  std::string corpus_out = "shakespeare.txt";
  std::size_t corpus_bytes = 300000;
  std::uint64_t corpus_seed = 1;
  CLI::App* gen = app.add_subcommand("gen-corpus",
                                     "write a deterministic pseudo-Shakespeare corpus");
  gen->add_option("--out", corpus_out, "output file");
  gen->add_option("--bytes", corpus_bytes, "minimum size in bytes");
  gen->add_option("--seed", corpus_seed, "generator seed");

  try {
    app.parse(argc, argv);
    if (train->parsed()) return cmd_train(train_args);
    if (replay->parsed()) return cmd_replay(replay_args);
    if (report->parsed()) {
      for (const auto& path : dlt::write_reports(report_run, report_which, report_ckpt))
        std::cout << path << "\n";
      return 0;
    }
    if (gen->parsed()) {
      dlt::write_corpus_file(corpus_out, corpus_bytes, corpus_seed);
      std::cout << corpus_out << "\n";
      return 0;
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const dlt::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
