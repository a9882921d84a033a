#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dlt/model.hpp"
#include "dlt/serde.hpp"
#include "dlt/trainer.hpp"

namespace dlt {

// Edges (i -> s[i]); group representatives carry self-loops.
std::vector<std::pair<int, int>> replication_map(const TyingState& s);

struct EventCurves {
  std::vector<long> steps;
  std::vector<int> tied;
  std::vector<int> untied;
};

EventCurves event_curves(const std::vector<TrajectoryRecord>& records);

// Per-layer count of training steps spent independent (s[i] == i); each
// record covers the controller period that follows it.
std::vector<long> trainability_histogram(
    const std::vector<TrajectoryRecord>& records, long period);

// Pearson correlations between the flattened feed-forward weights (up and
// down projections, biases excluded) of the independent layers. reps_out
// receives the representative indices labeling the matrix rows.
template <class S>
MatX<double> ffn_correlation(const ParameterStore<S>& store,
                             std::vector<int>* reps_out = nullptr) {
  const TyingState tying = store.tying();
  std::vector<int> reps;
  for (int i = 0; i < store.cfg.n_layers; ++i)
    if (tying[i] == i) reps.push_back(i);
  if (reps.size() < 2)
    throw std::runtime_error(
        "ffn_correlation: need at least 2 independent layers, found " +
        std::to_string(reps.size()));
  if (reps_out) *reps_out = reps;

  const LayerLayout& lo = store.block_layout;
  const long n_up = long(lo.d) * lo.dff;
  const long n_down = long(lo.dff) * lo.d;
  const long n = n_up + n_down;
  MatX<double> flat(n, reps.size());
  for (std::size_t c = 0; c < reps.size(); ++c) {
    const auto& w = store.blocks[reps[c]]->w;
    flat.col(c).head(n_up) = w.segment(lo.wu, n_up).template cast<double>();
    flat.col(c).tail(n_down) = w.segment(lo.wd, n_down).template cast<double>();
  }

  MatX<double> corr(reps.size(), reps.size());
  VecX<double> mean(reps.size()), norm(reps.size());
  for (std::size_t c = 0; c < reps.size(); ++c) {
    mean[c] = flat.col(c).mean();
    flat.col(c).array() -= mean[c];
    norm[c] = flat.col(c).norm();
  }
  for (std::size_t i = 0; i < reps.size(); ++i) {
    corr(i, i) = 1.0;
    for (std::size_t j = i + 1; j < reps.size(); ++j) {
      const double r = flat.col(i).dot(flat.col(j)) / (norm[i] * norm[j]);
      corr(i, j) = r;
      corr(j, i) = r;
    }
  }
  return corr;
}

// Plot-ready artifacts. Every emitter is a pure function of its inputs, so
// re-running a report reproduces the file byte for byte. CSV files open
// with a `# schema: <name>.v1` line; the column documentation lives in the
// README.
std::string replication_map_json(const TyingState& s);
std::string event_curves_csv(const std::vector<TrajectoryRecord>& records);
std::string trainability_histogram_csv(
    const std::vector<TrajectoryRecord>& records, long period);
template <class S>
std::string ffn_correlation_json(const ParameterStore<S>& store) {
  std::vector<int> reps;
  const MatX<double> corr = ffn_correlation(store, &reps);
  json rows = json::array();
  for (Eigen::Index i = 0; i < corr.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < corr.cols(); ++j) row.push_back(corr(i, j));
    rows.push_back(std::move(row));
  }
  return json{{"schema", "corr.v1"}, {"layers", reps}, {"matrix", rows}}
      .dump(2);
}
std::string trajectory_summary_json(const std::vector<TrajectoryRecord>& records);

}  // namespace dlt
