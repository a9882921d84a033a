#include "dlt/report.hpp"

#include <sstream>
#include <stdexcept>

namespace dlt {

std::vector<std::pair<int, int>> replication_map(const TyingState& s) {
  validate(s);
  std::vector<std::pair<int, int>> edges;
  edges.reserve(s.size());
  for (int i = 0; i < s.size(); ++i) edges.emplace_back(i, s[i]);
  return edges;
}

EventCurves event_curves(const std::vector<TrajectoryRecord>& records) {
  if (records.empty())
    throw std::invalid_argument("event_curves: empty trajectory");
  EventCurves out;
  for (const auto& r : records) {
    out.steps.push_back(r.step);
    out.tied.push_back(r.tied_count);
    out.untied.push_back(r.untied_count);
  }
  return out;
}

std::vector<long> trainability_histogram(
    const std::vector<TrajectoryRecord>& records, long period) {
  if (records.empty())
    throw std::invalid_argument("trainability_histogram: empty trajectory");
  if (period < 1)
    throw std::invalid_argument("trainability_histogram: period must be >= 1");
  const int n_layers = records.front().state.size();
  std::vector<long> counts(n_layers, 0);
  for (const auto& r : records) {
    if (r.state.size() != n_layers)
      throw std::invalid_argument("trainability_histogram: state length varies");
    for (int i = 0; i < n_layers; ++i)
      if (r.state[i] == i) counts[i] += period;
  }
  return counts;
}

std::string replication_map_json(const TyingState& s) {
  const auto edges = replication_map(s);
  json jedges = json::array();
  int self_loops = 0;
  for (const auto& [from, to] : edges) {
    jedges.push_back(json::array({from, to}));
    self_loops += (from == to);
  }
  return json{{"schema", "map.v1"},
              {"n_layers", s.size()},
              {"edges", jedges},
              {"self_loops", self_loops}}
      .dump(2);
}

std::string event_curves_csv(const std::vector<TrajectoryRecord>& records) {
  const EventCurves c = event_curves(records);
  std::ostringstream out;
  out << "# schema: events.v1\n";
  out << "step,tied,untied\n";
  for (std::size_t i = 0; i < c.steps.size(); ++i)
    out << c.steps[i] << ',' << c.tied[i] << ',' << c.untied[i] << '\n';
  return out.str();
}

std::string trainability_histogram_csv(
    const std::vector<TrajectoryRecord>& records, long period) {
  const auto counts = trainability_histogram(records, period);
  std::ostringstream out;
  out << "# schema: hist.v1\n";
  out << "layer,steps_trainable\n";
  for (std::size_t i = 0; i < counts.size(); ++i)
    out << i << ',' << counts[i] << '\n';
  return out.str();
}

std::string trajectory_summary_json(
    const std::vector<TrajectoryRecord>& records) {
  const TrajectoryAggregates agg = aggregate_trajectory(records);
  return json{{"schema", "summary.v1"},
              {"n_records", agg.n_records},
              {"mean_independent_layers", agg.mean_independent},
              {"final_independent_layers", agg.final_independent},
              {"mean_trainable_params", agg.mean_trainable_params},
              {"final_trainable_params", agg.final_trainable_params},
              {"total_tied_events", agg.total_tied},
              {"total_untied_events", agg.total_untied},
              {"final_state", agg.final_state}}
      .dump(2);
}

}  // namespace dlt
