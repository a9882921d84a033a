#include "dlt/tying.hpp"

#include <stdexcept>
#include <string>

namespace dlt {

namespace {

void check_range(const std::vector<int>& e, const char* what) {
  for (int i = 0; i < static_cast<int>(e.size()); ++i) {
    if (e[i] < 0 || e[i] > i) {
      throw std::invalid_argument(std::string(what) + ": entry " +
                                  std::to_string(i) + " is " +
                                  std::to_string(e[i]) +
                                  ", expected value in [0.." +
                                  std::to_string(i) + "]");
    }
  }
}

}  // namespace

void validate(const ActionVector& a) { check_range(a.entries, "action vector"); }

void validate(const TyingState& s) {
  check_range(s.entries, "tying state");
  for (int i = 0; i < s.size(); ++i) {
    if (s.entries[s.entries[i]] != s.entries[i]) {
      throw std::invalid_argument(
          "tying state: entry " + std::to_string(i) + " points at " +
          std::to_string(s.entries[i]) + ", which is not a representative");
    }
  }
}

TyingState canonicalize(const ActionVector& a) {
  validate(a);
  TyingState s;
  s.entries.resize(a.entries.size());
  for (int i = 0; i < a.size(); ++i) {
    s.entries[i] = (a.entries[i] == i) ? i : s.entries[a.entries[i]];
  }
  return s;
}

std::vector<std::vector<int>> groups(const TyingState& s) {
  validate(s);
  std::vector<std::vector<int>> out;
  std::vector<int> slot(s.entries.size(), -1);
  for (int i = 0; i < s.size(); ++i) {
    const int rep = s.entries[i];
    if (slot[rep] < 0) {
      slot[rep] = static_cast<int>(out.size());
      out.emplace_back();
    }
    out[slot[rep]].push_back(i);
  }
  return out;
}

int count_independent(const TyingState& s) {
  validate(s);
  int n = 0;
  for (int i = 0; i < s.size(); ++i) n += (s.entries[i] == i);
  return n;
}

EventDiff diff_events(const TyingState& s, const TyingState& s_next) {
  validate(s);
  validate(s_next);
  if (s.size() != s_next.size()) {
    throw std::invalid_argument("diff_events: length mismatch (" +
                                std::to_string(s.size()) + " vs " +
                                std::to_string(s_next.size()) + ")");
  }
  EventDiff d;
  for (int i = 0; i < s.size(); ++i) {
    if (s_next.entries[i] == s.entries[i]) continue;
    if (s_next.entries[i] == i) {
      d.untied.push_back(i);
    } else {
      d.tied.push_back(i);
    }
  }
  return d;
}

ActionVector uniform_random_action(int n_layers, Rng& rng) {
  if (n_layers < 1) throw std::invalid_argument("uniform_random_action: n_layers must be >= 1");
  ActionVector a;
  a.entries.resize(n_layers);
  a.entries[0] = 0;
  for (int i = 1; i < n_layers; ++i) {
    a.entries[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
  }
  return a;
}

int packed_size(int n_layers) {
  return (n_layers + 2) * (n_layers - 1) / 2;
}

int flat_offset(PackedIndex p) {
  if (p.layer < 1 || p.choice < 0 || p.choice > p.layer) {
    throw std::invalid_argument("flat_offset: invalid packed index (layer " +
                                std::to_string(p.layer) + ", choice " +
                                std::to_string(p.choice) + ")");
  }
  return (p.layer - 1) * (p.layer + 2) / 2 + p.choice;
}

PackedIndex unpack(int offset, int n_layers) {
  if (offset < 0 || offset >= packed_size(n_layers)) {
    throw std::invalid_argument("unpack: offset " + std::to_string(offset) +
                                " out of range for L=" + std::to_string(n_layers));
  }
  int layer = 1;
  while ((layer)*(layer + 3) / 2 <= offset) ++layer;  // first offset of layer l+1 is l(l+3)/2
  return PackedIndex{layer, offset - (layer - 1) * (layer + 2) / 2};
}

}  // namespace dlt
