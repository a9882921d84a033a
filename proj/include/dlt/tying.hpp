#pragma once

#include <vector>

#include "dlt/rng.hpp"

namespace dlt {

// Canonical per-layer tying vector: entries[i] is the lowest layer index
// sharing layer i's weights. Representatives point at themselves, so the
// vector satisfies entries[entries[i]] == entries[i] and entries[0] == 0.
struct TyingState {
  std::vector<int> entries;

  TyingState() = default;
  explicit TyingState(std::vector<int> e) : entries(std::move(e)) {}

  int size() const { return static_cast<int>(entries.size()); }
  int operator[](int i) const { return entries[i]; }
  bool operator==(const TyingState&) const = default;
};

// Raw policy output: entries[i] in [0..i] names the layer whose weights
// layer i should adopt (itself for independent training). Unlike TyingState
// it may point at any tied predecessor, not just the group representative.
struct ActionVector {
  std::vector<int> entries;

  ActionVector() = default;
  explicit ActionVector(std::vector<int> e) : entries(std::move(e)) {}

  int size() const { return static_cast<int>(entries.size()); }
  int operator[](int i) const { return entries[i]; }
  bool operator==(const ActionVector&) const = default;
};

// Layers that changed grouping between two consecutive states, split by
// transition type: tied (joined some group) vs untied (became independent).
struct EventDiff {
  std::vector<int> tied;
  std::vector<int> untied;
};

// Position inside the packed flat Q-output: layer i >= 1 owns i+1 consecutive
// slots, one per choice j in [0..i].
struct PackedIndex {
  int layer;
  int choice;
};

// Throw std::invalid_argument on malformed input.
void validate(const ActionVector& a);
void validate(const TyingState& s);

// Resolves a raw action to the canonical state: s[i] = i when a[i] == i,
// otherwise s[i] = s[a[i]] (well defined because a[i] <= i).
TyingState canonicalize(const ActionVector& a);

// Partition of {0..L-1} into weight-sharing groups, ordered by representative.
std::vector<std::vector<int>> groups(const TyingState& s);

// Number of group representatives, i.e. distinct parameter sets among layers.
int count_independent(const TyingState& s);

// Per-layer transition classification between two canonical states.
EventDiff diff_events(const TyingState& s, const TyingState& s_next);

// Each a[i] drawn independently and uniformly from {0..i}; a[0] is always 0.
ActionVector uniform_random_action(int n_layers, Rng& rng);

// Flat length of the packed Q output for L layers: (L+2)(L-1)/2.
int packed_size(int n_layers);

int flat_offset(PackedIndex p);
PackedIndex unpack(int offset, int n_layers);

}  // namespace dlt
