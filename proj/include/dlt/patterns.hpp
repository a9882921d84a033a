#pragma once

#include <string>
#include <vector>

#include "dlt/tying.hpp"

namespace dlt {

enum class PatternKind { cycle, cycle_rev, sequence, fixed_custom };

struct PatternSpec {
  PatternKind kind = PatternKind::cycle;
  int n_layers = 0;
  TyingState custom;  // fixed_custom only
};

PatternKind pattern_kind_from_string(const std::string& name);
std::string to_string(PatternKind kind);

// Fixed half-reuse layouts (all pair layer counts, so L must be even):
//   cycle:     layer L/2+i shares layer i
//   cycle_rev: layer L-1-i shares layer i
//   sequence:  layer 2i+1 shares layer 2i
TyingState pattern_state(const PatternSpec& spec);

// Applies a layer permutation to the partition induced by a canonical state
// and re-canonicalizes with minimum-index representatives. perm[i] is the
// image of layer i; it must be a bijection on [0, L).
TyingState permute_partition(const TyingState& s, const std::vector<int>& perm);

}  // namespace dlt
