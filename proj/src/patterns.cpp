#include "dlt/patterns.hpp"

#include <algorithm>
#include <stdexcept>

namespace dlt {

PatternKind pattern_kind_from_string(const std::string& name) {
  if (name == "cycle") return PatternKind::cycle;
  if (name == "cycle_rev") return PatternKind::cycle_rev;
  if (name == "sequence") return PatternKind::sequence;
  if (name == "custom") return PatternKind::fixed_custom;
  throw std::invalid_argument("unknown pattern '" + name +
                              "' (expected cycle, cycle_rev, sequence or custom)");
}

std::string to_string(PatternKind kind) {
  switch (kind) {
    case PatternKind::cycle: return "cycle";
    case PatternKind::cycle_rev: return "cycle_rev";
    case PatternKind::sequence: return "sequence";
    case PatternKind::fixed_custom: return "custom";
  }
  return "?";
}

TyingState pattern_state(const PatternSpec& spec) {
  if (spec.kind == PatternKind::fixed_custom) {
    validate(spec.custom);
    if (spec.n_layers > 0 && spec.custom.size() != spec.n_layers)
      throw std::invalid_argument("pattern_state: custom state length mismatch");
    return spec.custom;
  }
  const int n = spec.n_layers;
  if (n < 2 || n % 2 != 0)
    throw std::invalid_argument("pattern_state: paired patterns need an even layer count");
  TyingState s;
  s.entries.resize(n);
  for (int i = 0; i < n; ++i) s.entries[i] = i;
  switch (spec.kind) {
    case PatternKind::cycle:
      for (int i = 0; i < n / 2; ++i) s.entries[n / 2 + i] = i;
      break;
    case PatternKind::cycle_rev:
      for (int i = 0; i < n / 2; ++i) s.entries[n - 1 - i] = i;
      break;
    case PatternKind::sequence:
      for (int i = 0; i < n / 2; ++i) s.entries[2 * i + 1] = 2 * i;
      break;
    case PatternKind::fixed_custom:
      break;
  }
  validate(s);
  return s;
}

TyingState permute_partition(const TyingState& s, const std::vector<int>& perm) {
  validate(s);
  const int n = s.size();
  if (static_cast<int>(perm.size()) != n)
    throw std::invalid_argument("permute_partition: permutation length " +
                                std::to_string(perm.size()) +
                                " does not match state length " +
                                std::to_string(n));
  std::vector<char> seen(n, 0);
  for (int p : perm) {
    if (p < 0 || p >= n || seen[p])
      throw std::invalid_argument("permute_partition: not a bijection on [0, L)");
    seen[p] = 1;
  }
  // Map each group through the permutation, then rebuild with minimum-index
  // representatives: group id -> minimum permuted member.
  std::vector<int> min_image(n, -1);
  for (int i = 0; i < n; ++i) {
    const int grp = s[i];
    const int img = perm[i];
    if (min_image[grp] < 0 || img < min_image[grp]) min_image[grp] = img;
  }
  TyingState out;
  out.entries.assign(n, 0);
  for (int i = 0; i < n; ++i) out.entries[perm[i]] = min_image[s[i]];
  validate(out);
  return out;
}

}  // namespace dlt
