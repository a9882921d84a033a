#pragma once

#include <vector>

#include "json.hpp"

#include "dlt/model.hpp"
#include "dlt/tying.hpp"

namespace dlt {

using json = nlohmann::json;

// Tying states and actions travel as plain JSON integer arrays.
inline void to_json(json& j, const TyingState& s) { j = s.entries; }
inline void from_json(const json& j, TyingState& s) {
  s.entries = j.get<std::vector<int>>();
}
inline void to_json(json& j, const ActionVector& a) { j = a.entries; }
inline void from_json(const json& j, ActionVector& a) {
  a.entries = j.get<std::vector<int>>();
}

inline void to_json(json& j, const ModelConfig& cfg) {
  j = json{{"n_layers", cfg.n_layers},
           {"d_model", cfg.d_model},
           {"n_heads", cfg.n_heads},
           {"d_ffn", cfg.d_ffn},
           {"vocab_size", cfg.vocab_size},
           {"context_length", cfg.context_length},
           {"seed", cfg.seed},
           {"tie_embedding_to_head", cfg.tie_embedding_to_head}};
}
inline void from_json(const json& j, ModelConfig& cfg) {
  j.at("n_layers").get_to(cfg.n_layers);
  j.at("d_model").get_to(cfg.d_model);
  j.at("n_heads").get_to(cfg.n_heads);
  j.at("d_ffn").get_to(cfg.d_ffn);
  j.at("vocab_size").get_to(cfg.vocab_size);
  j.at("context_length").get_to(cfg.context_length);
  j.at("seed").get_to(cfg.seed);
  j.at("tie_embedding_to_head").get_to(cfg.tie_embedding_to_head);
}

}  // namespace dlt
