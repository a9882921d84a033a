#pragma once

#include <cstdint>
#include <string>

namespace dlt {

// Deterministic pseudo-Shakespeare play text for desk-scale byte-level
// language modeling. Same seed and size always produce the same bytes.
std::string generate_play_text(std::size_t min_bytes, std::uint64_t seed);

void write_corpus_file(const std::string& path, std::size_t min_bytes,
                       std::uint64_t seed);

}  // namespace dlt
