#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dlt/model.hpp"
#include "dlt/rng.hpp"

namespace dlt {

// Byte-level corpus: every byte of the source file is one token id, and the
// last val_fraction of the stream is held out contiguously for validation.
struct Corpus {
  std::vector<std::uint8_t> tokens;
  std::string source;
  std::size_t train_end = 0;  // tokens [0, train_end) train, the rest validate

  std::size_t size() const { return tokens.size(); }
  std::size_t val_size() const { return tokens.size() - train_end; }
};

// min_tokens guards against corpora shorter than one context window; pass
// context_length + 1 when known.
Corpus load_corpus(const std::string& path, double val_fraction,
                   std::size_t min_tokens = 2);

// batch_size windows with independently and uniformly chosen starts, drawn
// entirely inside the training range; targets are the inputs shifted by one.
Batch sample_batch(const Corpus& corpus, int batch_size, int context_length,
                   Rng& rng);

// Deterministic contiguous validation windows (non-overlapping).
std::vector<Batch> validation_batches(const Corpus& corpus, int batch_size,
                                      int context_length);

}  // namespace dlt
